//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's numerics beyond constructing values, apart from
//! the helpers at the end that drive the built binary.

// The oracles are index loops on purpose, to stay visibly independent of the
// library code.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use specmargin::{Matrix, ReluNetwork};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// `MᵀM` by triple loop.
pub fn gram(m: &Matrix) -> Vec<Vec<f64>> {
    let n = m.cols();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..m.rows() {
                s += m.get(k, i) * m.get(k, j);
            }
            g[i][j] = s;
        }
    }
    g
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Largest singular value via the eigenvalues of `MᵀM`.
pub fn oracle_spectral(m: &Matrix) -> f64 {
    jacobi_eigenvalues(&gram(m))
        .into_iter()
        .fold(0.0, f64::max)
        .max(0.0)
        .sqrt()
}

/// Orthonormal `n×n` matrix: modified Gram–Schmidt on a Gaussian matrix.
pub fn random_orthogonal(rng: &mut impl Rng, n: usize) -> Vec<Vec<f64>> {
    loop {
        let g = to_rows(&gaussian(rng, n, n, 1.0));
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut ok = true;
        for v in g {
            let mut v = v;
            for u in &q {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
        if ok {
            return q;
        }
    }
}

/// `U diag(s) Vᵀ` with random orthogonal `U`, `V`; `s.len() ≤ min(rows, cols)`.
pub fn with_singular_values(rng: &mut impl Rng, rows: usize, cols: usize, s: &[f64]) -> Matrix {
    let u = random_orthogonal(rng, rows);
    let v = random_orthogonal(rng, cols);
    Matrix::from_fn(rows, cols, |i, j| {
        s.iter().enumerate().map(|(k, sk)| u[k][i] * sk * v[k][j]).sum()
    })
}

pub fn loop_frobenius(m: &Matrix) -> f64 {
    let mut s = 0.0;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            s += m.get(i, j) * m.get(i, j);
        }
    }
    s.sqrt()
}

pub fn loop_l1(m: &Matrix) -> f64 {
    let mut s = 0.0;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            s += m.get(i, j).abs();
        }
    }
    s
}

pub fn loop_l21(m: &Matrix) -> f64 {
    let mut total = 0.0;
    for i in 0..m.rows() {
        let mut s = 0.0;
        for j in 0..m.cols() {
            s += m.get(i, j) * m.get(i, j);
        }
        total += s.sqrt();
    }
    total
}

/// Straight-line forward pass with explicit loops.
pub fn loop_forward(layers: &[Matrix], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (l, w) in layers.iter().enumerate() {
        let mut out = vec![0.0; w.rows()];
        for i in 0..w.rows() {
            let mut s = 0.0;
            for j in 0..w.cols() {
                s += w.get(i, j) * h[j];
            }
            out[i] = s;
        }
        if l + 1 < layers.len() {
            for v in &mut out {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        h = out;
    }
    h
}

pub fn loop_margin(scores: &[f64], y: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for (j, &s) in scores.iter().enumerate() {
        if j != y && s > best {
            best = s;
        }
    }
    scores[y] - best
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn random_net(rng: &mut impl Rng, arch: &[usize], std: f64) -> ReluNetwork {
    let layers = arch
        .windows(2)
        .map(|p| gaussian(rng, p[1], p[0], std))
        .collect();
    ReluNetwork::new(layers).unwrap()
}

pub fn random_arch(rng: &mut impl Rng, depth: usize, max_width: usize) -> Vec<usize> {
    (0..=depth).map(|_| rng.random_range(2..=max_width)).collect()
}

pub fn random_vec(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// `n×n` permutation matrix from a random shuffle.
pub fn permutation(rng: &mut impl Rng, n: usize) -> Matrix {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    Matrix::from_fn(n, n, |i, j| if p[i] == j { 1.0 } else { 0.0 })
}

pub fn bin() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_specmargin"))
}

/// Runs the tool with `SPECMARGIN_THREADS` cleared and returns
/// `(exit code, stdout, stderr)`.
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let out = bin()
        .args(args)
        .env_remove("SPECMARGIN_THREADS")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

/// Schema violations of `instance` against `schemas/<name>.schema.json`.
pub fn schema_errors(name: &str, instance: &serde_json::Value) -> Vec<String> {
    let path = format!("{}/schemas/{name}.schema.json", env!("CARGO_MANIFEST_DIR"));
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    validator
        .iter_errors(instance)
        .map(|e| format!("{}: {e}", e.instance_path))
        .collect()
}

/// The text with every `timestamp_unix` line removed.
pub fn without_timestamps(text: &str) -> String {
    text.lines()
        .filter(|l| !l.contains("\"timestamp_unix\""))
        .collect::<Vec<_>>()
        .join("\n")
}
