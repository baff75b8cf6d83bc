//! Dense row-major matrices, the matrix norms used by the bounds, and
//! seeded Gaussian sampling.
//!
//! Everything here is `f64`. Matrices are immutable values; operations
//! that produce a new matrix allocate.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative change in the Rayleigh quotient at which power iteration stops.
pub const DEFAULT_SPECTRAL_TOL: f64 = 1e-10;
/// Iteration cap for a single power-iteration run (one restart is allowed).
pub const DEFAULT_SPECTRAL_MAX_ITER: usize = 10_000;
/// Start-vector seed used by [`Matrix::spectral_norm`].
pub const DEFAULT_SPECTRAL_SEED: RngSeed = RngSeed(0x0005_eed0_f5ec_72a1);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("matrix data has {found} entries, expected {rows}x{cols} = {}", rows * cols)]
    DataLength {
        rows: usize,
        cols: usize,
        found: usize,
    },
    #[error("non-finite entry {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("dimension mismatch: expected length {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(
        "power iteration did not converge after {iterations} iterations (last estimate {last_estimate})"
    )]
    NotConverged {
        iterations: usize,
        last_estimate: f64,
    },
}

/// Seed for every random stream in the crate.
///
/// Streams are ChaCha20, so a seed reproduces the same samples on every
/// platform. Independent sub-streams come from [`RngSeed::derive`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.0)
    }

    /// Counter-based child seed: `derive(i)` depends only on the parent and
    /// `i`, so work split across threads sees the same streams as a serial run.
    pub fn derive(self, index: u64) -> RngSeed {
        let mixed = self
            .0
            .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        RngSeed(splitmix64(mixed))
    }
}

impl From<u64> for RngSeed {
    fn from(seed: u64) -> Self {
        RngSeed(seed)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dense real matrix stored row-major. Shape is positive and every entry
/// is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::DataLength {
                rows,
                cols,
                found: data.len(),
            });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: idx / cols,
                col: idx % cols,
                value: data[idx],
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. All rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(LinalgError::DimensionMismatch {
                expected: cols,
                found: bad.len(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// # Panics
    /// If either dimension is zero or `f` returns a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data).expect("Matrix::from_fn produced an invalid matrix")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| 0.0)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_fn(rows, cols, |_, _| value)
    }

    /// Square matrix with `diag` on the diagonal.
    pub fn diag(diag: &[f64]) -> Self {
        Self::from_fn(diag.len(), diag.len(), |r, c| if r == c { diag[r] } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }

    /// `M v`.
    pub fn mat_vec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if v.len() != self.cols {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                found: v.len(),
            });
        }
        Ok(self.apply(v))
    }

    /// `Mᵀ v`.
    pub fn mat_t_vec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if v.len() != self.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.rows,
                found: v.len(),
            });
        }
        Ok(self.apply_t(v))
    }

    pub(crate) fn apply(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub(crate) fn apply_t(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &scale) in self.data.chunks_exact(self.cols).zip(v) {
            if scale == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * scale;
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    fn check_same_shape(&self, other: &Matrix) -> Result<(), LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::ShapeMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    /// # Panics
    /// If `c` is not finite or the product overflows.
    pub fn scale(&self, c: f64) -> Matrix {
        let data = self.data.iter().map(|a| a * c).collect();
        Matrix::new(self.rows, self.cols, data).expect("scaled matrix must stay finite")
    }

    /// In-place `self -= step * other`; shapes must agree.
    pub(crate) fn axpy_in_place(&mut self, step: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += step * b;
        }
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn l1_norm(&self) -> f64 {
        l1_elementwise_norm(self)
    }

    pub fn l21_norm(&self) -> f64 {
        l21_norm(self)
    }

    /// Largest singular value with the default power-iteration settings.
    pub fn spectral_norm(&self) -> Result<f64, LinalgError> {
        spectral_norm(
            self,
            DEFAULT_SPECTRAL_TOL,
            DEFAULT_SPECTRAL_MAX_ITER,
            DEFAULT_SPECTRAL_SEED,
        )
    }
}

pub fn mat_vec(m: &Matrix, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
    m.mat_vec(v)
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    l2_norm(m.data())
}

pub fn l1_elementwise_norm(m: &Matrix) -> f64 {
    m.data().iter().map(|v| v.abs()).sum()
}

/// Sum over rows of each row's ℓ2 norm. A row holds one output unit's
/// incoming weights.
pub fn l21_norm(m: &Matrix) -> f64 {
    m.data().chunks_exact(m.cols()).map(l2_norm).sum()
}

/// Largest singular value of `m`.
///
/// Runs power iteration on `v ↦ Mᵀ(M v)` from a Gaussian start drawn
/// from `seed` and stops once the Rayleigh quotient changes by at most
/// `tol` relative between iterations. If the first run exhausts
/// `max_iter`, it restarts once from `seed.derive(1)`; a second failure
/// is reported as [`LinalgError::NotConverged`] with the last estimate.
/// The zero matrix returns 0 without iterating.
pub fn spectral_norm(
    m: &Matrix,
    tol: f64,
    max_iter: usize,
    seed: RngSeed,
) -> Result<f64, LinalgError> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(LinalgError::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if max_iter == 0 {
        return Err(LinalgError::InvalidArgument(
            "max_iter must be at least 1".into(),
        ));
    }
    let scale = m.max_abs();
    if scale == 0.0 {
        return Ok(0.0);
    }
    match power_iterate(m, scale, tol, max_iter, seed) {
        Ok(sigma) => Ok(sigma),
        Err(_) => power_iterate(m, scale, tol, max_iter, seed.derive(1)).map_err(
            |(iterations, last)| LinalgError::NotConverged {
                iterations,
                last_estimate: last,
            },
        ),
    }
}

// Works on M / scale to keep the Gram products in range.
fn power_iterate(
    m: &Matrix,
    scale: f64,
    tol: f64,
    max_iter: usize,
    seed: RngSeed,
) -> Result<f64, (usize, f64)> {
    let mut rng = seed.rng();
    let mut v: Vec<f64> = (0..m.cols())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    if normalize(&mut v) == 0.0 {
        return Err((0, 0.0));
    }
    let inv = 1.0 / scale;
    let mut prev: Option<f64> = None;
    let mut lambda = 0.0;
    for it in 0..max_iter {
        let mv: Vec<f64> = m.apply(&v).into_iter().map(|x| x * inv).collect();
        lambda = mv.iter().map(|x| x * x).sum::<f64>();
        let mut w: Vec<f64> = m.apply_t(&mv).into_iter().map(|x| x * inv).collect();
        if normalize(&mut w) == 0.0 {
            // start vector landed in the null space
            return Err((it + 1, 0.0));
        }
        v = w;
        if let Some(p) = prev {
            if (lambda - p).abs() <= tol * lambda {
                return Ok(lambda.sqrt() * scale);
            }
        }
        prev = Some(lambda);
    }
    Err((max_iter, lambda.sqrt() * scale))
}

/// Matrix with i.i.d. `N(0, sigma²)` entries drawn from `seed`.
pub fn gaussian_matrix(
    rows: usize,
    cols: usize,
    sigma: f64,
    seed: RngSeed,
) -> Result<Matrix, LinalgError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(LinalgError::InvalidArgument(format!(
            "standard deviation must be finite and non-negative, got {sigma}"
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(LinalgError::EmptyShape { rows, cols });
    }
    let mut rng = seed.rng();
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect();
    Matrix::new(rows, cols, data)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn linf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
}

pub fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// Scales `v` to unit ℓ2 norm in place and returns the original norm.
pub fn normalize(v: &mut [f64]) -> f64 {
    let n = l2_norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

pub(crate) fn sub_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
