mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use specmargin::network::{margin_loss, margins, rebalance};
use specmargin::{LabeledDataset, Matrix, Perturbation, ReluNetwork};

fn random_data(r: &mut impl Rng, n: usize, k: usize, m: usize) -> LabeledDataset {
    let inputs = (0..m).map(|_| random_vec(r, n, 1.0)).collect();
    let labels = (0..m).map(|_| r.random_range(0..k)).collect();
    LabeledDataset::new(inputs, labels, k).unwrap()
}

#[test]
fn forward_matches_loop_oracle() {
    let mut r = rng(10);
    for _ in 0..30 {
        let net = random_net(&mut r, &[5, 7, 6, 3], 0.8);
        let x = random_vec(&mut r, 5, 1.0);
        let got = net.forward(&x).unwrap();
        let want = loop_forward(net.layers(), &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12 * (1.0 + w.abs()));
        }
    }
}

#[test]
fn layer_outputs_respect_spectral_growth() {
    let mut r = rng(11);
    for _ in 0..30 {
        let depth = r.random_range(1..=5);
        let arch = random_arch(&mut r, depth, 12);
        let net = random_net(&mut r, &arch, 1.0);
        let norms = net.spectral_norms().unwrap();
        let x = random_vec(&mut r, arch[0], 1.0);
        let outs = net.layer_outputs(&x).unwrap();
        assert_eq!(outs.last().unwrap(), &net.forward(&x).unwrap());
        let mut bound = l2(&x);
        for (o, s) in outs.iter().zip(&norms) {
            bound *= s;
            assert!(l2(o) <= bound * (1.0 + 1e-9));
        }
    }
}

#[test]
fn margin_loss_matches_loop_count() {
    let mut r = rng(12);
    let net = random_net(&mut r, &[4, 8, 3], 1.0);
    let data = random_data(&mut r, 4, 3, 200);
    for gamma in [0.0, 0.1, 0.5, 2.0] {
        let count = data
            .inputs()
            .iter()
            .zip(data.labels())
            .filter(|(x, &y)| loop_margin(&loop_forward(net.layers(), x), y) <= gamma)
            .count();
        assert_eq!(margin_loss(&net, &data, gamma).unwrap(), count as f64 / 200.0);
    }
}

#[test]
fn margin_loss_example_from_four_margins() {
    // scores (m, 0) give margin m for label 0
    let net = ReluNetwork::new(vec![Matrix::identity(2)]).unwrap();
    let data = LabeledDataset::new(
        vec![vec![0.3, 0.0], vec![0.3, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]],
        vec![0; 4],
        2,
    )
    .unwrap();
    assert_eq!(margin_loss(&net, &data, 0.5).unwrap(), 0.5);
    assert_eq!(margin_loss(&net, &data, 0.0).unwrap(), 0.0);
}

#[test]
fn weight_norm_sq_matches_loop() {
    let mut r = rng(13);
    let net = random_net(&mut r, &[3, 9, 4, 2], 1.3);
    let want: f64 = net.layers().iter().map(|w| loop_frobenius(w).powi(2)).sum();
    assert!(rel_err(net.weight_norm_sq(), want) < 1e-12);
}

#[test]
fn rebalance_preserves_function_and_capacity_terms() {
    let mut r = rng(14);
    for _ in 0..20 {
        let depth = r.random_range(1..=5);
        let arch = random_arch(&mut r, depth, 10);
        let mut layers: Vec<Matrix> = random_net(&mut r, &arch, 1.0).into_layers();
        for w in &mut layers {
            *w = w.scale(r.random_range(0.05..20.0));
        }
        let net = ReluNetwork::new(layers).unwrap();
        let (bal, beta) = rebalance(&net).unwrap();
        let before = net.spectral_norms().unwrap();
        let after = bal.spectral_norms().unwrap();
        let prod: f64 = before.iter().product();
        assert!(rel_err(beta, prod.powf(1.0 / depth as f64)) < 1e-12);
        for s in &after {
            assert!(rel_err(*s, beta) < 1e-9);
        }
        let sq = |v: &[f64]| v.iter().map(|s| s * s).product::<f64>();
        assert!(rel_err(sq(&before), sq(&after)) < 1e-9);
        let ratio = |n: &ReluNetwork, s: &[f64]| -> f64 {
            n.layers().iter().zip(s).map(|(w, s)| (w.frobenius_norm() / s).powi(2)).sum()
        };
        assert!(rel_err(ratio(&net, &before), ratio(&bal, &after)) < 1e-9);
        for _ in 0..100 {
            let x = random_vec(&mut r, arch[0], 1.0);
            let a = net.forward(&x).unwrap();
            let b = bal.forward(&x).unwrap();
            let scale = l2(&a).max(1e-300);
            assert!(l2(&a.iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>()) <= 1e-9 * scale);
        }
    }
}

#[test]
fn perturbation_round_trip() {
    let mut r = rng(15);
    let net = random_net(&mut r, &[3, 5, 2], 1.0);
    let p = Perturbation::new(random_net(&mut r, &[3, 5, 2], 0.3).into_layers());
    let back = net.apply_perturbation(&p).unwrap().apply_perturbation(&p.negated()).unwrap();
    for (a, b) in back.layers().iter().zip(net.layers()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-15 * (1.0 + y.abs()));
        }
    }
    let neg = Perturbation::new(net.layers().iter().map(|w| w.scale(-1.0)).collect());
    assert!(net.apply_perturbation(&neg).unwrap().layers().iter().all(Matrix::is_zero));
}

fn net_strategy() -> impl Strategy<Value = (ReluNetwork, Vec<f64>)> {
    (1usize..=4, any::<u64>()).prop_map(|(depth, seed)| {
        let mut r = rng(seed);
        let arch = random_arch(&mut r, depth, 8);
        let net = random_net(&mut r, &arch, 1.0);
        let x = random_vec(&mut r, arch[0], 1.0);
        (net, x)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn homogeneity_under_unit_product_scaling(
        (net, x) in net_strategy(),
        logs in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let d = net.depth();
        let mean: f64 = logs[..d].iter().sum::<f64>() / d as f64;
        let layers = net
            .layers()
            .iter()
            .zip(&logs)
            .map(|(w, l)| w.scale((l - mean).exp()))
            .collect();
        let scaled = ReluNetwork::new(layers).unwrap();
        let a = net.forward(&x).unwrap();
        let b = scaled.forward(&x).unwrap();
        let diff = l2(&a.iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>());
        prop_assert!(diff <= 1e-9 * l2(&a).max(1e-300));
    }

    #[test]
    fn margin_loss_is_monotone_in_gamma(seed in any::<u64>(), g1 in 0.0f64..3.0, g2 in 0.0f64..3.0) {
        let mut r = rng(seed);
        let net = random_net(&mut r, &[3, 6, 3], 1.0);
        let data = random_data(&mut r, 3, 3, 40);
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let a = margin_loss(&net, &data, lo).unwrap();
        let b = margin_loss(&net, &data, hi).unwrap();
        prop_assert!(a <= b);
        prop_assert!(margin_loss(&net, &data, 0.0).unwrap() <= a);
        prop_assert!((0.0..=1.0).contains(&b));
    }

    #[test]
    fn margins_agree_with_oracle((net, x) in net_strategy(), y in 0usize..8) {
        let k = net.output_dim();
        prop_assume!(k >= 2);
        let y = y % k;
        let data = LabeledDataset::new(vec![x.clone()], vec![y], k).unwrap();
        let got = margins(&net, &data).unwrap()[0];
        let want = loop_margin(&loop_forward(net.layers(), &x), y);
        prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }
}
