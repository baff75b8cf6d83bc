//! Norm-based generalization bounds and the quantities used to compare them.
//!
//! Conventions:
//!
//! * `d` is the depth, `h` the largest matrix dimension over all layers
//!   (input dimension included), `B` the largest input norm in the dataset.
//! * Capacity mode sets every hidden constant to 1 and clamps `ln(dh)` below
//!   at 1. Traceable mode uses only the explicit constants of the PAC-Bayes
//!   argument (42, 4, 6 and the β̃ cover size).
//! * The ℓ1 and ℓ2,1 spectral bounds carry no log factors; theirs are not
//!   known here, so every report lists that as a caveat.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::LinalgError;
use crate::manifest::RunManifest;
use crate::network::{margin_loss, LabeledDataset, NetworkError, ReluNetwork};
use crate::pacbayes::{self, PacBayesError};

pub const BOUND_REPORT_SCHEMA: &str = "bound_report_v1";

/// Relative tolerance when labelling two regime factors as equal.
pub const REGIME_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("invalid bound config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    PacBayes(#[from] PacBayesError),
}

fn invalid(msg: impl Into<String>) -> BoundError {
    BoundError::InvalidConfig(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerNorms {
    pub spectral: f64,
    pub frobenius: f64,
    pub l1: f64,
    pub l21: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormProfile {
    pub layers: Vec<LayerNorms>,
    /// `Π ‖W_i‖_2`
    pub spectral_product: f64,
    /// `(Π ‖W_i‖_2)^{1/d}`
    pub beta: f64,
    /// `Σ ‖W_i‖_F² / ‖W_i‖_2²`
    pub frob_ratio_sum: f64,
    /// `(Σ (‖W_i‖_1 / ‖W_i‖_2)^{2/3})³`
    pub l1_ratio_term: f64,
    /// `(Σ (‖W_i‖_{2,1} / ‖W_i‖_2)^{2/3})³`
    pub l21_ratio_term: f64,
}

impl NormProfile {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    fn spectral_product_sq(&self) -> f64 {
        self.layers.iter().map(|l| l.spectral * l.spectral).product()
    }
}

/// Rejects networks with an all-zero layer.
pub fn norm_profile(net: &ReluNetwork) -> Result<NormProfile, BoundError> {
    let mut layers = Vec::with_capacity(net.depth());
    for (i, w) in net.layers().iter().enumerate() {
        let spectral = w.spectral_norm()?;
        if spectral == 0.0 {
            return Err(NetworkError::ZeroLayer { layer: i }.into());
        }
        layers.push(LayerNorms {
            spectral,
            frobenius: w.frobenius_norm(),
            l1: w.l1_norm(),
            l21: w.l21_norm(),
        });
    }
    let spectral: Vec<f64> = layers.iter().map(|l| l.spectral).collect();
    let ratio_term = |f: fn(&LayerNorms) -> f64| -> f64 {
        layers
            .iter()
            .map(|l| (f(l) / l.spectral).powf(2.0 / 3.0))
            .sum::<f64>()
            .powi(3)
    };
    Ok(NormProfile {
        spectral_product: spectral.iter().product(),
        beta: crate::network::geometric_mean(&spectral),
        frob_ratio_sum: layers
            .iter()
            .map(|l| (l.frobenius / l.spectral).powi(2))
            .sum(),
        l1_ratio_term: ratio_term(|l| l.l1),
        l21_ratio_term: ratio_term(|l| l.l21),
        layers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    Capacity,
    Traceable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub gamma: f64,
    pub delta: f64,
    /// Sample count entering the bound; normally the dataset size.
    pub m: usize,
    pub mode: BoundMode,
}

impl BoundConfig {
    pub fn new(gamma: f64, delta: f64, m: usize, mode: BoundMode) -> Result<Self, BoundError> {
        let cfg = Self { gamma, delta, m, mode };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn for_data(
        gamma: f64,
        delta: f64,
        data: &LabeledDataset,
        mode: BoundMode,
    ) -> Result<Self, BoundError> {
        Self::new(gamma, delta, data.len(), mode)
    }

    pub fn validate(&self) -> Result<(), BoundError> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(invalid(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.m < 2 {
            return Err(invalid(format!("m must be at least 2, got {}", self.m)));
        }
        Ok(())
    }
}

/// `max(ln(dh), 1)` and whether the clamp was active.
pub fn log_dh(depth: usize, width: usize) -> (f64, bool) {
    let v = ((depth * width) as f64).ln();
    if v < 1.0 {
        (1.0, true)
    } else {
        (v, false)
    }
}

/// `B² d² h ln(dh) Π‖W_i‖_2² Σ ‖W_i‖_F²/‖W_i‖_2²`.
pub fn capacity(profile: &NormProfile, radius: f64, width: usize) -> f64 {
    let d = profile.depth() as f64;
    let (log, _) = log_dh(profile.depth(), width);
    radius * radius * d * d * width as f64 * log * profile.spectral_product_sq() * profile.frob_ratio_sum
}

/// β̃ values covering `[(γ/2B)^{1/d}, (γ√m/2B)^{1/d}]` with spacing `(1/d)(γ/2B)^{1/d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaGrid {
    pub lower: f64,
    pub upper: f64,
    pub spacing: f64,
    pub points: Vec<f64>,
    /// `d · m^{1/(2d)}`
    pub nominal_cover_size: f64,
}

impl BetaGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, beta: f64) -> bool {
        beta >= self.lower && beta <= self.upper
    }

    /// Grid point closest to `beta`; out-of-range values map to an endpoint.
    pub fn nearest(&self, beta: f64) -> f64 {
        let last = self.points.len() - 1;
        let j = ((beta - self.lower) / self.spacing).round();
        let j = if j.is_nan() || j < 0.0 {
            0
        } else {
            (j as usize).min(last)
        };
        self.points[j]
    }
}

pub fn beta_grid(gamma: f64, radius: f64, m: usize, depth: usize) -> Result<BetaGrid, BoundError> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(invalid(format!("gamma must be positive, got {gamma}")));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(invalid(format!("B must be positive, got {radius}")));
    }
    if m < 1 {
        return Err(invalid("m must be at least 1"));
    }
    if depth == 0 {
        return Err(invalid("depth must be at least 1"));
    }
    let inv_d = 1.0 / depth as f64;
    let lower = (gamma / (2.0 * radius)).powf(inv_d);
    let upper = (gamma * (m as f64).sqrt() / (2.0 * radius)).powf(inv_d);
    let spacing = lower * inv_d;
    let steps = ((upper - lower) / spacing * (1.0 - 1e-12)).ceil().max(0.0) as usize;
    let points = (0..=steps).map(|j| lower + j as f64 * spacing).collect();
    Ok(BetaGrid {
        lower,
        upper,
        spacing,
        points,
        nominal_cover_size: depth as f64 * (m as f64).powf(inv_d / 2.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceableInternals {
    /// `(Π ‖W_i‖_2)^{1/d}`, the common spectral norm after rebalancing.
    pub beta: f64,
    pub beta_tilde: f64,
    pub beta_in_range: bool,
    pub sigma: f64,
    /// `|w̃|² / (2σ²)` for the rebalanced weights `w̃`.
    pub kl: f64,
    /// Number of β̃ grid points the confidence is split over.
    pub cover_size: usize,
    pub nominal_cover_size: f64,
    pub grid_lower: f64,
    pub grid_upper: f64,
    pub grid_spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Result {
    pub value: f64,
    pub margin_loss: f64,
    pub excess: f64,
    /// Capacity numerator `C`; capacity mode only.
    pub capacity: Option<f64>,
    pub log_factor: f64,
    pub log_clamped: bool,
    pub traceable: Option<TraceableInternals>,
}

struct Prepared {
    profile: NormProfile,
    radius: f64,
    margin_loss: f64,
}

fn prepare(net: &ReluNetwork, data: &LabeledDataset, cfg: &BoundConfig) -> Result<Prepared, BoundError> {
    cfg.validate()?;
    let profile = norm_profile(net)?;
    let margin_loss = margin_loss(net, data, cfg.gamma)?;
    Ok(Prepared {
        profile,
        radius: data.radius(),
        margin_loss,
    })
}

/// Spectrally-normalized margin bound. Capacity mode:
/// `L̂_γ + √((C + ln(dm/δ)) / (γ² m))`. Traceable mode: rebalance, take the
/// β̃ grid point nearest β, set σ from it and return
/// `L̂_γ + 4√((KL + ln(6 m |cover| / δ)) / (m − 1))`.
pub fn theorem1_bound(
    net: &ReluNetwork,
    data: &LabeledDataset,
    cfg: &BoundConfig,
) -> Result<Theorem1Result, BoundError> {
    let p = prepare(net, data, cfg)?;
    theorem1_from_parts(net, &p, cfg)
}

fn theorem1_from_parts(net: &ReluNetwork, p: &Prepared, cfg: &BoundConfig) -> Result<Theorem1Result, BoundError> {
    let d = net.depth();
    let h = net.width();
    let m = cfg.m as f64;
    let (log_factor, log_clamped) = log_dh(d, h);
    match cfg.mode {
        BoundMode::Capacity => {
            let c = capacity(&p.profile, p.radius, h);
            let excess = ((c + (d as f64 * m / cfg.delta).ln()) / (cfg.gamma * cfg.gamma * m)).sqrt();
            Ok(Theorem1Result {
                value: p.margin_loss + excess,
                margin_loss: p.margin_loss,
                excess,
                capacity: Some(c),
                log_factor,
                log_clamped,
                traceable: None,
            })
        }
        BoundMode::Traceable => {
            if p.radius == 0.0 {
                return Err(invalid("traceable mode needs a dataset with a non-zero input"));
            }
            let (rebalanced, beta) = net.rebalance()?;
            let grid = beta_grid(cfg.gamma, p.radius, cfg.m, d)?;
            let beta_tilde = grid.nearest(beta);
            let sigma = pacbayes::theorem_sigma(cfg.gamma, p.radius, d, h, beta_tilde)?;
            let kl = pacbayes::kl_gaussian(&rebalanced, sigma)?;
            let cover = grid.len();
            let excess = 4.0 * ((kl + (6.0 * m * cover as f64 / cfg.delta).ln()) / (m - 1.0)).sqrt();
            Ok(Theorem1Result {
                value: p.margin_loss + excess,
                margin_loss: p.margin_loss,
                excess,
                capacity: None,
                log_factor,
                log_clamped,
                traceable: Some(TraceableInternals {
                    beta,
                    beta_tilde,
                    beta_in_range: grid.contains(beta),
                    sigma,
                    kl,
                    cover_size: cover,
                    nominal_cover_size: grid.nominal_cover_size,
                    grid_lower: grid.lower,
                    grid_upper: grid.upper,
                    grid_spacing: grid.spacing,
                }),
            })
        }
    }
}

fn bartlett_excess(ratio_term: f64, profile: &NormProfile, radius: f64, cfg: &BoundConfig) -> f64 {
    let num = radius * radius * profile.spectral_product_sq() * ratio_term;
    (num / (cfg.gamma * cfg.gamma * cfg.m as f64)).sqrt()
}

/// `L̂_γ + √(B² Π‖W_i‖_2² (Σ (‖W_i‖_1/‖W_i‖_2)^{2/3})³ / (γ² m))`.
pub fn bartlett_l1_bound(net: &ReluNetwork, data: &LabeledDataset, cfg: &BoundConfig) -> Result<f64, BoundError> {
    let p = prepare(net, data, cfg)?;
    Ok(p.margin_loss + bartlett_excess(p.profile.l1_ratio_term, &p.profile, p.radius, cfg))
}

/// [`bartlett_l1_bound`] with `‖W_i‖_{2,1}` in place of `‖W_i‖_1`.
pub fn bartlett_l21_bound(net: &ReluNetwork, data: &LabeledDataset, cfg: &BoundConfig) -> Result<f64, BoundError> {
    let p = prepare(net, data, cfg)?;
    Ok(p.margin_loss + bartlett_excess(p.profile.l21_ratio_term, &p.profile, p.radius, cfg))
}

/// `√(d²h²/m)`; the caller adds `L̂_0`.
pub fn vc_bound(depth: usize, width: usize, m: usize) -> f64 {
    (depth * width) as f64 / (m as f64).sqrt()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// `(d³ h · mean ‖W_i‖_F²/‖W_i‖_2², d³ · mean ‖W_i‖_1²/‖W_i‖_2²)`.
///
/// The ratios are invariant under per-layer scaling, so they are the same
/// before and after rebalancing.
pub fn regime_factors(net: &ReluNetwork) -> Result<(f64, f64), BoundError> {
    Ok(regime_from_profile(&norm_profile(net)?, net.width()))
}

fn regime_from_profile(profile: &NormProfile, width: usize) -> (f64, f64) {
    let d3 = (profile.depth() as f64).powi(3);
    let our = d3 * width as f64 * mean(profile.layers.iter().map(|l| (l.frobenius / l.spectral).powi(2)));
    let bar = d3 * mean(profile.layers.iter().map(|l| (l.l1 / l.spectral).powi(2)));
    (our, bar)
}

/// `(mean ‖W_i‖_F / (√(h/d) ‖W_i‖_2), mean ‖W_i‖_1 / ((h/√d) ‖W_i‖_2))`.
/// Values well below 1 mean the corresponding bound can beat the VC rate.
pub fn vc_condition_ratios(net: &ReluNetwork) -> Result<(f64, f64), BoundError> {
    Ok(vc_ratios_from_profile(&norm_profile(net)?, net.width()))
}

fn vc_ratios_from_profile(profile: &NormProfile, width: usize) -> (f64, f64) {
    let d = profile.depth() as f64;
    let h = width as f64;
    let our = mean(profile.layers.iter().map(|l| l.frobenius / ((h / d).sqrt() * l.spectral)));
    let bar = mean(profile.layers.iter().map(|l| l.l1 / ((h / d.sqrt()) * l.spectral)));
    (our, bar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeLabel {
    /// `comp_our < comp_bar`: dense weights.
    Theorem1Favored,
    /// Equal factors: Θ(h)-sparse weights.
    Similar,
    /// `comp_our > comp_bar`: extremely sparse weights.
    L1Favored,
}

impl RegimeLabel {
    pub fn classify(comp_our: f64, comp_bar: f64) -> Self {
        let tol = REGIME_RTOL * comp_our.abs().max(comp_bar.abs());
        if comp_our < comp_bar - tol {
            RegimeLabel::Theorem1Favored
        } else if comp_our > comp_bar + tol {
            RegimeLabel::L1Favored
        } else {
            RegimeLabel::Similar
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegimeLabel::Theorem1Favored => "theorem1-favored",
            RegimeLabel::Similar => "similar",
            RegimeLabel::L1Favored => "l1-favored",
        }
    }

    pub fn sparsity(self) -> &'static str {
        match self {
            RegimeLabel::Theorem1Favored => "dense",
            RegimeLabel::Similar => "theta-h-sparse",
            RegimeLabel::L1Favored => "extreme-sparse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub gamma: f64,
    pub delta: f64,
    pub m: usize,
    pub mode: BoundMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub m: usize,
    /// Largest input norm `B`.
    pub radius: f64,
    pub input_dim: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub depth: usize,
    pub width: usize,
    pub architecture: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Empirical {
    /// `L̂_γ`
    pub margin_loss: f64,
    /// `L̂_0`
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundValues {
    pub theorem1: f64,
    pub bartlett_l1: f64,
    pub bartlett_l21: f64,
    pub vc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Details {
    pub capacity: Option<f64>,
    pub log_factor: f64,
    pub log_clamped: bool,
    /// `ln(dm/δ)`
    pub statement_log_term: f64,
    /// `ln(6 m |cover| / δ)`; absent when the β̃ grid is undefined (B = 0).
    pub proof_log_term: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub comp_our: f64,
    pub comp_bar: f64,
    pub label: RegimeLabel,
    pub sparsity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcConditions {
    pub r_our: f64,
    pub r_bar: f64,
    pub theorem1_may_beat_vc: bool,
    pub l1_may_beat_vc: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub schema: String,
    pub config: ReportConfig,
    pub data: DataSummary,
    pub network: NetworkSummary,
    pub empirical: Empirical,
    pub norms: NormProfile,
    pub bounds: BoundValues,
    pub excess: BoundValues,
    pub theorem1: Theorem1Details,
    pub regime: Regime,
    pub vc_conditions: VcConditions,
    pub traceable: Option<TraceableInternals>,
    pub caveats: Vec<String>,
    pub manifest: Option<RunManifest>,
}

/// Every bound and comparison quantity for one (network, dataset, γ).
pub fn bound_report(
    net: &ReluNetwork,
    data: &LabeledDataset,
    cfg: &BoundConfig,
) -> Result<BoundReport, BoundError> {
    let p = prepare(net, data, cfg)?;
    let error = margin_loss(net, data, 0.0)?;
    let t1 = theorem1_from_parts(net, &p, cfg)?;
    let l1_excess = bartlett_excess(p.profile.l1_ratio_term, &p.profile, p.radius, cfg);
    let l21_excess = bartlett_excess(p.profile.l21_ratio_term, &p.profile, p.radius, cfg);
    let (d, h) = (net.depth(), net.width());
    let vc_excess = vc_bound(d, h, cfg.m);
    let (comp_our, comp_bar) = regime_from_profile(&p.profile, h);
    let label = RegimeLabel::classify(comp_our, comp_bar);
    let (r_our, r_bar) = vc_ratios_from_profile(&p.profile, h);
    let m = cfg.m as f64;
    let proof_log_term = if p.radius > 0.0 {
        let grid = beta_grid(cfg.gamma, p.radius, cfg.m, d)?;
        Some((6.0 * m * grid.len() as f64 / cfg.delta).ln())
    } else {
        None
    };

    let mut caveats = vec![
        "bartlett_l1 and bartlett_l21 omit their unstated logarithmic factors; \
         comparisons with theorem1 are sensitive to constants"
            .to_string(),
        "regime factors and vc-condition ratios average per-layer norm ratios".to_string(),
    ];
    match cfg.mode {
        BoundMode::Capacity => caveats.push("capacity mode sets hidden constants to 1".to_string()),
        BoundMode::Traceable => caveats.push(
            "traceable mode keeps only explicit constants; the statement and proof log terms differ"
                .to_string(),
        ),
    }
    if t1.log_clamped {
        caveats.push(format!("ln(dh) = ln({}) is below 1 and was clamped to 1", d * h));
    }
    if let Some(t) = &t1.traceable {
        if !t.beta_in_range {
            caveats.push("beta lies outside the grid range; beta_tilde is the nearest endpoint".to_string());
        }
    }

    Ok(BoundReport {
        schema: BOUND_REPORT_SCHEMA.to_string(),
        config: ReportConfig {
            gamma: cfg.gamma,
            delta: cfg.delta,
            m: cfg.m,
            mode: cfg.mode,
        },
        data: DataSummary {
            m: data.len(),
            radius: p.radius,
            input_dim: data.input_dim(),
            num_classes: data.num_classes(),
        },
        network: NetworkSummary {
            depth: d,
            width: h,
            architecture: net.architecture(),
        },
        empirical: Empirical {
            margin_loss: p.margin_loss,
            error,
        },
        bounds: BoundValues {
            theorem1: t1.value,
            bartlett_l1: p.margin_loss + l1_excess,
            bartlett_l21: p.margin_loss + l21_excess,
            vc: error + vc_excess,
        },
        excess: BoundValues {
            theorem1: t1.excess,
            bartlett_l1: l1_excess,
            bartlett_l21: l21_excess,
            vc: vc_excess,
        },
        theorem1: Theorem1Details {
            capacity: t1.capacity,
            log_factor: t1.log_factor,
            log_clamped: t1.log_clamped,
            statement_log_term: (d as f64 * m / cfg.delta).ln(),
            proof_log_term,
        },
        regime: Regime {
            comp_our,
            comp_bar,
            label,
            sparsity: label.sparsity().to_string(),
        },
        vc_conditions: VcConditions {
            r_our,
            r_bar,
            theorem1_may_beat_vc: r_our < 1.0,
            l1_may_beat_vc: r_bar < 1.0,
        },
        traceable: t1.traceable,
        caveats,
        manifest: None,
        norms: p.profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn identity_net(d: usize, h: usize) -> ReluNetwork {
        ReluNetwork::new(vec![Matrix::identity(h); d]).unwrap()
    }

    fn unit_data() -> LabeledDataset {
        LabeledDataset::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1], 2).unwrap()
    }

    #[test]
    fn identity_profile() {
        let p = norm_profile(&identity_net(3, 4)).unwrap();
        assert!((p.spectral_product - 1.0).abs() < 1e-12);
        assert!((p.frob_ratio_sum - 12.0).abs() < 1e-9);
        assert!((p.l1_ratio_term / (27.0 * 16.0) - 1.0).abs() < 1e-9);
        assert!((p.l21_ratio_term - p.l1_ratio_term).abs() < 1e-6);
    }

    #[test]
    fn zero_layer_rejected() {
        let net = ReluNetwork::new(vec![Matrix::identity(2), Matrix::zeros(2, 2)]).unwrap();
        assert!(matches!(
            norm_profile(&net),
            Err(BoundError::Network(NetworkError::ZeroLayer { layer: 1 }))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(BoundConfig::new(0.0, 0.1, 10, BoundMode::Capacity).is_err());
        assert!(BoundConfig::new(1.0, 1.0, 10, BoundMode::Capacity).is_err());
        assert!(BoundConfig::new(1.0, 0.1, 1, BoundMode::Capacity).is_err());
        assert!(BoundConfig::new(1.0, 0.1, 2, BoundMode::Traceable).is_ok());
    }

    #[test]
    fn vc_values() {
        assert!((vc_bound(2, 2, 100) - 0.4).abs() < 1e-15);
        assert_eq!(vc_bound(3, 5, 225), 1.0);
        assert_eq!(vc_bound(2, 8, 50), 2.0 * vc_bound(2, 4, 50));
    }

    #[test]
    fn grid_example() {
        let g = beta_grid(2.0, 1.0, 10_000, 2).unwrap();
        assert!((g.lower - 1.0).abs() < 1e-12);
        assert!((g.upper - 10.0).abs() < 1e-12);
        assert!((g.nominal_cover_size - 20.0).abs() < 1e-9);
        assert!((g.spacing - 0.5).abs() < 1e-12);
        assert_eq!(g.len(), 19);
        assert_eq!(g.nearest(3.3), 3.5);
        assert_eq!(g.nearest(0.1), 1.0);
        assert_eq!(g.nearest(50.0), *g.points.last().unwrap());

        let g1 = beta_grid(1.0, 2.0, 16, 1).unwrap();
        assert!((g1.lower - 0.25).abs() < 1e-15);
        assert!((g1.upper - 1.0).abs() < 1e-15);
        assert!(beta_grid(1.0, 1.0, 0, 1).is_err());
    }

    #[test]
    fn log_clamp() {
        assert_eq!(log_dh(1, 1), (1.0, true));
        assert_eq!(log_dh(1, 2), (1.0, true));
        let (v, c) = log_dh(2, 2);
        assert!(!c && (v - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn regime_labels() {
        assert_eq!(RegimeLabel::classify(1.0, 2.0), RegimeLabel::Theorem1Favored);
        assert_eq!(RegimeLabel::classify(2.0, 2.0 * (1.0 + 1e-12)), RegimeLabel::Similar);
        assert_eq!(RegimeLabel::classify(3.0, 2.0), RegimeLabel::L1Favored);
        assert_eq!(
            serde_json::to_string(&RegimeLabel::Theorem1Favored).unwrap(),
            "\"theorem1-favored\""
        );
    }

    #[test]
    fn report_fields_agree() {
        let net = identity_net(2, 2);
        let data = unit_data();
        for mode in [BoundMode::Capacity, BoundMode::Traceable] {
            let cfg = BoundConfig::for_data(0.5, 0.1, &data, mode).unwrap();
            let r = bound_report(&net, &data, &cfg).unwrap();
            assert_eq!(r.schema, BOUND_REPORT_SCHEMA);
            assert_eq!(r.bounds.theorem1, theorem1_bound(&net, &data, &cfg).unwrap().value);
            assert_eq!(r.bounds.bartlett_l1, bartlett_l1_bound(&net, &data, &cfg).unwrap());
            assert_eq!(r.bounds.bartlett_l21, bartlett_l21_bound(&net, &data, &cfg).unwrap());
            assert_eq!(r.traceable.is_some(), mode == BoundMode::Traceable);
            assert_eq!(r.regime.label, RegimeLabel::Similar);
        }
    }
}
