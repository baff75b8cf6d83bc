//! Empirical checks of the weight-perturbation bound and Monte-Carlo
//! estimates of the PAC-Bayes quantities built on it.
//!
//! The perturbation bound: for `‖U_i‖_2 ≤ ‖W_i‖_2 / d` and `|x|_2 ≤ B`,
//!
//! ```text
//! |f_{w+u}(x) − f_w(x)|_2 ≤ e · B · (Π ‖W_i‖_2) · Σ ‖U_i‖_2 / ‖W_i‖_2
//! ```
//!
//! and the layer recursion it is proved by,
//! `Δ_{i+1} ≤ Δ_i (‖W_{i+1}‖_2 + ‖U_{i+1}‖_2) + ‖U_{i+1}‖_2 |f^i_w(x)|_2`,
//! are both evaluated directly here. The margin bound takes a Gaussian
//! posterior `N(w, σ²I)` against the prior `N(0, σ²I)` and needs
//! `P[max_x |f_{w+u}(x) − f_w(x)|_∞ < γ/4] ≥ 1/2`; the maximum over the
//! whole input ball is replaced by the maximum over the dataset.

use std::f64::consts::E;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, gaussian_matrix, LinalgError, Matrix, RngSeed};
use crate::network::{fraction_at_most, margin, LabeledDataset, NetworkError, Perturbation, ReluNetwork};

/// Absolute slack on every inequality check.
pub const CHECK_SLACK: f64 = 1e-9;

/// Relative tolerance when deciding `‖U_i‖_2 ≤ ‖W_i‖_2 / d`. Perturbations
/// built to sit exactly on the boundary land within rounding of it.
pub const ADMISSIBILITY_RTOL: f64 = 1e-9;

pub const SURVIVAL_BASIS: &str = "dataset-max proxy";

#[derive(Debug, Error)]
pub enum PacBayesError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn invalid(msg: impl Into<String>) -> PacBayesError {
    PacBayesError::InvalidArgument(msg.into())
}

/// A network, a perturbation of it, and the spectral norms both bounds need.
#[derive(Debug, Clone)]
pub struct PerturbationAnalysis<'a> {
    net: &'a ReluNetwork,
    perturbed: ReluNetwork,
    weight_spectral: Vec<f64>,
    perturbation_spectral: Vec<f64>,
}

impl<'a> PerturbationAnalysis<'a> {
    pub fn new(net: &'a ReluNetwork, pert: &Perturbation) -> Result<Self, PacBayesError> {
        let perturbed = net.apply_perturbation(pert)?;
        let weight_spectral = net.spectral_norms()?;
        let perturbation_spectral = pert
            .layers()
            .iter()
            .map(Matrix::spectral_norm)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            net,
            perturbed,
            weight_spectral,
            perturbation_spectral,
        })
    }

    pub fn perturbed(&self) -> &ReluNetwork {
        &self.perturbed
    }

    pub fn weight_spectral(&self) -> &[f64] {
        &self.weight_spectral
    }

    pub fn perturbation_spectral(&self) -> &[f64] {
        &self.perturbation_spectral
    }

    pub fn admissibility(&self) -> Vec<bool> {
        let d = self.net.depth() as f64;
        self.weight_spectral
            .iter()
            .zip(&self.perturbation_spectral)
            .map(|(&s, &u)| u <= (s / d) * (1.0 + ADMISSIBILITY_RTOL))
            .collect()
    }

    fn check_no_zero_layer(&self) -> Result<(), PacBayesError> {
        match self.weight_spectral.iter().position(|&s| s == 0.0) {
            Some(layer) => Err(NetworkError::ZeroLayer { layer }.into()),
            None => Ok(()),
        }
    }

    /// `e · B · Π‖W_i‖_2 · Σ ‖U_i‖_2/‖W_i‖_2`.
    pub fn lemma2_bound(&self, radius: f64) -> Result<Lemma2Bound, PacBayesError> {
        self.check_no_zero_layer()?;
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(invalid(format!("radius must be non-negative, got {radius}")));
        }
        let product: f64 = self.weight_spectral.iter().product();
        let ratio_sum: f64 = self
            .weight_spectral
            .iter()
            .zip(&self.perturbation_spectral)
            .map(|(s, u)| u / s)
            .sum();
        Ok(Lemma2Bound {
            value: E * radius * product * ratio_sum,
            weight_spectral: self.weight_spectral.clone(),
            perturbation_spectral: self.perturbation_spectral.clone(),
            admissible: self.admissibility(),
        })
    }

    /// Largest output change over `inputs`, compared against the bound with
    /// `B` = the largest input norm.
    pub fn check_inputs(&self, inputs: &[Vec<f64>]) -> Result<PerturbationTrial, PacBayesError> {
        if inputs.is_empty() {
            return Err(NetworkError::EmptyDataset.into());
        }
        let radius = inputs.iter().map(|x| linalg::l2_norm(x)).fold(0.0, f64::max);
        let bound = self.lemma2_bound(radius)?;
        let mut max_l2: f64 = 0.0;
        let mut max_linf: f64 = 0.0;
        for x in inputs {
            let diff = linalg::sub_vec(&self.perturbed.forward(x)?, &self.net.forward(x)?);
            max_l2 = max_l2.max(linalg::l2_norm(&diff));
            max_linf = max_linf.max(linalg::linf_norm(&diff));
        }
        let all_admissible = bound.all_admissible();
        Ok(PerturbationTrial {
            sigma: None,
            weight_spectral: bound.weight_spectral,
            perturbation_spectral: bound.perturbation_spectral,
            admissible: bound.admissible,
            all_admissible,
            observed_max_change: max_l2,
            observed_max_change_linf: max_linf,
            bound: bound.value,
            holds: max_l2 <= bound.value + CHECK_SLACK,
        })
    }

    /// Per-layer induction check at input `x`. Entry 0 is the base case
    /// `Δ_0 = 0`; entry `i` compares `Δ_i` with the one-step recursion and
    /// with the closed form `(1+1/d)^i (Π_{j≤i}‖W_j‖_2) |x|_2 Σ_{j≤i} ‖U_j‖_2/‖W_j‖_2`.
    /// The closed form is only asserted for admissible perturbations
    /// without zero layers; otherwise its fields are `None`.
    pub fn recursion(&self, x: &[f64]) -> Result<Vec<RecursionStep>, PacBayesError> {
        let clean = self.net.layer_outputs(x)?;
        let noisy = self.perturbed.layer_outputs(x)?;
        let d = self.net.depth();
        let x_norm = linalg::l2_norm(x);
        let closed_form_applies = self.admissibility().iter().all(|&a| a)
            && self.weight_spectral.iter().all(|&s| s > 0.0);
        let growth = 1.0 + 1.0 / d as f64;

        let mut steps = Vec::with_capacity(d + 1);
        steps.push(RecursionStep {
            layer: 0,
            delta: 0.0,
            step_rhs: None,
            step_holds: true,
            closed_form_rhs: closed_form_applies.then_some(0.0),
            closed_form_holds: closed_form_applies.then_some(true),
        });
        let mut prev_delta = 0.0;
        let mut prev_out_norm = x_norm;
        let mut product = 1.0;
        let mut ratio_sum = 0.0;
        for i in 0..d {
            let (s, u) = (self.weight_spectral[i], self.perturbation_spectral[i]);
            let delta = linalg::l2_norm(&linalg::sub_vec(&noisy[i], &clean[i]));
            let step_rhs = prev_delta * (s + u) + u * prev_out_norm;
            product *= s;
            let closed = if closed_form_applies {
                ratio_sum += u / s;
                Some(growth.powi(i as i32 + 1) * product * x_norm * ratio_sum)
            } else {
                None
            };
            steps.push(RecursionStep {
                layer: i + 1,
                delta,
                step_rhs: Some(step_rhs),
                step_holds: delta <= step_rhs + CHECK_SLACK,
                closed_form_rhs: closed,
                closed_form_holds: closed.map(|c| delta <= c + CHECK_SLACK),
            });
            prev_delta = delta;
            prev_out_norm = linalg::l2_norm(&clean[i]);
        }
        Ok(steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Bound {
    pub value: f64,
    pub weight_spectral: Vec<f64>,
    pub perturbation_spectral: Vec<f64>,
    pub admissible: Vec<bool>,
}

impl Lemma2Bound {
    pub fn all_admissible(&self) -> bool {
        self.admissible.iter().all(|&a| a)
    }
}

/// One evaluation of the perturbation bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationTrial {
    pub sigma: Option<f64>,
    pub weight_spectral: Vec<f64>,
    pub perturbation_spectral: Vec<f64>,
    pub admissible: Vec<bool>,
    pub all_admissible: bool,
    /// Max over inputs of `|f_{w+u}(x) − f_w(x)|_2`.
    pub observed_max_change: f64,
    pub observed_max_change_linf: f64,
    pub bound: f64,
    pub holds: bool,
}

impl PerturbationTrial {
    /// A failure of the lemma: the hypothesis held and the inequality did not.
    pub fn is_violation(&self) -> bool {
        self.all_admissible && !self.holds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursionStep {
    pub layer: usize,
    pub delta: f64,
    pub step_rhs: Option<f64>,
    pub step_holds: bool,
    pub closed_form_rhs: Option<f64>,
    pub closed_form_holds: Option<bool>,
}

impl RecursionStep {
    pub fn ok(&self) -> bool {
        self.step_holds && self.closed_form_holds.unwrap_or(true)
    }
}

/// Perturbation bound value; admissibility is reported, not enforced.
pub fn lemma2_bound(
    net: &ReluNetwork,
    pert: &Perturbation,
    radius: f64,
) -> Result<Lemma2Bound, PacBayesError> {
    PerturbationAnalysis::new(net, pert)?.lemma2_bound(radius)
}

pub fn lemma2_check(
    net: &ReluNetwork,
    pert: &Perturbation,
    data: &LabeledDataset,
) -> Result<PerturbationTrial, PacBayesError> {
    PerturbationAnalysis::new(net, pert)?.check_inputs(data.inputs())
}

pub fn recursion_check(
    net: &ReluNetwork,
    pert: &Perturbation,
    x: &[f64],
) -> Result<Vec<RecursionStep>, PacBayesError> {
    PerturbationAnalysis::new(net, pert)?.recursion(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    Raw,
    /// Raw sample, then any layer with `‖U_i‖_2 > ‖W_i‖_2/d` is shrunk onto that boundary.
    Clipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledPerturbation {
    pub perturbation: Perturbation,
    /// Per layer, the factor applied by clipping (`None` if untouched).
    pub clip_factors: Vec<Option<f64>>,
}

/// Gaussian perturbation with i.i.d. `N(0, σ²)` entries; layer `i` draws
/// from `seed.derive(i)`.
pub fn sample_perturbation(
    net: &ReluNetwork,
    sigma: f64,
    seed: RngSeed,
    mode: PerturbationMode,
) -> Result<SampledPerturbation, PacBayesError> {
    let d = net.depth() as f64;
    let mut layers = Vec::with_capacity(net.depth());
    let mut clip_factors = Vec::with_capacity(net.depth());
    for (i, w) in net.layers().iter().enumerate() {
        let u = gaussian_matrix(w.rows(), w.cols(), sigma, seed.derive(i as u64))?;
        match mode {
            PerturbationMode::Raw => {
                layers.push(u);
                clip_factors.push(None);
            }
            PerturbationMode::Clipped => {
                let limit = w.spectral_norm()? / d;
                let norm = u.spectral_norm()?;
                if norm > limit {
                    let factor = limit / norm;
                    layers.push(u.scale(factor));
                    clip_factors.push(Some(factor));
                } else {
                    layers.push(u);
                    clip_factors.push(None);
                }
            }
        }
    }
    Ok(SampledPerturbation {
        perturbation: Perturbation::new(layers),
        clip_factors,
    })
}

/// Random-direction perturbation with `‖U_i‖_2 = α ‖W_i‖_2 / d` exactly
/// (up to the power-iteration tolerance).
pub fn perturbation_with_ratio(
    net: &ReluNetwork,
    alpha: f64,
    seed: RngSeed,
) -> Result<Perturbation, PacBayesError> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(invalid(format!("alpha must be non-negative, got {alpha}")));
    }
    let d = net.depth() as f64;
    let layers = net
        .layers()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let g = gaussian_matrix(w.rows(), w.cols(), 1.0, seed.derive(i as u64))?;
            let target = alpha * w.spectral_norm()? / d;
            let norm = g.spectral_norm()?;
            Ok(if norm > 0.0 { g.scale(target / norm) } else { g })
        })
        .collect::<Result<Vec<_>, LinalgError>>()?;
    Ok(Perturbation::new(layers))
}

/// `2h · exp(−t² / (2hσ²))`: tail bound for the spectral norm of an
/// `h×h` matrix with i.i.d. `N(0, σ²)` entries.
pub fn spectral_tail_bound(h: usize, sigma: f64, t: f64) -> f64 {
    let h = h as f64;
    if sigma == 0.0 {
        return if t > 0.0 { 0.0 } else { 2.0 * h };
    }
    2.0 * h * (-(t * t) / (2.0 * h * sigma * sigma)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub t: f64,
    pub exceed_count: usize,
    pub empirical: f64,
    pub bound: f64,
    /// Binomial standard error at `p = min(bound, 1)`.
    pub stderr: f64,
    /// `empirical ≤ bound + 3·stderr`.
    pub within: bool,
}

/// Ten thresholds `t = σ√h · c`, `c` evenly spaced in `[1, 5.5]`. Covers the
/// vacuous region (bound > 1) through bounds far below `1/10⁴`.
pub fn default_tail_grid(h: usize, sigma: f64) -> Vec<f64> {
    let scale = if sigma > 0.0 { sigma } else { 1.0 } * (h as f64).sqrt();
    (0..10).map(|i| scale * (1.0 + 0.5 * i as f64)).collect()
}

/// Samples `trials` Gaussian `h×h` matrices and compares the frequency of
/// `‖U‖_2 > t` with [`spectral_tail_bound`] at every `t` in `t_grid`.
pub fn spectral_tail_check(
    h: usize,
    sigma: f64,
    t_grid: &[f64],
    trials: usize,
    seed: RngSeed,
) -> Result<Vec<TailPoint>, PacBayesError> {
    if trials < 100 {
        return Err(invalid(format!("need at least 100 trials, got {trials}")));
    }
    if h == 0 {
        return Err(invalid("h must be at least 1"));
    }
    if let Some(t) = t_grid.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(invalid(format!("thresholds must be positive, got {t}")));
    }
    let norms = (0..trials)
        .into_par_iter()
        .map(|i| gaussian_matrix(h, h, sigma, seed.derive(i as u64))?.spectral_norm())
        .collect::<Result<Vec<f64>, LinalgError>>()?;
    Ok(t_grid
        .iter()
        .map(|&t| {
            let exceed_count = norms.iter().filter(|&&s| s > t).count();
            let empirical = exceed_count as f64 / trials as f64;
            let bound = spectral_tail_bound(h, sigma, t);
            let p = bound.min(1.0);
            let stderr = (p * (1.0 - p) / trials as f64).sqrt();
            TailPoint {
                t,
                exceed_count,
                empirical,
                bound,
                stderr,
                within: empirical <= bound + 3.0 * stderr,
            }
        })
        .collect())
}

/// `σ = γ / (42 d B β̃^{d−1} √(h ln(4hd)))`.
pub fn theorem_sigma(
    gamma: f64,
    radius: f64,
    depth: usize,
    width: usize,
    beta_tilde: f64,
) -> Result<f64, PacBayesError> {
    for (name, v) in [("gamma", gamma), ("B", radius), ("beta_tilde", beta_tilde)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(invalid(format!("{name} must be positive, got {v}")));
        }
    }
    if depth == 0 || width == 0 {
        return Err(invalid("depth and width must be positive"));
    }
    let (d, h) = (depth as f64, width as f64);
    Ok(gamma / (42.0 * d * radius * beta_tilde.powi(depth as i32 - 1) * (h * (4.0 * h * d).ln()).sqrt()))
}

/// `|w|² / (2σ²)`, the KL divergence between `N(w, σ²I)` and `N(0, σ²I)`.
pub fn kl_gaussian(net: &ReluNetwork, sigma: f64) -> Result<f64, PacBayesError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    Ok(net.weight_norm_sq() / (2.0 * sigma * sigma))
}

/// `4 √((KL + ln(6m/δ)) / (m − 1))`.
pub fn pac_bayes_margin_term(kl: f64, m: usize, delta: f64) -> Result<f64, PacBayesError> {
    if m < 2 {
        return Err(invalid(format!("need at least 2 samples, got {m}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let m = m as f64;
    Ok(4.0 * ((kl + (6.0 * m / delta).ln()) / (m - 1.0)).sqrt())
}

/// σ at `β̃ = β` for `net`, evaluated on its rebalanced form.
#[derive(Debug, Clone)]
pub struct ProofSigma {
    pub sigma: f64,
    pub beta: f64,
    pub rebalanced: ReluNetwork,
}

pub fn proof_sigma(net: &ReluNetwork, radius: f64, gamma: f64) -> Result<ProofSigma, PacBayesError> {
    let (rebalanced, beta) = net.rebalance()?;
    let sigma = theorem_sigma(gamma, radius, net.depth(), net.width(), beta)?;
    Ok(ProofSigma {
        sigma,
        beta,
        rebalanced,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McTrial {
    pub index: usize,
    pub seed: RngSeed,
    pub max_change_l2: f64,
    pub max_change_linf: f64,
    /// `L̂_{γ/2}` of the perturbed network.
    pub perturbed_margin_loss: f64,
    /// Dataset max of the ℓ∞ change is below γ/4.
    pub survived: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacBayesEstimate {
    pub sigma: f64,
    pub gamma: f64,
    pub delta: f64,
    pub trials: usize,
    pub m: usize,
    /// `L̂_γ` of the unperturbed network.
    pub margin_loss: f64,
    /// `L̂_0` of the unperturbed network.
    pub error: f64,
    pub mean_perturbed_margin_loss: f64,
    pub survival_count: usize,
    pub survival_probability: f64,
    pub survival_stderr: f64,
    pub survival_at_least_half: bool,
    pub survival_basis: String,
    /// `None` when σ = 0 and the weights are non-zero (the divergence is infinite).
    pub kl: Option<f64>,
    /// `L̂_γ + 4√((KL + ln(6m/δ))/(m−1))`.
    pub bound: Option<f64>,
    pub per_trial: Vec<McTrial>,
}

/// Monte-Carlo evaluation of the margin PAC-Bayes bound at a fixed σ.
///
/// Trial `i` draws a raw perturbation from `seed.derive(i)`; trials run in
/// parallel and are aggregated in index order, so the result does not
/// depend on the thread count.
pub fn mc_pacbayes(
    net: &ReluNetwork,
    data: &LabeledDataset,
    gamma: f64,
    sigma: f64,
    trials: usize,
    seed: RngSeed,
    delta: f64,
) -> Result<PacBayesEstimate, PacBayesError> {
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(invalid(format!("gamma must be positive, got {gamma}")));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(invalid(format!("sigma must be non-negative, got {sigma}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    data.check_compatible(net)?;
    let clean: Vec<Vec<f64>> = data.inputs().iter().map(|x| net.forward_unchecked(x)).collect();
    let clean_margins = data
        .labels()
        .iter()
        .zip(&clean)
        .map(|(&y, s)| margin(s, y))
        .collect::<Result<Vec<_>, _>>()?;
    let margin_loss = fraction_at_most(&clean_margins, gamma);
    let error = fraction_at_most(&clean_margins, 0.0);

    let per_trial = (0..trials)
        .into_par_iter()
        .map(|index| {
            let trial_seed = seed.derive(index as u64);
            let sample = sample_perturbation(net, sigma, trial_seed, PerturbationMode::Raw)?;
            let noisy_net = net.apply_perturbation(&sample.perturbation)?;
            let mut max_l2: f64 = 0.0;
            let mut max_linf: f64 = 0.0;
            let mut margins = Vec::with_capacity(data.len());
            for ((x, y), base) in data.iter().zip(&clean) {
                let noisy = noisy_net.forward_unchecked(x);
                let diff = linalg::sub_vec(&noisy, base);
                max_l2 = max_l2.max(linalg::l2_norm(&diff));
                max_linf = max_linf.max(linalg::linf_norm(&diff));
                margins.push(margin(&noisy, y)?);
            }
            Ok(McTrial {
                index,
                seed: trial_seed,
                max_change_l2: max_l2,
                max_change_linf: max_linf,
                perturbed_margin_loss: fraction_at_most(&margins, gamma / 2.0),
                survived: max_linf < gamma / 4.0,
            })
        })
        .collect::<Result<Vec<_>, PacBayesError>>()?;

    let n = trials as f64;
    let mean_perturbed_margin_loss =
        per_trial.iter().map(|t| t.perturbed_margin_loss).sum::<f64>() / n;
    let survival_count = per_trial.iter().filter(|t| t.survived).count();
    let p = survival_count as f64 / n;
    let kl = if sigma > 0.0 {
        Some(kl_gaussian(net, sigma)?)
    } else if net.weight_norm_sq() == 0.0 {
        Some(0.0)
    } else {
        None
    };
    let bound = match kl {
        Some(kl) if data.len() >= 2 => Some(margin_loss + pac_bayes_margin_term(kl, data.len(), delta)?),
        _ => None,
    };
    Ok(PacBayesEstimate {
        sigma,
        gamma,
        delta,
        trials,
        m: data.len(),
        margin_loss,
        error,
        mean_perturbed_margin_loss,
        survival_count,
        survival_probability: p,
        survival_stderr: (p * (1.0 - p) / n).sqrt(),
        survival_at_least_half: p >= 0.5,
        survival_basis: SURVIVAL_BASIS.to_string(),
        kl,
        bound,
        per_trial,
    })
}
