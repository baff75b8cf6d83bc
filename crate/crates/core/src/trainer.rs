//! Synthetic datasets and a plain mini-batch SGD trainer with hand-written
//! backpropagation for the bias-free ReLU networks in [`crate::network`].

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, gaussian_matrix, LinalgError, Matrix, RngSeed};
use crate::network::{argmax, LabeledDataset, NetworkError, ReluNetwork};

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("could not place {k} cluster centers {separation} apart in {n} dimensions")]
    Infeasible { n: usize, k: usize, separation: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(
        "non-finite weights after epoch {epoch}, step {step}; lower the learning rate (currently {learning_rate})"
    )]
    Diverged {
        epoch: usize,
        step: usize,
        learning_rate: f64,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    GaussianBlobs,
    /// Blob inputs with labels redrawn uniformly at random.
    RandomLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub separation: f64,
    pub seed: RngSeed,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.n == 0 {
            return Err(TrainError::InvalidTask("input dimension must be positive".into()));
        }
        if self.k < 2 {
            return Err(TrainError::InvalidTask(format!(
                "need at least 2 classes, got {}",
                self.k
            )));
        }
        if self.m < self.k {
            return Err(TrainError::InvalidTask(format!(
                "sample count {} is below class count {}",
                self.m, self.k
            )));
        }
        let sep_ok = match self.kind {
            TaskKind::GaussianBlobs => self.separation > 0.0,
            TaskKind::RandomLabels => self.separation >= 0.0,
        };
        if !sep_ok || !self.separation.is_finite() {
            return Err(TrainError::InvalidTask(format!(
                "invalid separation {}",
                self.separation
            )));
        }
        Ok(())
    }
}

/// Draws a dataset from `spec`.
///
/// Cluster centers are placed by rejection sampling so that every pair is
/// at least `separation` apart, then shifted to have zero mean (the
/// networks have no biases, so classes must differ in direction). Sample
/// `i` belongs to cluster `i % k` with unit-variance isotropic noise.
/// All inputs are finally divided by the largest input norm, so `B = 1`.
pub fn generate_dataset(spec: &TaskSpec) -> Result<LabeledDataset, TrainError> {
    spec.validate()?;
    let mut rng = spec.seed.rng();
    let half_width = spec.separation.max(1.0) * spec.k as f64;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.k);
    for _ in 0..spec.k {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let c: Vec<f64> = (0..spec.n)
                .map(|_| rng.random_range(-half_width..=half_width))
                .collect();
            let far_enough = centers
                .iter()
                .all(|o| linalg::l2_norm(&linalg::sub_vec(&c, o)) >= spec.separation);
            if far_enough {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(TrainError::Infeasible {
                n: spec.n,
                k: spec.k,
                separation: spec.separation,
            });
        }
    }
    let mean: Vec<f64> = (0..spec.n)
        .map(|j| centers.iter().map(|c| c[j]).sum::<f64>() / spec.k as f64)
        .collect();
    for c in &mut centers {
        for (v, mu) in c.iter_mut().zip(&mean) {
            *v -= mu;
        }
    }

    let mut inputs = Vec::with_capacity(spec.m);
    let mut labels = Vec::with_capacity(spec.m);
    for i in 0..spec.m {
        let label = i % spec.k;
        let x: Vec<f64> = centers[label]
            .iter()
            .map(|&c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                c + z
            })
            .collect();
        inputs.push(x);
        labels.push(label);
    }
    let radius = inputs.iter().map(|x| linalg::l2_norm(x)).fold(0.0, f64::max);
    if radius > 0.0 {
        for x in &mut inputs {
            x.iter_mut().for_each(|v| *v /= radius);
        }
    }
    if spec.kind == TaskKind::RandomLabels {
        let mut label_rng = spec.seed.derive(1).rng();
        labels = (0..spec.m).map(|_| label_rng.random_range(0..spec.k)).collect();
    }
    Ok(LabeledDataset::new(inputs, labels, spec.k)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    /// `max(0, 1 − (s_y − max_{j≠y} s_j))`.
    MulticlassHinge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Layer sizes `[n, h_1, ..., h_{d-1}, k]`.
    pub architecture: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    /// Multiplier on the He standard deviation `√(2 / fan_in)`.
    pub init_scale: f64,
    pub seed: RngSeed,
}

impl TrainConfig {
    pub fn new(architecture: Vec<usize>) -> Self {
        Self {
            architecture,
            learning_rate: 0.1,
            epochs: 100,
            batch_size: 32,
            loss: LossKind::CrossEntropy,
            init_scale: 1.0,
            seed: RngSeed(0),
        }
    }

    pub fn validate(&self, data: &LabeledDataset) -> Result<(), TrainError> {
        let arch = &self.architecture;
        if arch.len() < 2 || arch.contains(&0) {
            return Err(TrainError::InvalidConfig(format!(
                "architecture {arch:?} needs at least two positive sizes"
            )));
        }
        if arch[0] != data.input_dim() {
            return Err(TrainError::InvalidConfig(format!(
                "architecture input {} does not match data dimension {}",
                arch[0],
                data.input_dim()
            )));
        }
        if arch[arch.len() - 1] != data.num_classes() {
            return Err(TrainError::InvalidConfig(format!(
                "architecture output {} does not match {} classes",
                arch[arch.len() - 1],
                data.num_classes()
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "init scale must be positive, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

/// He-style Gaussian initialization; layer `i` draws from `seed.derive(i)`.
pub fn init_network(
    architecture: &[usize],
    init_scale: f64,
    seed: RngSeed,
) -> Result<ReluNetwork, TrainError> {
    let layers = architecture
        .windows(2)
        .enumerate()
        .map(|(i, pair)| {
            let std = init_scale * (2.0 / pair[0] as f64).sqrt();
            gaussian_matrix(pair[1], pair[0], std, seed.derive(i as u64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ReluNetwork::new(layers)?)
}

/// Loss of one sample and its gradient with respect to the scores.
pub fn loss_with_score_grad(scores: &[f64], y: usize, loss: LossKind) -> (f64, Vec<f64>) {
    match loss {
        LossKind::CrossEntropy => {
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let value = z.ln() + max - scores[y];
            let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
            grad[y] -= 1.0;
            (value, grad)
        }
        LossKind::MulticlassHinge => {
            let mut rival = if y == 0 { 1 } else { 0 };
            for (j, &s) in scores.iter().enumerate() {
                if j != y && s > scores[rival] {
                    rival = j;
                }
            }
            let value = 1.0 - scores[y] + scores[rival];
            let mut grad = vec![0.0; scores.len()];
            if value > 0.0 {
                grad[rival] = 1.0;
                grad[y] = -1.0;
                (value, grad)
            } else {
                (0.0, grad)
            }
        }
    }
}

/// Per-sample loss and gradient for every layer, by backpropagation.
/// The ReLU derivative at 0 is taken as 0.
pub fn loss_and_gradient(
    net: &ReluNetwork,
    x: &[f64],
    y: usize,
    loss: LossKind,
) -> Result<(f64, Vec<Matrix>), NetworkError> {
    let pre = net.layer_outputs(x)?;
    if y >= net.output_dim() {
        return Err(NetworkError::LabelOutOfRange {
            label: y,
            classes: net.output_dim(),
        });
    }
    let mut grads: Vec<Matrix> = net
        .layers()
        .iter()
        .map(|w| Matrix::zeros(w.rows(), w.cols()))
        .collect();
    let value = accumulate_gradient(net, x, &pre, y, loss, &mut grads, 1.0);
    Ok((value, grads))
}

fn accumulate_gradient(
    net: &ReluNetwork,
    x: &[f64],
    pre: &[Vec<f64>],
    y: usize,
    loss: LossKind,
    grads: &mut [Matrix],
    weight: f64,
) -> f64 {
    let d = net.depth();
    let (value, mut delta) = loss_with_score_grad(&pre[d - 1], y, loss);
    for i in (0..d).rev() {
        let activation: Vec<f64> = if i == 0 {
            x.to_vec()
        } else {
            linalg::relu(&pre[i - 1])
        };
        let cols = activation.len();
        let g = grads[i].data_mut();
        for (r, &dr) in delta.iter().enumerate() {
            if dr == 0.0 {
                continue;
            }
            let row = &mut g[r * cols..(r + 1) * cols];
            for (gv, &a) in row.iter_mut().zip(&activation) {
                *gv += weight * dr * a;
            }
        }
        if i > 0 {
            let back = net.layers()[i].apply_t(&delta);
            delta = back
                .into_iter()
                .zip(&pre[i - 1])
                .map(|(b, &z)| if z > 0.0 { b } else { 0.0 })
                .collect();
        }
    }
    value
}

/// Mean loss over the whole dataset.
pub fn dataset_loss(
    net: &ReluNetwork,
    data: &LabeledDataset,
    loss: LossKind,
) -> Result<f64, NetworkError> {
    data.check_compatible(net)?;
    let total: f64 = data
        .iter()
        .map(|(x, y)| loss_with_score_grad(&net.forward_unchecked(x), y, loss).0)
        .sum();
    Ok(total / data.len() as f64)
}

/// Training error `L̂_0` under lowest-index tie-breaking for predictions.
pub fn prediction_error(net: &ReluNetwork, data: &LabeledDataset) -> Result<f64, NetworkError> {
    data.check_compatible(net)?;
    let wrong = data
        .iter()
        .filter(|&(x, y)| argmax(&net.forward_unchecked(x)) != y)
        .count();
    Ok(wrong as f64 / data.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: ReluNetwork,
    pub initial_loss: f64,
    /// Full-dataset mean loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

pub fn train_sgd(data: &LabeledDataset, cfg: &TrainConfig) -> Result<ReluNetwork, TrainError> {
    Ok(train_sgd_with_history(data, cfg)?.network)
}

/// Mini-batch SGD. Each epoch shuffles sample order with a stream derived
/// from `cfg.seed`; each step averages per-sample gradients over the batch.
/// Serial and deterministic: the same config gives bit-identical weights.
pub fn train_sgd_with_history(
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate(data)?;
    let mut net = init_network(&cfg.architecture, cfg.init_scale, cfg.seed)?;
    let initial_loss = dataset_loss(&net, data, cfg.loss)?;
    let mut shuffle_rng = cfg.seed.derive(u64::MAX).rng();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut grads: Vec<Matrix> = net
        .layers()
        .iter()
        .map(|w| Matrix::zeros(w.rows(), w.cols()))
        .collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads
                .iter_mut()
                .for_each(|g| g.data_mut().iter_mut().for_each(|v| *v = 0.0));
            let weight = 1.0 / batch.len() as f64;
            for &idx in batch {
                let x = &data.inputs()[idx];
                let pre = net.layer_outputs(x)?;
                accumulate_gradient(&net, x, &pre, data.labels()[idx], cfg.loss, &mut grads, weight);
            }
            let mut layers = net.into_layers();
            for (w, g) in layers.iter_mut().zip(&grads) {
                w.axpy_in_place(-cfg.learning_rate, g);
            }
            if layers.iter().chain(&grads).any(|w| !w.all_finite()) {
                return Err(TrainError::Diverged {
                    epoch,
                    step,
                    learning_rate: cfg.learning_rate,
                });
            }
            net = ReluNetwork::new(layers)?;
        }
        epoch_losses.push(dataset_loss(&net, data, cfg.loss)?);
    }
    Ok(TrainOutcome {
        network: net,
        initial_loss,
        epoch_losses,
    })
}
