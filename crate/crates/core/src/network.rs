//! Bias-free feedforward ReLU networks `f(x) = W_d φ(W_{d-1} φ(... φ(W_1 x)))`,
//! weight perturbations, labeled datasets, and margin statistics.

use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network needs at least one layer")]
    NoLayers,
    #[error("layer {layer} has {found} columns but the previous layer has {expected} rows")]
    BrokenChain {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("input has length {found}, network expects {expected}")]
    InputDimension { expected: usize, found: usize },
    #[error("layer {layer} has zero spectral norm")]
    ZeroLayer { layer: usize },
    #[error("perturbation has {found} layers, network has {expected}")]
    PerturbationDepth { expected: usize, found: usize },
    #[error("perturbation layer {layer} is {found:?}, network layer is {expected:?}")]
    PerturbationShape {
        layer: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("margin is undefined with a single class")]
    SingleClass,
    #[error("class index {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has {inputs} inputs but {labels} labels")]
    LengthMismatch { inputs: usize, labels: usize },
    #[error("input {index} has length {found}, expected {expected}")]
    RaggedInput {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("input {index} has a non-finite coordinate")]
    NonFiniteInput { index: usize },
    #[error("dataset has {data} classes, network outputs {network}")]
    ClassCount { data: usize, network: usize },
    #[error("margin must be finite and non-negative, got {0}")]
    InvalidGamma(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Ordered layers `W_1..W_d` of a ReLU network without biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluNetwork {
    layers: Vec<Matrix>,
}

impl ReluNetwork {
    pub fn new(layers: Vec<Matrix>) -> Result<Self, NetworkError> {
        if layers.is_empty() {
            return Err(NetworkError::NoLayers);
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].cols() != pair[0].rows() {
                return Err(NetworkError::BrokenChain {
                    layer: i + 1,
                    expected: pair[0].rows(),
                    found: pair[1].cols(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Matrix> {
        self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    /// Largest matrix dimension over all layers, input dimension included.
    pub fn width(&self) -> usize {
        self.layers
            .iter()
            .map(|w| w.rows().max(w.cols()))
            .max()
            .unwrap_or(0)
    }

    /// Layer sizes `[n, h_1, ..., k]`.
    pub fn architecture(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Matrix::rows))
            .collect()
    }

    pub fn spectral_norms(&self) -> Result<Vec<f64>, LinalgError> {
        self.layers.iter().map(Matrix::spectral_norm).collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetworkError> {
        if x.len() != self.input_dim() {
            return Err(NetworkError::InputDimension {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Scores `f_w(x)`; ReLU between layers, none after the last.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetworkError> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.layers[0].apply(x);
        for w in &self.layers[1..] {
            z = w.apply(&linalg::relu(&z));
        }
        z
    }

    /// Pre-activation outputs `f^1(x), ..., f^d(x)`; the last equals [`forward`](Self::forward).
    pub fn layer_outputs(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, NetworkError> {
        self.check_input(x)?;
        let mut outs: Vec<Vec<f64>> = Vec::with_capacity(self.depth());
        outs.push(self.layers[0].apply(x));
        for w in &self.layers[1..] {
            let prev = outs.last().expect("at least one layer");
            outs.push(w.apply(&linalg::relu(prev)));
        }
        Ok(outs)
    }

    pub fn apply_perturbation(&self, pert: &Perturbation) -> Result<ReluNetwork, NetworkError> {
        pert.check_compatible(self)?;
        let layers = self
            .layers
            .iter()
            .zip(pert.layers())
            .map(|(w, u)| w.add(u))
            .collect::<Result<Vec<_>, _>>()?;
        ReluNetwork::new(layers)
    }

    /// `|vec(w)|² = Σ ‖W_i‖_F²`.
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|w| w.data().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Rescales every layer to spectral norm `β = (Π ‖W_i‖_2)^{1/d}`.
    ///
    /// ReLU is positively homogeneous, so the returned network computes the
    /// same function. Returns the rebalanced network and `β`.
    pub fn rebalance(&self) -> Result<(ReluNetwork, f64), NetworkError> {
        let norms = self.spectral_norms()?;
        if let Some(layer) = norms.iter().position(|&s| s == 0.0) {
            return Err(NetworkError::ZeroLayer { layer });
        }
        let beta = geometric_mean(&norms);
        let layers = self
            .layers
            .iter()
            .zip(&norms)
            .map(|(w, s)| w.scale(beta / s))
            .collect();
        Ok((ReluNetwork::new(layers)?, beta))
    }

    /// Index of the top score; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize, NetworkError> {
        Ok(argmax(&self.forward(x)?))
    }
}

pub(crate) fn geometric_mean(values: &[f64]) -> f64 {
    let mean_log = values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64;
    mean_log.exp()
}

pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = j;
        }
    }
    best
}

/// Per-layer additive perturbation `U_1..U_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    layers: Vec<Matrix>,
}

impl Perturbation {
    pub fn new(layers: Vec<Matrix>) -> Self {
        Self { layers }
    }

    pub fn zeros_like(net: &ReluNetwork) -> Self {
        Self::new(
            net.layers()
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
        )
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn negated(&self) -> Self {
        Self::new(self.layers.iter().map(|u| u.scale(-1.0)).collect())
    }

    pub fn check_compatible(&self, net: &ReluNetwork) -> Result<(), NetworkError> {
        if self.layers.len() != net.depth() {
            return Err(NetworkError::PerturbationDepth {
                expected: net.depth(),
                found: self.layers.len(),
            });
        }
        for (layer, (u, w)) in self.layers.iter().zip(net.layers()).enumerate() {
            if u.shape() != w.shape() {
                return Err(NetworkError::PerturbationShape {
                    layer,
                    expected: w.shape(),
                    found: u.shape(),
                });
            }
        }
        Ok(())
    }
}

/// Inputs with integer labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, NetworkError> {
        if inputs.is_empty() {
            return Err(NetworkError::EmptyDataset);
        }
        if inputs.len() != labels.len() {
            return Err(NetworkError::LengthMismatch {
                inputs: inputs.len(),
                labels: labels.len(),
            });
        }
        let n = inputs[0].len();
        for (index, x) in inputs.iter().enumerate() {
            if x.len() != n || n == 0 {
                return Err(NetworkError::RaggedInput {
                    index,
                    expected: n.max(1),
                    found: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(NetworkError::NonFiniteInput { index });
            }
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(NetworkError::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    /// `B`: the largest input ℓ2 norm.
    pub fn radius(&self) -> f64 {
        self.inputs
            .iter()
            .map(|x| linalg::l2_norm(x))
            .fold(0.0, f64::max)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.inputs
            .iter()
            .map(Vec::as_slice)
            .zip(self.labels.iter().copied())
    }

    /// Copy with every input multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            inputs: self
                .inputs
                .iter()
                .map(|x| x.iter().map(|v| v * c).collect())
                .collect(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        }
    }

    pub fn check_compatible(&self, net: &ReluNetwork) -> Result<(), NetworkError> {
        if self.input_dim() != net.input_dim() {
            return Err(NetworkError::InputDimension {
                expected: net.input_dim(),
                found: self.input_dim(),
            });
        }
        if self.num_classes != net.output_dim() {
            return Err(NetworkError::ClassCount {
                data: self.num_classes,
                network: net.output_dim(),
            });
        }
        Ok(())
    }
}

/// `scores[y] − max_{j≠y} scores[j]`.
pub fn margin(scores: &[f64], y: usize) -> Result<f64, NetworkError> {
    if scores.len() < 2 {
        return Err(NetworkError::SingleClass);
    }
    if y >= scores.len() {
        return Err(NetworkError::LabelOutOfRange {
            label: y,
            classes: scores.len(),
        });
    }
    let best_other = scores
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(scores[y] - best_other)
}

/// Margin of every sample, in dataset order.
pub fn margins(net: &ReluNetwork, data: &LabeledDataset) -> Result<Vec<f64>, NetworkError> {
    data.check_compatible(net)?;
    data.iter()
        .map(|(x, y)| margin(&net.forward_unchecked(x), y))
        .collect()
}

/// Fraction of samples whose margin is at most `gamma`. With `gamma = 0`
/// this is the classification error, a tie counting as an error.
pub fn margin_loss(
    net: &ReluNetwork,
    data: &LabeledDataset,
    gamma: f64,
) -> Result<f64, NetworkError> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(NetworkError::InvalidGamma(gamma));
    }
    let ms = margins(net, data)?;
    Ok(fraction_at_most(&ms, gamma))
}

pub(crate) fn fraction_at_most(margins: &[f64], gamma: f64) -> f64 {
    margins.iter().filter(|&&m| m <= gamma).count() as f64 / margins.len() as f64
}

pub fn apply_perturbation(
    net: &ReluNetwork,
    pert: &Perturbation,
) -> Result<ReluNetwork, NetworkError> {
    net.apply_perturbation(pert)
}

pub fn rebalance(net: &ReluNetwork) -> Result<(ReluNetwork, f64), NetworkError> {
    net.rebalance()
}

pub fn weight_norm_sq(net: &ReluNetwork) -> f64 {
    net.weight_norm_sq()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, RngSeed};

    fn net(layers: Vec<Matrix>) -> ReluNetwork {
        ReluNetwork::new(layers).unwrap()
    }

    #[test]
    fn construction_checks_chain() {
        assert_eq!(ReluNetwork::new(vec![]), Err(NetworkError::NoLayers));
        let err = ReluNetwork::new(vec![Matrix::zeros(3, 2), Matrix::zeros(2, 4)]).unwrap_err();
        assert_eq!(
            err,
            NetworkError::BrokenChain {
                layer: 1,
                expected: 3,
                found: 4
            }
        );
        let n = net(vec![Matrix::zeros(5, 3), Matrix::zeros(2, 5)]);
        assert_eq!((n.depth(), n.input_dim(), n.output_dim(), n.width()), (2, 3, 2, 5));
        assert_eq!(n.architecture(), vec![3, 5, 2]);
    }

    #[test]
    fn forward_examples() {
        let one = net(vec![Matrix::identity(2)]);
        assert_eq!(one.forward(&[1.0, -2.0]).unwrap(), vec![1.0, -2.0]);
        let two = net(vec![Matrix::identity(2), Matrix::identity(2)]);
        assert_eq!(two.forward(&[1.0, -1.0]).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(
            two.forward(&[1.0]),
            Err(NetworkError::InputDimension { .. })
        ));
    }

    #[test]
    fn layer_outputs_examples() {
        let one = net(vec![Matrix::identity(2)]);
        assert_eq!(one.layer_outputs(&[3.0, -1.0]).unwrap(), vec![vec![3.0, -1.0]]);
        let two = net(vec![Matrix::identity(2), Matrix::identity(2)]);
        assert_eq!(
            two.layer_outputs(&[1.0, -1.0]).unwrap(),
            vec![vec![1.0, -1.0], vec![1.0, 0.0]]
        );
    }

    #[test]
    fn margin_examples() {
        assert_eq!(margin(&[2.0, 0.5, -1.0], 0).unwrap(), 1.5);
        assert_eq!(margin(&[1.0, 1.0], 0).unwrap(), 0.0);
        assert!((margin(&[0.3, 0.9], 0).unwrap() + 0.6).abs() < 1e-15);
        assert_eq!(margin(&[1.0], 0), Err(NetworkError::SingleClass));
        assert!(margin(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn margin_loss_counts_ties_as_losses() {
        // scores = x for the single identity layer; margin = x[y] - x[other]
        let id = net(vec![Matrix::identity(2)]);
        let data = LabeledDataset::new(
            vec![
                vec![0.3, 0.0],
                vec![0.0, 0.3],
                vec![1.0, 0.0],
                vec![0.0, 1.0],
            ],
            vec![0, 1, 0, 1],
            2,
        )
        .unwrap();
        assert_eq!(margin_loss(&id, &data, 0.5).unwrap(), 0.5);
        assert_eq!(margin_loss(&id, &data, 0.0).unwrap(), 0.0);
        assert_eq!(margin_loss(&id, &data, 0.3).unwrap(), 0.5);
        assert_eq!(margin_loss(&id, &data, 1.0).unwrap(), 1.0);
        let tie = LabeledDataset::new(vec![vec![0.5, 0.5]], vec![0], 2).unwrap();
        assert_eq!(margin_loss(&id, &tie, 0.0).unwrap(), 1.0);
        assert!(margin_loss(&id, &data, -0.1).is_err());
        assert!(margin_loss(&id, &data, f64::NAN).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert_eq!(
            LabeledDataset::new(vec![], vec![], 2),
            Err(NetworkError::EmptyDataset)
        );
        assert!(matches!(
            LabeledDataset::new(vec![vec![1.0]], vec![0, 1], 2),
            Err(NetworkError::LengthMismatch { .. })
        ));
        assert!(matches!(
            LabeledDataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0, 1], 2),
            Err(NetworkError::RaggedInput { index: 1, .. })
        ));
        assert!(matches!(
            LabeledDataset::new(vec![vec![1.0]], vec![2], 2),
            Err(NetworkError::LabelOutOfRange { label: 2, .. })
        ));
        assert!(matches!(
            LabeledDataset::new(vec![vec![f64::NAN]], vec![0], 2),
            Err(NetworkError::NonFiniteInput { index: 0 })
        ));
        let d = LabeledDataset::new(vec![vec![3.0, 4.0], vec![1.0, 0.0]], vec![0, 1], 2).unwrap();
        assert_eq!(d.radius(), 5.0);
        let id3 = net(vec![Matrix::identity(3)]);
        assert!(d.check_compatible(&id3).is_err());
    }

    #[test]
    fn rebalance_example() {
        let n = net(vec![Matrix::diag(&[4.0, 1.0]), Matrix::identity(2)]);
        let (r, beta) = n.rebalance().unwrap();
        assert!((beta - 2.0).abs() < 1e-12);
        for w in r.layers() {
            assert!((w.spectral_norm().unwrap() - 2.0).abs() < 1e-9);
        }
        let zero = net(vec![Matrix::identity(2), Matrix::zeros(2, 2)]);
        assert_eq!(zero.rebalance(), Err(NetworkError::ZeroLayer { layer: 1 }));
    }

    #[test]
    fn rebalance_fixed_point() {
        let n = net(vec![Matrix::identity(3).scale(1.5), Matrix::identity(3).scale(1.5)]);
        let (r, beta) = n.rebalance().unwrap();
        assert!((beta - 1.5).abs() < 1e-12);
        for (a, b) in r.layers().iter().zip(n.layers()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perturbation_algebra() {
        let n = net(vec![
            gaussian_matrix(4, 3, 1.0, RngSeed(1)).unwrap(),
            gaussian_matrix(2, 4, 1.0, RngSeed(2)).unwrap(),
        ]);
        assert_eq!(n.apply_perturbation(&Perturbation::zeros_like(&n)).unwrap(), n);
        let neg = Perturbation::new(n.layers().iter().map(|w| w.scale(-1.0)).collect());
        let z = n.apply_perturbation(&neg).unwrap();
        assert_eq!(z.weight_norm_sq(), 0.0);
        let p = Perturbation::new(vec![
            gaussian_matrix(4, 3, 0.3, RngSeed(3)).unwrap(),
            gaussian_matrix(2, 4, 0.3, RngSeed(4)).unwrap(),
        ]);
        let back = n
            .apply_perturbation(&p)
            .unwrap()
            .apply_perturbation(&p.negated())
            .unwrap();
        for (a, b) in back.layers().iter().zip(n.layers()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-15 * (1.0 + y.abs()) * 4.0);
            }
        }
        let bad = Perturbation::new(vec![Matrix::zeros(4, 3)]);
        assert!(matches!(
            n.apply_perturbation(&bad),
            Err(NetworkError::PerturbationDepth { .. })
        ));
        let bad = Perturbation::new(vec![Matrix::zeros(4, 3), Matrix::zeros(4, 2)]);
        assert!(matches!(
            n.apply_perturbation(&bad),
            Err(NetworkError::PerturbationShape { layer: 1, .. })
        ));
    }

    #[test]
    fn weight_norm_sq_examples() {
        let single = net(vec![Matrix::new(1, 2, vec![3.0, 4.0]).unwrap()]);
        assert_eq!(single.weight_norm_sq(), 25.0);
        let zero = net(vec![Matrix::zeros(2, 2), Matrix::zeros(3, 2)]);
        assert_eq!(zero.weight_norm_sq(), 0.0);
    }

    #[test]
    fn predict_breaks_ties_low() {
        let id = net(vec![Matrix::identity(3)]);
        assert_eq!(id.predict(&[1.0, 1.0, 0.0]).unwrap(), 0);
        assert_eq!(id.predict(&[0.0, 2.0, 2.0]).unwrap(), 1);
    }
}
