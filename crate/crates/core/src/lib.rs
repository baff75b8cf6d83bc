//! Norm-based generalization bounds for bias-free feedforward ReLU networks:
//! norm computation, a small SGD trainer, the spectrally-normalized margin
//! bound and its competitors, and Monte-Carlo checks of the perturbation
//! argument behind it.

pub mod bounds;
pub mod cli;
pub mod formats;
pub mod linalg;
pub mod manifest;
pub mod network;
pub mod pacbayes;
pub mod trainer;

pub use bounds::{BoundConfig, BoundMode, BoundReport, NormProfile};
pub use linalg::{Matrix, RngSeed};
pub use network::{LabeledDataset, Perturbation, ReluNetwork};
pub use pacbayes::{PacBayesEstimate, PerturbationTrial};
