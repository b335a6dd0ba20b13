//! Post-hoc calibration of classifiers on held-out logits.
//!
//! The crate trains small dense "g-layer" networks, transparently
//! initialized to the identity, between a frozen classifier's logits and
//! the softmax, minimizing negative log-likelihood on a calibration set.
//! It also provides the classical scaling baselines (temperature, vector,
//! matrix with off-diagonal regularization), multi-class calibration
//! metrics (KS, ECE, Brier, top-r variants), and synthetic logit
//! distributions with closed-form posteriors for end-to-end verification.

pub mod calibrators;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod network;
pub mod synthetic;
pub mod training;

pub use calibrators::{Calibrator, TemperatureSearch};
pub use dataset::{load_logits, make_folds, save_logits, split, DataFormat, FoldPlan, LogitDataset};
pub use error::{Error, Result};
pub use metrics::{MetricsReport, Prediction};
pub use network::{softmax, ForwardTrace, GLayerNetwork, Gradients};
pub use synthetic::{GaussianPosterior, Miscalibration, SyntheticSpec};
pub use training::{BatchSize, HyperGrid, HyperParams, OptimizerKind, TrainConfig, TrainLog};
