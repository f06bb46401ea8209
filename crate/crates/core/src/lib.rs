//! Subsampled regression-tree ensembles with U-statistic based inference.
//!
//! Ensembles average trees grown on size-`k` subsamples. Viewed as incomplete
//! U-statistics, their predictions are asymptotically normal, which gives
//! confidence intervals for the expected prediction and chi-square tests for
//! whether a set of features changes the predictions.

pub mod dataset;
pub mod ensemble;
mod error;
pub mod inference;
pub mod kernel;
pub mod linalg;
pub mod rng;
pub mod simharness;
pub mod subsampling;
pub mod tree;
pub mod variance;

pub use dataset::{
    generate, load_csv, load_points, Dataset, GeneratorKind, GeneratorSpec, PredictionPoint,
};
pub use ensemble::{build, predict_full_and_reduced, EnsembleConfig, EnsemblePrediction};
pub use error::{Error, Result};
pub use inference::{
    confidence_interval, mean_test, randomization_battery, significance_test, ConfidenceInterval,
    SignificanceConfig, TestResult,
};
pub use kernel::{FeatureSet, Kernel, MeanKernel, TreeKernel};
pub use subsampling::{SubsamplePlan, SubsampleScheme};
pub use tree::{fit_tree, TreeConfig, TreeModel};
pub use variance::{ensemble_variance, VarianceEstimate, VarianceMethod};
