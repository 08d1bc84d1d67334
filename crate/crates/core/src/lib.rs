//! Performance prediction for cell-based neural architecture search with a
//! meta-learned convolutional neural process.
//!
//! The pipeline, end to end:
//!
//! 1. [`archspace`] holds candidate cells and their benchmark accuracies
//!    (loaded from JSONL or generated by the surrogate benchmark).
//! 2. [`metafeatures`] encodes every cell as a short, min-max normalized
//!    vector of operation counts, path weights and structural measures.
//! 3. [`taskgen`] turns the handful of observed architectures into many
//!    synthetic tasks by resampling with replacement, and draws
//!    context/target splits.
//! 4. [`convnp`] is the predictor; [`objectives`] holds its losses and
//!    [`trainer`] the meta-training loop built on the [`diffcore`] autodiff
//!    engine.
//! 5. [`search`] runs the whole selection procedure and [`metrics`] scores
//!    the outcome; [`baselines`] provides regression and search baselines
//!    that consume the same inputs.

pub mod archspace;
pub mod baselines;
pub mod convnp;
pub mod diffcore;
pub mod error;
pub mod experiment;
pub mod metafeatures;
pub mod metrics;
pub mod objectives;
pub mod rng;
pub mod search;
pub mod taskgen;
pub mod trainer;

pub use archspace::{BenchmarkRecord, BenchmarkStore, CellGraph, SpaceKind};
pub use convnp::{ConvNp, ConvNpConfig, PredictionSet};
pub use error::{Error, Result};
pub use metafeatures::{MetaFeatureVector, NormalizationBounds};
pub use objectives::{LossConfig, LossMode};
pub use search::{SearchConfig, SearchResult};
pub use taskgen::{ObservedDataset, SplitMode, SyntheticTask};
pub use trainer::{TrainConfig, TrainReport};
