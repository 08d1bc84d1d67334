//! Comparison methods: regression predictors fitted on the observed set
//! (least squares, ridge, MLP) and search baselines that spend their whole
//! budget on benchmark lookups (random search, regularized evolution).

mod cv;
mod evolution;
mod linear;
mod mlp;

pub use cv::{fit_predictor, CvConfig, FittedPredictor, Hyper, PredictorKind};
pub use evolution::{random_search, regularized_evolution, EvolutionConfig, SearchOutcome};
pub use linear::{fit_linear, fit_ridge, LinearModel};
pub use mlp::{MlpHyper, MlpModel};
