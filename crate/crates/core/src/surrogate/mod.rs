//! Gaussian-process surrogates: Matérn-5/2 ARD kernel, exact GP regression
//! with output standardization, and MAP hyperparameter training.

mod fit;
mod kernel;
mod model;

pub use fit::{fit, map_objective, FitOptions, FitReport, GammaPrior, HyperPriors};
pub use kernel::{ard_importance, matern25, GpHyperparameters, NOISE_FLOOR};
pub use model::{
    CandidatePosterior, GpModel, JointPosterior, PosteriorPrediction, Standardization, N_PARAMS,
};
