//! The black-box boundary: the evaluator contract and its two
//! implementations, an external process speaking the `in.json`/`out.json`
//! protocol and an analytic burner stand-in.

mod subprocess;
mod synthetic;

pub use subprocess::{subprocess_evaluate, InputFile, OutputFile, SubprocessEvaluator};
pub use synthetic::{
    fidelity_bias, grid_oracle, synthetic_evaluate, synthetic_response, OracleOptimum,
    OracleReport, SyntheticBurnerParams, SyntheticEvaluator,
};

use serde::{Deserialize, Serialize};

use crate::problem::DesignPoint;

/// One design handed to an evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    pub h: f64,
    pub l: f64,
    pub s: f64,
    pub run_id: String,
    /// Informational; evaluators do not need it.
    pub z: f64,
}

impl EvaluationRequest {
    pub fn new(x: &DesignPoint, run_id: impl Into<String>, z: f64) -> Self {
        Self {
            h: x.h,
            l: x.l,
            s: x.s,
            run_id: run_id.into(),
            z,
        }
    }

    pub fn point(&self) -> DesignPoint {
        DesignPoint::new(self.h, self.l, self.s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    /// Mean reactor temperature, K.
    pub t_mean: f64,
    pub nox: f64,
    /// Seconds spent producing this result.
    pub wall_time: f64,
    pub mesh_cells: u64,
    pub converged: bool,
    /// Diagnostic for failed evaluations.
    pub message: Option<String>,
    /// Wall time the external solver reported about itself, if any.
    pub reported_wall_time: Option<f64>,
}

impl EvaluationResult {
    /// A non-converged result carrying the failure reason.
    pub fn failed(message: impl Into<String>, wall_time: f64) -> Self {
        Self {
            t_mean: f64::NAN,
            nox: f64::NAN,
            wall_time,
            mesh_cells: 0,
            converged: false,
            message: Some(message.into()),
            reported_wall_time: None,
        }
    }
}

/// Anything that can turn a design into a measured response.
///
/// Failures are reported as `converged == false` results, never as panics or
/// errors, so one bad simulation cannot take down the optimization loop.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, req: &EvaluationRequest) -> EvaluationResult;

    /// Short identifier used in logs.
    fn name(&self) -> &'static str;
}
