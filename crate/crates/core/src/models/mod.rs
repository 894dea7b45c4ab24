//! Built-in high/low-fidelity model pairs and the interface for user models.

pub mod convdiff;
pub mod pulse;

use std::sync::Arc;

use crate::error::Result;
use crate::grid::{Field, Grid};
use crate::pce::ParamBounds;

pub use convdiff::{ConvDiffParams, ConvDiffProblem, ConvDiffSolver};
pub use pulse::{PulseCase, PulseParams, PulseProblem};

/// A pair of models sharing one output grid and one parameter box.
///
/// HF outputs must already live on [`Problem::grid`]; solvers on finer meshes
/// restrict before returning.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;

    fn bounds(&self) -> &ParamBounds;

    fn grid(&self) -> &Arc<Grid>;

    /// High-fidelity output at a physical parameter point.
    fn eval_hf(&self, theta: &[f64]) -> Result<Field>;

    /// Low-fidelity output at a physical parameter point.
    fn eval_lf(&self, theta: &[f64]) -> Result<Field>;

    fn n_params(&self) -> usize {
        self.bounds().dim()
    }

    /// Number of output fields per run.
    fn n_qoi(&self) -> usize {
        1
    }

    /// Every QoI at the high fidelity, in a fixed order.
    fn eval_hf_all(&self, theta: &[f64]) -> Result<Vec<Field>> {
        Ok(vec![self.eval_hf(theta)?])
    }

    /// Every QoI at the low fidelity, in a fixed order.
    fn eval_lf_all(&self, theta: &[f64]) -> Result<Vec<Field>> {
        Ok(vec![self.eval_lf(theta)?])
    }
}
