use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::pdg::JointTable;

/// Inner optimization over joint logits: Adam, optionally followed by an
/// L-BFGS refinement stage for high-precision solves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerSolverConfig {
    pub max_iters: usize,
    pub step_size: f64,
    pub tolerance: f64,
    #[serde(default)]
    pub refine_iters: usize,
    #[serde(default, skip)]
    pub warm_start: Option<JointTable>,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        InnerSolverConfig { max_iters: 300, step_size: 0.05, tolerance: 1e-7, refine_iters: 0, warm_start: None }
    }
}

impl InnerSolverConfig {
    /// Short warm-started solve used between parameter updates.
    pub fn warm() -> Self {
        InnerSolverConfig { max_iters: 20, ..Self::default() }
    }

    pub fn cold(max_iters: usize) -> Self {
        InnerSolverConfig { max_iters, ..Self::default() }
    }

    /// Solve to near machine precision.
    pub fn precise() -> Self {
        InnerSolverConfig { max_iters: 50, step_size: 0.05, tolerance: 1e-11, refine_iters: 2000, warm_start: None }
    }

    pub fn with_warm_start(mut self, mu: Option<JointTable>) -> Self {
        self.warm_start = mu;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 && self.refine_iters == 0 {
            return invalid("inner solver needs at least one iteration");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return invalid("inner step size must be positive");
        }
        if !(self.tolerance >= 0.0) {
            return invalid("inner tolerance must be non-negative");
        }
        Ok(())
    }
}
