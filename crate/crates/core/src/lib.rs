//! Discrete probabilistic dependency graphs, their inconsistency, and local
//! inconsistency resolution (LIR), with reduction harnesses and a tabular
//! GFlowNet testbed.

pub mod error;
pub mod gflownet;
pub mod inconsistency;
pub mod lir;
pub mod metrics;
pub mod ode;
pub mod optim;
pub mod pdg;
pub mod reductions;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use inconsistency::{envelope_grad, oinc, sdef, solve_inconsistency, InconsistencyResult, InnerSolverConfig};
pub use pdg::{joint_index, Cpd, CpdKind, Focus, Hyperarc, JointTable, ParametricPDG, Variable};
