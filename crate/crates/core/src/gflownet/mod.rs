//! Tabular GFlowNets on HyperGrid.

mod env;
mod loss;
mod policy;
mod train;

pub use env::{enumerate_modes, HyperGrid, ModeSet, RewardSpec, RewardVariant, REWARD_FLOOR};
pub use loss::{loss_gradients, loss_lpv, loss_modlpv, loss_modtb, loss_tb, loss_value, LossKind, LOSS_CLAMP};
pub use policy::{
    enumerate_trajectories, exact_terminal_distribution, sample_trajectories, trajectory_log_prob, BackwardPolicy,
    SamplingPolicy, TabularGFN, Trajectory, TrajectoryBatch,
};
pub use train::{eval_metrics, target_distribution, train, train_full_coverage, EvalMetrics, FullCoverageFit, TrainConfig, TrainRecord, TrainTrace};
