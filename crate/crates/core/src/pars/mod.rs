//! Linear policies trained by parallel augmented random search.

mod policy;
mod stats;
mod trainer;

pub use policy::{Checkpoint, Policy, DEFAULT_OBS_EPS};
pub use stats::RunningStats;
pub use trainer::{
    ars_update, evaluate, mean_reward, meta_adapt, pars_iteration, train, write_curve, CurvePoint, Episode,
    GridRollout, IterationStats, ParsConfig, Rollout, TaskSampler, TrainResult, UniformSampler,
};
