//! PPO with an asymmetric actor-critic, running normalizers and GAE.

pub mod checkpoint;
pub mod eval;
pub mod nn;
pub mod normalize;
pub mod policy;
pub mod ppo;
pub mod train;
pub mod vecenv;

pub use checkpoint::Checkpoint;
pub use eval::{evaluate, EvalReport};
pub use policy::{ActorCritic, PolicyParams};
pub use ppo::{gae_advantages, ppo_update, PpoParams, RolloutBatch, UpdateMetrics};
pub use train::{
    metrics_csv, train, train_with, MetricsRow, NormalizeFlags, TrainConfig, TrainOutput,
    METRICS_CSV_HEADER,
};

use crate::geometry::Vec3;
use crate::simenv::SimError;
use crate::trajectory::JointTrajectory;

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite training state: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("checkpoint does not match: {0}")]
    Mismatch(String),
    #[error("config: {0}")]
    Config(String),
}

/// `exp(-alpha * ||X - X_desired||_F)` over stacked fingertip positions.
pub fn hand_tracking_reward(
    fingertips: &[Vec3],
    desired: &[Vec3],
    alpha: f64,
) -> Result<f64, RlError> {
    if fingertips.len() != desired.len() {
        return Err(RlError::Shape(format!(
            "{} fingertips vs {} desired",
            fingertips.len(),
            desired.len()
        )));
    }
    let sq: f64 = fingertips
        .iter()
        .zip(desired)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok((-alpha * sq.sqrt()).exp())
}

/// PD targets `base(t) + clamp(delta, ±clip)`, holding the end waypoint past the end.
pub fn residual_action(base: &JointTrajectory, t: f64, delta: &[f64], clip: f64) -> Vec<f64> {
    base.sample(t)
        .iter()
        .zip(delta)
        .map(|(q, d)| q + d.clamp(-clip, clip))
        .collect()
}
