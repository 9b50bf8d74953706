//! Planar push and wall-pivot environments with domain randomization.

mod config;
mod env;
mod episode;
pub mod physics;
mod robot;
mod setup;
pub mod tasks;

pub use config::{
    ActionConfig, AssetPaths, EnvConfig, GeometrySpec, InitConfig, InitMode, ObjectSpec,
    PhysicsConfig, PolicyMode, PremanipConfig, RandomizationConfig, RewardConfig, RewardMode,
    SceneSpec, SegmentSpec, TargetConfig, Task,
};
pub use env::{
    randomize_domain, DoneReason, DynamicsParams, Env, EnvState, EpisodeLogEntry, StepOutcome,
};
pub use episode::{
    episode_csv, run_episode, write_episode_csv, Control, EpisodeRecord, EpisodeSummary,
    EPISODE_CSV_HEADER,
};
pub use robot::{CapsuleSpec, PlanarRobot, Plane};
pub use setup::TaskSetup;

use crate::trajectory::TrajectoryError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("retargeting: {0}")]
    Retarget(String),
    #[error("reset failed after 10 attempts: {0}")]
    Reset(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[cfg(test)]
mod tests;
