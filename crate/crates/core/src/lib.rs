// Validation negates comparisons on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod baselines;
pub mod geometry;
pub mod kinematics;
pub mod pointcloud;
pub mod rl;
pub mod simenv;
pub mod trajectory;
