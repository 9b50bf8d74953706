use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::ik::{ik_solve_link, IkMode, IkParams};
use super::{KinematicChain, KinematicsError, RetargetOffsets};
use crate::geometry::{Pose, Vec3};
use crate::trajectory::{retime_velocity_limited, JointPoint, JointTrajectory};

pub const DEFAULT_JUMP_THRESH: f64 = 0.5;

/// Hand keypoints for one frame: the middle-finger base knuckle pose and the fingertip positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandObservation {
    #[serde(default)]
    pub t: i64,
    pub knuckle_pose: Pose,
    /// `[qw, qx, qy, qz]`; defaults to the knuckle orientation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wrist_orientation: Option<[f64; 4]>,
    pub fingertips: Vec<Vec3>,
    #[serde(default = "default_true")]
    pub valid: bool,
}

fn default_true() -> bool {
    true
}

impl HandObservation {
    pub fn wrist_quat(&self) -> UnitQuaternion<f64> {
        match self.wrist_orientation {
            Some(w) => UnitQuaternion::new_normalize(Quaternion::new(w[0], w[1], w[2], w[3])),
            None => self.knuckle_pose.orientation,
        }
    }

    pub fn is_usable(&self) -> bool {
        self.valid
            && self.knuckle_pose.is_finite()
            && self
                .fingertips
                .iter()
                .all(|f| f.iter().all(|v| v.is_finite()))
            && self
                .wrist_orientation
                .is_none_or(|w| w.iter().all(|v| v.is_finite()) && w.iter().any(|v| *v != 0.0))
    }

    /// Knuckle target after applying position and rotation offsets.
    pub fn knuckle_target(&self, offsets: &RetargetOffsets) -> Pose {
        let k = &self.knuckle_pose;
        let base = if offsets.use_wrist_orientation {
            self.wrist_quat()
        } else {
            k.orientation
        };
        Pose::new(
            k.position + k.orientation * offsets.position,
            base * offsets.rotation_quat(),
        )
    }
}

pub fn parse_hand_observations(text: &str) -> Result<Vec<HandObservation>, KinematicsError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let obs: HandObservation =
            serde_json::from_str(line).map_err(|e| KinematicsError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        out.push(obs);
    }
    Ok(out)
}

pub fn load_hand_observations(path: &Path) -> Result<Vec<HandObservation>, KinematicsError> {
    let text = std::fs::read_to_string(path).map_err(|e| KinematicsError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_hand_observations(&text)
}

pub fn save_hand_observations(
    path: &Path,
    frames: &[HandObservation],
) -> Result<(), KinematicsError> {
    let mut text = String::new();
    for f in frames {
        text.push_str(&serde_json::to_string(f).expect("observation serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| KinematicsError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PremanipSolution {
    /// Full joint vector (arm and fingers).
    pub q: Vec<f64>,
    pub q_arm: Vec<f64>,
    pub q_hand: Vec<f64>,
    pub arm_pos_err: f64,
    pub arm_ori_err_deg: f64,
    /// Per finger: true when its fingertip met `pos_tol`.
    pub finger_within_tol: Vec<bool>,
    pub finger_pos_err: Vec<f64>,
}

fn arm_vars(chain: &KinematicChain, link: usize) -> Vec<usize> {
    chain
        .joints_on_path(link)
        .into_iter()
        .filter(|j| chain.groups.arm.contains(j))
        .collect()
}

fn solve_frame(
    chain: &KinematicChain,
    hand: &HandObservation,
    offsets: &RetargetOffsets,
    selected: &[f64],
    params: &IkParams,
    rng_seed: u64,
) -> Result<PremanipSolution, KinematicsError> {
    if !hand.is_usable() {
        return Err(KinematicsError::InvalidObservation(
            "frame is not valid".into(),
        ));
    }
    if hand.fingertips.len() != chain.fingertips.len() {
        return Err(KinematicsError::InvalidObservation(format!(
            "{} fingertips for a {}-finger hand",
            hand.fingertips.len(),
            chain.fingertips.len()
        )));
    }
    let target = hand.knuckle_target(offsets);
    let vars = arm_vars(chain, chain.knuckle);
    let arm = ik_solve_link(
        chain,
        chain.knuckle,
        &target,
        selected,
        &vars,
        IkMode::Pose,
        params,
        rng_seed,
        false,
    )?;
    let mut q = arm.q;
    let mut finger_within_tol = Vec::new();
    let mut finger_pos_err = Vec::new();
    for (i, (&tip, group)) in chain
        .fingertips
        .iter()
        .zip(&chain.groups.fingers)
        .enumerate()
    {
        let fv: Vec<usize> = chain
            .joints_on_path(tip)
            .into_iter()
            .filter(|j| group.contains(j))
            .collect();
        let goal = Pose::from_translation(
            hand.fingertips[i].x,
            hand.fingertips[i].y,
            hand.fingertips[i].z,
        );
        let seed = rng_seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1));
        let sol = ik_solve_link(
            chain,
            tip,
            &goal,
            &q,
            &fv,
            IkMode::PositionOnly,
            params,
            seed,
            true,
        )?;
        for &j in &fv {
            q[j] = sol.q[j];
        }
        finger_within_tol.push(sol.within_tol);
        finger_pos_err.push(sol.pos_err);
    }
    Ok(PremanipSolution {
        q_arm: chain.groups.arm.iter().map(|&j| q[j]).collect(),
        q_hand: chain.finger_joints().iter().map(|&j| q[j]).collect(),
        q,
        arm_pos_err: arm.pos_err,
        arm_ori_err_deg: arm.ori_err_deg,
        finger_within_tol,
        finger_pos_err,
    })
}

/// Two-step retargeting: arm IK for the knuckle seeded from the rest
/// configuration, then position-only IK per finger with the arm fixed.
pub fn retarget_premanip(
    chain: &KinematicChain,
    hand: &HandObservation,
    offsets: &RetargetOffsets,
    params: &IkParams,
    rng_seed: u64,
) -> Result<PremanipSolution, KinematicsError> {
    solve_frame(chain, hand, offsets, &chain.rest, params, rng_seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetargetedTrajectory {
    pub trajectory: JointTrajectory,
    /// Input indices that were dropped.
    pub skipped: Vec<usize>,
    /// Input index of each trajectory point before retiming.
    pub solved: Vec<usize>,
}

/// Retargets a whole hand sequence, each frame seeded and selected by the previous solution.
/// Point times are `t / rate_hz`, so skipped frames leave their gap in the timeline.
pub fn retarget_trajectory(
    chain: &KinematicChain,
    frames: &[HandObservation],
    offsets: &RetargetOffsets,
    params: &IkParams,
    jump_thresh: f64,
    rate_hz: f64,
    rng_seed: u64,
) -> Result<RetargetedTrajectory, KinematicsError> {
    if !(jump_thresh > 0.0) || !(rate_hz > 0.0) {
        return Err(KinematicsError::InvalidParams(
            "jump_thresh and rate_hz must be positive".into(),
        ));
    }
    let first = frames
        .iter()
        .position(|f| f.is_usable())
        .ok_or_else(|| KinematicsError::InvalidObservation("no valid frame".into()))?;
    let mut skipped: Vec<usize> = (0..first).collect();
    let mut solved = Vec::new();
    let mut points: Vec<JointPoint> = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    for (i, f) in frames.iter().enumerate().skip(first) {
        let seed = rng_seed.wrapping_add(i as u64);
        let selected = prev.clone().unwrap_or_else(|| chain.rest.clone());
        let res = if f.is_usable() {
            solve_frame(chain, f, offsets, &selected, params, seed)
        } else {
            Err(KinematicsError::InvalidObservation(
                "frame is not valid".into(),
            ))
        };
        let sol = match (res, &prev) {
            (Ok(s), _) => s,
            (Err(e), None) => return Err(e),
            (Err(_), Some(_)) => {
                skipped.push(i);
                continue;
            }
        };
        if let Some(p) = &prev {
            let jump = sol
                .q
                .iter()
                .zip(p)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if jump > jump_thresh {
                skipped.push(i);
                continue;
            }
        }
        points.push(JointPoint {
            time: f.t as f64 / rate_hz,
            q: sol.q.clone(),
        });
        solved.push(i);
        prev = Some(sol.q);
    }
    let jt = JointTrajectory::new(chain.joint_names(), points)?;
    let trajectory = retime_velocity_limited(&jt, &chain.velocity_limits())?;
    Ok(RetargetedTrajectory {
        trajectory,
        skipped,
        solved,
    })
}
