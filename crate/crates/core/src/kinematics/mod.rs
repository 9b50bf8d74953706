//! Kinematic trees, forward kinematics, multi-start damped least squares IK
//! and two-step hand-to-robot retargeting.

mod chain;
mod ik;
mod retarget;

pub use chain::{
    fk, ChainSpec, FkResult, FrameNames, Joint, JointGroups, JointSpec, KinematicChain, Link,
    LinkSpec, RetargetOffsets, Synergy,
};
pub use ik::{ik_solve, ik_solve_link, IkMode, IkParams, IkSolution};
pub use retarget::{
    load_hand_observations, parse_hand_observations, retarget_premanip, retarget_trajectory,
    save_hand_observations, HandObservation, PremanipSolution, RetargetedTrajectory,
    DEFAULT_JUMP_THRESH,
};

use crate::trajectory::TrajectoryError;

/// Allegro-like desk reference: 7-revolute arm, three fingers and a thumb of four joints each.
pub const REFERENCE_CHAIN_JSON: &str = include_str!("../../assets/reference_chain.json");

pub fn reference_chain() -> KinematicChain {
    let spec: ChainSpec = serde_json::from_str(REFERENCE_CHAIN_JSON).expect("bundled chain parses");
    KinematicChain::from_spec(spec).expect("bundled chain is valid")
}

#[derive(Debug, thiserror::Error)]
pub enum KinematicsError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("joint vector has {got} entries, chain has {expected} joints")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("invalid IK parameters: {0}")]
    InvalidParams(String),
    #[error("no IK candidate for `{frame}` within tolerance (best {pos_err:.4} m, {ori_err_deg:.3} deg)")]
    IkFailed {
        frame: String,
        pos_err: f64,
        ori_err_deg: f64,
    },
    #[error("invalid hand observation: {0}")]
    InvalidObservation(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, Vec3};
    use std::f64::consts::FRAC_PI_2;

    fn two_link() -> KinematicChain {
        let json = r#"{
          "links": [
            {"name": "base", "parent": null, "origin": [0,0,0,1,0,0,0], "joint": {"type": "fixed"}},
            {"name": "l1", "parent": "base", "origin": [0,0,0,1,0,0,0],
             "joint": {"type": "revolute", "axis": [0,0,1], "limits": [-3.1,3.1], "vel_limit": 2.0}},
            {"name": "l2", "parent": "l1", "origin": [1,0,0,1,0,0,0],
             "joint": {"type": "revolute", "axis": [0,0,1], "limits": [-3.1,3.1], "vel_limit": 2.0}},
            {"name": "tip", "parent": "l2", "origin": [1,0,0,1,0,0,0], "joint": {"type": "fixed"}}
          ],
          "frames": {"wrist": "l2", "knuckle": "tip", "palm": "tip", "fingertips": []},
          "groups": {"arm": [0, 1], "fingers": []}
        }"#;
        KinematicChain::from_spec(serde_json::from_str(json).unwrap()).unwrap()
    }

    fn tip(chain: &KinematicChain, q: &[f64]) -> Vec3 {
        fk(chain, q).unwrap().frames["tip"].position
    }

    #[test]
    fn planar_fk_closed_form() {
        let c = two_link();
        assert!((tip(&c, &[0.0, 0.0]) - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((tip(&c, &[FRAC_PI_2, 0.0]) - Vec3::new(0.0, 2.0, 0.0)).norm() < 1e-12);
        assert!((tip(&c, &[FRAC_PI_2, -FRAC_PI_2]) - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
        for &(a, b) in &[(0.3f64, -1.2f64), (2.0, 0.7), (-1.1, 2.5)] {
            let want = Vec3::new(a.cos() + (a + b).cos(), a.sin() + (a + b).sin(), 0.0);
            assert!((tip(&c, &[a, b]) - want).norm() < 1e-12);
        }
    }

    #[test]
    fn fk_flags_clamping_and_dimension() {
        let c = two_link();
        let r = fk(&c, &[4.0, 0.0]).unwrap();
        assert!(r.clamped);
        assert!(!fk(&c, &[0.1, 0.0]).unwrap().clamped);
        assert!(matches!(
            fk(&c, &[0.0]),
            Err(KinematicsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn chain_validation() {
        let mut spec = two_link().spec().clone();
        spec.links[2].parent = Some("tip".into());
        assert!(KinematicChain::from_spec(spec).is_err());
        let mut spec = two_link().spec().clone();
        spec.links[1].joint = JointSpec::Revolute {
            axis: Vec3::z(),
            limits: [1.0, -1.0],
            vel_limit: 1.0,
        };
        assert!(KinematicChain::from_spec(spec).is_err());
        let mut spec = two_link().spec().clone();
        spec.frames.palm = "nope".into();
        assert!(KinematicChain::from_spec(spec).is_err());
        let mut spec = two_link().spec().clone();
        spec.links[0].parent = Some("tip".into());
        assert!(KinematicChain::from_spec(spec).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = reference_chain();
        let mut q = c.rest.clone();
        for (i, v) in q.iter_mut().enumerate() {
            *v += 0.05 * (i as f64 % 3.0);
        }
        c.clamp(&mut q);
        let poses = c.link_poses(&q);
        for &link in &[c.knuckle, c.fingertips[0], c.fingertips[3]] {
            let joints = c.joints_on_path(link);
            let cols = c.jacobian(&poses, link, &joints);
            for (k, &j) in joints.iter().enumerate() {
                let h = 1e-6;
                let mut qp = q.clone();
                qp[j] += h;
                let mut qm = q.clone();
                qm[j] -= h;
                let dp = (c.link_poses(&qp)[link].position - c.link_poses(&qm)[link].position)
                    / (2.0 * h);
                assert!((dp - cols[k].0).norm() < 1e-6, "joint {j}");
                let r = c.link_poses(&qp)[link].orientation
                    * c.link_poses(&qm)[link].orientation.inverse();
                let w = r.scaled_axis() / (2.0 * h);
                assert!((w - cols[k].1).norm() < 1e-6, "joint {j}");
            }
        }
    }

    #[test]
    fn reference_chain_shape() {
        let c = reference_chain();
        assert_eq!(c.dof(), 23);
        assert_eq!(c.groups.arm.len(), 7);
        assert_eq!(c.groups.fingers.len(), 4);
        assert!(c.groups.fingers.iter().all(|f| f.len() == 4));
        assert!(c.within_limits(&c.rest));
        assert_eq!(c.joints_on_path(c.knuckle), c.groups.arm);
    }

    #[test]
    fn ik_already_solved_target_stays_near_selection() {
        let c = reference_chain();
        let target = fk(&c, &c.rest).unwrap().frames["knuckle"];
        let p = IkParams::default();
        let s = ik_solve(&c, "knuckle", &target, &c.rest, &p, 7).unwrap();
        let d =
            s.q.iter()
                .zip(&c.rest)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        assert!(d <= p.seed_noise_deg.to_radians(), "{d}");
        assert!(s.pos_err <= p.pos_tol && s.ori_err_deg <= p.ori_tol_deg);
        let again = ik_solve(&c, "knuckle", &target, &c.rest, &p, 7).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn ik_unreachable_fails() {
        let c = two_link();
        let target = Pose::from_translation(10.0, 0.0, 0.0);
        let p = IkParams {
            n_solutions: 8,
            ..IkParams::default()
        };
        assert!(matches!(
            ik_solve(&c, "tip", &target, &[0.0, 0.0], &p, 1),
            Err(KinematicsError::IkFailed { .. })
        ));
        assert!(matches!(
            ik_solve(&c, "nope", &target, &[0.0, 0.0], &p, 1),
            Err(KinematicsError::UnknownFrame(_))
        ));
    }

    fn observation(c: &KinematicChain, q: &[f64]) -> HandObservation {
        let f = fk(c, q).unwrap().frames;
        HandObservation {
            t: 0,
            knuckle_pose: f["knuckle"],
            wrist_orientation: None,
            fingertips: (0..c.fingertips.len())
                .map(|i| f[&format!("fingertip{i}")].position)
                .collect(),
            valid: true,
        }
    }

    #[test]
    fn premanip_recovers_fk_generated_hand() {
        let c = reference_chain();
        let mut q = c.rest.clone();
        q[1] += 0.3;
        q[3] += 0.2;
        q[6] -= 0.4;
        for &j in &c.finger_joints() {
            q[j] = (q[j] + 0.5).clamp(c.joints[j].lo, c.joints[j].hi);
        }
        let hand = observation(&c, &q);
        let p = IkParams::default();
        let s = retarget_premanip(&c, &hand, &RetargetOffsets::default(), &p, 3).unwrap();
        let f = fk(&c, &s.q).unwrap().frames;
        assert!((f["knuckle"].position - hand.knuckle_pose.position).norm() <= 0.05);
        assert!(f["knuckle"].angle_to(&hand.knuckle_pose).to_degrees() <= 3.0);
        assert!(s.finger_within_tol.iter().all(|&b| b));
        for (i, tip) in hand.fingertips.iter().enumerate() {
            assert!((f[&format!("fingertip{i}")].position - tip).norm() <= 0.05);
        }
        let mut bad = hand.clone();
        bad.valid = false;
        assert!(matches!(
            retarget_premanip(&c, &bad, &RetargetOffsets::default(), &p, 3),
            Err(KinematicsError::InvalidObservation(_))
        ));
    }

    #[test]
    fn premanip_flags_unreachable_fingertips() {
        let c = reference_chain();
        let mut hand = observation(&c, &c.rest);
        hand.fingertips[0] += Vec3::new(0.0, 0.0, 0.5);
        let p = IkParams {
            n_solutions: 10,
            ..IkParams::default()
        };
        let s = retarget_premanip(&c, &hand, &RetargetOffsets::default(), &p, 1).unwrap();
        assert!(!s.finger_within_tol[0]);
        assert!(s.finger_within_tol[1..].iter().all(|&b| b));
        assert!(c.within_limits(&s.q));
    }

    #[test]
    fn trajectory_retarget_skips_garbage() {
        let c = reference_chain();
        let p = IkParams {
            n_solutions: 10,
            ..IkParams::default()
        };
        let mut frames: Vec<HandObservation> = (0..12)
            .map(|k| {
                let mut q = c.rest.clone();
                q[0] += 0.02 * k as f64;
                q[2] -= 0.015 * k as f64;
                let mut o = observation(&c, &q);
                o.t = k;
                o
            })
            .collect();
        let clean = retarget_trajectory(&c, &frames, &RetargetOffsets::default(), &p, 0.5, 30.0, 9)
            .unwrap();
        assert!(clean.skipped.is_empty());
        frames[5].knuckle_pose = Pose::from_translation(10.0, 0.0, 0.0);
        frames[8].valid = false;
        let r = retarget_trajectory(&c, &frames, &RetargetOffsets::default(), &p, 0.5, 30.0, 9)
            .unwrap();
        assert_eq!(r.skipped, vec![5, 8]);
        assert_eq!(r.trajectory.points.len(), 10);
        let limits = c.velocity_limits();
        for w in r.trajectory.points.windows(2) {
            let dt = w[1].time - w[0].time;
            for ((a, b), l) in w[0].q.iter().zip(&w[1].q).zip(&limits) {
                assert!((b - a).abs() / dt <= l * (1.0 + 1e-9));
                assert!((b - a).abs() <= 0.5);
            }
        }
    }

    #[test]
    fn hand_observation_jsonl_roundtrip() {
        let c = reference_chain();
        let o = observation(&c, &c.rest);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hand.jsonl");
        save_hand_observations(&path, &[o.clone(), o.clone()]).unwrap();
        let back = load_hand_observations(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back[0].knuckle_pose.position - o.knuckle_pose.position).norm() < 1e-12);
        assert!(matches!(
            parse_hand_observations("{\"t\":0}\n"),
            Err(KinematicsError::Parse { line: 1, .. })
        ));
    }
}
