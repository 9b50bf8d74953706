use std::path::Path;

use serde::de::DeserializeOwned;

use super::config::{EnvConfig, GeometrySpec, ObjectSpec, SceneSpec, Task};
use super::physics::{Pose2, Segment, Shape, V2};
use super::robot::{PlanarRobot, Plane};
use super::{tasks, SimError};
use crate::geometry::{symmetric_anchor_reduce, AnchorSet, Pose, Vec3};
use crate::kinematics::{
    load_hand_observations, retarget_premanip, retarget_trajectory, ChainSpec, HandObservation,
    KinematicChain, DEFAULT_JUMP_THRESH,
};
use crate::trajectory::{
    detect_premanip_timestep, load_demo, resample, DemoTrajectory, JointTrajectory,
    TargetProviderConfig,
};

/// Everything an environment needs that does not change between episodes.
#[derive(Debug, Clone)]
pub struct TaskSetup {
    pub cfg: EnvConfig,
    pub plane: Plane,
    pub chain: KinematicChain,
    pub robot: PlanarRobot,
    pub shape: Shape,
    /// Object frame origin expressed in the centroid frame.
    pub frame_offset: V2,
    pub object_friction: f64,
    pub statics: Vec<Segment>,
    /// Demo at its source rate.
    pub demo_source: DemoTrajectory,
    /// Demo resampled to the control rate.
    pub demo: DemoTrajectory,
    pub tau_source: usize,
    pub target: TargetProviderConfig,
    pub anchors: AnchorSet,
    pub hand: Vec<HandObservation>,
    pub premanip_q: Vec<f64>,
    pub wrist_pose: Pose,
    /// Retargeted joint trajectory of the whole hand sequence.
    pub base_traj: JointTrajectory,
    /// Time in `base_traj` (relative to its first point) that corresponds to the episode start.
    pub base_t0: f64,
    pub retarget_skipped: Vec<usize>,
    /// Fingertip positions along `base_traj`, one entry per control step.
    pub desired_fingertips: Vec<Vec<Vec3>>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, SimError> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| SimError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

impl TaskSetup {
    pub fn prepare(cfg: &EnvConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let task = cfg.task;
        let plane = cfg.plane();
        let a = &cfg.assets;
        let chain_spec: ChainSpec = match &a.chain {
            Some(p) => read_json(p)?,
            None => tasks::planar_chain_spec(task, plane),
        };
        let chain =
            KinematicChain::from_spec(chain_spec).map_err(|e| SimError::Config(e.to_string()))?;
        let geometry: GeometrySpec = match &a.geometry {
            Some(p) => read_json(p)?,
            None => tasks::geometry(),
        };
        let robot =
            PlanarRobot::new(&chain, plane, &geometry.capsules).map_err(SimError::Config)?;
        let object: ObjectSpec = match &a.object {
            Some(p) => read_json(p)?,
            None => tasks::object(task),
        };
        let verts: Vec<V2> = object
            .vertices
            .iter()
            .map(|v| V2::new(v[0], v[1]))
            .collect();
        let (shape, centroid) = Shape::from_polygon(&verts, object.mass, object.inertia)
            .map_err(|m| SimError::Config(format!("object: {m}")))?;
        let scene: SceneSpec = match &a.scene {
            Some(p) => read_json(p)?,
            None => tasks::scene(task),
        };
        let statics = scene
            .segments
            .iter()
            .map(|s| {
                let seg = Segment {
                    a: V2::new(s.a[0], s.a[1]),
                    b: V2::new(s.b[0], s.b[1]),
                };
                if (seg.b - seg.a).norm() < 1e-9 {
                    Err(SimError::Config("scene segment has zero length".into()))
                } else {
                    Ok(seg)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (demo_source, hand) = match (&a.demo, &a.hand) {
            (Some(d), Some(h)) => (
                load_demo(d)?,
                load_hand_observations(h).map_err(|e| SimError::Config(e.to_string()))?,
            ),
            (None, None) => (tasks::demo(task, plane), tasks::hand(task, plane)),
            _ => {
                return Err(SimError::Config(
                    "assets.demo and assets.hand must be given together".into(),
                ))
            }
        };
        if hand.is_empty() {
            return Err(SimError::Config("hand sequence is empty".into()));
        }
        let tau_source =
            detect_premanip_timestep(&demo_source, cfg.premanip.v_min, cfg.premanip.t_offset)?;
        let ratio = cfg.control_hz / demo_source.rate_hz;
        let demo = resample(&demo_source, cfg.control_hz)?;
        let tau = ((tau_source as f64 * ratio).round() as usize).min(demo.last_index());
        let downsample = ((cfg.target.downsample_factor as f64 * ratio).round() as usize).max(1);
        let target = TargetProviderConfig::new(cfg.target.mode, downsample, tau);
        target.validate(&demo)?;

        let anchors = match &cfg.anchors {
            Some(v) => AnchorSet::new(
                v.iter().map(|a| Vec3::new(a[0], a[1], a[2])).collect(),
                "config",
            )
            .map_err(|e| SimError::Config(e.to_string()))?,
            None => AnchorSet::default(),
        };
        let default_axis = (task == Task::Push && cfg.anchors.is_none()).then(Vec3::z);
        let axis = cfg
            .symmetry_axis
            .map(|a| Vec3::new(a[0], a[1], a[2]))
            .or(default_axis);
        let anchors = match axis {
            Some(ax) => symmetric_anchor_reduce(&anchors, &ax)
                .map_err(|e| SimError::Config(e.to_string()))?,
            None => anchors,
        };

        // hand frame matching the premanip timestep
        let demo_t = demo_source.frames[tau_source].t;
        let hand_frame = hand
            .iter()
            .min_by_key(|h| (h.t - demo_t).abs())
            .expect("non-empty hand sequence");
        let pre = retarget_premanip(&chain, hand_frame, &chain.offsets, &cfg.retarget_ik, 0)
            .map_err(|e| SimError::Retarget(e.to_string()))?;
        let premanip_q = pre.q;
        let wrist_pose = crate::kinematics::fk(&chain, &premanip_q)
            .map_err(|e| SimError::Retarget(e.to_string()))?
            .frames["wrist"];

        let rt = retarget_trajectory(
            &chain,
            &hand,
            &chain.offsets,
            &cfg.retarget_ik,
            DEFAULT_JUMP_THRESH,
            demo_source.rate_hz,
            0,
        )
        .map_err(|e| SimError::Retarget(e.to_string()))?;
        let base_traj = rt.trajectory;
        let first_time = base_traj.points[0].time;
        let k0 = rt
            .solved
            .iter()
            .position(|&i| hand[i].t >= demo_t)
            .unwrap_or(rt.solved.len() - 1);
        let base_t0 = base_traj.points[k0].time - first_time;

        let episode_len = demo.last_index() - tau;
        let dt = 1.0 / cfg.control_hz;
        let desired_fingertips = (0..=episode_len)
            .map(|k| {
                let q = base_traj.sample(base_t0 + k as f64 * dt);
                let poses = robot.link_poses(&q);
                robot
                    .fingertips
                    .iter()
                    .map(|&f| plane.point(&poses[f].p))
                    .collect()
            })
            .collect();

        Ok(Self {
            cfg: cfg.clone(),
            plane,
            chain,
            robot,
            shape,
            frame_offset: -centroid,
            object_friction: object.friction.unwrap_or(cfg.physics.robot_friction),
            statics,
            demo_source,
            demo,
            tau_source,
            target,
            anchors,
            hand,
            premanip_q,
            wrist_pose,
            base_traj,
            base_t0,
            retarget_skipped: rt.skipped,
            desired_fingertips,
        })
    }

    pub fn tau(&self) -> usize {
        self.target.tau
    }

    /// Control steps until the target trajectory is exhausted.
    pub fn episode_len(&self) -> usize {
        self.demo.last_index() - self.target.tau
    }

    pub fn obs_dim(&self) -> usize {
        let nj = self.robot.dof();
        2 * nj + 3 * self.robot.fingertips.len() + 3 + 6 * self.anchors.len()
    }

    pub fn privileged_dim(&self) -> usize {
        self.obs_dim() + 3 + 3 + 1 + self.robot.dof() + self.robot.fingertips.len()
    }

    pub fn action_dim(&self) -> usize {
        match self.cfg.action.mode {
            super::config::PolicyMode::Full => 4,
            super::config::PolicyMode::Residual => self.robot.dof(),
        }
    }

    /// Planar object-frame pose of a world pose.
    pub fn planar(&self, pose: &Pose) -> Pose2 {
        self.plane.from_world(pose)
    }

    /// Joint configuration of the retargeted trajectory at an episode step.
    pub fn base_q(&self, step: usize) -> Vec<f64> {
        self.base_traj
            .sample(self.base_t0 + step as f64 / self.cfg.control_hz)
    }
}
