use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{InitMode, PolicyMode, RandomizationConfig, RewardMode, Task};
use super::physics::{
    penetration, substep_coupled, wrap_angle, Body, PhysicsParams, Pose2, Shape, V2,
};
use super::setup::TaskSetup;
use super::SimError;
use crate::geometry::{anchor_points, pose_distance, tracking_reward, Pose, Vec3};
use crate::trajectory::{target_pose, TargetMode, TargetProviderConfig};

/// Draws per reset before giving up on a reachable, collision-free start.
const RESET_ATTEMPTS: usize = 10;

/// Sampled dynamics multipliers and offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub scale: f64,
    pub mass: f64,
    pub friction: f64,
    pub kp: f64,
    pub kd: f64,
    /// Additive gravity offset, m/s².
    pub gravity: f64,
}

impl DynamicsParams {
    pub fn nominal() -> Self {
        Self {
            scale: 1.0,
            mass: 1.0,
            friction: 1.0,
            kp: 1.0,
            kd: 1.0,
            gravity: 0.0,
        }
    }
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

/// Draws object scale, mass, friction and PD gain multipliers from their
/// ranges and an additive gravity offset.
pub fn randomize_domain(cfg: &RandomizationConfig, rng: &mut impl Rng) -> DynamicsParams {
    let scale = uniform(rng, cfg.scale_range);
    let mass = uniform(rng, cfg.mass_range);
    let friction = uniform(rng, cfg.friction_range);
    let kp = uniform(rng, cfg.pd_range);
    let kd = uniform(rng, cfg.pd_range);
    let n: f64 = StandardNormal.sample(rng);
    DynamicsParams {
        scale,
        mass,
        friction,
        kp,
        kd,
        gravity: cfg.gravity_sigma * n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    ObjectFar,
    PalmFar,
    TrajComplete,
    Fault,
}

impl DoneReason {
    pub const ALL: [DoneReason; 4] = [
        DoneReason::ObjectFar,
        DoneReason::PalmFar,
        DoneReason::TrajComplete,
        DoneReason::Fault,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DoneReason::ObjectFar => "object_far",
            DoneReason::PalmFar => "palm_far",
            DoneReason::TrajComplete => "traj_complete",
            DoneReason::Fault => "fault",
        }
    }

    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|r| r == self).expect("listed")
    }
}

/// Full simulator state.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    /// Object centroid pose and velocity in plane coordinates.
    pub body: Body,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub q_target: Vec<f64>,
    /// Last commanded joint accelerations (unit joint inertia).
    pub f_dof: Vec<f64>,
    /// Mean contact force on each finger over the last control step, N.
    pub finger_force: Vec<f64>,
    pub t: usize,
    pub dynamics: DynamicsParams,
    pub rng: ChaCha8Rng,
    pub steps_since_randomize: u64,
    pub randomized: bool,
    pub done: Option<DoneReason>,
    pub max_penetration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub obj_reward: f64,
    pub hand_reward: f64,
    /// Tracking reward against the dense demonstration target, whatever the
    /// configured target mode; comparable across target-mode ablations.
    pub track_reward: f64,
    pub done: Option<DoneReason>,
    /// Success predicate, evaluated when the episode ends.
    pub success: bool,
    pub perturbed: bool,
}

/// One planar manipulation environment. Cheap to clone; the task setup is shared.
#[derive(Debug, Clone)]
pub struct Env {
    pub setup: Arc<TaskSetup>,
    pub state: EnvState,
    shape: Shape,
}

impl Env {
    pub fn new(setup: Arc<TaskSetup>) -> Self {
        let nj = setup.robot.dof();
        let nf = setup.robot.fingertips.len();
        let shape = setup.shape.clone();
        let q = setup.premanip_q.clone();
        Self {
            state: EnvState {
                body: Body {
                    pose: Pose2::identity(),
                    v: V2::zeros(),
                    w: 0.0,
                },
                q: q.clone(),
                qd: vec![0.0; nj],
                q_target: q,
                f_dof: vec![0.0; nj],
                finger_force: vec![0.0; nf],
                t: 0,
                dynamics: DynamicsParams::nominal(),
                rng: ChaCha8Rng::seed_from_u64(0),
                steps_since_randomize: 0,
                randomized: false,
                done: None,
                max_penetration: 0.0,
            },
            shape,
            setup,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    fn physics(&self) -> PhysicsParams {
        let c = &self.setup.cfg.physics;
        let d = &self.state.dynamics;
        PhysicsParams {
            iterations: c.iterations,
            baumgarte: c.baumgarte,
            slop: c.slop,
            margin: c.margin,
            robot_friction: self.setup.object_friction * d.friction,
            static_friction: c.static_friction * d.friction,
            support_friction: c.support_friction * d.friction,
            gravity: (c.gravity + d.gravity).max(0.0),
            vertical: self.setup.plane == super::robot::Plane::Vertical,
        }
    }

    /// Object-frame pose in the plane.
    pub fn object_planar(&self) -> Pose2 {
        let off = self.setup.frame_offset * self.state.dynamics.scale;
        self.state.body.pose.compose(&Pose2 { p: off, theta: 0.0 })
    }

    pub fn object_pose(&self) -> Pose {
        self.setup.plane.to_world(&self.object_planar())
    }

    /// Places the object frame at a planar pose with zero velocity.
    pub fn set_object_planar(&mut self, pose: &Pose2) {
        let off = self.setup.frame_offset * self.state.dynamics.scale;
        self.state.body.pose = pose.compose(&Pose2 {
            p: -off,
            theta: 0.0,
        });
        self.state.body.v = V2::zeros();
        self.state.body.w = 0.0;
    }

    pub fn target_at(&self, t: usize) -> Pose {
        target_pose(&self.setup.demo, &self.setup.target, t)
    }

    /// Demonstration pose at episode step `t`, ignoring the target mode.
    pub fn dense_target_at(&self, t: usize) -> Pose {
        let dense = TargetProviderConfig {
            mode: TargetMode::Dense,
            ..self.setup.target
        };
        target_pose(&self.setup.demo, &dense, t)
    }

    pub fn final_target(&self) -> Pose {
        *self.setup.demo.pose(self.setup.demo.last_index())
    }

    pub fn palm_position(&self) -> Vec3 {
        let poses = self.setup.robot.link_poses(&self.state.q);
        self.setup.plane.point(&poses[self.setup.robot.palm].p)
    }

    pub fn fingertip_positions(&self) -> Vec<Vec3> {
        let poses = self.setup.robot.link_poses(&self.state.q);
        self.setup
            .robot
            .fingertips
            .iter()
            .map(|&f| self.setup.plane.point(&poses[f].p))
            .collect()
    }

    /// Resets with a deterministic draw from `episode_seed`. Dynamics are
    /// resampled on the first reset and whenever `randomize_every` control
    /// steps have elapsed since the previous draw.
    pub fn reset(&mut self, episode_seed: u64) -> Result<Vec<f64>, SimError> {
        let setup = Arc::clone(&self.setup);
        let cfg = &setup.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        if !self.state.randomized
            || self.state.steps_since_randomize >= cfg.randomization.randomize_every
        {
            self.state.dynamics = randomize_domain(&cfg.randomization, &mut rng);
            self.state.randomized = true;
            self.state.steps_since_randomize = 0;
        }
        let d = self.state.dynamics;
        self.shape = setup.shape.scaled(d.scale, d.mass);
        let robot = &setup.robot;
        let plane = setup.plane;
        let target0 = setup.planar(&self.target_at(0));

        let mut last_err = String::new();
        for _attempt in 0..RESET_ATTEMPTS {
            let noise = match plane {
                super::robot::Plane::Horizontal => Pose2::new(
                    rng.gen_range(-1.0..=1.0) * cfg.init.t_max,
                    rng.gen_range(-1.0..=1.0) * cfg.init.t_max,
                    rng.gen_range(-1.0..=1.0) * cfg.init.theta_max.to_radians(),
                ),
                super::robot::Plane::Vertical => {
                    Pose2::new(rng.gen_range(-1.0..=1.0) * cfg.init.t_max, 0.0, 0.0)
                }
            };
            // the robot is placed relative to where the scene leaves the object
            self.set_object_planar(&target0.compose(&noise));
            self.depenetrate_statics();
            let obj = self.object_planar();
            match self.place_robot(&obj, &mut rng) {
                Ok(q) => {
                    // redraw rather than start with the object inside the hand
                    let caps = robot.capsules(&robot.link_poses(&q), &q);
                    if penetration(&self.shape, &self.state.body.pose, &caps, &[]) > 0.0 {
                        last_err = "object overlaps the robot".into();
                        continue;
                    }
                    self.state.qd = vec![0.0; q.len()];
                    self.state.q_target = q.clone();
                    self.state.q = q;
                    self.state.f_dof = vec![0.0; robot.dof()];
                    self.state.finger_force = vec![0.0; robot.fingertips.len()];
                    self.state.t = 0;
                    self.state.done = None;
                    self.state.max_penetration = 0.0;
                    self.state.rng = rng;
                    return Ok(self.observe());
                }
                Err(e) => last_err = e,
            }
        }
        Err(SimError::Reset(last_err))
    }

    fn place_robot(&self, obj: &Pose2, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, String> {
        let setup = &self.setup;
        let cfg = &setup.cfg;
        let robot = &setup.robot;
        let init = &cfg.init;
        let mut q = match init.mode {
            InitMode::DefaultRest => robot.rest.clone(),
            mode => {
                let pre_poses = robot.link_poses(&setup.premanip_q);
                let wrist_nom = setup.planar(&setup.wrist_pose);
                let palm_rel = pre_poses[robot.wrist]
                    .inverse()
                    .compose(&pre_poses[robot.palm]);
                let target0 = setup.planar(&self.target_at(0));
                let wrist = obj.compose(&target0.inverse()).compose(&wrist_nom);
                let mut palm = wrist.compose(&palm_rel);
                match mode {
                    InitMode::PremanipFar => {
                        let dir = palm.p - obj.p;
                        let n = dir.norm();
                        let dir = if n > 1e-9 {
                            dir / n
                        } else {
                            V2::new(-1.0, 0.0)
                        };
                        palm.p += dir * init.far_offset;
                    }
                    InitMode::Overhead => match setup.plane.up() {
                        Some(up) => {
                            // palm facing down, fingertips overhead_height above the object's top
                            let top = self
                                .shape
                                .world_vertices(obj)
                                .iter()
                                .map(|v| v.dot(&up))
                                .fold(f64::NEG_INFINITY, f64::max);
                            let reach = super::tasks::FINGER_REACH;
                            let height = top + init.overhead_height + reach;
                            palm = Pose2::new(obj.p.x, height, -std::f64::consts::FRAC_PI_2);
                        }
                        None => {
                            let dir = palm.p - obj.p;
                            let n = dir.norm();
                            let dir = if n > 1e-9 {
                                dir / n
                            } else {
                                V2::new(-1.0, 0.0)
                            };
                            palm.p += dir * init.overhead_height;
                        }
                    },
                    _ => {}
                }
                robot.reach_palm(&setup.premanip_q, &palm).ok_or_else(|| {
                    format!(
                        "palm pose ({:.3}, {:.3}, {:.3}) unreachable",
                        palm.p.x, palm.p.y, palm.theta
                    )
                })?
            }
        };
        if init.joint_noise > 0.0 {
            for v in q.iter_mut() {
                let n: f64 = StandardNormal.sample(rng);
                *v += init.joint_noise * n;
            }
            robot.clamp(&mut q);
        }
        Ok(q)
    }

    /// Moves the object out of static geometry along segment normals.
    fn depenetrate_statics(&mut self) {
        for _ in 0..3 {
            let verts = self.shape.world_vertices(&self.state.body.pose);
            let mut shift = V2::zeros();
            for seg in &self.setup.statics {
                let n = seg.normal();
                let ab = seg.b - seg.a;
                let deepest = verts
                    .iter()
                    .filter(|v| (0.0..=1.0).contains(&((*v - seg.a).dot(&ab) / ab.norm_squared())))
                    .map(|v| -n.dot(&(v - seg.a)))
                    .fold(0.0, f64::max);
                if deepest > 0.0 && deepest < 0.05 {
                    shift += n * deepest;
                }
            }
            if shift.norm() == 0.0 {
                break;
            }
            self.state.body.pose.p += shift;
        }
    }

    fn noise(&mut self, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        let n: f64 = StandardNormal.sample(&mut self.state.rng);
        sigma * n
    }

    /// Maps a policy action to joint PD targets.
    pub fn action_targets(&mut self, action: &[f64]) -> Vec<f64> {
        let setup = Arc::clone(&self.setup);
        let cfg = &setup.cfg;
        let robot = &setup.robot;
        let sigma = cfg.randomization.action_noise_sigma;
        let a: Vec<f64> = action
            .iter()
            .map(|v| {
                let v = if v.is_finite() { *v } else { 0.0 };
                (v + self.noise(sigma)).clamp(-1.0, 1.0)
            })
            .collect();
        match cfg.action.mode {
            PolicyMode::Full => {
                assert_eq!(a.len(), 4, "full action has 4 entries");
                let poses = robot.link_poses(&self.state.q);
                let palm = poses[robot.palm];
                let s = cfg.action.palm_scale;
                let target = Pose2::new(
                    palm.p.x + a[0] * s[0],
                    palm.p.y + a[1] * s[1],
                    palm.theta + a[2] * s[2],
                );
                let dq = robot.palm_ik_step(&self.state.q, &target, 1e-2);
                let mut out: Vec<f64> = self.state.q.iter().zip(&dq).map(|(q, d)| q + d).collect();
                for (k, v) in robot.synergy((a[3] + 1.0) / 2.0).into_iter().enumerate() {
                    out[robot.fingers[k]] = v;
                }
                robot.clamp(&mut out);
                out
            }
            PolicyMode::Residual => {
                assert_eq!(
                    a.len(),
                    robot.dof(),
                    "residual action has one entry per joint"
                );
                let clip = cfg.action.residual_clip;
                let delta: Vec<f64> = a.iter().map(|v| v * clip).collect();
                let mut out = crate::rl::residual_action(
                    &setup.base_traj,
                    setup.base_t0 + self.state.t as f64 * cfg.control_dt(),
                    &delta,
                    clip,
                );
                robot.clamp(&mut out);
                out
            }
        }
    }

    /// Applies a policy action for one control step.
    pub fn step(&mut self, action: &[f64]) -> StepOutcome {
        let targets = self.action_targets(action);
        self.step_targets(&targets)
    }

    /// Drives the joints toward explicit PD targets for one control step.
    pub fn step_targets(&mut self, targets: &[f64]) -> StepOutcome {
        let setup = Arc::clone(&self.setup);
        let cfg = &setup.cfg;
        let robot = &setup.robot;
        assert_eq!(targets.len(), robot.dof());
        let mut tq = targets.to_vec();
        robot.clamp(&mut tq);
        self.state.q_target = tq;

        let rz = &cfg.randomization;
        let mut perturb = V2::zeros();
        let perturbed = rz.force_prob > 0.0 && self.state.rng.gen_bool(rz.force_prob);
        if perturbed {
            let ang = self.state.rng.gen_range(0.0..std::f64::consts::TAU);
            let force = rz.force_scale * self.shape.mass;
            perturb = V2::new(ang.cos(), ang.sin()) * force * cfg.sub_dt();
        }

        let phys = self.physics();
        let dt = cfg.sub_dt();
        let kp = cfg.physics.kp * self.state.dynamics.kp;
        let kd = cfg.physics.kd * self.state.dynamics.kd;
        let nf = robot.fingertips.len();
        let finger_caps: Vec<Vec<usize>> = (0..nf).map(|f| robot.finger_capsules(f)).collect();
        let mut impulse = vec![0.0; nf];
        let inv_inertia: Vec<f64> = (0..robot.dof())
            .map(|j| {
                let i = if robot.fingers.contains(&j) {
                    cfg.physics.finger_inertia
                } else {
                    cfg.physics.arm_inertia
                };
                1.0 / i
            })
            .collect();
        let mut fault = false;
        for s in 0..cfg.substeps {
            let st = &mut self.state;
            for j in 0..st.q.len() {
                // implicit PD stays stable for light finger joints
                let inertia = 1.0 / inv_inertia[j];
                let qd = (st.qd[j] + dt * kp / inertia * (st.q_target[j] - st.q[j]))
                    / (1.0 + dt * kd / inertia + dt * dt * kp / inertia);
                st.f_dof[j] = kp * (st.q_target[j] - st.q[j] - dt * qd) - kd * qd;
                st.qd[j] = qd.clamp(-robot.vel_limit[j], robot.vel_limit[j]);
            }
            let poses = robot.link_poses(&st.q);
            let caps = robot.capsules(&poses, &st.qd);
            let ext = if s == 0 { perturb } else { V2::zeros() };
            let rep = substep_coupled(
                &self.shape,
                &mut st.body,
                &caps,
                &setup.statics,
                &phys,
                ext,
                dt,
                &mut st.qd,
                &inv_inertia,
            );
            for j in 0..st.qd.len() {
                st.qd[j] = st.qd[j].clamp(-robot.vel_limit[j], robot.vel_limit[j]);
            }
            for (f, idx) in finger_caps.iter().enumerate() {
                impulse[f] += idx.iter().map(|&i| rep.capsule_impulse[i]).sum::<f64>();
            }
            for j in 0..st.q.len() {
                st.q[j] += st.qd[j] * dt;
                if st.q[j] < robot.lo[j] || st.q[j] > robot.hi[j] {
                    st.q[j] = st.q[j].clamp(robot.lo[j], robot.hi[j]);
                    st.qd[j] = 0.0;
                }
            }
            let poses = robot.link_poses(&st.q);
            let caps = robot.capsules(&poses, &st.qd);
            st.max_penetration = st.max_penetration.max(penetration(
                &self.shape,
                &st.body.pose,
                &caps,
                &setup.statics,
            ));
            if !(st.body.pose.p.iter().all(|v| v.is_finite())
                && st.body.pose.theta.is_finite()
                && st.body.v.iter().all(|v| v.is_finite())
                && st.q.iter().all(|v| v.is_finite()))
            {
                fault = true;
                break;
            }
        }
        let ctrl_dt = cfg.control_dt();
        self.state.finger_force = impulse.iter().map(|i| i / ctrl_dt).collect();
        self.state.t += 1;
        self.state.steps_since_randomize += 1;

        let t = self.state.t;
        let target = self.target_at(t);
        let obj = self.object_pose();
        let (obj_reward, hand_reward, done) = if fault {
            (0.0, 0.0, Some(DoneReason::Fault))
        } else {
            let r = tracking_reward(&target, &obj, &setup.anchors, cfg.reward.alpha);
            let h = match cfg.reward.mode {
                RewardMode::Obj => 0.0,
                RewardMode::ObjPlusHand => {
                    let k = t.min(setup.desired_fingertips.len() - 1);
                    cfg.reward.hand_weight
                        * crate::rl::hand_tracking_reward(
                            &self.fingertip_positions(),
                            &setup.desired_fingertips[k],
                            cfg.reward.hand_alpha,
                        )
                        .expect("fingertip counts match")
                }
            };
            let d = pose_distance(&target, &obj, &setup.anchors);
            let palm_d = (self.palm_position() - obj.position).norm();
            let done = if d > cfg.d_max {
                Some(DoneReason::ObjectFar)
            } else if palm_d > cfg.d_max {
                Some(DoneReason::PalmFar)
            } else if t >= setup.episode_len() {
                Some(DoneReason::TrajComplete)
            } else {
                None
            };
            (r, h, done)
        };
        let track_reward = if fault {
            0.0
        } else {
            tracking_reward(
                &self.dense_target_at(t),
                &obj,
                &setup.anchors,
                cfg.reward.alpha,
            )
        };
        self.state.done = done;
        let success = done.is_some() && self.success();
        let obs = if fault {
            vec![0.0; setup.obs_dim()]
        } else {
            self.observe()
        };
        StepOutcome {
            obs,
            reward: obj_reward + hand_reward,
            obj_reward,
            hand_reward,
            track_reward,
            done,
            success,
            perturbed,
        }
    }

    /// Task success at the current state: the episode ran to completion and
    /// the object ended close to the final demo pose.
    pub fn success(&self) -> bool {
        if self.state.done != Some(DoneReason::TrajComplete) {
            return false;
        }
        let setup = &self.setup;
        let obj = self.object_pose();
        let fin = self.final_target();
        match setup.cfg.task {
            Task::Push => pose_distance(&fin, &obj, &setup.anchors) <= setup.cfg.d_success,
            Task::Pivot => {
                let a = setup.planar(&obj).theta;
                let b = setup.planar(&fin).theta;
                wrap_angle(a - b).abs().to_degrees() <= setup.cfg.success_deg
            }
        }
    }

    /// Observation without noise: `[q, qd, fingertips, palm, object anchors, target anchors]`.
    /// The target is the one the next reward is computed against.
    pub fn observe_clean(&self) -> Vec<f64> {
        let setup = &self.setup;
        let mut o = Vec::with_capacity(setup.obs_dim());
        o.extend_from_slice(&self.state.q);
        o.extend_from_slice(&self.state.qd);
        for f in self.fingertip_positions() {
            o.extend(f.iter());
        }
        o.extend(self.palm_position().iter());
        for p in anchor_points(&self.object_pose(), &setup.anchors) {
            o.extend(p.iter());
        }
        for p in anchor_points(&self.target_at(self.state.t + 1), &setup.anchors) {
            o.extend(p.iter());
        }
        debug_assert_eq!(o.len(), setup.obs_dim());
        o
    }

    /// Observation with additive Gaussian noise on every entry.
    pub fn observe(&mut self) -> Vec<f64> {
        let sigma = self.setup.cfg.randomization.obs_noise_sigma;
        let mut o = self.observe_clean();
        if sigma > 0.0 {
            for v in o.iter_mut() {
                *v += self.noise(sigma);
            }
        }
        o
    }

    /// `[obs, v, omega, t / episode_len, f_dof, finger forces]` with noiseless extras.
    pub fn privileged_state(&self, obs: &[f64]) -> Vec<f64> {
        let setup = &self.setup;
        let mut s = Vec::with_capacity(setup.privileged_dim());
        s.extend_from_slice(obs);
        // the object frame shares the centroid's angular velocity; its origin moves with v + w x r
        let off = crate::simenv::physics::rotate(
            self.state.body.pose.theta,
            &(setup.frame_offset * self.state.dynamics.scale),
        );
        let v = self.state.body.v + crate::simenv::physics::perp(self.state.body.w, &off);
        s.extend(setup.plane.vector(&v).iter());
        s.extend((setup.plane.normal() * self.state.body.w).iter());
        s.push(self.state.t as f64 / setup.episode_len().max(1) as f64);
        s.extend_from_slice(&self.state.f_dof);
        s.extend_from_slice(&self.state.finger_force);
        debug_assert_eq!(s.len(), setup.privileged_dim());
        s
    }
}

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLogEntry {
    pub t: usize,
    pub reward: f64,
    pub done_reason: Option<DoneReason>,
    pub object_pose: Pose,
}
