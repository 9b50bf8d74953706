//! Open-loop replay and object-aware replay executors.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::geometry::Pose;
use crate::kinematics::fk;
use crate::rl::eval::{eval_seed, EvalReport};
use crate::simenv::{run_episode, Control, Env, EnvConfig, SimError, TaskSetup};
use crate::trajectory::{oa_warp, JointPoint, JointTrajectory};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("joint trajectory is empty")]
    Empty,
    #[error("joint trajectory has {got} joints, the env chain has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("end-effector trajectory has {got} poses for {expected} joint points")]
    EeLength { expected: usize, got: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
}

/// Writes one `[x,y,z,qw,qx,qy,qz]` pose per line.
pub fn save_poses(path: &Path, poses: &[Pose]) -> Result<(), BaselineError> {
    let text: String = poses
        .iter()
        .map(|p| serde_json::to_string(p).expect("serializable") + "\n")
        .collect();
    std::fs::write(path, text).map_err(|e| BaselineError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Reads the format of [`save_poses`]; blank lines are skipped.
pub fn load_poses(path: &Path) -> Result<Vec<Pose>, BaselineError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| BaselineError::Io {
        path: name.clone(),
        msg: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| BaselineError::Parse {
                path: name.clone(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Frame whose trajectory object-aware replay warps.
pub const EE_FRAME: &str = "palm";

/// The retargeted demonstration from the pre-manipulation step on, sampled
/// on the control clock with time zero at the episode start.
pub fn demo_joint_trajectory(setup: &TaskSetup) -> JointTrajectory {
    let dt = setup.cfg.control_dt();
    let points = (0..=setup.episode_len())
        .map(|k| JointPoint {
            time: k as f64 * dt,
            q: setup.base_q(k),
        })
        .collect();
    JointTrajectory::new(setup.chain.joint_names(), points)
        .expect("sampled from a valid trajectory")
}

/// World pose of [`EE_FRAME`] at every point of `jt`.
pub fn ee_trajectory(setup: &TaskSetup, jt: &JointTrajectory) -> Vec<Pose> {
    jt.points
        .iter()
        .map(|p| fk(&setup.chain, &p.q).expect("dimension checked").frames[EE_FRAME])
        .collect()
}

/// Initial object pose of the demonstration at the pre-manipulation step.
pub fn demo_object_init(setup: &TaskSetup) -> Pose {
    setup.demo.frames[setup.tau()].pose
}

fn check(setup: &TaskSetup, jt: &JointTrajectory) -> Result<(), BaselineError> {
    if jt.is_empty() {
        return Err(BaselineError::Empty);
    }
    if jt.dim() != setup.robot.dof() {
        return Err(BaselineError::Dimension {
            expected: setup.robot.dof(),
            got: jt.dim(),
        });
    }
    Ok(())
}

/// PD targets for control step `k`: the trajectory one control period ahead,
/// held at the last point.
fn open_loop(jt: &JointTrajectory, dt: f64) -> impl FnMut(&Env, &[f64], usize) -> Control + '_ {
    move |_, _, k| Control::Targets(jt.sample((k + 1) as f64 * dt))
}

fn run_all<F>(
    setup: &Arc<TaskSetup>,
    n_episodes: usize,
    seed: u64,
    episode: F,
) -> Result<EvalReport, SimError>
where
    F: Fn(&mut Env, usize, u64) -> Result<crate::simenv::EpisodeRecord, SimError> + Sync,
{
    let records = (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let mut env = Env::new(Arc::clone(setup));
            episode(&mut env, i, eval_seed(seed, i))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_records(records))
}

/// Replays `jt` open loop. Episode seeds match [`crate::rl::evaluate`].
pub fn replay_execute(
    env_cfg: &EnvConfig,
    jt: &JointTrajectory,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport, BaselineError> {
    let setup = Arc::new(TaskSetup::prepare(env_cfg)?);
    check(&setup, jt)?;
    let dt = env_cfg.control_dt();
    Ok(run_all(&setup, n_episodes, seed, |env, i, s| {
        run_episode(env, i, s, open_loop(jt, dt))
    })?)
}

/// Joint targets that make the arm follow `ee_traj` warped onto the object
/// pose `new_obj_init`, each point solved from the matching `jt` point.
/// Fails with the index of the first unreachable point.
pub fn oa_joint_trajectory(
    setup: &TaskSetup,
    jt: &JointTrajectory,
    ee_traj: &[Pose],
    demo_obj_init: &Pose,
    new_obj_init: &Pose,
) -> Result<JointTrajectory, usize> {
    let warped = oa_warp(ee_traj, demo_obj_init, new_obj_init);
    let robot = &setup.robot;
    let mut points = Vec::with_capacity(jt.points.len());
    let mut prev: Option<Vec<f64>> = None;
    for (k, (p, target)) in jt.points.iter().zip(&warped).enumerate() {
        let goal = setup.plane.from_world(target);
        let sol = robot
            .solve_palm(&p.q, &goal)
            .or_else(|| prev.as_ref().and_then(|q| robot.solve_palm(q, &goal)))
            .or_else(|| robot.reach_palm(&p.q, &goal))
            .ok_or(k)?;
        let mut q = sol;
        // fingers follow the original trajectory
        for &j in &robot.fingers {
            q[j] = p.q[j];
        }
        prev = Some(q.clone());
        points.push(JointPoint { time: p.time, q });
    }
    Ok(JointTrajectory::new(jt.joint_names.clone(), points).expect("same timing as jt"))
}

/// Object-aware replay: at each episode start the end-effector trajectory is
/// warped by the sampled initial object pose, re-solved to joints and
/// replayed open loop. IK failures end the episode as `abort:ik...`.
pub fn oa_replay_execute(
    env_cfg: &EnvConfig,
    jt: &JointTrajectory,
    ee_traj: &[Pose],
    demo_obj_init: &Pose,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport, BaselineError> {
    let setup = Arc::new(TaskSetup::prepare(env_cfg)?);
    check(&setup, jt)?;
    if ee_traj.len() != jt.points.len() {
        return Err(BaselineError::EeLength {
            expected: jt.points.len(),
            got: ee_traj.len(),
        });
    }
    let dt = env_cfg.control_dt();
    Ok(run_all(&setup, n_episodes, seed, |env, i, s| {
        let mut plan: Option<Result<JointTrajectory, usize>> = None;
        run_episode(env, i, s, |env, _, k| {
            let plan = plan.get_or_insert_with(|| {
                oa_joint_trajectory(&env.setup, jt, ee_traj, demo_obj_init, &env.object_pose())
            });
            match plan {
                Ok(w) => Control::Targets(w.sample((k + 1) as f64 * dt)),
                Err(at) => Control::Abort(format!("ik unreachable at point {at}")),
            }
        })
    })?)
}
