use std::path::Path;

use serde_json::json;

use h2s2r_core::ablation::{ablation_csv, run_ablation, Study};
use h2s2r_core::baselines::{
    demo_joint_trajectory, demo_object_init, ee_trajectory, load_poses, oa_replay_execute,
    replay_execute, save_poses,
};
use h2s2r_core::geometry::{Pose, Vec3};
use h2s2r_core::kinematics::{
    load_hand_observations, reference_chain, retarget_premanip, retarget_trajectory, IkParams,
    KinematicChain,
};
use h2s2r_core::pointcloud::io::{
    read_depth_pgm, read_intrinsics, read_mask_pgm, read_xyz, write_xyz,
};
use h2s2r_core::pointcloud::{depth_to_points, icp_register, largest_component_filter};
use h2s2r_core::rl::eval::EvalReport;
use h2s2r_core::rl::{evaluate, metrics_csv, train_with, Checkpoint, TrainConfig};
use h2s2r_core::simenv::{
    episode_csv, tasks, EnvConfig, InitMode, PolicyMode, RandomizationConfig, RewardMode, Task,
    TaskSetup,
};
use h2s2r_core::trajectory::{
    detect_premanip_timestep, load_demo, load_joint_trajectory, retime_velocity_limited, TargetMode,
};

use crate::plot::{plot_csv, PlotSpec};
use crate::*;

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Demo(DemoCommand::Premanip(a)) => demo_premanip(a),
        Command::Icp(IcpCommand::Align(a)) => icp_align(a),
        Command::Retarget(RetargetCommand::Premanip(a)) => retarget_pre(a),
        Command::Retarget(RetargetCommand::Traj(a)) => retarget_traj(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Replay(a) => replay_cmd(a),
        Command::OaReplay(a) => oa_replay_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Assets(a) => assets_cmd(a),
        Command::Plot(a) => plot_cmd(a),
    }
}

fn parse_flag<T: std::str::FromStr<Err = String>>(flag: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|e: String| CliError::Usage(format!("--{flag}: {e}")))
}

fn parse_mode<T: serde::de::DeserializeOwned>(flag: &str, v: &str) -> Result<T, CliError> {
    serde_json::from_value(json!(v))
        .map_err(|_| CliError::Usage(format!("--{flag}: unknown value `{v}`")))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| data_at(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| data_at(path, e))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

/// Task defaults, then the TOML file, then flags.
pub(crate) fn env_config(a: &EnvArgs) -> Result<EnvConfig, CliError> {
    let task = a
        .task
        .as_deref()
        .map(|t| parse_flag::<Task>("task", t))
        .transpose()?;
    let mut cfg = match (&a.env_config, task) {
        (Some(p), t) => EnvConfig::load_with(p, t).map_err(|e| data_at(p, e))?,
        (None, Some(t)) => EnvConfig::new(t),
        (None, None) => {
            return Err(CliError::Usage(
                "one of --env-config or --task is required".into(),
            ))
        }
    };
    if let Some(v) = a.theta_max {
        cfg.init.theta_max = v;
    }
    if let Some(v) = a.t_max {
        cfg.init.t_max = v;
    }
    if let Some(m) = &a.init_mode {
        cfg.init.mode = parse_flag::<InitMode>("init-mode", m)?;
    }
    if let Some(m) = &a.target_mode {
        cfg.target.mode = parse_flag::<TargetMode>("target-mode", m)?;
    }
    if a.no_randomization {
        cfg.randomization = RandomizationConfig::none();
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Defaults, then the TOML file, then flags.
pub(crate) fn train_config(a: &TrainFlags) -> Result<TrainConfig, CliError> {
    let mut cfg = match &a.train_config {
        Some(p) => TrainConfig::load(p).map_err(|e| data_at(p, e))?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.total_steps {
        cfg.total_steps = v;
    }
    if let Some(v) = a.n_envs {
        cfg.n_envs = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = &a.actor_hidden {
        cfg.policy.actor_hidden = v.clone();
    }
    if let Some(v) = &a.critic_hidden {
        cfg.policy.critic_hidden = v.clone();
    }
    if let Some(v) = a.history {
        cfg.policy.history = v;
    }
    if let Some(m) = &a.reward_mode {
        cfg.reward_mode = Some(parse_mode::<RewardMode>("reward-mode", m)?);
    }
    if let Some(m) = &a.policy_mode {
        cfg.policy_mode = Some(parse_mode::<PolicyMode>("policy-mode", m)?);
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn demo_premanip(a: PremanipArgs) -> Result<(), CliError> {
    let demo = load_demo(&a.demo).map_err(|e| data_at(&a.demo, e))?;
    let tau =
        detect_premanip_timestep(&demo, a.v_min, a.t_offset).map_err(|e| data_at(&a.demo, e))?;
    print_json(&json!({ "tau": tau, "t": demo.frames[tau].t, "pose": demo.frames[tau].pose }));
    Ok(())
}

fn icp_align(a: IcpAlignArgs) -> Result<(), CliError> {
    let k = read_intrinsics(&a.intrinsics).map_err(|e| data_at(&a.intrinsics, e))?;
    let depth = read_depth_pgm(&a.depth, k).map_err(|e| data_at(&a.depth, e))?;
    let mask = read_mask_pgm(&a.mask).map_err(|e| data_at(&a.mask, e))?;
    let model = read_xyz(&a.model).map_err(|e| data_at(&a.model, e))?;
    let cloud = depth_to_points(&depth, &mask).map_err(|e| data_at(&a.mask, e))?;
    let filtered = largest_component_filter(&cloud, a.radius);
    if let Some(p) = &a.out_cloud {
        write_xyz(p, &filtered).map_err(|e| data_at(p, e))?;
    }
    let mean =
        |pts: &[Vec3]| pts.iter().fold(Vec3::zeros(), |s, p| s + p) / pts.len().max(1) as f64;
    if model.is_empty() {
        return Err(data_at(&a.model, "model cloud is empty"));
    }
    if filtered.is_empty() {
        return Err(data_at(&a.mask, "no masked depth pixels"));
    }
    // start from the centroid offset
    let c = mean(&filtered.points) - mean(&model.points);
    let init = Pose::from_translation(c.x, c.y, c.z);
    let r = icp_register(&model, &filtered, &init, a.max_iters, a.tol)
        .map_err(|e| data_at(&a.depth, e))?;
    print_json(&json!({
        "pose": r.pose,
        "rmse": r.rmse,
        "iterations": r.iterations,
        "points": filtered.len(),
        "points_before_filter": cloud.len(),
    }));
    Ok(())
}

fn load_chain(c: &ChainArgs) -> Result<KinematicChain, CliError> {
    match &c.chain {
        Some(p) => KinematicChain::load(p).map_err(|e| data_at(p, e)),
        None => Ok(reference_chain()),
    }
}

fn retarget_pre(a: RetargetPremanipArgs) -> Result<(), CliError> {
    let chain = load_chain(&a.chain)?;
    let hands = load_hand_observations(&a.hand).map_err(|e| data_at(&a.hand, e))?;
    let frame = match (a.frame, &a.demo) {
        (Some(f), _) => f,
        (None, Some(d)) => {
            let demo = load_demo(d).map_err(|e| data_at(d, e))?;
            detect_premanip_timestep(&demo, a.v_min, a.t_offset).map_err(|e| data_at(d, e))?
        }
        (None, None) => {
            return Err(CliError::Usage(
                "one of --frame or --demo is required".into(),
            ))
        }
    };
    let hand = hands.get(frame).ok_or_else(|| {
        data_at(
            &a.hand,
            format!("frame {frame} out of range ({} frames)", hands.len()),
        )
    })?;
    let sol = retarget_premanip(
        &chain,
        hand,
        &chain.offsets,
        &IkParams::default(),
        a.chain.seed,
    )
    .map_err(|e| data_at(&a.hand, format!("frame {frame}: {e}")))?;
    print_json(&json!({
        "frame": frame,
        "q_arm": sol.q_arm,
        "q_hand": sol.q_hand,
        "arm_pos_err": sol.arm_pos_err,
        "arm_ori_err_deg": sol.arm_ori_err_deg,
        "finger_pos_err": sol.finger_pos_err,
        "finger_within_tol": sol.finger_within_tol,
    }));
    Ok(())
}

fn retarget_traj(a: RetargetTrajArgs) -> Result<(), CliError> {
    let chain = load_chain(&a.chain)?;
    let hands = load_hand_observations(&a.hand).map_err(|e| data_at(&a.hand, e))?;
    let r = retarget_trajectory(
        &chain,
        &hands,
        &chain.offsets,
        &IkParams::default(),
        a.jump_thresh,
        a.rate_hz,
        a.chain.seed,
    )
    .map_err(|e| data_at(&a.hand, e))?;
    let jt = if a.retime {
        retime_velocity_limited(&r.trajectory, &chain.velocity_limits()).map_err(data)?
    } else {
        r.trajectory
    };
    jt.save(&a.out).map_err(|e| data_at(&a.out, e))?;
    print_json(&json!({
        "points": jt.points.len(),
        "duration": jt.duration(),
        "skipped": r.skipped,
    }));
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let env = env_config(&a.env)?;
    let cfg = train_config(&a.train)?;
    create_dir(&a.out_dir)?;
    let every = a.log_every;
    let out = train_with(&cfg, &env, |m| {
        if every > 0 && m.update % every == 0 {
            eprintln!(
                "update {} steps {} mean_reward {:.3} success {:.2}",
                m.update, m.steps, m.mean_reward, m.success_rate
            );
        }
    })
    .map_err(data)?;
    let ck_path = a.out_dir.join("checkpoint.json");
    out.checkpoint
        .save(&ck_path)
        .map_err(|e| data_at(&ck_path, e))?;
    let csv = metrics_csv(&out.metrics);
    write_file(&a.out_dir.join("metrics.csv"), &csv)?;
    let svg = plot_csv(&csv, &PlotSpec::new("update", "mean_reward")).map_err(data)?;
    write_file(&a.out_dir.join("metrics.svg"), &svg)?;
    let last = out.metrics.last();
    print_json(&json!({
        "updates": out.metrics.len(),
        "steps": last.map(|m| m.steps).unwrap_or(0),
        "mean_reward": last.map(|m| m.mean_reward),
        "success_rate": last.map(|m| m.success_rate),
        "checkpoint": ck_path,
    }));
    Ok(())
}

fn report(r: &EvalReport, out: Option<&Path>) -> Result<(), CliError> {
    if let Some(p) = out {
        write_file(p, &episode_csv(&r.records))?;
    }
    print_json(&json!(r.summary));
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<(), CliError> {
    let ck = Checkpoint::load(&a.checkpoint).map_err(|e| data_at(&a.checkpoint, e))?;
    let mut env = match &a.env_config {
        Some(p) => EnvConfig::load(p).map_err(|e| data_at(p, e))?,
        None => ck.env_config.clone(),
    };
    if let Some(v) = a.theta_max {
        env.init.theta_max = v;
    }
    if let Some(v) = a.t_max {
        env.init.t_max = v;
    }
    let env = ck.train_config.apply_overrides(&env);
    let r = evaluate(&ck, &env, a.episodes, a.seed).map_err(|e| data_at(&a.checkpoint, e))?;
    report(&r, a.out.as_deref())
}

fn replay_inputs(
    a: &ReplayArgs,
) -> Result<
    (
        EnvConfig,
        TaskSetup,
        h2s2r_core::trajectory::JointTrajectory,
    ),
    CliError,
> {
    let env = env_config(&a.env)?;
    let setup = TaskSetup::prepare(&env).map_err(data)?;
    let jt = match &a.traj {
        Some(p) => load_joint_trajectory(p).map_err(|e| data_at(p, e))?,
        None => demo_joint_trajectory(&setup),
    };
    Ok((env, setup, jt))
}

fn replay_cmd(a: ReplayArgs) -> Result<(), CliError> {
    let (env, _, jt) = replay_inputs(&a)?;
    let r = replay_execute(&env, &jt, a.episodes, a.seed).map_err(|e| match &a.traj {
        Some(p) => data_at(p, e),
        None => data(e),
    })?;
    report(&r, a.out.as_deref())
}

fn oa_replay_cmd(a: OaReplayArgs) -> Result<(), CliError> {
    let (env, setup, jt) = replay_inputs(&a.replay)?;
    let ee = match &a.ee {
        Some(p) => load_poses(p).map_err(|e| data_at(p, e))?,
        None => {
            if jt.dim() != setup.chain.dof() {
                return Err(CliError::Data(format!(
                    "trajectory has {} joints, the env chain has {}",
                    jt.dim(),
                    setup.chain.dof()
                )));
            }
            ee_trajectory(&setup, &jt)
        }
    };
    let init = match &a.demo_init {
        Some(s) => {
            let v: Vec<f64> = serde_json::from_str(s)
                .map_err(|e| CliError::Usage(format!("--demo-init: {e}")))?;
            Pose::from_slice(&v).map_err(|e| CliError::Usage(format!("--demo-init: {e}")))?
        }
        None => demo_object_init(&setup),
    };
    let r =
        oa_replay_execute(&env, &jt, &ee, &init, a.replay.episodes, a.replay.seed).map_err(data)?;
    report(&r, a.replay.out.as_deref())
}

fn ablate_cmd(a: AblateArgs) -> Result<(), CliError> {
    let study = parse_flag::<Study>("study", &a.study)?;
    let env = env_config(&a.env)?;
    let cfg = train_config(&a.train)?;
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    create_dir(&a.out_dir)?;
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let rows = run_ablation(study, &env, &cfg, &seeds, |_| {}).map_err(data)?;
    let csv = ablation_csv(&rows);
    write_file(&a.out_dir.join("ablation.csv"), &csv)?;
    let spec = PlotSpec {
        group: vec!["mode".into(), "seed".into()],
        ..PlotSpec::new("update", &a.plot_column)
    };
    let svg = plot_csv(&csv, &spec).map_err(|e| CliError::Usage(format!("--plot-column: {e}")))?;
    write_file(&a.out_dir.join("ablation.svg"), &svg)?;
    print_json(&json!({ "study": study.name(), "rows": rows.len() }));
    Ok(())
}

fn assets_cmd(a: AssetsArgs) -> Result<(), CliError> {
    let task = parse_flag::<Task>("task", &a.task)?;
    let env = EnvConfig::new(task);
    let setup = TaskSetup::prepare(&env).map_err(data)?;
    let dir = &a.out_dir;
    create_dir(dir)?;
    let json_file = |name: &str, v: serde_json::Value| {
        write_file(
            &dir.join(name),
            &serde_json::to_string_pretty(&v).expect("serializable"),
        )
    };
    json_file("object.json", json!(tasks::object(task)))?;
    json_file("scene.json", json!(tasks::scene(task)))?;
    json_file("geometry.json", json!(tasks::geometry()))?;
    let p = dir.join("chain.json");
    setup.chain.save(&p).map_err(|e| data_at(&p, e))?;
    let p = dir.join("demo.jsonl");
    setup.demo_source.save(&p).map_err(|e| data_at(&p, e))?;
    let p = dir.join("hand.jsonl");
    h2s2r_core::kinematics::save_hand_observations(&p, &setup.hand).map_err(|e| data_at(&p, e))?;
    let jt = demo_joint_trajectory(&setup);
    let p = dir.join("traj.jsonl");
    jt.save(&p).map_err(|e| data_at(&p, e))?;
    let p = dir.join("ee.jsonl");
    save_poses(&p, &ee_trajectory(&setup, &jt)).map_err(|e| data_at(&p, e))?;
    let mut file_env = env.clone();
    file_env.assets.object = Some("object.json".into());
    file_env.assets.scene = Some("scene.json".into());
    file_env.assets.geometry = Some("geometry.json".into());
    file_env.assets.chain = Some("chain.json".into());
    file_env.assets.demo = Some("demo.jsonl".into());
    file_env.assets.hand = Some("hand.jsonl".into());
    write_file(&dir.join("env.toml"), &file_env.to_toml())?;
    print_json(&json!({ "task": task.name(), "dir": dir, "demo_init": demo_object_init(&setup) }));
    Ok(())
}

fn plot_cmd(a: PlotArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.csv).map_err(|e| data_at(&a.csv, e))?;
    let svg = plot_csv(&text, &PlotSpec::new(&a.x, &a.y)).map_err(|e| data_at(&a.csv, e))?;
    write_file(&a.out, &svg)
}
