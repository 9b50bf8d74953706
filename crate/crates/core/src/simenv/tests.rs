use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{anchor_points, pose_distance, tracking_reward};

fn quiet(task: Task) -> EnvConfig {
    let mut cfg = EnvConfig::new(task);
    cfg.randomization = RandomizationConfig::none();
    cfg.init.theta_max = 0.0;
    cfg.init.t_max = 0.0;
    cfg
}

fn env(cfg: &EnvConfig) -> Env {
    Env::new(Arc::new(TaskSetup::prepare(cfg).unwrap()))
}

#[test]
fn zero_noise_reset_matches_demo_and_wrist() {
    for task in [Task::Push, Task::Pivot] {
        let mut e = env(&quiet(task));
        e.reset(3).unwrap();
        let obj = e.object_pose();
        let tgt = e.target_at(0);
        assert!((obj.position - tgt.position).norm() < 1e-12, "{task:?}");
        assert!(obj.angle_to(&tgt) < 1e-9);
        let fk = crate::kinematics::fk(&e.setup.chain, &e.state.q).unwrap();
        let w = fk.frames["wrist"];
        assert!((w.position - e.setup.wrist_pose.position).norm() < 1e-5);
        assert!(w.angle_to(&e.setup.wrist_pose) < 1e-5);
    }
}

#[test]
fn reset_noise_stays_in_bounds() {
    let mut cfg = EnvConfig::new(Task::Push);
    cfg.randomization = RandomizationConfig::none();
    let mut e = env(&cfg);
    let t0 = e.setup.planar(&e.target_at(0));
    let mut max_yaw: f64 = 0.0;
    for s in 0..10_000u64 {
        e.reset(s).unwrap();
        let o = e.object_planar();
        let yaw = physics::wrap_angle(o.theta - t0.theta).to_degrees();
        let d = physics::rotate(-t0.theta, &(o.p - t0.p));
        assert!(yaw.abs() <= 20.0 + 1e-9);
        assert!(d.x.abs() <= 0.1 + 1e-12 && d.y.abs() <= 0.1 + 1e-12);
        assert_eq!(e.object_pose().position.z, 0.0);
        max_yaw = max_yaw.max(yaw.abs());
    }
    assert!(max_yaw > 19.0);
}

#[test]
fn premanip_far_adds_offset() {
    for task in [Task::Push, Task::Pivot] {
        let mut cfg = quiet(task);
        let mut e = env(&cfg);
        e.reset(0).unwrap();
        let near = (e.palm_position() - e.object_pose().position).norm();
        cfg.init.mode = InitMode::PremanipFar;
        let mut e = env(&cfg);
        e.reset(0).unwrap();
        let far = (e.palm_position() - e.object_pose().position).norm();
        assert!((far - near - 0.20).abs() < 1e-4, "{task:?}: {near} {far}");
    }
}

#[test]
fn init_modes_place_the_palm() {
    let mut cfg = quiet(Task::Pivot);
    cfg.init.mode = InitMode::Overhead;
    let mut e = env(&cfg);
    e.reset(0).unwrap();
    let palm = e.palm_position();
    let obj = e.object_pose().position;
    assert!((palm.x - obj.x).abs() < 1e-4);
    assert!(palm.z > obj.z + 0.05);
    cfg.init.mode = InitMode::DefaultRest;
    let mut e = env(&cfg);
    e.reset(0).unwrap();
    assert_eq!(e.state.q, e.setup.robot.rest);
}

#[test]
fn frozen_object_at_target_scores_one() {
    let mut e = env(&quiet(Task::Push));
    e.reset(0).unwrap();
    for _ in 0..10 {
        let next = e.setup.planar(&e.target_at(e.state.t + 1));
        e.set_object_planar(&next);
        let out = e.step(&[0.0, 0.0, 0.0, -1.0]);
        assert!(
            out.reward >= 1.0 - 1e-12 && out.reward <= 1.0,
            "{}",
            out.reward
        );
    }
}

#[test]
fn teleported_object_terminates() {
    let mut e = env(&quiet(Task::Push));
    e.reset(0).unwrap();
    let mut p = e.object_planar();
    p.p.x += 0.3;
    e.set_object_planar(&p);
    let out = e.step(&[0.0, 0.0, 0.0, -1.0]);
    assert_eq!(out.done, Some(DoneReason::ObjectFar));
    assert!(!out.success);
}

#[test]
fn zero_action_is_an_equilibrium() {
    let mut e = env(&quiet(Task::Push));
    e.reset(0).unwrap();
    let before = e.object_pose();
    for _ in 0..20 {
        e.step(&[0.0, 0.0, 0.0, -1.0]);
    }
    let after = e.object_pose();
    assert!((after.position - before.position).norm() < 1e-9);
    assert!(after.angle_to(&before) < 1e-9);
}

#[test]
fn randomization_ranges_and_determinism() {
    let none = RandomizationConfig::none();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(randomize_domain(&none, &mut rng), DynamicsParams::nominal());
    let cfg = RandomizationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws: Vec<DynamicsParams> = (0..10_000)
        .map(|_| randomize_domain(&cfg, &mut rng))
        .collect();
    for d in &draws {
        for m in [d.scale, d.mass, d.friction, d.kp, d.kd] {
            assert!((0.7..=1.3).contains(&m));
        }
    }
    let mean_g = draws.iter().map(|d| d.gravity).sum::<f64>() / draws.len() as f64;
    let var_g = draws
        .iter()
        .map(|d| (d.gravity - mean_g).powi(2))
        .sum::<f64>()
        / draws.len() as f64;
    assert!((var_g.sqrt() - 0.3).abs() < 0.02);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let again: Vec<DynamicsParams> = (0..100).map(|_| randomize_domain(&cfg, &mut rng)).collect();
    assert_eq!(&draws[..100], &again[..]);
}

#[test]
fn observation_layout_and_dimensions() {
    // pivot keeps three anchors: 7 joints, 2 fingers
    let mut e = env(&quiet(Task::Pivot));
    assert_eq!(e.setup.obs_dim(), 41);
    let obs = e.reset(0).unwrap();
    assert_eq!(obs.len(), 41);
    let xo: Vec<f64> = anchor_points(&e.object_pose(), &e.setup.anchors)
        .iter()
        .flat_map(|p| p.iter().copied().collect::<Vec<_>>())
        .collect();
    assert_eq!(&obs[23..32], &xo[..]);
    let priv_s = e.privileged_state(&obs);
    assert_eq!(priv_s.len(), 41 + 3 + 3 + 1 + 7 + 2);
    assert_eq!(e.setup.privileged_dim(), priv_s.len());
    assert!(priv_s[41..47].iter().all(|v| *v == 0.0));
    assert!(priv_s[priv_s.len() - 2..].iter().all(|v| *v == 0.0));
    // push reduces to a single anchor on the symmetry axis
    let e = env(&quiet(Task::Push));
    assert_eq!(e.setup.anchors.len(), 1);
    assert_eq!(e.setup.obs_dim(), 14 + 6 + 3 + 6);
}

#[test]
fn observation_noise_variance() {
    let mut cfg = quiet(Task::Push);
    cfg.randomization.obs_noise_sigma = 0.01;
    let mut e = env(&cfg);
    e.reset(0).unwrap();
    let clean = e.observe_clean();
    let mut sum = 0.0;
    let mut sq = 0.0;
    let n = 100_000;
    for k in 0..n {
        let o = e.observe();
        let i = k % clean.len();
        let d = o[i] - clean[i];
        sum += d;
        sq += d * d;
    }
    let mean = sum / n as f64;
    let var = sq / n as f64 - mean * mean;
    assert!((var - 1e-4).abs() < 0.2e-4, "{var}");
}

#[test]
fn sliding_object_loses_energy() {
    let mut cfg = quiet(Task::Push);
    cfg.d_max = 10.0;
    let mut e = env(&cfg);
    e.reset(0).unwrap();
    e.state.body.v = physics::V2::new(0.3, -0.4);
    e.state.body.w = 4.0;
    let ke = |e: &Env| {
        let s = e.shape();
        0.5 * s.mass * e.state.body.v.norm_squared() + 0.5 * s.inertia * e.state.body.w.powi(2)
    };
    let mut prev = ke(&e);
    for _ in 0..40 {
        e.step(&[0.0, 0.0, 0.0, -1.0]);
        let k = ke(&e);
        assert!(k <= prev + 1e-6, "{k} > {prev}");
        prev = k;
    }
    assert!(prev < 1e-12);
}

#[test]
fn random_actions_keep_penetration_small_and_are_deterministic() {
    for task in [Task::Push, Task::Pivot] {
        let cfg = EnvConfig::new(task);
        let run = |seed: u64| {
            let mut e = env(&cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut trace = Vec::new();
            let mut worst: f64 = 0.0;
            for ep in 0..12 {
                e.reset(seed * 100 + ep).unwrap();
                loop {
                    let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let out = e.step(&a);
                    trace.push((e.state.body, out.reward));
                    worst = worst.max(e.state.max_penetration);
                    if let Some(r) = out.done {
                        assert_ne!(r, DoneReason::Fault);
                        break;
                    }
                }
            }
            (trace, worst)
        };
        let (a, worst) = run(5);
        let (b, _) = run(5);
        assert_eq!(a, b);
        assert!(worst <= 2e-3, "{task:?}: penetration {worst}");
    }
}

#[test]
fn scripted_replay_pushes_puck_to_goal() {
    let mut e = env(&quiet(Task::Push));
    e.reset(0).unwrap();
    let mut k = 0;
    let out = loop {
        let q = e.setup.base_q(k + 1);
        let out = e.step_targets(&q);
        k += 1;
        if out.done.is_some() {
            break out;
        }
    };
    assert_eq!(out.done, Some(DoneReason::TrajComplete));
    let d = pose_distance(&e.final_target(), &e.object_pose(), &e.setup.anchors);
    assert!(out.success, "final distance {d}");
    assert!(tracking_reward(&e.final_target(), &e.object_pose(), &e.setup.anchors, 10.0) > 0.6);
}

#[test]
fn config_toml_roundtrip_and_validation() {
    let cfg = EnvConfig::new(Task::Pivot);
    let text = cfg.to_toml();
    assert_eq!(EnvConfig::from_toml(&text).unwrap(), cfg);
    let over = EnvConfig::from_toml("task = \"push\"\n[init]\nt_max = 0.05\n").unwrap();
    assert_eq!(over.init.t_max, 0.05);
    assert_eq!(over.init.theta_max, 20.0);
    assert!(EnvConfig::from_toml("task = \"push\"\n[init]\nbogus = 1\n").is_err());
    assert!(EnvConfig::from_toml("task = \"push\"\n[randomization]\nforce_prob = 2.0\n").is_err());
    let zero = EnvConfig::from_toml("task = \"push\"\n[init]\ntheta_max = 0.0\n").unwrap();
    assert_eq!(zero.init.theta_max, 0.0);
    // a task override takes that task's defaults under the file's explicit values
    let piv =
        EnvConfig::from_toml_with("task = \"push\"\n[init]\nt_max = 0.03\n", Some(Task::Pivot))
            .unwrap();
    assert_eq!(piv.task, Task::Pivot);
    assert_eq!(piv.init.t_max, 0.03);
    assert_eq!(
        piv.init.theta_max,
        EnvConfig::new(Task::Pivot).init.theta_max
    );
    assert!(EnvConfig::from_toml_with("[init]\nt_max = 0.03\n", None).is_err());
    assert_eq!(
        EnvConfig::from_toml_with("[init]\nt_max = 0.03\n", Some(Task::Push))
            .unwrap()
            .init
            .t_max,
        0.03
    );
}

#[test]
fn force_perturbation_pushes_object() {
    let mut cfg = quiet(Task::Push);
    cfg.randomization.force_prob = 1.0;
    cfg.randomization.force_scale = 50.0;
    cfg.d_max = 10.0;
    let mut e = env(&cfg);
    e.reset(0).unwrap();
    let before = e.object_planar();
    let out = e.step(&[0.0, 0.0, 0.0, -1.0]);
    assert!(out.perturbed);
    assert!((e.object_planar().p - before.p).norm() > 1e-3);
}
