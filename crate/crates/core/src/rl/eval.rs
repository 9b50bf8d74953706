//! Deterministic evaluation of a checkpoint with the mean action.

use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::policy::{ActorCritic, History};
use super::vecenv::episode_seed;
use super::RlError;
use crate::simenv::{
    run_episode, Control, Env, EnvConfig, EpisodeRecord, EpisodeSummary, TaskSetup,
};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub records: Vec<EpisodeRecord>,
    pub summary: EpisodeSummary,
}

impl EvalReport {
    pub fn from_records(records: Vec<EpisodeRecord>) -> Self {
        let summary = EpisodeSummary::from_records(&records);
        Self { records, summary }
    }
}

/// Seed of evaluation episode `i`; shared with the replay baselines so every
/// executor sees the same initial states.
pub fn eval_seed(seed: u64, i: usize) -> u64 {
    episode_seed(seed, u64::MAX, i as u64)
}

/// Mean-action controller over a stacked, normalized observation history.
pub fn policy_controller(ac: &ActorCritic) -> impl FnMut(&Env, &[f64], usize) -> Control + '_ {
    let mut hist = History::new(ac.history);
    move |_, obs, t| {
        if t == 0 {
            hist.clear();
        }
        hist.push(obs.to_vec());
        let x = hist.stacked(&ac.obs_norm);
        let n = x.len();
        let mu = ac.mean_actions(&Array2::from_shape_vec((1, n), x).expect("one row"));
        Control::Action(mu.row(0).to_vec())
    }
}

/// Runs `n_episodes` with frozen normalizers. `env_cfg` must produce the
/// observation and action layout the checkpoint was trained on.
pub fn evaluate(
    ck: &Checkpoint,
    env_cfg: &EnvConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport, RlError> {
    let ac = ck.actor_critic()?;
    env_cfg.validate()?;
    if env_cfg.task != ck.env_config.task {
        return Err(RlError::Mismatch(format!(
            "env task {} vs checkpoint task {}",
            env_cfg.task.name(),
            ck.env_config.task.name()
        )));
    }
    if env_cfg.action.mode != ck.env_config.action.mode {
        return Err(RlError::Mismatch(
            "action mode differs from the checkpoint".into(),
        ));
    }
    if n_episodes == 0 {
        return Ok(EvalReport::from_records(Vec::new()));
    }
    let setup = Arc::new(TaskSetup::prepare(env_cfg)?);
    let dims = [
        ("obs", setup.obs_dim(), ck.manifest.obs_dim),
        ("privileged", setup.privileged_dim(), ck.manifest.priv_dim),
        ("action", setup.action_dim(), ck.manifest.action_dim),
    ];
    for (name, env, ckd) in dims {
        if env != ckd {
            return Err(RlError::Mismatch(format!(
                "{name} dim {env} vs checkpoint {ckd}"
            )));
        }
    }
    let records = (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let mut env = Env::new(Arc::clone(&setup));
            run_episode(&mut env, i, eval_seed(seed, i), policy_controller(&ac))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::policy::PolicyParams;
    use crate::rl::train::{train, TrainConfig};
    use crate::simenv::{episode_csv, Task};

    fn untrained(task: Task) -> Checkpoint {
        let cfg = TrainConfig {
            total_steps: 0,
            policy: PolicyParams {
                actor_hidden: vec![8],
                critic_hidden: vec![8],
                history: 2,
                init_log_std: 0.0,
            },
            ..TrainConfig::default()
        };
        train(&cfg, &EnvConfig::new(task)).unwrap().checkpoint
    }

    #[test]
    fn untrained_policy_rarely_succeeds_and_is_reproducible() {
        let ck = untrained(Task::Push);
        let env = EnvConfig::new(Task::Push);
        let a = evaluate(&ck, &env, 12, 5).unwrap();
        assert_eq!(a.records.len(), 12);
        assert!(a.summary.success_rate <= 0.25, "{}", a.summary.success_rate);
        let b = evaluate(&ck, &env, 12, 5).unwrap();
        assert_eq!(episode_csv(&a.records), episode_csv(&b.records));
        assert_eq!(a.summary.done_counts.iter().sum::<usize>(), 12);
    }

    #[test]
    fn zero_episodes_and_mismatches() {
        let ck = untrained(Task::Push);
        let r = evaluate(&ck, &EnvConfig::new(Task::Push), 0, 1).unwrap();
        assert!(r.records.is_empty());
        assert_eq!(r.summary.n_episodes, 0);
        assert!(matches!(
            evaluate(&ck, &EnvConfig::new(Task::Pivot), 1, 1),
            Err(RlError::Mismatch(_))
        ));
    }
}
