//! Rollout / update loop.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use ndarray::{concatenate, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::policy::{ActorCritic, PolicyParams};
use super::ppo::{ppo_update, Optimizers, PpoParams, RolloutBatch};
use super::vecenv::{Finished, VecEnv};
use super::RlError;
use crate::simenv::{EnvConfig, PolicyMode, RewardMode, TaskSetup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizeFlags {
    pub obs: bool,
    pub value: bool,
    pub advantage: bool,
}

impl Default for NormalizeFlags {
    fn default() -> Self {
        Self {
            obs: true,
            value: true,
            advantage: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub mini_epochs: usize,
    pub minibatches: usize,
    pub horizon: usize,
    pub n_envs: usize,
    pub max_grad_norm: f64,
    pub normalize: NormalizeFlags,
    pub total_steps: u64,
    pub seed: u64,
    /// Overrides the env config's reward mode when set.
    pub reward_mode: Option<RewardMode>,
    /// Overrides the env config's action mode when set.
    pub policy_mode: Option<PolicyMode>,
    pub policy: PolicyParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            gamma: 0.998,
            gae_lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.0,
            mini_epochs: 4,
            minibatches: 4,
            horizon: 16,
            n_envs: 256,
            max_grad_norm: 1.0,
            normalize: NormalizeFlags::default(),
            total_steps: 5_000_000,
            seed: 0,
            reward_mode: None,
            policy_mode: None,
            policy: PolicyParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) || self.entropy_coef < 0.0 || !(self.max_grad_norm > 0.0) {
            return bad("clip and max_grad_norm must be positive, entropy_coef non-negative");
        }
        if self.mini_epochs == 0 || self.minibatches == 0 || self.horizon == 0 || self.n_envs == 0 {
            return bad("mini_epochs, minibatches, horizon and n_envs must be positive");
        }
        if self.policy.history == 0 {
            return bad("policy.history must be positive");
        }
        if self.policy.actor_hidden.contains(&0) || self.policy.critic_hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }

    pub fn ppo(&self) -> PpoParams {
        PpoParams {
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            clip: self.clip,
            entropy_coef: self.entropy_coef,
            mini_epochs: self.mini_epochs,
            minibatches: self.minibatches,
            max_grad_norm: self.max_grad_norm,
            normalize_advantages: self.normalize.advantage,
            normalize_values: self.normalize.value,
        }
    }

    /// The env config with this run's reward / policy mode overrides applied.
    pub fn apply_overrides(&self, env: &EnvConfig) -> EnvConfig {
        let mut env = env.clone();
        if let Some(m) = self.reward_mode {
            env.reward.mode = m;
        }
        if let Some(m) = self.policy_mode {
            env.action.mode = m;
        }
        env
    }

    pub fn from_toml(text: &str) -> Result<Self, RlError> {
        let cfg: Self = toml::from_str(text).map_err(|e| RlError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RlError> {
        let text = std::fs::read_to_string(path).map_err(|e| RlError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| RlError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }
}

/// One line of the training metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub update: usize,
    pub steps: u64,
    /// Mean return of the last (up to) 100 finished episodes.
    pub mean_reward: f64,
    /// Mean return of the same episodes scored against the dense target, so
    /// runs with different target modes compare on one scale.
    pub mean_track_return: f64,
    pub mean_len: f64,
    pub success_rate: f64,
    pub clip_frac: f64,
    pub kl: f64,
    /// Episodes finished during this update, per [`DoneReason::ALL`].
    pub done_counts: [usize; 4],
}

pub const METRICS_CSV_HEADER: &str = "update,steps,mean_reward,mean_track_return,mean_len,success_rate,clip_frac,kl,done_object_far,done_palm_far,done_traj_complete,done_fault";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let d = r.done_counts;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.update,
            r.steps,
            r.mean_reward,
            r.mean_track_return,
            r.mean_len,
            r.success_rate,
            r.clip_frac,
            r.kl,
            d[0],
            d[1],
            d[2],
            d[3]
        ));
    }
    s
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRow>,
}

const WINDOW: usize = 100;

/// Runs PPO until `cfg.total_steps` env steps have been collected (rounded up
/// to whole rollouts). Deterministic for a given seed and env count.
pub fn train(cfg: &TrainConfig, env_cfg: &EnvConfig) -> Result<TrainOutput, RlError> {
    train_with(cfg, env_cfg, |_| {})
}

/// [`train`] with a callback after every update.
pub fn train_with<F: FnMut(&MetricsRow)>(
    cfg: &TrainConfig,
    env_cfg: &EnvConfig,
    mut on_update: F,
) -> Result<TrainOutput, RlError> {
    cfg.validate()?;
    let env_cfg = cfg.apply_overrides(env_cfg);
    env_cfg.validate()?;
    let setup = Arc::new(TaskSetup::prepare(&env_cfg)?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ac = ActorCritic::new(
        setup.obs_dim(),
        setup.privileged_dim(),
        setup.action_dim(),
        &cfg.policy,
        &mut rng,
    );
    let mut metrics = Vec::new();
    if cfg.total_steps == 0 {
        return Ok(TrainOutput {
            checkpoint: Checkpoint::new(&ac, cfg, &env_cfg),
            metrics,
        });
    }

    let ppo = cfg.ppo();
    let mut opt = Optimizers::new(&ac, cfg.lr);
    let mut venv = VecEnv::new(Arc::clone(&setup), cfg.n_envs, cfg.policy.history, cfg.seed)?;
    let n = cfg.n_envs;
    let mut window: VecDeque<Finished> = VecDeque::with_capacity(WINDOW);
    let mut steps = 0u64;
    let mut update = 0usize;
    while steps < cfg.total_steps {
        let mut a_rows = Vec::with_capacity(cfg.horizon);
        let mut c_rows = Vec::with_capacity(cfg.horizon);
        let mut act_rows = Vec::with_capacity(cfg.horizon);
        let mut log_probs = Vec::with_capacity(cfg.horizon * n);
        let mut rewards = Vec::with_capacity(cfg.horizon * n);
        let mut dones = Vec::with_capacity(cfg.horizon * n);
        let mut values = Vec::with_capacity(cfg.horizon * n);
        let mut done_counts = [0usize; 4];
        for _ in 0..cfg.horizon {
            if cfg.normalize.obs {
                venv.update_normalizers(&mut ac.obs_norm, &mut ac.priv_norm);
            }
            let (a_in, c_in) = venv.inputs(&ac.obs_norm, &ac.priv_norm);
            let mu = ac.mean_actions(&a_in);
            let (acts, lp) = ac.sample(&mu, &mut rng);
            values.extend(ac.values(&c_in));
            let out = venv.step(&acts)?;
            for s in out {
                rewards.push(s.reward);
                dones.push(s.done);
                if let Some(f) = s.finished {
                    done_counts[f.reason.index()] += 1;
                    if window.len() == WINDOW {
                        window.pop_front();
                    }
                    window.push_back(f);
                }
            }
            log_probs.extend(lp);
            a_rows.push(a_in);
            c_rows.push(c_in);
            act_rows.push(acts);
        }
        let (_, c_last) = venv.inputs(&ac.obs_norm, &ac.priv_norm);
        let last_values = ac.values(&c_last);
        let stack = |rows: &[Array2<f64>]| -> Array2<f64> {
            let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
            concatenate(Axis(0), &views).expect("equal widths")
        };
        let batch = RolloutBatch {
            n_envs: n,
            horizon: cfg.horizon,
            actor_in: stack(&a_rows),
            critic_in: stack(&c_rows),
            actions: stack(&act_rows),
            log_probs,
            rewards,
            dones,
            values,
            last_values,
        };
        let m = ppo_update(&mut ac, &mut opt, &batch, &ppo, &mut rng)?;
        if !ac.is_finite() {
            return Err(RlError::NonFinite(format!("weights after update {update}")));
        }
        steps += (n * cfg.horizon) as u64;
        let nw = window.len().max(1) as f64;
        let row = MetricsRow {
            update,
            steps,
            mean_reward: window.iter().map(|f| f.reward).sum::<f64>() / nw,
            mean_track_return: window.iter().map(|f| f.track_return).sum::<f64>() / nw,
            mean_len: window.iter().map(|f| f.length as f64).sum::<f64>() / nw,
            success_rate: window.iter().filter(|f| f.success).count() as f64 / nw,
            clip_frac: m.clip_frac,
            kl: m.approx_kl,
            done_counts,
        };
        on_update(&row);
        metrics.push(row);
        update += 1;
    }
    Ok(TrainOutput {
        checkpoint: Checkpoint::new(&ac, cfg, &env_cfg),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simenv::{DoneReason, Task};

    fn tiny() -> TrainConfig {
        TrainConfig {
            n_envs: 4,
            horizon: 8,
            total_steps: 64,
            seed: 3,
            policy: PolicyParams {
                actor_hidden: vec![16],
                critic_hidden: vec![16],
                history: 2,
                init_log_std: 0.0,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_gives_initial_checkpoint() {
        let cfg = TrainConfig {
            total_steps: 0,
            ..tiny()
        };
        let env = EnvConfig::new(Task::Push);
        let a = train(&cfg, &env).unwrap();
        assert!(a.metrics.is_empty());
        let b = train(&cfg, &env).unwrap();
        assert_eq!(a.checkpoint.weights, b.checkpoint.weights);
        assert_eq!(a.checkpoint.normalizers.obs.count, 0.0);
    }

    #[test]
    fn runs_are_deterministic() {
        let env = EnvConfig::new(Task::Push);
        let a = train(&tiny(), &env).unwrap();
        let b = train(&tiny(), &env).unwrap();
        assert_eq!(a.metrics.len(), 2);
        assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
        assert_eq!(a.checkpoint.to_json(), b.checkpoint.to_json());
        for r in &a.metrics {
            assert!((0.0..=1.0).contains(&r.clip_frac));
            assert!(r.kl.is_finite());
        }
        let c = train(&TrainConfig { seed: 4, ..tiny() }, &env).unwrap();
        assert_ne!(a.checkpoint.weights, c.checkpoint.weights);
    }

    #[test]
    fn overrides_reach_the_env() {
        let cfg = TrainConfig {
            reward_mode: Some(RewardMode::ObjPlusHand),
            policy_mode: Some(PolicyMode::Residual),
            ..tiny()
        };
        let env = cfg.apply_overrides(&EnvConfig::new(Task::Push));
        assert_eq!(env.reward.mode, RewardMode::ObjPlusHand);
        assert_eq!(env.action.mode, PolicyMode::Residual);
        let out = train(&cfg, &EnvConfig::new(Task::Push)).unwrap();
        assert_eq!(out.checkpoint.env_config.action.mode, PolicyMode::Residual);
        assert_eq!(out.checkpoint.manifest.action_dim, 7);
    }

    #[test]
    fn config_round_trips_and_validates() {
        let cfg = tiny();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), cfg);
        assert!(TrainConfig::from_toml("horizon = 0").is_err());
        assert!(TrainConfig::from_toml("lr = -1.0").is_err());
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
        assert_eq!(TrainConfig::from_toml("").unwrap(), TrainConfig::default());
        let d = DoneReason::ALL;
        assert_eq!(d.len(), 4);
    }
}
