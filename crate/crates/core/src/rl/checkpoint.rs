//! JSON checkpoints: layer manifest, flat weights, normalizer statistics and
//! the configs they were trained with.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::nn::Mlp;
use super::normalize::RunningMeanStd;
use super::policy::ActorCritic;
use super::train::TrainConfig;
use super::RlError;
use crate::simenv::EnvConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Layer widths, input first.
    pub actor: Vec<usize>,
    pub critic: Vec<usize>,
    pub history: usize,
    pub obs_dim: usize,
    pub priv_dim: usize,
    pub action_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub actor: Vec<f64>,
    pub log_std: Vec<f64>,
    pub critic: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub obs: RunningMeanStd,
    pub privileged: RunningMeanStd,
    pub value: RunningMeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub weights: Weights,
    pub normalizers: Normalizers,
    /// SHA-256 of the env config TOML followed by the train config JSON.
    pub config_hash: String,
    pub train_config: TrainConfig,
    /// Env config with the train-time overrides applied.
    pub env_config: EnvConfig,
}

pub fn config_hash(train: &TrainConfig, env: &EnvConfig) -> String {
    let mut h = Sha256::new();
    h.update(env.to_toml().as_bytes());
    h.update(
        serde_json::to_string(train)
            .expect("serializable")
            .as_bytes(),
    );
    hex::encode(h.finalize())
}

impl Checkpoint {
    pub fn new(ac: &ActorCritic, train: &TrainConfig, env: &EnvConfig) -> Self {
        Self {
            manifest: Manifest {
                actor: ac.actor.dims(),
                critic: ac.critic.dims(),
                history: ac.history,
                obs_dim: ac.obs_dim(),
                priv_dim: ac.priv_dim(),
                action_dim: ac.action_dim(),
            },
            weights: Weights {
                actor: ac.actor.to_flat(),
                log_std: ac.log_std.clone(),
                critic: ac.critic.to_flat(),
            },
            normalizers: Normalizers {
                obs: ac.obs_norm.clone(),
                privileged: ac.priv_norm.clone(),
                value: ac.value_norm.clone(),
            },
            config_hash: config_hash(train, env),
            train_config: train.clone(),
            env_config: env.clone(),
        }
    }

    /// Rebuilds the networks, checking the manifest against every array.
    pub fn actor_critic(&self) -> Result<ActorCritic, RlError> {
        let m = &self.manifest;
        let bad = |what: &str| RlError::Mismatch(what.to_string());
        let actor = Mlp::from_flat(&m.actor, &self.weights.actor)
            .ok_or_else(|| bad("actor weights vs manifest"))?;
        let critic = Mlp::from_flat(&m.critic, &self.weights.critic)
            .ok_or_else(|| bad("critic weights vs manifest"))?;
        let n = &self.normalizers;
        if m.history == 0
            || actor.input_dim() != m.obs_dim * m.history
            || critic.input_dim() != m.priv_dim * m.history
            || actor.output_dim() != m.action_dim
            || critic.output_dim() != 1
            || self.weights.log_std.len() != m.action_dim
        {
            return Err(bad("layer manifest vs dims"));
        }
        for (name, rms, d) in [
            ("obs", &n.obs, m.obs_dim),
            ("privileged", &n.privileged, m.priv_dim),
            ("value", &n.value, 1),
        ] {
            if rms.mean.len() != d || rms.var.len() != d {
                return Err(RlError::Mismatch(format!(
                    "{name} normalizer has {} dims, expected {d}",
                    rms.mean.len()
                )));
            }
        }
        let ac = ActorCritic {
            actor,
            log_std: self.weights.log_std.clone(),
            critic,
            history: m.history,
            obs_norm: n.obs.clone(),
            priv_norm: n.privileged.clone(),
            value_norm: n.value.clone(),
        };
        let norms_finite = [&n.obs, &n.privileged, &n.value]
            .iter()
            .all(|r| r.mean.iter().chain(&r.var).all(|v| v.is_finite()));
        if !ac.is_finite() || !norms_finite {
            return Err(RlError::NonFinite("checkpoint weights".into()));
        }
        Ok(ac)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, RlError> {
        let ck: Self = serde_json::from_str(text)
            .map_err(|e| RlError::Config(format!("checkpoint json: {e}")))?;
        let want = config_hash(&ck.train_config, &ck.env_config);
        if ck.config_hash != want {
            return Err(RlError::Mismatch(format!(
                "config_hash {} != {want}",
                ck.config_hash
            )));
        }
        ck.actor_critic()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), RlError> {
        std::fs::write(path, self.to_json()).map_err(|e| RlError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, RlError> {
        let io = |msg: String| RlError::Io {
            path: path.display().to_string(),
            msg,
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        Self::from_json(&text).map_err(|e| io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::policy::PolicyParams;
    use crate::simenv::Task;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ac = ActorCritic::new(
            5,
            7,
            2,
            &PolicyParams {
                actor_hidden: vec![6],
                critic_hidden: vec![4, 3],
                history: 3,
                init_log_std: -0.3,
            },
            &mut rng,
        );
        ac.obs_norm.update([
            [0.1, 0.2, 0.3, 0.4, 0.5].as_slice(),
            [1.0 / 3.0, 2.0, 3.0, 4.0, 5.0].as_slice(),
        ]);
        Checkpoint::new(&ac, &TrainConfig::default(), &EnvConfig::new(Task::Push))
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.actor_critic().unwrap(), ck.actor_critic().unwrap());
    }

    #[test]
    fn tampering_is_detected() {
        let ck = sample();
        let mut bad = ck.clone();
        bad.weights.actor.pop();
        assert!(matches!(bad.actor_critic(), Err(RlError::Mismatch(_))));
        let mut bad = ck.clone();
        bad.train_config.lr = 1.0;
        assert!(matches!(
            Checkpoint::from_json(&bad.to_json()),
            Err(RlError::Mismatch(_))
        ));
        let mut bad = ck.clone();
        bad.normalizers.obs.mean.push(0.0);
        assert!(bad.actor_critic().is_err());
        let mut bad = ck;
        bad.weights.critic[0] = f64::NAN;
        assert!(bad.actor_critic().is_err());
        let err = Checkpoint::load(Path::new("/nonexistent/ck.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ck.json"));
    }
}
