//! A batch of environments stepped in parallel, with observation histories.

use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;

use super::normalize::RunningMeanStd;
use super::policy::History;
use crate::simenv::{DoneReason, Env, SimError, TaskSetup};

/// Mixes run seed, env index and episode number into one episode seed.
pub fn episode_seed(run_seed: u64, env_index: u64, episode: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(run_seed ^ mix(env_index ^ mix(episode)))
}

/// A finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Finished {
    pub reward: f64,
    /// Return against the dense target.
    pub track_return: f64,
    pub length: usize,
    pub reason: DoneReason,
    pub success: bool,
}

/// Per-env outcome of [`VecEnv::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct SlotStep {
    pub reward: f64,
    pub done: bool,
    pub finished: Option<Finished>,
}

struct Slot {
    env: Env,
    index: u64,
    episodes: u64,
    obs: History,
    privileged: History,
    latest_obs: Vec<f64>,
    latest_priv: Vec<f64>,
    ep_reward: f64,
    ep_track: f64,
    ep_len: usize,
}

impl Slot {
    fn reset(&mut self, run_seed: u64) -> Result<(), SimError> {
        let obs = self
            .env
            .reset(episode_seed(run_seed, self.index, self.episodes))?;
        self.episodes += 1;
        self.obs.clear();
        self.privileged.clear();
        self.latest_priv = self.env.privileged_state(&obs);
        self.latest_obs = obs;
        self.obs.push(self.latest_obs.clone());
        self.privileged.push(self.latest_priv.clone());
        self.ep_reward = 0.0;
        self.ep_track = 0.0;
        self.ep_len = 0;
        Ok(())
    }
}

pub struct VecEnv {
    slots: Vec<Slot>,
    run_seed: u64,
    history: usize,
}

impl VecEnv {
    pub fn new(
        setup: Arc<TaskSetup>,
        n_envs: usize,
        history: usize,
        run_seed: u64,
    ) -> Result<Self, SimError> {
        let mut slots: Vec<Slot> = (0..n_envs)
            .map(|i| Slot {
                env: Env::new(Arc::clone(&setup)),
                index: i as u64,
                episodes: 0,
                obs: History::new(history),
                privileged: History::new(history),
                latest_obs: Vec::new(),
                latest_priv: Vec::new(),
                ep_reward: 0.0,
                ep_track: 0.0,
                ep_len: 0,
            })
            .collect();
        slots
            .par_iter_mut()
            .map(|s| s.reset(run_seed))
            .collect::<Result<Vec<()>, SimError>>()?;
        Ok(Self {
            slots,
            run_seed,
            history,
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Folds the newest raw observation and privileged state of every env into the normalizers.
    pub fn update_normalizers(&self, obs: &mut RunningMeanStd, privileged: &mut RunningMeanStd) {
        obs.update(self.slots.iter().map(|s| s.latest_obs.as_slice()));
        privileged.update(self.slots.iter().map(|s| s.latest_priv.as_slice()));
    }

    /// Stacked, normalized actor and critic inputs, one row per env.
    pub fn inputs(
        &self,
        obs: &RunningMeanStd,
        privileged: &RunningMeanStd,
    ) -> (Array2<f64>, Array2<f64>) {
        let n = self.slots.len();
        let mut a = Array2::zeros((n, self.history * obs.dim()));
        let mut c = Array2::zeros((n, self.history * privileged.dim()));
        for (i, s) in self.slots.iter().enumerate() {
            s.obs
                .stacked_into(obs, a.row_mut(i).as_slice_mut().expect("contiguous"));
            s.privileged
                .stacked_into(privileged, c.row_mut(i).as_slice_mut().expect("contiguous"));
        }
        (a, c)
    }

    /// Applies one action row per env; finished envs are reset immediately.
    pub fn step(&mut self, actions: &Array2<f64>) -> Result<Vec<SlotStep>, SimError> {
        assert_eq!(actions.nrows(), self.slots.len());
        let run_seed = self.run_seed;
        let rows: Vec<Vec<f64>> = actions.outer_iter().map(|r| r.to_vec()).collect();
        self.slots
            .par_iter_mut()
            .zip(rows.par_iter())
            .map(|(s, a)| {
                let out = s.env.step(a);
                s.ep_reward += out.reward;
                s.ep_track += out.track_reward;
                s.ep_len += 1;
                let finished = out.done.map(|reason| Finished {
                    reward: s.ep_reward,
                    track_return: s.ep_track,
                    length: s.ep_len,
                    reason,
                    success: out.success,
                });
                if finished.is_some() {
                    s.reset(run_seed)?;
                } else {
                    s.latest_priv = s.env.privileged_state(&out.obs);
                    s.latest_obs = out.obs;
                    s.obs.push(s.latest_obs.clone());
                    s.privileged.push(s.latest_priv.clone());
                }
                Ok(SlotStep {
                    reward: out.reward,
                    done: finished.is_some(),
                    finished,
                })
            })
            .collect()
    }
}
