//! Single-episode runner and per-episode records shared by evaluation and the replay baselines.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::env::{DoneReason, Env, StepOutcome};
use super::SimError;

/// What a controller asks the environment to do for one control step.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    /// Policy action in the env's action space.
    Action(Vec<f64>),
    /// Explicit joint PD targets.
    Targets(Vec<f64>),
    /// Abort the episode, counted as a failure with this reason.
    Abort(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub seed: u64,
    pub reward: f64,
    pub track_reward: f64,
    pub length: usize,
    /// A [`DoneReason`] name, or `abort:<reason>` for aborted episodes.
    pub done_reason: String,
    pub success: bool,
}

/// Resets `env` with `seed` and steps `controller` until the episode ends.
/// Success is [`Env::success`] at termination, the same predicate for every caller.
pub fn run_episode<F>(
    env: &mut Env,
    episode: usize,
    seed: u64,
    mut controller: F,
) -> Result<EpisodeRecord, SimError>
where
    F: FnMut(&Env, &[f64], usize) -> Control,
{
    let mut obs = env.reset(seed)?;
    let mut rec = EpisodeRecord {
        episode,
        seed,
        reward: 0.0,
        track_reward: 0.0,
        length: 0,
        done_reason: String::new(),
        success: false,
    };
    loop {
        let out: StepOutcome = match controller(env, &obs, rec.length) {
            Control::Action(a) => env.step(&a),
            Control::Targets(q) => env.step_targets(&q),
            Control::Abort(why) => {
                rec.done_reason = format!("abort:{why}");
                return Ok(rec);
            }
        };
        rec.reward += out.reward;
        rec.track_reward += out.track_reward;
        rec.length += 1;
        obs = out.obs;
        if let Some(r) = out.done {
            rec.done_reason = r.name().to_string();
            rec.success = out.success;
            return Ok(rec);
        }
    }
}

/// Aggregate over a set of episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub n_episodes: usize,
    pub success_rate: f64,
    pub mean_reward: f64,
    pub mean_length: f64,
    /// Count per [`DoneReason`] in [`DoneReason::ALL`] order, then aborted episodes.
    pub done_counts: Vec<usize>,
}

impl EpisodeSummary {
    pub fn from_records(recs: &[EpisodeRecord]) -> Self {
        let n = recs.len();
        let nf = n.max(1) as f64;
        let mut done_counts = vec![0; DoneReason::ALL.len() + 1];
        for r in recs {
            match DoneReason::ALL
                .iter()
                .position(|d| d.name() == r.done_reason)
            {
                Some(i) => done_counts[i] += 1,
                None => done_counts[DoneReason::ALL.len()] += 1,
            }
        }
        Self {
            n_episodes: n,
            success_rate: recs.iter().filter(|r| r.success).count() as f64 / nf,
            mean_reward: recs.iter().map(|r| r.reward).sum::<f64>() / nf,
            mean_length: recs.iter().map(|r| r.length as f64).sum::<f64>() / nf,
            done_counts,
        }
    }
}

pub const EPISODE_CSV_HEADER: &str = "episode,seed,reward,track_reward,length,done_reason,success";

pub fn episode_csv(recs: &[EpisodeRecord]) -> String {
    let mut s = String::from(EPISODE_CSV_HEADER);
    s.push('\n');
    for r in recs {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.episode, r.seed, r.reward, r.track_reward, r.length, r.done_reason, r.success as u8
        ));
    }
    s
}

pub fn write_episode_csv(path: &Path, recs: &[EpisodeRecord]) -> Result<(), SimError> {
    let io = |e: std::io::Error| SimError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(episode_csv(recs).as_bytes()).map_err(io)
}
