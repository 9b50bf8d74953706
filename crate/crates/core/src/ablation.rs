//! Reward-target, initialization and hand-tracking ablation matrices.

use serde::{Deserialize, Serialize};

use crate::rl::{train_with, MetricsRow, RlError, TrainConfig, METRICS_CSV_HEADER};
use crate::simenv::{EnvConfig, InitMode, PolicyMode, RewardMode};
use crate::trajectory::TargetMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// Dense, fixed, interpolated and downsampled reward targets.
    Reward,
    /// Episode initialization modes.
    Init,
    /// Object-only reward, object plus hand tracking, and the residual policy.
    Handtrack,
}

impl std::str::FromStr for Study {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "reward" => Ok(Self::Reward),
            "init" => Ok(Self::Init),
            "handtrack" => Ok(Self::Handtrack),
            other => Err(format!("unknown study `{other}`")),
        }
    }
}

impl Study {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Reward => "reward",
            Self::Init => "init",
            Self::Handtrack => "handtrack",
        }
    }
}

/// One configuration of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub mode: String,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

/// The arms of `study`, each a copy of the base configs with one setting changed.
pub fn arms(study: Study, env: &EnvConfig, train: &TrainConfig) -> Vec<Arm> {
    let arm = |mode: &str, env: EnvConfig, train: TrainConfig| Arm {
        mode: mode.to_string(),
        env,
        train,
    };
    match study {
        Study::Reward => TargetMode::ALL
            .iter()
            .map(|&m| {
                let mut e = env.clone();
                e.target.mode = m;
                arm(m.name(), e, train.clone())
            })
            .collect(),
        Study::Init => InitMode::ALL
            .iter()
            .map(|&m| {
                let mut e = env.clone();
                e.init.mode = m;
                arm(m.name(), e, train.clone())
            })
            .collect(),
        Study::Handtrack => [
            ("obj", RewardMode::Obj, PolicyMode::Full),
            ("obj_plus_hand", RewardMode::ObjPlusHand, PolicyMode::Full),
            ("residual", RewardMode::Obj, PolicyMode::Residual),
        ]
        .into_iter()
        .map(|(name, r, p)| {
            let t = TrainConfig {
                reward_mode: Some(r),
                policy_mode: Some(p),
                ..train.clone()
            };
            arm(name, env.clone(), t)
        })
        .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub mode: String,
    pub seed: u64,
    pub metrics: MetricsRow,
}

pub fn ablation_csv_header() -> String {
    format!("mode,seed,{METRICS_CSV_HEADER}")
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = ablation_csv_header();
    s.push('\n');
    for r in rows {
        let body = crate::rl::metrics_csv(std::slice::from_ref(&r.metrics));
        let line = body.lines().nth(1).expect("one data line");
        s.push_str(&format!("{},{},{}\n", r.mode, r.seed, line));
    }
    s
}

/// Trains every arm of `study` once per seed, arms outermost.
pub fn run_ablation<F: FnMut(&AblationRow)>(
    study: Study,
    env: &EnvConfig,
    train: &TrainConfig,
    seeds: &[u64],
    mut on_row: F,
) -> Result<Vec<AblationRow>, RlError> {
    let mut rows = Vec::new();
    for a in arms(study, env, train) {
        for &seed in seeds {
            let cfg = TrainConfig {
                seed,
                ..a.train.clone()
            };
            train_with(&cfg, &a.env, |m| {
                let row = AblationRow {
                    mode: a.mode.clone(),
                    seed,
                    metrics: m.clone(),
                };
                on_row(&row);
                rows.push(row);
            })?;
        }
    }
    Ok(rows)
}

/// Rows of one (mode, seed) run in update order.
pub fn run_rows<'a>(rows: &'a [AblationRow], mode: &str, seed: u64) -> Vec<&'a MetricsRow> {
    rows.iter()
        .filter(|r| r.mode == mode && r.seed == seed)
        .map(|r| &r.metrics)
        .collect()
}

/// First update whose `value` reaches `threshold`.
pub fn updates_to_threshold(
    run: &[&MetricsRow],
    value: impl Fn(&MetricsRow) -> f64,
    threshold: f64,
) -> Option<usize> {
    run.iter().find(|m| value(m) >= threshold).map(|m| m.update)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::PolicyParams;
    use crate::simenv::Task;

    fn tiny() -> TrainConfig {
        TrainConfig {
            n_envs: 4,
            horizon: 4,
            total_steps: 32,
            policy: PolicyParams {
                actor_hidden: vec![8],
                critic_hidden: vec![8],
                history: 2,
                init_log_std: 0.0,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn arms_change_one_setting() {
        let env = EnvConfig::new(Task::Pivot);
        let t = tiny();
        let r = arms(Study::Reward, &env, &t);
        assert_eq!(
            r.iter().map(|a| a.mode.as_str()).collect::<Vec<_>>(),
            ["dense", "fixed", "interpolated", "downsampled"]
        );
        assert!(r.iter().all(|a| a.train == t && a.env.init == env.init));
        let i = arms(Study::Init, &env, &t);
        assert_eq!(i.len(), 4);
        assert!(i.iter().all(|a| a.env.target == env.target));
        let h = arms(Study::Handtrack, &env, &t);
        assert_eq!(h[2].train.policy_mode, Some(PolicyMode::Residual));
        assert_eq!(h[1].train.reward_mode, Some(RewardMode::ObjPlusHand));
        assert!("bogus".parse::<Study>().is_err());
    }

    #[test]
    fn one_row_per_mode_seed_update() {
        let env = EnvConfig::new(Task::Pivot);
        let rows = run_ablation(Study::Handtrack, &env, &tiny(), &[0, 1], |_| {}).unwrap();
        // 32 steps over 4 envs x 4 steps is 2 updates
        assert_eq!(rows.len(), 3 * 2 * 2);
        let csv = ablation_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 13);
        assert!(lines[1].starts_with("obj,0,0,"));
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
        assert_eq!(run_rows(&rows, "residual", 1).len(), 2);
        let again = run_ablation(Study::Handtrack, &env, &tiny(), &[0, 1], |_| {}).unwrap();
        assert_eq!(ablation_csv(&again), csv);
    }

    #[test]
    fn threshold_crossing() {
        let env = EnvConfig::new(Task::Push);
        let rows = run_ablation(Study::Reward, &env, &tiny(), &[0], |_| {}).unwrap();
        let run = run_rows(&rows, "dense", 0);
        assert_eq!(
            updates_to_threshold(&run, |m| m.update as f64, 1.0),
            Some(1)
        );
        assert_eq!(updates_to_threshold(&run, |m| m.update as f64, 5.0), None);
    }
}
