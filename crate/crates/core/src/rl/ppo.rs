//! GAE, the clipped surrogate and the PPO update.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{clip_grad_norm, Adam};
use super::normalize::standardize;
use super::policy::{gaussian_entropy, gaussian_log_prob, ActorCritic};
use super::RlError;

/// Time-major rollout: row `t * n_envs + e` is env `e` at step `t`.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub n_envs: usize,
    pub horizon: usize,
    pub actor_in: Array2<f64>,
    pub critic_in: Array2<f64>,
    pub actions: Array2<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Episode ended after this step; the next row of the env starts a new episode.
    pub dones: Vec<bool>,
    /// Denormalized critic values.
    pub values: Vec<f64>,
    /// Bootstrap values for the state after the last step.
    pub last_values: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.n_envs * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let n = self.len();
        let rows = [
            self.actor_in.nrows(),
            self.critic_in.nrows(),
            self.actions.nrows(),
            self.log_probs.len(),
            self.rewards.len(),
            self.dones.len(),
            self.values.len(),
        ];
        if rows.iter().any(|&r| r != n) || self.last_values.len() != self.n_envs {
            return Err(RlError::Shape(format!(
                "rollout of {} x {} has row counts {rows:?} and {} bootstrap values",
                self.horizon,
                self.n_envs,
                self.last_values.len()
            )));
        }
        Ok(())
    }
}

/// Generalized advantage estimation with done masking over a time-major
/// batch. Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_values: &[f64],
    n_envs: usize,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(n_envs > 0 && n.is_multiple_of(n_envs));
    assert_eq!(values.len(), n);
    assert_eq!(dones.len(), n);
    assert_eq!(last_values.len(), n_envs);
    let horizon = n / n_envs;
    let mut adv = vec![0.0; n];
    for e in 0..n_envs {
        let mut next_adv = 0.0;
        let mut next_value = last_values[e];
        for t in (0..horizon).rev() {
            let i = t * n_envs + e;
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next_value * live - values[i];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[i] = next_adv;
            next_value = values[i];
        }
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Loss value, its gradient with respect to the action means and log-stds, and diagnostics.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub loss: f64,
    pub grad_mu: Array2<f64>,
    pub grad_log_std: Vec<f64>,
    pub clip_frac: f64,
    pub approx_kl: f64,
    pub entropy: f64,
}

/// `-mean(min(r A, clip(r, 1-eps, 1+eps) A)) - entropy_coef * H` with
/// `r = exp(logp - old_logp)`.
pub fn surrogate(
    mu: &Array2<f64>,
    log_std: &[f64],
    actions: &Array2<f64>,
    old_log_probs: &[f64],
    advantages: &[f64],
    clip: f64,
    entropy_coef: f64,
) -> Surrogate {
    let n = mu.nrows();
    let nf = n as f64;
    let d = log_std.len();
    let mut grad_mu = Array2::zeros(mu.raw_dim());
    let mut grad_log_std = vec![0.0; d];
    let mut loss = 0.0;
    let mut clipped = 0usize;
    let mut kl = 0.0;
    for i in 0..n {
        let a = actions.row(i);
        let m = mu.row(i);
        let logp = gaussian_log_prob(
            a.as_slice().expect("contiguous"),
            m.as_slice().expect("contiguous"),
            log_std,
        );
        let r = (logp - old_log_probs[i]).exp();
        let adv = advantages[i];
        let rc = r.clamp(1.0 - clip, 1.0 + clip);
        if (r - 1.0).abs() > clip {
            clipped += 1;
        }
        // k3 estimator of KL(old || new)
        kl += (r - 1.0) - (logp - old_log_probs[i]);
        let (obj, active) = if r * adv <= rc * adv {
            (r * adv, true)
        } else {
            (rc * adv, false)
        };
        loss -= obj / nf;
        if active {
            // d(-r A / n)/d logp
            let g = -r * adv / nf;
            for j in 0..d {
                let s2 = (2.0 * log_std[j]).exp();
                let diff = a[j] - m[j];
                grad_mu[[i, j]] += g * diff / s2;
                grad_log_std[j] += g * (diff * diff / s2 - 1.0);
            }
        }
    }
    let entropy = gaussian_entropy(log_std);
    loss -= entropy_coef * entropy;
    for g in &mut grad_log_std {
        *g -= entropy_coef;
    }
    Surrogate {
        loss,
        grad_mu,
        grad_log_std,
        clip_frac: if n > 0 { clipped as f64 / nf } else { 0.0 },
        approx_kl: if n > 0 { kl / nf } else { 0.0 },
        entropy,
    }
}

/// Knobs the update step reads from the training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoParams {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub mini_epochs: usize,
    pub minibatches: usize,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub normalize_values: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub actor: Adam,
    pub critic: Adam,
}

impl Optimizers {
    pub fn new(ac: &ActorCritic, lr: f64) -> Self {
        Self {
            actor: Adam::new(ac.actor.n_params() + ac.log_std.len(), lr),
            critic: Adam::new(ac.critic.n_params(), lr),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_frac: f64,
    pub approx_kl: f64,
    pub entropy: f64,
}

/// Runs the mini-epochs over shuffled minibatches. Shuffling draws from `rng`.
pub fn ppo_update<R: Rng>(
    ac: &mut ActorCritic,
    opt: &mut Optimizers,
    batch: &RolloutBatch,
    p: &PpoParams,
    rng: &mut R,
) -> Result<UpdateMetrics, RlError> {
    batch.validate()?;
    let n = batch.len();
    let (mut adv, ret) = gae_advantages(
        &batch.rewards,
        &batch.values,
        &batch.dones,
        &batch.last_values,
        batch.n_envs,
        p.gamma,
        p.gae_lambda,
    );
    if p.normalize_advantages {
        standardize(&mut adv);
    }
    if p.normalize_values {
        ac.value_norm.update(ret.chunks(1));
    }
    let targets: Vec<f64> = ret
        .iter()
        .map(|r| (r - ac.value_norm.mean[0]) / ac.value_norm.std(0))
        .collect();

    let mb = p.minibatches.max(1);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut m = UpdateMetrics::default();
    let mut count = 0.0;
    for _ in 0..p.mini_epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(n.div_ceil(mb)) {
            let a_in = batch.actor_in.select(Axis(0), chunk);
            let c_in = batch.critic_in.select(Axis(0), chunk);
            let acts = batch.actions.select(Axis(0), chunk);
            let old: Vec<f64> = chunk.iter().map(|&i| batch.log_probs[i]).collect();
            let a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();

            let (mu, cache) = ac.actor.forward_cached(&a_in);
            let s = surrogate(&mu, &ac.log_std, &acts, &old, &a, p.clip, p.entropy_coef);
            if !s.loss.is_finite() {
                return Err(RlError::NonFinite(format!(
                    "policy loss {} (clip_frac {}, kl {})",
                    s.loss, s.clip_frac, s.approx_kl
                )));
            }
            let mut g = ac.actor.backward(&cache, &s.grad_mu);
            g.extend(&s.grad_log_std);
            clip_grad_norm(&mut g, p.max_grad_norm);
            let mut params = ac.actor_flat();
            opt.actor.step(&mut params, &g);
            ac.set_actor_flat(&params);

            let (v, cache) = ac.critic.forward_cached(&c_in);
            let k = chunk.len() as f64;
            let mut gv = Array2::zeros(v.raw_dim());
            let mut vl = 0.0;
            for (r, &i) in chunk.iter().enumerate() {
                let e = v[[r, 0]] - targets[i];
                vl += 0.5 * e * e / k;
                gv[[r, 0]] = e / k;
            }
            if !vl.is_finite() {
                return Err(RlError::NonFinite(format!("value loss {vl}")));
            }
            let mut g = ac.critic.backward(&cache, &gv);
            clip_grad_norm(&mut g, p.max_grad_norm);
            let mut params = ac.critic.to_flat();
            opt.critic.step(&mut params, &g);
            ac.critic.set_flat(&params);

            m.policy_loss += s.loss;
            m.value_loss += vl;
            m.clip_frac += s.clip_frac;
            m.approx_kl += s.approx_kl;
            m.entropy = s.entropy;
            count += 1.0;
        }
    }
    if count > 0.0 {
        m.policy_loss /= count;
        m.value_loss /= count;
        m.clip_frac /= count;
        m.approx_kl /= count;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::policy::PolicyParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gae_closed_forms() {
        let n_envs = 2;
        let horizon = 16;
        let n = n_envs * horizon;
        let r: Vec<f64> = (0..n).map(|i| 0.1 * i as f64 - 0.7).collect();
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut d = vec![false; n];
        d[5] = true;
        d[20] = true;
        let last = vec![0.3, -0.2];
        let (a, ret) = gae_advantages(&r, &v, &d, &last, n_envs, 0.0, 0.7);
        for i in 0..n {
            assert_eq!(a[i], r[i] - v[i]);
            assert_eq!(ret[i], a[i] + v[i]);
        }
        let (a, _) = gae_advantages(&r, &v, &d, &last, n_envs, 0.9, 0.0);
        for i in 0..n {
            let next = if i + n_envs < n {
                v[i + n_envs]
            } else {
                last[i % n_envs]
            };
            let live = if d[i] { 0.0 } else { 1.0 };
            assert_eq!(a[i], r[i] + 0.9 * next * live - v[i]);
        }
        // constant reward, zero values: geometric series
        let (a, _) = gae_advantages(&[1.0; 16], &[0.0; 16], &[false; 16], &[0.0], 1, 0.998, 0.95);
        let x: f64 = 0.998 * 0.95;
        let want = (1.0 - x.powi(16)) / (1.0 - x);
        assert!((a[0] - want).abs() < 1e-12);
        assert!((a[0] - 11.0549).abs() < 1e-4);
    }

    #[test]
    fn clipped_branch_is_used() {
        let mu = Array2::zeros((1, 1));
        let acts = Array2::zeros((1, 1));
        let logp = gaussian_log_prob(&[0.0], &[0.0], &[0.0]);
        // ratio 2, positive advantage: objective is 1.2 A with zero gradient
        let s = surrogate(&mu, &[0.0], &acts, &[logp - 2f64.ln()], &[1.5], 0.2, 0.0);
        assert!((s.loss + 1.2 * 1.5).abs() < 1e-12);
        assert_eq!(s.grad_mu[[0, 0]], 0.0);
        assert_eq!(s.grad_log_std[0], 0.0);
        assert_eq!(s.clip_frac, 1.0);
        // ratio 2, negative advantage: the unclipped term is the minimum
        let s = surrogate(&mu, &[0.0], &acts, &[logp - 2f64.ln()], &[-1.0], 0.2, 0.0);
        assert!((s.loss - 2.0).abs() < 1e-12);
    }

    fn loss_at(
        ac: &ActorCritic,
        x: &Array2<f64>,
        acts: &Array2<f64>,
        old: &[f64],
        adv: &[f64],
    ) -> f64 {
        surrogate(&ac.actor.forward(x), &ac.log_std, acts, old, adv, 0.2, 0.01).loss
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = PolicyParams {
            actor_hidden: vec![6, 5],
            critic_hidden: vec![4],
            history: 1,
            init_log_std: -0.3,
        };
        let mut ac = ActorCritic::new(4, 3, 2, &params, &mut rng);
        // larger output layer so the means move with the weights
        let p: Vec<f64> = ac.actor_flat().iter().map(|v| v * 3.0).collect();
        ac.set_actor_flat(&p);
        let x = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let mu = ac.actor.forward(&x);
        let acts = &mu + &Array2::from_shape_fn((3, 2), |_| rng.gen_range(-0.5..0.5));
        // old log-probs near the current ones keep every ratio inside the clip range
        let old: Vec<f64> = (0..3)
            .map(|i| {
                gaussian_log_prob(&acts.row(i).to_vec(), &mu.row(i).to_vec(), &ac.log_std)
                    + 0.05 * (i as f64 - 1.0)
            })
            .collect();
        let adv = [0.7, -1.3, 0.4];
        let (mu, cache) = ac.actor.forward_cached(&x);
        let s = surrogate(&mu, &ac.log_std, &acts, &old, &adv, 0.2, 0.01);
        let mut g = ac.actor.backward(&cache, &s.grad_mu);
        g.extend(&s.grad_log_std);
        let p0 = ac.actor_flat();
        let h = 1e-6;
        let mut checked = 0;
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += h;
            ac.set_actor_flat(&p);
            let lp = loss_at(&ac, &x, &acts, &old, &adv);
            p[i] -= 2.0 * h;
            ac.set_actor_flat(&p);
            let lm = loss_at(&ac, &x, &acts, &old, &adv);
            let fd = (lp - lm) / (2.0 * h);
            let scale = fd.abs().max(g[i].abs());
            if scale > 1e-7 {
                assert!(
                    (fd - g[i]).abs() <= 1e-4 * scale,
                    "param {i}: fd {fd} vs analytic {}",
                    g[i]
                );
                checked += 1;
            }
        }
        assert!(checked > p0.len() / 2);
    }

    fn tiny_batch(rng: &mut ChaCha8Rng, ac: &ActorCritic, zero_adv: bool) -> RolloutBatch {
        let (h, e) = (4, 3);
        let n = h * e;
        let actor_in =
            Array2::from_shape_fn((n, ac.actor_input_dim()), |_| rng.gen_range(-1.0..1.0));
        let critic_in =
            Array2::from_shape_fn((n, ac.critic_input_dim()), |_| rng.gen_range(-1.0..1.0));
        let mu = ac.mean_actions(&actor_in);
        let (actions, log_probs) = ac.sample(&mu, rng);
        let values = ac.values(&critic_in);
        // rewards equal to TD targets give zero advantages when gamma = 0
        let rewards = if zero_adv {
            values.clone()
        } else {
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        RolloutBatch {
            n_envs: e,
            horizon: h,
            actor_in,
            critic_in,
            actions,
            log_probs,
            rewards,
            dones: vec![false; n],
            values,
            last_values: vec![0.0; e],
        }
    }

    fn params(gamma: f64) -> PpoParams {
        PpoParams {
            gamma,
            gae_lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.0,
            mini_epochs: 4,
            minibatches: 2,
            max_grad_norm: 1.0,
            normalize_advantages: true,
            normalize_values: false,
        }
    }

    #[test]
    fn zero_advantages_leave_actor_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pp = PolicyParams {
            actor_hidden: vec![8],
            critic_hidden: vec![8],
            history: 2,
            init_log_std: 0.0,
        };
        let mut ac = ActorCritic::new(3, 5, 2, &pp, &mut rng);
        let batch = tiny_batch(&mut rng, &ac, true);
        let mut opt = Optimizers::new(&ac, 5e-4);
        let actor0 = ac.actor_flat();
        let critic0 = ac.critic.to_flat();
        // refreshed value statistics move the critic targets
        let p = PpoParams {
            normalize_values: true,
            ..params(0.0)
        };
        let m = ppo_update(&mut ac, &mut opt, &batch, &p, &mut rng).unwrap();
        assert_eq!(ac.actor_flat(), actor0);
        assert_ne!(ac.critic.to_flat(), critic0);
        assert!((0.0..=1.0).contains(&m.clip_frac));
        assert!(m.approx_kl.is_finite());
    }

    #[test]
    fn update_is_deterministic_and_bad_shapes_fail() {
        let pp = PolicyParams {
            actor_hidden: vec![8],
            critic_hidden: vec![8],
            history: 1,
            init_log_std: 0.0,
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut ac = ActorCritic::new(3, 5, 2, &pp, &mut rng);
            let batch = tiny_batch(&mut rng, &ac, false);
            let mut opt = Optimizers::new(&ac, 5e-4);
            let mut p = params(0.99);
            p.normalize_values = true;
            let m = ppo_update(&mut ac, &mut opt, &batch, &p, &mut rng).unwrap();
            (ac, m)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ac = ActorCritic::new(3, 5, 2, &pp, &mut rng);
        let mut batch = tiny_batch(&mut rng, &ac, false);
        batch.rewards.pop();
        let mut opt = Optimizers::new(&ac, 5e-4);
        assert!(ppo_update(&mut ac, &mut opt, &batch, &params(0.9), &mut rng).is_err());
    }
}
