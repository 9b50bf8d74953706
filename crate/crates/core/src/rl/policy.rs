//! Gaussian actor over stacked observations and a critic over stacked privileged states.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::nn::Mlp;
use super::normalize::RunningMeanStd;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Number of most recent observations stacked as network input.
    pub history: usize,
    pub init_log_std: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            actor_hidden: vec![512, 512],
            critic_hidden: vec![1024, 512],
            history: 4,
            init_log_std: 0.0,
        }
    }
}

/// Log density of `a` under a diagonal Gaussian.
pub fn gaussian_log_prob(a: &[f64], mu: &[f64], log_std: &[f64]) -> f64 {
    a.iter()
        .zip(mu)
        .zip(log_std)
        .map(|((a, m), s)| {
            let z = (a - m) / s.exp();
            -0.5 * z * z - s - 0.5 * LOG_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| s + 0.5 * (1.0 + LOG_2PI)).sum()
}

/// Last `k` raw vectors, newest first; missing slots after a reset are zero
/// in normalized space.
#[derive(Debug, Clone)]
pub struct History {
    k: usize,
    buf: VecDeque<Vec<f64>>,
}

impl History {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            buf: VecDeque::with_capacity(k),
        }
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }

    pub fn push(&mut self, x: Vec<f64>) {
        if self.buf.len() == self.k {
            self.buf.pop_back();
        }
        self.buf.push_front(x);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Writes the normalized stack into `out` (length `k * dim`).
    pub fn stacked_into(&self, norm: &RunningMeanStd, out: &mut [f64]) {
        let d = norm.dim();
        assert_eq!(out.len(), self.k * d);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, x) in self.buf.iter().enumerate() {
            norm.normalize_into(x, &mut out[i * d..(i + 1) * d]);
        }
    }

    pub fn stacked(&self, norm: &RunningMeanStd) -> Vec<f64> {
        let mut out = vec![0.0; self.k * norm.dim()];
        self.stacked_into(norm, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub log_std: Vec<f64>,
    pub critic: Mlp,
    pub history: usize,
    pub obs_norm: RunningMeanStd,
    pub priv_norm: RunningMeanStd,
    /// Scalar statistics of returns; the critic predicts normalized values.
    pub value_norm: RunningMeanStd,
}

impl ActorCritic {
    pub fn new<R: Rng>(
        obs_dim: usize,
        priv_dim: usize,
        action_dim: usize,
        params: &PolicyParams,
        rng: &mut R,
    ) -> Self {
        assert!(params.history >= 1);
        let mut ad = vec![obs_dim * params.history];
        ad.extend(&params.actor_hidden);
        ad.push(action_dim);
        let mut cd = vec![priv_dim * params.history];
        cd.extend(&params.critic_hidden);
        cd.push(1);
        let ac = Self {
            actor: Mlp::new(&ad, 0.01, rng),
            log_std: vec![params.init_log_std; action_dim],
            critic: Mlp::new(&cd, 1.0, rng),
            history: params.history,
            obs_norm: RunningMeanStd::new(obs_dim),
            priv_norm: RunningMeanStd::new(priv_dim),
            value_norm: RunningMeanStd::new(1),
        };
        ac.check();
        ac
    }

    /// Panics if the network widths disagree with the normalizers.
    pub fn check(&self) {
        assert_eq!(
            self.actor.input_dim(),
            self.obs_norm.dim() * self.history,
            "actor input"
        );
        assert_eq!(
            self.critic.input_dim(),
            self.priv_norm.dim() * self.history,
            "critic input"
        );
        assert_eq!(self.actor.output_dim(), self.log_std.len());
        assert_eq!(self.critic.output_dim(), 1);
        assert_eq!(self.value_norm.dim(), 1);
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_norm.dim()
    }

    pub fn priv_dim(&self) -> usize {
        self.priv_norm.dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn actor_input_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn critic_input_dim(&self) -> usize {
        self.critic.input_dim()
    }

    pub fn mean_actions(&self, actor_in: &Array2<f64>) -> Array2<f64> {
        self.actor.forward(actor_in)
    }

    /// Denormalized state values.
    pub fn values(&self, critic_in: &Array2<f64>) -> Vec<f64> {
        let out = self.critic.forward(critic_in);
        out.column(0)
            .iter()
            .map(|v| v * self.value_norm.std(0) + self.value_norm.mean[0])
            .collect()
    }

    /// Samples one action per row of `mu`, returning actions and log-probs.
    pub fn sample<R: Rng>(&self, mu: &Array2<f64>, rng: &mut R) -> (Array2<f64>, Vec<f64>) {
        let mut a = mu.clone();
        let mut logp = Vec::with_capacity(mu.nrows());
        for (mut row, m) in a.rows_mut().into_iter().zip(mu.rows()) {
            for (j, v) in row.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *v += self.log_std[j].exp() * z;
            }
            logp.push(gaussian_log_prob(
                row.as_slice().expect("contiguous"),
                m.as_slice().expect("contiguous"),
                &self.log_std,
            ));
        }
        (a, logp)
    }

    pub fn actor_flat(&self) -> Vec<f64> {
        let mut p = self.actor.to_flat();
        p.extend(&self.log_std);
        p
    }

    pub fn set_actor_flat(&mut self, p: &[f64]) {
        let n = self.actor.n_params();
        self.actor.set_flat(&p[..n]);
        self.log_std.copy_from_slice(&p[n..]);
    }

    pub fn is_finite(&self) -> bool {
        self.actor_flat()
            .iter()
            .chain(self.critic.to_flat().iter())
            .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampled_log_prob_is_self_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ac = ActorCritic::new(
            5,
            8,
            3,
            &PolicyParams {
                actor_hidden: vec![16],
                critic_hidden: vec![16],
                history: 2,
                init_log_std: -0.5,
            },
            &mut rng,
        );
        ac.log_std = vec![-0.5, 0.2, -1.0];
        let x = Array2::from_shape_fn((6, 10), |_| rng.gen_range(-1.0..1.0));
        let mu = ac.mean_actions(&x);
        let (a, lp) = ac.sample(&mu, &mut rng);
        for i in 0..6 {
            let want = gaussian_log_prob(&a.row(i).to_vec(), &mu.row(i).to_vec(), &ac.log_std);
            assert!((lp[i] - want).abs() < 1e-9);
        }
        // closed form for a standard normal at the mean
        let lp0 = gaussian_log_prob(&[0.0], &[0.0], &[0.0]);
        assert!((lp0 + 0.5 * LOG_2PI).abs() < 1e-15);
        assert!((gaussian_entropy(&[0.0]) - 1.418_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "critic input")]
    fn critic_width_is_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ac = ActorCritic::new(3, 4, 2, &PolicyParams::default_small(), &mut rng);
        ac.priv_norm = RunningMeanStd::new(5);
        ac.check();
    }

    #[test]
    fn history_pads_with_zeros_and_drops_oldest() {
        let norm = RunningMeanStd {
            mean: vec![1.0, 1.0],
            var: vec![1.0 - 1e-8, 1.0 - 1e-8],
            count: 10.0,
        };
        let mut h = History::new(3);
        h.push(vec![2.0, 3.0]);
        assert_eq!(h.stacked(&norm), vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        h.push(vec![4.0, 5.0]);
        h.push(vec![6.0, 7.0]);
        h.push(vec![8.0, 9.0]);
        assert_eq!(h.len(), 3);
        assert_eq!(h.stacked(&norm), vec![5.0, 5.0, 5.0, 5.0, 3.0, 4.0]);
        h.clear();
        assert!(h.is_empty());
    }

    impl PolicyParams {
        fn default_small() -> Self {
            Self {
                actor_hidden: vec![8],
                critic_hidden: vec![8],
                history: 2,
                init_log_std: 0.0,
            }
        }
    }
}
