//! Running mean / variance normalizers.

use serde::{Deserialize, Serialize};

/// Per-dimension running statistics merged batch by batch (Chan et al.).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningMeanStd {
    pub mean: Vec<f64>,
    /// Population variance.
    pub var: Vec<f64>,
    pub count: f64,
}

pub const NORM_EPS: f64 = 1e-8;
/// Normalized values are clamped to this magnitude.
pub const NORM_CLIP: f64 = 5.0;

impl RunningMeanStd {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Folds in a batch of rows.
    pub fn update<'a, I>(&mut self, rows: I)
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let d = self.dim();
        let mut n = 0.0;
        let mut mean = vec![0.0; d];
        let mut m2 = vec![0.0; d];
        // Welford within the batch
        for r in rows {
            assert_eq!(r.len(), d);
            n += 1.0;
            for i in 0..d {
                let delta = r[i] - mean[i];
                mean[i] += delta / n;
                m2[i] += delta * (r[i] - mean[i]);
            }
        }
        if n == 0.0 {
            return;
        }
        if self.count == 0.0 {
            self.mean = mean;
            self.var = m2.iter().map(|v| v / n).collect();
            self.count = n;
            return;
        }
        let tot = self.count + n;
        for i in 0..d {
            let delta = mean[i] - self.mean[i];
            let ma = self.var[i] * self.count;
            let m = ma + m2[i] + delta * delta * self.count * n / tot;
            self.mean[i] += delta * n / tot;
            self.var[i] = m / tot;
        }
        self.count = tot;
    }

    pub fn std(&self, i: usize) -> f64 {
        (self.var[i] + NORM_EPS).sqrt()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| ((v - self.mean[i]) / self.std(i)).clamp(-NORM_CLIP, NORM_CLIP))
            .collect()
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, v) in x.iter().enumerate() {
            out[i] = ((v - self.mean[i]) / self.std(i)).clamp(-NORM_CLIP, NORM_CLIP);
        }
    }

    /// Inverse of [`RunningMeanStd::normalize`] without the clamp.
    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| v * self.std(i) + self.mean[i])
            .collect()
    }
}

/// Shifts and scales `x` to zero mean and unit variance in place.
pub fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    if n == 0.0 {
        return;
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let s = var.sqrt().max(NORM_EPS);
    x.iter_mut().for_each(|v| *v = (*v - mean) / s);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn running_stats_match_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rms = RunningMeanStd::new(3);
        let mut all: Vec<Vec<f64>> = Vec::new();
        for b in 0..40 {
            let n = 1 + (b * 7) % 23;
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    vec![
                        rng.gen_range(-1.0..3.0),
                        100.0 + rng.gen_range(0.0..0.1),
                        rng.gen_range(-50.0..50.0),
                    ]
                })
                .collect();
            rms.update(rows.iter().map(|r| r.as_slice()));
            all.extend(rows);
        }
        let n = all.len() as f64;
        assert_eq!(rms.count, n);
        for i in 0..3 {
            let mean = all.iter().map(|r| r[i]).sum::<f64>() / n;
            let var = all.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / n;
            assert!((rms.mean[i] - mean).abs() < 1e-9);
            assert!((rms.var[i] - var).abs() < 1e-9 * var.max(1.0));
        }
    }

    #[test]
    fn standardize_gives_zero_mean_unit_variance() {
        let mut x: Vec<f64> = (0..1000)
            .map(|i| ((i * 37) % 101) as f64 * 0.3 - 4.0)
            .collect();
        standardize(&mut x);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-6);
        let rms = RunningMeanStd {
            mean: vec![1.0],
            var: vec![4.0],
            count: 1.0,
        };
        let z = rms.normalize(&[5.0]);
        assert!((rms.denormalize(&z)[0] - 5.0).abs() < 1e-6);
        assert_eq!(rms.normalize(&[1e6])[0], NORM_CLIP);
    }
}
