//! Dense ELU networks with hand-written backprop, and Adam.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in x out`, so a batch `x` (rows are samples) maps to `x.dot(w) + b`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

impl Mlp {
    /// Layer widths `dims = [in, h1, .., out]`. Uniform fan-in init; the last
    /// layer is additionally scaled by `out_gain`.
    pub fn new<R: Rng>(dims: &[usize], out_gain: f64, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fi, fo) = (dims[i], dims[i + 1]);
                let lim = 1.0 / (fi as f64).sqrt();
                let g = if i + 1 == n { out_gain } else { 1.0 };
                Linear {
                    w: Array2::from_shape_fn((fi, fo), |_| g * rng.gen_range(-lim..lim)),
                    b: Array1::zeros(fo),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].w.nrows()];
        d.extend(self.layers.iter().map(|l| l.w.ncols()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.ncols())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.w) + &l.b;
            if i + 1 < n {
                h.mapv_inplace(elu);
            }
        }
        h
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let n = self.layers.len();
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
        };
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.w) + &l.b;
            cache.inputs.push(h);
            h = if i + 1 < n { z.mapv(elu) } else { z.clone() };
            cache.pre.push(z);
        }
        (h, cache)
    }

    /// Parameter gradients for `d loss / d output = grad_out`, flattened in
    /// [`Mlp::to_flat`] order.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>) -> Vec<f64> {
        let n = self.layers.len();
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(n);
        let mut g = grad_out.clone();
        for i in (0..n).rev() {
            if i + 1 < n {
                g.zip_mut_with(&cache.pre[i], |gv, z| *gv *= elu_grad(*z));
            }
            let gw = cache.inputs[i].t().dot(&g);
            let gb = g.sum_axis(Axis(0));
            if i > 0 {
                g = g.dot(&self.layers[i].w.t());
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads {
            flat.extend(gw.iter());
            flat.extend(gb.iter());
        }
        flat
    }

    /// Weights then bias per layer, row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut k = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = flat[k];
                k += 1;
            }
        }
    }

    pub fn from_flat(dims: &[usize], flat: &[f64]) -> Option<Self> {
        if dims.len() < 2 {
            return None;
        }
        let layers: Vec<Linear> = dims
            .windows(2)
            .map(|d| Linear {
                w: Array2::zeros((d[0], d[1])),
                b: Array1::zeros(d[1]),
            })
            .collect();
        let mut m = Self { layers };
        if flat.len() != m.n_params() {
            return None;
        }
        m.set_flat(flat);
        Some(m)
    }
}

/// Adam on a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` in place to global norm at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[5, 7, 6, 3], 1.0, &mut rng);
        let x = Array2::from_shape_fn((4, 5), |_| rng.gen_range(-1.0..1.0));
        let wout = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
        let loss = |net: &Mlp| (net.forward(&x) * &wout).sum();
        let (_, cache) = net.forward_cached(&x);
        let g = net.backward(&cache, &wout);
        let p0 = net.to_flat();
        let h = 1e-6;
        for i in (0..p0.len()).step_by(7) {
            let mut p = p0.clone();
            p[i] += h;
            net.set_flat(&p);
            let lp = loss(&net);
            p[i] -= 2.0 * h;
            net.set_flat(&p);
            let lm = loss(&net);
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "param {i}: {fd} vs {}",
                g[i]
            );
        }
        net.set_flat(&p0);
    }

    #[test]
    fn flat_roundtrip_and_adam() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[3, 4, 2], 0.01, &mut rng);
        let back = Mlp::from_flat(&net.dims(), &net.to_flat()).unwrap();
        assert_eq!(back, net);
        assert!(Mlp::from_flat(&[3, 4, 2], &[0.0; 3]).is_none());
        // minimise a quadratic
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g = vec![2.0 * p[0], 2.0 * p[1]];
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|v| v.abs() < 1e-2), "{p:?}");
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }
}
