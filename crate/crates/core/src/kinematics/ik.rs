use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{KinematicChain, KinematicsError};
use crate::geometry::{Pose, Vec3};

const MAX_STEP_RAD: f64 = 0.2;
/// Descents stop once the error is this fraction of the acceptance tolerance.
const CONVERGE_FRACTION: f64 = 0.01;
/// Meters of position error counted as one radian of orientation error when ranking seeds.
const SEED_ORI_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkParams {
    pub n_solutions: usize,
    pub n_seeds_per: usize,
    pub seed_noise_deg: f64,
    pub pos_tol: f64,
    pub ori_tol_deg: f64,
    pub max_inner_iters: usize,
    pub damping: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            n_solutions: 100,
            n_seeds_per: 20,
            seed_noise_deg: 15.0,
            pos_tol: 0.05,
            ori_tol_deg: 3.0,
            max_inner_iters: 200,
            damping: 1e-3,
        }
    }
}

impl IkParams {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let bad = |m: &str| Err(KinematicsError::InvalidParams(m.into()));
        if self.n_solutions == 0 || self.n_seeds_per == 0 || self.max_inner_iters == 0 {
            return bad("counts must be positive");
        }
        for (v, n) in [
            (self.seed_noise_deg, "seed_noise_deg"),
            (self.pos_tol, "pos_tol"),
            (self.ori_tol_deg, "ori_tol_deg"),
            (self.damping, "damping"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(KinematicsError::InvalidParams(format!(
                    "{n} must be positive"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IkMode {
    Pose,
    PositionOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: Vec<f64>,
    pub pos_err: f64,
    pub ori_err_deg: f64,
    /// Number of descents that met tolerance.
    pub n_candidates: usize,
    /// False when no descent met tolerance and `q` is the lowest-residual one.
    pub within_tol: bool,
}

struct Descent {
    q: Vec<f64>,
    pos_err: f64,
    ori_err: f64,
}

fn task_error(pose: &Pose, target: &Pose) -> (Vec3, Vec3) {
    let ep = target.position - pose.position;
    let eo = (target.orientation * pose.orientation.inverse()).scaled_axis();
    (ep, eo)
}

fn residual(chain: &KinematicChain, link: usize, target: &Pose, q: &[f64]) -> (f64, f64) {
    let pose = chain.link_poses(q)[link];
    let (ep, eo) = task_error(&pose, target);
    (ep.norm(), eo.norm())
}

#[allow(clippy::too_many_arguments)]
fn descend(
    chain: &KinematicChain,
    link: usize,
    target: &Pose,
    mut q: Vec<f64>,
    vars: &[usize],
    mode: IkMode,
    params: &IkParams,
) -> Descent {
    let pos_conv = params.pos_tol * CONVERGE_FRACTION;
    let ori_conv = params.ori_tol_deg.to_radians() * CONVERGE_FRACTION;
    let rows = if mode == IkMode::Pose { 6 } else { 3 };
    let lambda2 = params.damping * params.damping;
    let mut last = (f64::INFINITY, f64::INFINITY);
    let iters = if vars.is_empty() {
        0
    } else {
        params.max_inner_iters
    };
    for _ in 0..iters {
        let poses = chain.link_poses(&q);
        let (ep, eo) = task_error(&poses[link], target);
        last = (ep.norm(), eo.norm());
        let ori_ok = mode == IkMode::PositionOnly || last.1 <= ori_conv;
        if last.0 <= pos_conv && ori_ok {
            return Descent {
                q,
                pos_err: last.0,
                ori_err: last.1,
            };
        }
        let cols = chain.jacobian(&poses, link, vars);
        let mut j = DMatrix::<f64>::zeros(rows, vars.len());
        for (c, (lin, ang)) in cols.iter().enumerate() {
            for r in 0..3 {
                j[(r, c)] = lin[r];
                if rows == 6 {
                    j[(r + 3, c)] = ang[r];
                }
            }
        }
        let mut e = DVector::<f64>::zeros(rows);
        for r in 0..3 {
            e[r] = ep[r];
            if rows == 6 {
                e[r + 3] = eo[r];
            }
        }
        let a = &j * j.transpose() + DMatrix::<f64>::identity(rows, rows) * lambda2;
        let Some(y) = a.cholesky().map(|c| c.solve(&e)) else {
            break;
        };
        let mut dq = j.transpose() * y;
        let m = dq.amax();
        if !m.is_finite() || m < 1e-12 {
            break;
        }
        if m > MAX_STEP_RAD {
            dq *= MAX_STEP_RAD / m;
        }
        for (k, &v) in vars.iter().enumerate() {
            let jt = &chain.joints[v];
            q[v] = (q[v] + dq[k]).clamp(jt.lo, jt.hi);
        }
    }
    let (p, o) = residual(chain, link, target, &q);
    if p.is_finite() {
        last = (p, o);
    }
    Descent {
        q,
        pos_err: last.0,
        ori_err: last.1,
    }
}

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Multi-start IK on an explicit set of variable joints. Other joints stay at
/// `selected_q`. Returns the passing candidate closest to `selected_q` in the
/// infinity norm, or (when `best_effort`) the lowest-residual descent.
#[allow(clippy::too_many_arguments)]
pub fn ik_solve_link(
    chain: &KinematicChain,
    link: usize,
    target: &Pose,
    selected_q: &[f64],
    vars: &[usize],
    mode: IkMode,
    params: &IkParams,
    rng_seed: u64,
    best_effort: bool,
) -> Result<IkSolution, KinematicsError> {
    params.validate()?;
    if selected_q.len() != chain.dof() {
        return Err(KinematicsError::DimensionMismatch {
            expected: chain.dof(),
            got: selected_q.len(),
        });
    }
    let name = chain.links[link].name.clone();
    let mut base = selected_q.to_vec();
    chain.clamp(&mut base);
    let noise = Normal::new(0.0, params.seed_noise_deg.to_radians()).expect("positive sigma");
    let seed_score = |q: &[f64]| {
        let (p, o) = residual(chain, link, target, q);
        match mode {
            IkMode::Pose => p + SEED_ORI_WEIGHT * o,
            IkMode::PositionOnly => p,
        }
    };

    let descents: Vec<Descent> = (0..params.n_solutions)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(i as u64);
            let mut best: Option<(f64, Vec<f64>)> = None;
            for _ in 0..params.n_seeds_per {
                let mut q = base.clone();
                for &v in vars {
                    let jt = &chain.joints[v];
                    q[v] = (q[v] + noise.sample(&mut rng)).clamp(jt.lo, jt.hi);
                }
                let s = seed_score(&q);
                if best.as_ref().is_none_or(|(b, _)| s < *b) {
                    best = Some((s, q));
                }
            }
            let (_, q0) = best.expect("at least one seed");
            descend(chain, link, target, q0, vars, mode, params)
        })
        .collect();

    let ori_tol = params.ori_tol_deg.to_radians();
    let passes = |d: &Descent| {
        d.pos_err <= params.pos_tol && (mode == IkMode::PositionOnly || d.ori_err <= ori_tol)
    };
    let mut chosen: Option<(usize, f64)> = None;
    let mut n_candidates = 0;
    for (i, d) in descents.iter().enumerate() {
        if !passes(d) {
            continue;
        }
        n_candidates += 1;
        let dist = inf_dist(&d.q, &base);
        if chosen.is_none_or(|(_, b)| dist < b) {
            chosen = Some((i, dist));
        }
    }
    if let Some((i, dist)) = chosen {
        debug_assert!(descents
            .iter()
            .filter(|d| passes(d))
            .all(|d| inf_dist(&d.q, &base) >= dist));
        let d = &descents[i];
        // re-evaluate from scratch so the reported residual is exactly what FK gives
        let (p, o) = residual(chain, link, target, &d.q);
        assert!(
            p <= params.pos_tol && (mode == IkMode::PositionOnly || o <= ori_tol),
            "IK candidate failed its residual check"
        );
        assert!(chain.within_limits(&d.q));
        return Ok(IkSolution {
            q: d.q.clone(),
            pos_err: p,
            ori_err_deg: o.to_degrees(),
            n_candidates,
            within_tol: true,
        });
    }
    let score = |d: &Descent| match mode {
        IkMode::Pose => d.pos_err + SEED_ORI_WEIGHT * d.ori_err,
        IkMode::PositionOnly => d.pos_err,
    };
    let best = descents
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| score(a).total_cmp(&score(b)).then(ia.cmp(ib)))
        .map(|(_, d)| d)
        .expect("n_solutions > 0");
    if best_effort {
        Ok(IkSolution {
            q: best.q.clone(),
            pos_err: best.pos_err,
            ori_err_deg: best.ori_err.to_degrees(),
            n_candidates: 0,
            within_tol: false,
        })
    } else {
        Err(KinematicsError::IkFailed {
            frame: name,
            pos_err: best.pos_err,
            ori_err_deg: best.ori_err.to_degrees(),
        })
    }
}

/// Full-pose IK for a named frame, varying every joint between the root and the frame.
pub fn ik_solve(
    chain: &KinematicChain,
    frame: &str,
    target: &Pose,
    selected_q: &[f64],
    params: &IkParams,
    rng_seed: u64,
) -> Result<IkSolution, KinematicsError> {
    let link = chain
        .frame_index(frame)
        .ok_or_else(|| KinematicsError::UnknownFrame(frame.to_string()))?;
    let vars = chain.joints_on_path(link);
    ik_solve_link(
        chain,
        link,
        target,
        selected_q,
        &vars,
        IkMode::Pose,
        params,
        rng_seed,
        false,
    )
}
