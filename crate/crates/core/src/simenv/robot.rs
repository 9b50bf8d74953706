//! Planar view of a kinematic chain whose revolute axes are all normal to the
//! working plane, plus the plane embedding into 3-D.

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use super::physics::{perp, Capsule, Pose2, V2};
use crate::geometry::{Pose, Vec3};
use crate::kinematics::KinematicChain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    /// Table top: plane `(x, y)`, in-plane rotation about `+z`, no gravity in plane.
    Horizontal,
    /// Wall-side plane `(x, z)`, in-plane rotation about `-y`, gravity along `-z`.
    Vertical,
}

impl Plane {
    pub fn rotation(&self) -> UnitQuaternion<f64> {
        match self {
            Plane::Horizontal => UnitQuaternion::identity(),
            Plane::Vertical => {
                UnitQuaternion::from_axis_angle(&Vec3::x_axis(), std::f64::consts::FRAC_PI_2)
            }
        }
    }

    pub fn point(&self, p: &V2) -> Vec3 {
        match self {
            Plane::Horizontal => Vec3::new(p.x, p.y, 0.0),
            Plane::Vertical => Vec3::new(p.x, 0.0, p.y),
        }
    }

    pub fn vector(&self, v: &V2) -> Vec3 {
        self.point(v)
    }

    /// World axis of positive in-plane rotation.
    pub fn normal(&self) -> Vec3 {
        match self {
            Plane::Horizontal => Vec3::z(),
            Plane::Vertical => -Vec3::y(),
        }
    }

    pub fn to_world(&self, p: &Pose2) -> Pose {
        let q = self.rotation() * UnitQuaternion::from_axis_angle(&Vec3::z_axis(), p.theta);
        Pose::new(self.point(&p.p), q)
    }

    pub fn project_point(&self, v: &Vec3) -> V2 {
        match self {
            Plane::Horizontal => V2::new(v.x, v.y),
            Plane::Vertical => V2::new(v.x, v.z),
        }
    }

    /// Inverse of [`Plane::to_world`]; drops any out-of-plane component.
    pub fn from_world(&self, pose: &Pose) -> Pose2 {
        let local = self.rotation().inverse() * pose.orientation;
        let x = local * Vec3::x();
        Pose2 {
            p: self.project_point(&pose.position),
            theta: x.y.atan2(x.x),
        }
    }

    /// Direction opposing gravity within the plane, if any.
    pub fn up(&self) -> Option<V2> {
        match self {
            Plane::Horizontal => None,
            Plane::Vertical => Some(V2::new(0.0, 1.0)),
        }
    }
}

/// A collision capsule attached to a named link, in link-local plane coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapsuleSpec {
    pub link: String,
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct PLink {
    parent: Option<usize>,
    origin: Pose2,
    joint: Option<usize>,
    /// `(joint, link)` pairs from the root down to this link.
    ancestors: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarRobot {
    links: Vec<PLink>,
    capsules: Vec<(usize, V2, V2, f64)>,
    pub plane: Plane,
    pub palm: usize,
    pub wrist: usize,
    pub fingertips: Vec<usize>,
    pub arm: Vec<usize>,
    pub fingers: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub vel_limit: Vec<f64>,
    pub rest: Vec<f64>,
    pub synergy_open: Vec<f64>,
    pub synergy_closed: Vec<f64>,
}

fn planar_origin(p: &Pose, name: &str) -> Result<Pose2, String> {
    let axis_ok = p
        .orientation
        .axis()
        .is_none_or(|a| a.x.abs() < 1e-9 && a.y.abs() < 1e-9);
    if p.position.z.abs() > 1e-9 || !axis_ok {
        return Err(format!("link `{name}` origin leaves the plane"));
    }
    let x = p.orientation * Vec3::x();
    Ok(Pose2::new(p.position.x, p.position.y, x.y.atan2(x.x)))
}

impl PlanarRobot {
    pub fn new(
        chain: &KinematicChain,
        plane: Plane,
        capsules: &[CapsuleSpec],
    ) -> Result<Self, String> {
        let mut links = Vec::with_capacity(chain.links.len());
        for (i, l) in chain.links.iter().enumerate() {
            let origin = match l.parent {
                None => plane.from_world(&l.origin),
                Some(_) => planar_origin(&l.origin, &l.name)?,
            };
            if l.parent.is_none() {
                let back = plane.to_world(&origin);
                if (back.position - l.origin.position).norm() > 1e-9
                    || back.angle_to(&l.origin) > 1e-9
                {
                    return Err(format!(
                        "root link `{}` is not in the working plane",
                        l.name
                    ));
                }
            }
            if let Some(j) = l.joint {
                let a = chain.joints[j].axis;
                if (a - Vec3::z()).norm() > 1e-9 {
                    return Err(format!(
                        "joint `{}` axis must be +z for a planar chain",
                        l.name
                    ));
                }
            }
            let mut ancestors = match l.parent {
                Some(p) => links
                    .get(p)
                    .map(|pl: &PLink| pl.ancestors.clone())
                    .unwrap_or_default(),
                None => Vec::new(),
            };
            if let Some(j) = l.joint {
                ancestors.push((j, i));
            }
            links.push(PLink {
                parent: l.parent,
                origin,
                joint: l.joint,
                ancestors,
            });
        }
        let mut caps = Vec::new();
        for c in capsules {
            let li = chain
                .link_index(&c.link)
                .ok_or_else(|| format!("capsule refers to unknown link `{}`", c.link))?;
            if !(c.radius >= 0.0) {
                return Err("capsule radius must be non-negative".into());
            }
            caps.push((
                li,
                V2::new(c.a[0], c.a[1]),
                V2::new(c.b[0], c.b[1]),
                c.radius,
            ));
        }
        let fingers = chain.finger_joints();
        let (open, closed) = match &chain.synergy {
            Some(s) => (s.open.clone(), s.closed.clone()),
            None => {
                let r: Vec<f64> = fingers.iter().map(|&j| chain.rest[j]).collect();
                (r.clone(), r)
            }
        };
        Ok(Self {
            links,
            capsules: caps,
            plane,
            palm: chain.palm,
            wrist: chain.wrist,
            fingertips: chain.fingertips.clone(),
            arm: chain.groups.arm.clone(),
            fingers,
            lo: chain.joints.iter().map(|j| j.lo).collect(),
            hi: chain.joints.iter().map(|j| j.hi).collect(),
            vel_limit: chain.velocity_limits(),
            rest: chain.rest.clone(),
            synergy_open: open,
            synergy_closed: closed,
        })
    }

    pub fn dof(&self) -> usize {
        self.lo.len()
    }

    pub fn link_poses(&self, q: &[f64]) -> Vec<Pose2> {
        let mut out: Vec<Pose2> = Vec::with_capacity(self.links.len());
        for l in &self.links {
            let mut local = l.origin;
            if let Some(j) = l.joint {
                local.theta += q[j];
            }
            out.push(match l.parent {
                Some(p) => out[p].compose(&local),
                None => local,
            });
        }
        out
    }

    /// Velocity of a point rigidly attached to `link`.
    pub fn point_velocity(&self, poses: &[Pose2], qd: &[f64], link: usize, point: &V2) -> V2 {
        let mut v = V2::zeros();
        for &(j, jl) in &self.links[link].ancestors {
            v += perp(qd[j], &(point - poses[jl].p));
        }
        v
    }

    pub fn capsules(&self, poses: &[Pose2], qd: &[f64]) -> Vec<Capsule> {
        self.capsules
            .iter()
            .map(|(l, a, b, r)| {
                let wa = poses[*l].apply(a);
                let wb = poses[*l].apply(b);
                Capsule {
                    a: wa,
                    b: wb,
                    radius: *r,
                    va: self.point_velocity(poses, qd, *l, &wa),
                    vb: self.point_velocity(poses, qd, *l, &wb),
                    pivots: self.links[*l]
                        .ancestors
                        .iter()
                        .map(|&(j, jl)| (j, poses[jl].p))
                        .collect(),
                }
            })
            .collect()
    }

    pub fn n_capsules(&self) -> usize {
        self.capsules.len()
    }

    /// Capsule indices attached to each fingertip's finger (links sharing its joints).
    pub fn finger_capsules(&self, finger: usize) -> Vec<usize> {
        let tip = self.fingertips[finger];
        let tip_joints: Vec<usize> = self.links[tip]
            .ancestors
            .iter()
            .map(|(j, _)| *j)
            .filter(|j| self.fingers.contains(j))
            .collect();
        self.capsules
            .iter()
            .enumerate()
            .filter(|(_, (l, ..))| {
                self.links[*l]
                    .ancestors
                    .iter()
                    .any(|(j, _)| tip_joints.contains(j))
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Palm pose Jacobian (rows x, y, theta) with respect to the arm joints.
    pub fn palm_jacobian(&self, poses: &[Pose2]) -> Vec<[f64; 3]> {
        let p = poses[self.palm].p;
        self.arm
            .iter()
            .map(|&j| {
                match self.links[self.palm]
                    .ancestors
                    .iter()
                    .find(|(jj, _)| *jj == j)
                {
                    Some(&(_, jl)) => {
                        let v = perp(1.0, &(p - poses[jl].p));
                        [v.x, v.y, 1.0]
                    }
                    None => [0.0, 0.0, 0.0],
                }
            })
            .collect()
    }

    /// Damped least squares step on the arm joints toward a palm pose.
    pub fn palm_ik_step(&self, q: &[f64], target: &Pose2, damping: f64) -> Vec<f64> {
        let poses = self.link_poses(q);
        let cur = poses[self.palm];
        let e = [
            target.p.x - cur.p.x,
            target.p.y - cur.p.y,
            super::physics::wrap_angle(target.theta - cur.theta),
        ];
        let cols = self.palm_jacobian(&poses);
        let n = cols.len();
        let mut jm = nalgebra::DMatrix::<f64>::zeros(3, n);
        for (c, col) in cols.iter().enumerate() {
            for r in 0..3 {
                jm[(r, c)] = col[r];
            }
        }
        let a =
            &jm * jm.transpose() + nalgebra::DMatrix::<f64>::identity(3, 3) * (damping * damping);
        let ev = nalgebra::DVector::from_column_slice(&e);
        let y = a
            .lu()
            .solve(&ev)
            .unwrap_or_else(|| nalgebra::DVector::zeros(3));
        let dq = jm.transpose() * y;
        let mut out = vec![0.0; self.dof()];
        for (k, &j) in self.arm.iter().enumerate() {
            out[j] = dq[k];
        }
        out
    }

    /// Iterates [`PlanarRobot::palm_ik_step`] from `q0`. Returns `None` when the
    /// palm does not reach `target` within tolerance.
    pub fn solve_palm(&self, q0: &[f64], target: &Pose2) -> Option<Vec<f64>> {
        let mut q = q0.to_vec();
        for _ in 0..300 {
            let poses = self.link_poses(&q);
            let cur = poses[self.palm];
            let dp = (target.p - cur.p).norm();
            let dth = super::physics::wrap_angle(target.theta - cur.theta).abs();
            if dp < 1e-6 && dth < 1e-6 {
                return Some(q);
            }
            let dq = self.palm_ik_step(&q, target, 1e-3);
            let m = dq.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let s = if m > 0.2 { 0.2 / m } else { 1.0 };
            for j in 0..q.len() {
                q[j] = (q[j] + s * dq[j]).clamp(self.lo[j], self.hi[j]);
            }
        }
        None
    }

    /// [`PlanarRobot::solve_palm`] from `q0`, then from a fixed grid of arm
    /// seeds when DLS stalls at a joint limit. Finger joints keep their `q0` values.
    pub fn reach_palm(&self, q0: &[f64], target: &Pose2) -> Option<Vec<f64>> {
        self.solve_palm(q0, target).or_else(|| {
            [-0.6, 0.6, -1.8, 1.8, 0.0, 2.7, -2.7]
                .iter()
                .find_map(|&a| {
                    [1.4, -1.4].iter().find_map(|&e| {
                        let mut seed = q0.to_vec();
                        for (k, &j) in self.arm.iter().enumerate() {
                            seed[j] = match k {
                                0 => a,
                                1 => e,
                                _ => 0.6 * e,
                            };
                        }
                        self.solve_palm(&seed, target)
                    })
                })
        })
    }

    pub fn synergy(&self, s: f64) -> Vec<f64> {
        let s = s.clamp(0.0, 1.0);
        self.synergy_open
            .iter()
            .zip(&self.synergy_closed)
            .map(|(o, c)| o + s * (c - o))
            .collect()
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (j, v) in q.iter_mut().enumerate() {
            *v = v.clamp(self.lo[j], self.hi[j]);
        }
    }
}
