//! Planar rigid-body contact dynamics: one dynamic convex polygon against
//! kinematic capsules (robot links) and static one-sided segments.

use nalgebra::Vector2;

pub type V2 = Vector2<f64>;

#[inline]
pub fn cross(a: &V2, b: &V2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// `ω × r` for a scalar angular velocity.
#[inline]
pub fn perp(w: f64, r: &V2) -> V2 {
    V2::new(-w * r.y, w * r.x)
}

#[inline]
pub fn rotate(theta: f64, v: &V2) -> V2 {
    let (s, c) = theta.sin_cos();
    V2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub p: V2,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            p: V2::new(x, y),
            theta,
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn compose(&self, o: &Pose2) -> Pose2 {
        Pose2 {
            p: self.p + rotate(self.theta, &o.p),
            theta: self.theta + o.theta,
        }
    }

    pub fn inverse(&self) -> Pose2 {
        Pose2 {
            p: -rotate(-self.theta, &self.p),
            theta: -self.theta,
        }
    }

    pub fn apply(&self, v: &V2) -> V2 {
        self.p + rotate(self.theta, v)
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let t = (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU);
    t - std::f64::consts::PI
}

/// Convex polygon with vertices relative to its centroid, counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub vertices: Vec<V2>,
    pub mass: f64,
    pub inertia: f64,
    /// Radius of gyration used for support-friction torque.
    pub friction_radius: f64,
}

impl Shape {
    /// Recentres the polygon at its area centroid. Returns the shape and the
    /// centroid offset in the input frame.
    pub fn from_polygon(
        vertices: &[V2],
        mass: f64,
        inertia: Option<f64>,
    ) -> Result<(Shape, V2), String> {
        if vertices.len() < 3 {
            return Err("polygon needs at least 3 vertices".into());
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err("mass must be positive".into());
        }
        let n = vertices.len();
        let mut area = 0.0;
        let mut c = V2::zeros();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let w = cross(&a, &b);
            area += w;
            c += (a + b) * w;
        }
        area *= 0.5;
        if area <= 1e-12 {
            return Err("polygon must be counter-clockwise with positive area".into());
        }
        c /= 6.0 * area;
        let verts: Vec<V2> = vertices.iter().map(|v| v - c).collect();
        for i in 0..n {
            let a = verts[i];
            let b = verts[(i + 1) % n];
            let d = verts[(i + 2) % n];
            if cross(&(b - a), &(d - b)) < -1e-12 {
                return Err("polygon must be convex".into());
            }
        }
        // second moment of a uniform lamina about the centroid
        let mut j = 0.0;
        for i in 0..n {
            let a = verts[i];
            let b = verts[(i + 1) % n];
            let w = cross(&a, &b);
            j += w * (a.dot(&a) + a.dot(&b) + b.dot(&b));
        }
        let inertia_auto = mass * j / (6.0 * 2.0 * area);
        let inertia = inertia.unwrap_or(inertia_auto);
        if !(inertia > 0.0) {
            return Err("inertia must be positive".into());
        }
        let max_r = verts.iter().map(|v| v.norm()).fold(0.0, f64::max);
        Ok((
            Shape {
                vertices: verts,
                mass,
                inertia,
                friction_radius: 2.0 * max_r / 3.0,
            },
            c,
        ))
    }

    pub fn scaled(&self, s: f64, mass_mult: f64) -> Shape {
        Shape {
            vertices: self.vertices.iter().map(|v| v * s).collect(),
            mass: self.mass * mass_mult,
            inertia: self.inertia * mass_mult * s * s,
            friction_radius: self.friction_radius * s,
        }
    }

    pub fn world_vertices(&self, pose: &Pose2) -> Vec<V2> {
        self.vertices.iter().map(|v| pose.apply(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capsule {
    pub a: V2,
    pub b: V2,
    pub radius: f64,
    /// Velocities of the endpoints (rigid link, so linear in between).
    pub va: V2,
    pub vb: V2,
    /// Joints moving this capsule with their pivot positions. Contact
    /// impulses act back on these joints; empty means fully kinematic.
    pub pivots: Vec<(usize, V2)>,
}

impl Capsule {
    fn velocity_at(&self, u: f64) -> V2 {
        self.va + (self.vb - self.va) * u
    }
}

/// Static one-sided segment; bodies live on the left of `a -> b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: V2,
    pub b: V2,
}

impl Segment {
    pub fn normal(&self) -> V2 {
        let d = (self.b - self.a).normalize();
        V2::new(-d.y, d.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsParams {
    pub iterations: usize,
    pub baumgarte: f64,
    pub slop: f64,
    pub margin: f64,
    /// Friction between object and robot links.
    pub robot_friction: f64,
    /// Friction between object and static segments.
    pub static_friction: f64,
    /// Support friction coefficient (horizontal mode), zero disables.
    pub support_friction: f64,
    /// Magnitude of gravity. Points along the support normal in horizontal
    /// mode and along `-v` in vertical mode.
    pub gravity: f64,
    pub vertical: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub pose: Pose2,
    pub v: V2,
    pub w: f64,
}

#[derive(Debug, Clone)]
struct Contact {
    /// Contact point on the object, world frame.
    p: V2,
    /// Unit normal pushing the object away from the other body.
    n: V2,
    sep: f64,
    other_v: V2,
    friction: f64,
    /// Index into the capsule list, or `None` for static geometry.
    capsule: Option<usize>,
    mn: f64,
    mt: f64,
    jn: f64,
    jt: f64,
    /// Per joint: (index, normal row, tangent row) of the capsule point Jacobian.
    rows: Vec<(usize, f64, f64)>,
}

/// Outcome of a substep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// Total normal impulse magnitude per capsule.
    pub capsule_impulse: Vec<f64>,
    /// Deepest penetration among the contacts at the start of the substep.
    pub max_penetration: f64,
}

fn closest_on_segment(p: &V2, a: &V2, b: &V2) -> (V2, f64) {
    let ab = b - a;
    let l2 = ab.norm_squared();
    let u = if l2 > 0.0 {
        ((p - a).dot(&ab) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * u, u)
}

/// Signed distance from `p` to a convex CCW polygon, closest boundary point and
/// the unit direction from the boundary toward `p` (outward when outside).
fn polygon_query(p: &V2, verts: &[V2]) -> (f64, V2, V2) {
    let n = verts.len();
    let mut best_out = (f64::INFINITY, V2::zeros());
    let mut max_face = (f64::NEG_INFINITY, 0usize);
    for i in 0..n {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        let e = b - a;
        let nrm = V2::new(e.y, -e.x).normalize();
        let s = nrm.dot(&(p - a));
        if s > max_face.0 {
            max_face = (s, i);
        }
        let (c, _) = closest_on_segment(p, &a, &b);
        let d = (p - c).norm();
        if d < best_out.0 {
            best_out = (d, c);
        }
    }
    if max_face.0 <= 0.0 {
        let i = max_face.1;
        let e = verts[(i + 1) % n] - verts[i];
        let nrm = V2::new(e.y, -e.x).normalize();
        (max_face.0, p - nrm * max_face.0, nrm)
    } else {
        let (d, c) = best_out;
        let dir = if d > 1e-12 {
            (p - c) / d
        } else {
            let i = max_face.1;
            let e = verts[(i + 1) % n] - verts[i];
            V2::new(e.y, -e.x).normalize()
        };
        (d, c, dir)
    }
}

const DEEP: f64 = 0.05;

fn collect_contacts(
    shape: &Shape,
    body: &Body,
    capsules: &[Capsule],
    statics: &[Segment],
    params: &PhysicsParams,
    robot_friction: f64,
    static_friction: f64,
    dt: f64,
) -> Vec<Contact> {
    let verts = shape.world_vertices(&body.pose);
    // speculative margin grows with the distance the bodies can close in one substep
    let reach = shape.vertices.iter().fold(0.0f64, |a, v| a.max(v.norm()));
    let body_sweep = (body.v.norm() + body.w.abs() * reach) * dt;
    let mut out = Vec::new();
    let mut push = |p: V2, n: V2, sep: f64, other_v: V2, friction: f64, capsule: Option<usize>| {
        out.push(Contact {
            p,
            n,
            sep,
            other_v,
            friction,
            capsule,
            mn: 0.0,
            mt: 0.0,
            jn: 0.0,
            jt: 0.0,
            rows: Vec::new(),
        });
    };
    for (ci, cap) in capsules.iter().enumerate() {
        let margin = params.margin + body_sweep + cap.va.norm().max(cap.vb.norm()) * dt;
        for v in &verts {
            let (c, u) = closest_on_segment(v, &cap.a, &cap.b);
            let d = (v - c).norm();
            let sep = d - cap.radius;
            if sep < margin && d > 1e-9 {
                push(
                    *v,
                    (v - c) / d,
                    sep,
                    cap.velocity_at(u),
                    robot_friction,
                    Some(ci),
                );
            }
        }
        for (e, u) in [(cap.a, 0.0), (cap.b, 1.0)] {
            let (sd, q, dir) = polygon_query(&e, &verts);
            let sep = sd - cap.radius;
            if sep < margin && sd > -DEEP {
                push(q, -dir, sep, cap.velocity_at(u), robot_friction, Some(ci));
            }
        }
    }
    let margin = params.margin + body_sweep;
    for seg in statics {
        let n = seg.normal();
        let ab = seg.b - seg.a;
        let l2 = ab.norm_squared();
        for v in &verts {
            let u = (v - seg.a).dot(&ab) / l2;
            if !(0.0..=1.0).contains(&u) {
                continue;
            }
            let sep = n.dot(&(v - seg.a));
            if sep < margin && sep > -DEEP {
                push(*v, n, sep, V2::zeros(), static_friction, None);
            }
        }
        for e in [seg.a, seg.b] {
            let (sd, q, dir) = polygon_query(&e, &verts);
            if sd < margin && sd > -DEEP && sd > 0.0 {
                push(q, -dir, sd, V2::zeros(), static_friction, None);
            }
        }
    }
    out
}

/// Advances the object by one substep against kinematic capsules whose
/// positions are given at the start of the substep.
pub fn substep(
    shape: &Shape,
    body: &mut Body,
    capsules: &[Capsule],
    statics: &[Segment],
    params: &PhysicsParams,
    external_impulse: V2,
    dt: f64,
) -> StepReport {
    substep_coupled(
        shape,
        body,
        capsules,
        statics,
        params,
        external_impulse,
        dt,
        &mut [],
        &[],
    )
}

/// Removes the remaining robot approach toward a body held in place by the
/// scene, applying impulses to the robot joints only.
fn shock(
    contacts: &mut [Contact],
    body: &Body,
    qd: &mut [f64],
    robot_dv: &dyn Fn(&Contact, &[f64], bool) -> f64,
    inv_inertia: &[f64],
    params: &PhysicsParams,
    dt: f64,
) {
    for _ in 0..params.iterations {
        for c in contacts.iter_mut().filter(|c| !c.rows.is_empty()) {
            let kn: f64 = c.rows.iter().map(|&(j, a, _)| a * a * inv_inertia[j]).sum();
            if kn <= 0.0 {
                continue;
            }
            let r = c.p - body.pose.p;
            let rel = body.v + perp(body.w, &r) - c.other_v;
            let vn = rel.dot(&c.n) - robot_dv(c, qd, true);
            let target = if c.sep > 0.0 {
                -c.sep / dt
            } else {
                params.baumgarte * (-c.sep - params.slop).max(0.0) / dt
            };
            let d = ((target - vn) / kn).max(0.0);
            c.jn += d;
            for &(j, a, _) in &c.rows {
                qd[j] -= a * d * inv_inertia[j];
            }
        }
    }
}

/// [`substep`] with contact impulses also applied to the robot joint
/// velocities `qd` through each capsule's pivots, weighted by `inv_inertia`
/// per joint. Empty slices keep the robot kinematic.
#[allow(clippy::too_many_arguments)]
pub fn substep_coupled(
    shape: &Shape,
    body: &mut Body,
    capsules: &[Capsule],
    statics: &[Segment],
    params: &PhysicsParams,
    external_impulse: V2,
    dt: f64,
    qd: &mut [f64],
    inv_inertia: &[f64],
) -> StepReport {
    assert_eq!(qd.len(), inv_inertia.len());
    let qd0 = qd.to_vec();
    let m = shape.mass;
    let inv_m = 1.0 / m;
    let inv_i = 1.0 / shape.inertia;

    body.v += external_impulse * inv_m;
    if params.vertical {
        body.v.y -= params.gravity * dt;
    } else if params.support_friction > 0.0 {
        let dv = params.support_friction * params.gravity * dt;
        let s = body.v.norm();
        body.v *= if s > dv { 1.0 - dv / s } else { 0.0 };
        let dw = params.support_friction * params.gravity * m * shape.friction_radius * inv_i * dt;
        body.w = if body.w.abs() > dw {
            body.w - dw * body.w.signum()
        } else {
            0.0
        };
    }

    let mut contacts = collect_contacts(
        shape,
        body,
        capsules,
        statics,
        params,
        params.robot_friction,
        params.static_friction,
        dt,
    );
    let mut report = StepReport {
        capsule_impulse: vec![0.0; capsules.len()],
        max_penetration: contacts.iter().map(|c| -c.sep).fold(0.0, f64::max),
    };
    for c in &mut contacts {
        let r = c.p - body.pose.p;
        let t = V2::new(-c.n.y, c.n.x);
        if !qd.is_empty() {
            if let Some(ci) = c.capsule {
                c.rows = capsules[ci]
                    .pivots
                    .iter()
                    .map(|(j, pivot)| {
                        let col = perp(1.0, &(c.p - pivot));
                        (*j, col.dot(&c.n), col.dot(&t))
                    })
                    .collect();
            }
        }
        let rn = cross(&r, &c.n);
        let rt = cross(&r, &t);
        let kn: f64 = c.rows.iter().map(|&(j, a, _)| a * a * inv_inertia[j]).sum();
        let kt: f64 = c.rows.iter().map(|&(j, _, b)| b * b * inv_inertia[j]).sum();
        c.mn = 1.0 / (inv_m + rn * rn * inv_i + kn);
        c.mt = 1.0 / (inv_m + rt * rt * inv_i + kt);
    }
    // robot point velocity change since the start of the solve
    let robot_dv = |c: &Contact, qd: &[f64], normal: bool| -> f64 {
        c.rows
            .iter()
            .map(|&(j, a, b)| (qd[j] - qd0[j]) * if normal { a } else { b })
            .sum()
    };
    let solve = |contacts: &mut [Contact], body: &mut Body, qd: &mut [f64]| {
        for c in contacts.iter_mut() {
            let r = c.p - body.pose.p;
            let rel = body.v + perp(body.w, &r) - c.other_v;
            let vn = rel.dot(&c.n) - robot_dv(c, qd, true);
            let target = if c.sep > 0.0 {
                -c.sep / dt
            } else {
                params.baumgarte * (-c.sep - params.slop).max(0.0) / dt
            };
            let old = c.jn;
            c.jn = (old + c.mn * (target - vn)).max(0.0);
            let d = c.jn - old;
            body.v += c.n * (d * inv_m);
            body.w += cross(&r, &c.n) * d * inv_i;
            for &(j, a, _) in &c.rows {
                qd[j] -= a * d * inv_inertia[j];
            }

            let t = V2::new(-c.n.y, c.n.x);
            let rel = body.v + perp(body.w, &r) - c.other_v;
            let vt = rel.dot(&t) - robot_dv(c, qd, false);
            let old = c.jt;
            let lim = c.friction * c.jn;
            c.jt = (old - c.mt * vt).clamp(-lim, lim);
            let d = c.jt - old;
            body.v += t * (d * inv_m);
            body.w += cross(&r, &t) * d * inv_i;
            for &(j, _, b) in &c.rows {
                qd[j] -= b * d * inv_inertia[j];
            }
        }
    };
    for _ in 0..params.iterations {
        solve(&mut contacts, body, qd);
    }
    // Shock propagation: a body braced by the scene is treated as immovable
    // and the residual robot approach is removed on the robot side alone.
    // Gauss-Seidel converges slowly when a light body is squeezed between
    // a wall and a heavy arm.
    let braced = contacts.iter().any(|c| c.capsule.is_none() && c.jn > 0.0);
    if braced && !qd.is_empty() {
        shock(&mut contacts, body, qd, &robot_dv, inv_inertia, params, dt);
        // friction limits now see the full squeeze
        for _ in 0..params.iterations {
            solve(&mut contacts, body, qd);
        }
        shock(&mut contacts, body, qd, &robot_dv, inv_inertia, params, dt);
    }
    for c in &contacts {
        if let Some(i) = c.capsule {
            report.capsule_impulse[i] += c.jn;
        }
    }
    body.pose.p += body.v * dt;
    body.pose.theta += body.w * dt;
    report
}

/// Deepest overlap between the object and any capsule or static segment.
pub fn penetration(shape: &Shape, pose: &Pose2, capsules: &[Capsule], statics: &[Segment]) -> f64 {
    let verts = shape.world_vertices(pose);
    let mut worst: f64 = 0.0;
    for cap in capsules {
        for v in &verts {
            let (c, _) = closest_on_segment(v, &cap.a, &cap.b);
            worst = worst.max(cap.radius - (v - c).norm());
        }
        for e in [cap.a, cap.b] {
            let (sd, _, _) = polygon_query(&e, &verts);
            worst = worst.max(cap.radius - sd);
        }
    }
    for seg in statics {
        let n = seg.normal();
        let ab = seg.b - seg.a;
        for v in &verts {
            let u = (v - seg.a).dot(&ab) / ab.norm_squared();
            if (0.0..=1.0).contains(&u) {
                worst = worst.max(-n.dot(&(v - seg.a)));
            }
        }
    }
    worst
}
