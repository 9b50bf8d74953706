//! Rigid-transform algebra and the anchor-point pose distance that every
//! reward, observation and success check in this crate is built on.
//!
//! A [`Pose`] maps points from a child frame into a parent frame. Composition
//! follows the usual chaining rule: if `a` is the pose of frame B in frame A
//! and `b` is the pose of frame C in frame B, `a.compose(&b)` is the pose of
//! C in A.

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Default anchor distance from the object origin, meters.
pub const DEFAULT_ANCHOR_LENGTH: f64 = 0.2;
/// Default reward sharpness.
pub const DEFAULT_ALPHA: f64 = 10.0;
/// Angular tolerance used to decide whether an anchor is parallel to a symmetry axis.
pub const PARALLEL_TOLERANCE_RAD: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("interpolation parameter {0} outside [0, 1]")]
    InterpOutOfRange(f64),
    #[error("anchor set is empty")]
    EmptyAnchors,
    #[error("anchor {index} is not finite")]
    NonFiniteAnchor { index: usize },
    #[error("symmetry axis must be unit length (norm {0})")]
    AxisNotUnit(f64),
    #[error("no anchor is parallel to the symmetry axis; reduction would empty the set")]
    ReductionEmpty,
    #[error("pose array must have 7 entries, got {0}")]
    BadPoseLength(usize),
    #[error("pose contains non-finite values")]
    NonFinitePose,
    #[error("quaternion norm {0} is not within tolerance of 1")]
    NonUnitQuaternion(f64),
}

/// Rigid transform: position in meters plus unit quaternion orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vec3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vec3::new(x, y, z), UnitQuaternion::identity())
    }

    pub fn from_rotation(orientation: UnitQuaternion<f64>) -> Self {
        Self::new(Vec3::zeros(), orientation)
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        Self::from_rotation(UnitQuaternion::from_axis_angle(
            &Unit::new_normalize(axis),
            angle,
        ))
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::z(), angle)
    }

    pub fn with_position(mut self, p: Vec3) -> Self {
        self.position = p;
        self
    }

    /// `self` followed by `other` (`self * other` as homogeneous matrices).
    pub fn compose(&self, other: &Pose) -> Pose {
        let position = self.position + self.orientation * other.position;
        let q = self.orientation.quaternion() * other.orientation.quaternion();
        Pose::new(position, UnitQuaternion::new_normalize(q))
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose::new(-(inv * self.position), inv)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.position + self.orientation * p
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.orientation * v
    }

    /// Geodesic angle between the two orientations, radians in [0, pi].
    pub fn angle_to(&self, other: &Pose) -> f64 {
        quat_angle(&self.orientation, &other.orientation)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }

    /// `[x, y, z, qw, qx, qy, qz]`, quaternion canonicalized to `qw >= 0`.
    pub fn to_array(&self) -> [f64; 7] {
        let q = canonical(&self.orientation);
        [
            self.position.x,
            self.position.y,
            self.position.z,
            q.w,
            q.i,
            q.j,
            q.k,
        ]
    }

    /// Parses `[x, y, z, qw, qx, qy, qz]`. The quaternion must already be unit
    /// norm (within 1e-6); it is renormalized afterwards.
    pub fn from_slice(values: &[f64]) -> Result<Pose, GeometryError> {
        if values.len() != 7 {
            return Err(GeometryError::BadPoseLength(values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinitePose);
        }
        let q = Quaternion::new(values[3], values[4], values[5], values[6]);
        let n = q.norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(GeometryError::NonUnitQuaternion(n));
        }
        Ok(Pose::new(
            Vec3::new(values[0], values[1], values[2]),
            UnitQuaternion::new_normalize(q),
        ))
    }
}

fn canonical(q: &UnitQuaternion<f64>) -> Quaternion<f64> {
    let q = *q.quaternion();
    if q.w < 0.0 {
        -q
    } else {
        q
    }
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Pose::from_slice(&v).map_err(serde::de::Error::custom)
    }
}

/// Geodesic angle between two unit quaternions, accounting for double cover.
pub fn quat_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    // atan2 keeps full precision near zero, where acos of the dot product does not
    let d = a.inverse() * b;
    2.0 * d.imag().norm().atan2(d.w.abs())
}

/// Shortest-arc spherical interpolation.
pub fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, u: f64) -> UnitQuaternion<f64> {
    let qa = a.coords;
    let mut qb = b.coords;
    let mut dot = qa.dot(&qb);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    let out = if dot > 1.0 - 1e-12 {
        qa * (1.0 - u) + qb * u
    } else {
        let theta = dot.min(1.0).acos();
        let s = theta.sin();
        qa * (((1.0 - u) * theta).sin() / s) + qb * ((u * theta).sin() / s)
    };
    UnitQuaternion::new_normalize(Quaternion::from(out))
}

/// Local-frame points whose images under a pose define the pose distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub anchors: Vec<Vec3>,
    #[serde(default)]
    pub label: String,
}

impl Default for AnchorSet {
    fn default() -> Self {
        Self::axis_aligned(DEFAULT_ANCHOR_LENGTH)
    }
}

impl AnchorSet {
    pub fn new(anchors: Vec<Vec3>, label: impl Into<String>) -> Result<Self, GeometryError> {
        let set = Self {
            anchors,
            label: label.into(),
        };
        set.validate()?;
        Ok(set)
    }

    /// Three anchors at distance `length` along the local axes.
    pub fn axis_aligned(length: f64) -> Self {
        Self {
            anchors: vec![
                Vec3::new(length, 0.0, 0.0),
                Vec3::new(0.0, length, 0.0),
                Vec3::new(0.0, 0.0, length),
            ],
            label: "axis-aligned".to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.anchors.is_empty() {
            return Err(GeometryError::EmptyAnchors);
        }
        if let Some(index) = self
            .anchors
            .iter()
            .position(|a| !a.iter().all(|v| v.is_finite()))
        {
            return Err(GeometryError::NonFiniteAnchor { index });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

pub fn anchor_points(pose: &Pose, anchors: &AnchorSet) -> Vec<Vec3> {
    anchors
        .anchors
        .iter()
        .map(|k| pose.transform_point(k))
        .collect()
}

/// Sum over anchors of the Euclidean distance between their images.
pub fn pose_distance(a: &Pose, b: &Pose, anchors: &AnchorSet) -> f64 {
    anchors
        .anchors
        .iter()
        .map(|k| (a.transform_point(k) - b.transform_point(k)).norm())
        .sum()
}

/// `exp(-alpha * d(target, obj))`.
pub fn tracking_reward(target: &Pose, obj: &Pose, anchors: &AnchorSet, alpha: f64) -> f64 {
    debug_assert!(alpha > 0.0);
    (-alpha * pose_distance(target, obj, anchors)).exp()
}

/// Linear position, slerp orientation.
pub fn interp_pose(a: &Pose, b: &Pose, u: f64) -> Result<Pose, GeometryError> {
    if !(0.0..=1.0).contains(&u) {
        return Err(GeometryError::InterpOutOfRange(u));
    }
    Ok(Pose::new(
        a.position * (1.0 - u) + b.position * u,
        slerp(&a.orientation, &b.orientation, u),
    ))
}

/// Keeps the anchors parallel to a rotational symmetry axis. Anchors
/// orthogonal (or oblique) to the axis would penalize rotations the object
/// cannot distinguish.
pub fn symmetric_anchor_reduce(
    anchors: &AnchorSet,
    axis: &Vec3,
) -> Result<AnchorSet, GeometryError> {
    let n = axis.norm();
    if (n - 1.0).abs() > 1e-9 {
        return Err(GeometryError::AxisNotUnit(n));
    }
    let kept: Vec<Vec3> = anchors
        .anchors
        .iter()
        .filter(|k| {
            let len = k.norm();
            if len == 0.0 {
                // the origin is invariant under any rotation about an axis through it
                return true;
            }
            let cos = (k.dot(axis) / len).abs().min(1.0);
            cos.acos() <= PARALLEL_TOLERANCE_RAD
        })
        .copied()
        .collect();
    if kept.is_empty() {
        return Err(GeometryError::ReductionEmpty);
    }
    Ok(AnchorSet {
        anchors: kept,
        label: format!("{} (symmetric)", anchors.label),
    })
}
