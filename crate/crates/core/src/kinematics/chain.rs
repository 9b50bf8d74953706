use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::KinematicsError;
use crate::geometry::{Pose, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JointSpec {
    Revolute {
        axis: Vec3,
        limits: [f64; 2],
        vel_limit: f64,
    },
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub name: String,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub origin: Pose,
    pub joint: JointSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameNames {
    pub wrist: String,
    pub knuckle: String,
    pub palm: String,
    pub fingertips: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointGroups {
    pub arm: Vec<usize>,
    pub fingers: Vec<Vec<usize>>,
}

/// Corrections applied to the observed knuckle pose before arm IK.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetargetOffsets {
    /// Translation expressed in the knuckle frame, meters.
    #[serde(default = "Vec3::zeros")]
    pub position: Vec3,
    /// Rotation `[qw, qx, qy, qz]` right-multiplied onto the target orientation.
    #[serde(default = "identity_quat")]
    pub rotation: [f64; 4],
    /// Take the target orientation from the wrist rather than the knuckle.
    #[serde(default)]
    pub use_wrist_orientation: bool,
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl Default for RetargetOffsets {
    fn default() -> Self {
        Self {
            position: Vec3::zeros(),
            rotation: identity_quat(),
            use_wrist_orientation: false,
        }
    }
}

impl RetargetOffsets {
    pub fn rotation_quat(&self) -> UnitQuaternion<f64> {
        let r = self.rotation;
        UnitQuaternion::new_normalize(Quaternion::new(r[0], r[1], r[2], r[3]))
    }
}

/// Linear open-to-closed map over the finger joints (in `groups.fingers` order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synergy {
    pub open: Vec<f64>,
    pub closed: Vec<f64>,
}

/// On-disk chain description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub links: Vec<LinkSpec>,
    pub frames: FrameNames,
    pub groups: JointGroups,
    #[serde(default)]
    pub rest: Option<Vec<f64>>,
    #[serde(default)]
    pub offsets: RetargetOffsets,
    #[serde(default)]
    pub synergy: Option<Synergy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub axis: Vec3,
    pub lo: f64,
    pub hi: f64,
    pub vel_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    pub origin: Pose,
    pub joint: Option<usize>,
}

/// Kinematic tree with named frames and joint groups. Links are stored in
/// topological order (parents before children).
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub wrist: usize,
    pub knuckle: usize,
    pub palm: usize,
    pub fingertips: Vec<usize>,
    pub groups: JointGroups,
    pub rest: Vec<f64>,
    pub offsets: RetargetOffsets,
    pub synergy: Option<Synergy>,
    spec: ChainSpec,
}

impl KinematicChain {
    pub fn from_spec(spec: ChainSpec) -> Result<Self, KinematicsError> {
        let bad = |m: String| KinematicsError::InvalidChain(m);
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, l) in spec.links.iter().enumerate() {
            if index.insert(l.name.as_str(), i).is_some() {
                return Err(bad(format!("duplicate link `{}`", l.name)));
            }
        }
        let roots: Vec<&LinkSpec> = spec.links.iter().filter(|l| l.parent.is_none()).collect();
        if roots.len() != 1 {
            return Err(bad(format!(
                "expected exactly one root link, found {}",
                roots.len()
            )));
        }
        for l in &spec.links {
            if let Some(p) = &l.parent {
                if !index.contains_key(p.as_str()) {
                    return Err(bad(format!("link `{}` has unknown parent `{p}`", l.name)));
                }
            }
        }
        // joint indices follow file order of revolute links
        let mut joint_of = vec![None; spec.links.len()];
        let mut joints = Vec::new();
        for (i, l) in spec.links.iter().enumerate() {
            if let JointSpec::Revolute {
                axis,
                limits,
                vel_limit,
            } = &l.joint
            {
                let n = axis.norm();
                if !(n > 0.0) {
                    return Err(bad(format!("link `{}` has a zero joint axis", l.name)));
                }
                if !(limits[0] < limits[1]) {
                    return Err(bad(format!(
                        "link `{}` limits must satisfy lo < hi",
                        l.name
                    )));
                }
                if !(*vel_limit > 0.0) {
                    return Err(bad(format!(
                        "link `{}` velocity limit must be positive",
                        l.name
                    )));
                }
                joint_of[i] = Some(joints.len());
                joints.push(Joint {
                    name: l.name.clone(),
                    axis: axis / n,
                    lo: limits[0],
                    hi: limits[1],
                    vel_limit: *vel_limit,
                });
            }
        }
        // topological order by repeated sweeps; a leftover link means a cycle
        let mut order: Vec<usize> = Vec::with_capacity(spec.links.len());
        let mut placed = vec![usize::MAX; spec.links.len()];
        while order.len() < spec.links.len() {
            let before = order.len();
            for (i, l) in spec.links.iter().enumerate() {
                if placed[i] != usize::MAX {
                    continue;
                }
                let ready = match &l.parent {
                    None => true,
                    Some(p) => placed[index[p.as_str()]] != usize::MAX,
                };
                if ready {
                    placed[i] = order.len();
                    order.push(i);
                }
            }
            if order.len() == before {
                return Err(bad("link graph contains a cycle".into()));
            }
        }
        let links: Vec<Link> = order
            .iter()
            .map(|&i| {
                let l = &spec.links[i];
                Link {
                    name: l.name.clone(),
                    parent: l.parent.as_ref().map(|p| placed[index[p.as_str()]]),
                    origin: l.origin,
                    joint: joint_of[i],
                }
            })
            .collect();
        let find = |name: &str| {
            links
                .iter()
                .position(|l| l.name == name)
                .ok_or_else(|| bad(format!("frame refers to unknown link `{name}`")))
        };
        let wrist = find(&spec.frames.wrist)?;
        let knuckle = find(&spec.frames.knuckle)?;
        let palm = find(&spec.frames.palm)?;
        let fingertips = spec
            .frames
            .fingertips
            .iter()
            .map(|n| find(n))
            .collect::<Result<Vec<_>, _>>()?;
        let nj = joints.len();
        for &j in spec
            .groups
            .arm
            .iter()
            .chain(spec.groups.fingers.iter().flatten())
        {
            if j >= nj {
                return Err(bad(format!(
                    "group joint index {j} out of range ({nj} joints)"
                )));
            }
        }
        if spec.groups.fingers.len() != fingertips.len() {
            return Err(bad(format!(
                "{} finger groups but {} fingertip frames",
                spec.groups.fingers.len(),
                fingertips.len()
            )));
        }
        let rest = match &spec.rest {
            Some(r) if r.len() != nj => {
                return Err(bad(format!("rest has {} entries for {nj} joints", r.len())));
            }
            Some(r) => r.clone(),
            None => joints.iter().map(|j| 0f64.clamp(j.lo, j.hi)).collect(),
        };
        if let Some(s) = &spec.synergy {
            let nf: usize = spec.groups.fingers.iter().map(|f| f.len()).sum();
            if s.open.len() != nf || s.closed.len() != nf {
                return Err(bad(format!("synergy must list {nf} finger joint values")));
            }
        }
        Ok(Self {
            links,
            joints,
            wrist,
            knuckle,
            palm,
            fingertips,
            groups: spec.groups.clone(),
            rest,
            offsets: spec.offsets.clone(),
            synergy: spec.synergy.clone(),
            spec,
        })
    }

    pub fn load(path: &Path) -> Result<Self, KinematicsError> {
        let text = std::fs::read_to_string(path).map_err(|e| KinematicsError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let spec: ChainSpec = serde_json::from_str(&text).map_err(|e| KinematicsError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_spec(spec)
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn save(&self, path: &Path) -> Result<(), KinematicsError> {
        let text = serde_json::to_string_pretty(&self.spec).expect("chain spec serializes");
        std::fs::write(path, text).map_err(|e| KinematicsError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joint_names(&self) -> Vec<String> {
        self.joints.iter().map(|j| j.name.clone()).collect()
    }

    pub fn velocity_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.vel_limit).collect()
    }

    pub fn finger_joints(&self) -> Vec<usize> {
        self.groups.fingers.iter().flatten().copied().collect()
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    /// Resolves a frame alias (`wrist`, `palm`, `knuckle`, `fingertipN`) or link name.
    pub fn frame_index(&self, name: &str) -> Option<usize> {
        match name {
            "wrist" => Some(self.wrist),
            "palm" => Some(self.palm),
            "knuckle" => Some(self.knuckle),
            _ => name
                .strip_prefix("fingertip")
                .and_then(|i| i.parse::<usize>().ok())
                .and_then(|i| self.fingertips.get(i).copied())
                .or_else(|| self.link_index(name)),
        }
    }

    pub fn clamp(&self, q: &mut [f64]) -> bool {
        let mut clamped = false;
        for (v, j) in q.iter_mut().zip(&self.joints) {
            let c = v.clamp(j.lo, j.hi);
            if c != *v {
                clamped = true;
                *v = c;
            }
        }
        clamped
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(&self.joints)
            .all(|(v, j)| *v >= j.lo && *v <= j.hi)
    }

    /// World pose of every link, in storage order. `q` must already be within limits.
    pub fn link_poses(&self, q: &[f64]) -> Vec<Pose> {
        debug_assert_eq!(q.len(), self.dof());
        let mut poses: Vec<Pose> = Vec::with_capacity(self.links.len());
        for link in &self.links {
            let mut local = link.origin;
            if let Some(j) = link.joint {
                let joint = &self.joints[j];
                let rot = UnitQuaternion::from_axis_angle(
                    &nalgebra::Unit::new_unchecked(joint.axis),
                    q[j],
                );
                local = local.compose(&Pose::from_rotation(rot));
            }
            let pose = match link.parent {
                Some(p) => poses[p].compose(&local),
                None => local,
            };
            poses.push(pose);
        }
        poses
    }

    /// Indices of joints between the root and `link` (inclusive), root first.
    pub fn joints_on_path(&self, link: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = Some(link);
        while let Some(l) = cur {
            if let Some(j) = self.links[l].joint {
                out.push(j);
            }
            cur = self.links[l].parent;
        }
        out.reverse();
        out
    }

    /// Link index owning each joint.
    pub fn joint_link(&self, joint: usize) -> usize {
        self.links
            .iter()
            .position(|l| l.joint == Some(joint))
            .expect("every joint belongs to a link")
    }

    /// Geometric Jacobian columns `(linear, angular)` of `link`'s origin with
    /// respect to each joint in `joints`. Joints not on the path give zero columns.
    pub fn jacobian(&self, poses: &[Pose], link: usize, joints: &[usize]) -> Vec<(Vec3, Vec3)> {
        let path = self.joints_on_path(link);
        let p = poses[link].position;
        joints
            .iter()
            .map(|&j| {
                if !path.contains(&j) {
                    return (Vec3::zeros(), Vec3::zeros());
                }
                let jl = self.joint_link(j);
                let axis = poses[jl].orientation * self.joints[j].axis;
                (axis.cross(&(p - poses[jl].position)), axis)
            })
            .collect()
    }
}

/// Output of forward kinematics.
#[derive(Debug, Clone, PartialEq)]
pub struct FkResult {
    pub frames: BTreeMap<String, Pose>,
    /// Set when `q` violated a joint limit and was clamped first.
    pub clamped: bool,
}

/// World pose of every link plus the `wrist`, `palm`, `knuckle` and
/// `fingertipN` aliases.
pub fn fk(chain: &KinematicChain, q: &[f64]) -> Result<FkResult, KinematicsError> {
    if q.len() != chain.dof() {
        return Err(KinematicsError::DimensionMismatch {
            expected: chain.dof(),
            got: q.len(),
        });
    }
    let mut q = q.to_vec();
    let clamped = chain.clamp(&mut q);
    let poses = chain.link_poses(&q);
    let mut frames: BTreeMap<String, Pose> = chain
        .links
        .iter()
        .zip(&poses)
        .map(|(l, p)| (l.name.clone(), *p))
        .collect();
    frames.insert("wrist".into(), poses[chain.wrist]);
    frames.insert("palm".into(), poses[chain.palm]);
    frames.insert("knuckle".into(), poses[chain.knuckle]);
    for (i, &f) in chain.fingertips.iter().enumerate() {
        frames.insert(format!("fingertip{i}"), poses[f]);
    }
    Ok(FkResult { frames, clamped })
}
