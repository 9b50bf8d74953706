//! Built-in desk tasks: planar chain, collision geometry, object, scene, a
//! synthetic object demonstration and the matching hand keypoint sequence.

use std::f64::consts::FRAC_PI_2;

use super::config::{GeometrySpec, ObjectSpec, SceneSpec, SegmentSpec, Task};
use super::physics::{Pose2, V2};
use super::robot::{CapsuleSpec, PlanarRobot, Plane};
use crate::geometry::{Pose, Vec3};
use crate::kinematics::{
    ChainSpec, FrameNames, HandObservation, JointGroups, JointSpec, KinematicChain, LinkSpec,
    RetargetOffsets, Synergy,
};
use crate::trajectory::DemoTrajectory;

pub const DEMO_RATE_HZ: f64 = 30.0;

const L1: f64 = 0.30;
const L2: f64 = 0.25;
const L3: f64 = 0.10;
const PALM_OFFSET: f64 = 0.03;
const PALM_HALF_WIDTH: f64 = 0.04;
const PHALANX: [f64; 2] = [0.05, 0.04];
const CAPSULE_RADIUS: f64 = 0.008;
/// Palm centre to fingertip surface with straight fingers.
pub const FINGER_REACH: f64 = PHALANX[0] + PHALANX[1] + CAPSULE_RADIUS;

const PUCK_RADIUS: f64 = 0.022;
const PUCK_SIDES: usize = 16;
const PLATE_LENGTH: f64 = 0.16;
const PLATE_THICKNESS: f64 = 0.02;
const WALL_U: f64 = 0.5;
/// Final plate rotation, standing on its short edge.
const PIVOT_END: f64 = FRAC_PI_2;

fn revolute(name: &str, parent: &str, origin: Pose, lo: f64, hi: f64, vel: f64) -> LinkSpec {
    LinkSpec {
        name: name.into(),
        parent: Some(parent.into()),
        origin,
        joint: JointSpec::Revolute {
            axis: Vec3::z(),
            limits: [lo, hi],
            vel_limit: vel,
        },
    }
}

fn fixed(name: &str, parent: &str, origin: Pose) -> LinkSpec {
    LinkSpec {
        name: name.into(),
        parent: Some(parent.into()),
        origin,
        joint: JointSpec::Fixed,
    }
}

fn base_pose(task: Task) -> Pose2 {
    match task {
        Task::Push => Pose2::new(0.0, -0.15, 0.0),
        Task::Pivot => Pose2::new(0.0, 0.35, 0.0),
    }
}

/// Palm pose for the rest configuration, chosen near the object but clear of it.
fn rest_palm(task: Task) -> Pose2 {
    match task {
        Task::Push => Pose2::new(0.30, -0.25, FRAC_PI_2),
        Task::Pivot => Pose2::new(0.30, 0.20, -FRAC_PI_2),
    }
}

/// Three-joint arm carrying a palm with two two-joint fingers. All joints
/// rotate about the plane normal.
pub fn planar_chain_spec(task: Task, plane: Plane) -> ChainSpec {
    let base = plane.to_world(&base_pose(task));
    let t = |x: f64, y: f64| Pose::from_translation(x, y, 0.0);
    let links = vec![
        LinkSpec {
            name: "base".into(),
            parent: None,
            origin: base,
            joint: JointSpec::Fixed,
        },
        revolute("arm1", "base", Pose::identity(), -3.0, 3.0, 3.0),
        revolute("arm2", "arm1", t(L1, 0.0), -2.8, 2.8, 3.0),
        revolute("arm3", "arm2", t(L2, 0.0), -2.8, 2.8, 4.0),
        fixed("wrist", "arm3", t(L3, 0.0)),
        fixed("palm", "wrist", t(PALM_OFFSET, 0.0)),
        fixed("knuckle", "palm", Pose::identity()),
        revolute("upper_j0", "palm", t(0.0, PALM_HALF_WIDTH), -1.6, 0.3, 5.0),
        revolute("upper_j1", "upper_j0", t(PHALANX[0], 0.0), -1.6, 0.3, 5.0),
        fixed("upper_tip", "upper_j1", t(PHALANX[1], 0.0)),
        revolute("lower_j0", "palm", t(0.0, -PALM_HALF_WIDTH), -0.3, 1.6, 5.0),
        revolute("lower_j1", "lower_j0", t(PHALANX[0], 0.0), -0.3, 1.6, 5.0),
        fixed("lower_tip", "lower_j1", t(PHALANX[1], 0.0)),
    ];
    let mut spec = ChainSpec {
        links,
        frames: FrameNames {
            wrist: "wrist".into(),
            knuckle: "knuckle".into(),
            palm: "palm".into(),
            fingertips: vec!["upper_tip".into(), "lower_tip".into()],
        },
        groups: JointGroups {
            arm: vec![0, 1, 2],
            fingers: vec![vec![3, 4], vec![5, 6]],
        },
        rest: None,
        offsets: RetargetOffsets::default(),
        synergy: Some(Synergy {
            open: vec![0.0; 4],
            closed: vec![-0.6, -0.6, 0.6, 0.6],
        }),
        notes: Some(
            "Planar hand: palm normal is +x of the palm frame; fingers close toward the palm axis."
                .into(),
        ),
    };
    let chain = KinematicChain::from_spec(spec.clone()).expect("built-in chain is valid");
    let robot =
        PlanarRobot::new(&chain, plane, &geometry().capsules).expect("built-in chain is planar");
    let rest = robot
        .reach_palm(&[-0.6, 1.4, 0.8, 0.0, 0.0, 0.0, 0.0], &rest_palm(task))
        .expect("rest palm pose is reachable");
    spec.rest = Some(rest);
    spec
}

pub fn geometry() -> GeometrySpec {
    let cap = |link: &str, a: [f64; 2], b: [f64; 2]| CapsuleSpec {
        link: link.into(),
        a,
        b,
        radius: CAPSULE_RADIUS,
    };
    GeometrySpec {
        capsules: vec![
            cap("palm", [0.0, -PALM_HALF_WIDTH], [0.0, PALM_HALF_WIDTH]),
            cap("upper_j0", [0.0, 0.0], [PHALANX[0], 0.0]),
            cap("upper_j1", [0.0, 0.0], [PHALANX[1], 0.0]),
            cap("lower_j0", [0.0, 0.0], [PHALANX[0], 0.0]),
            cap("lower_j1", [0.0, 0.0], [PHALANX[1], 0.0]),
        ],
    }
}

pub fn object(task: Task) -> ObjectSpec {
    match task {
        Task::Push => ObjectSpec {
            vertices: (0..PUCK_SIDES)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / PUCK_SIDES as f64;
                    [PUCK_RADIUS * a.cos(), PUCK_RADIUS * a.sin()]
                })
                .collect(),
            mass: 0.2,
            friction: Some(0.8),
            inertia: None,
        },
        Task::Pivot => {
            let (hl, ht) = (PLATE_LENGTH / 2.0, PLATE_THICKNESS / 2.0);
            ObjectSpec {
                vertices: vec![[-hl, -ht], [hl, -ht], [hl, ht], [-hl, ht]],
                mass: 0.1,
                friction: Some(0.8),
                inertia: None,
            }
        }
    }
}

pub fn scene(task: Task) -> SceneSpec {
    match task {
        Task::Push => SceneSpec { segments: vec![] },
        Task::Pivot => SceneSpec {
            segments: vec![
                SegmentSpec {
                    a: [-1.0, 0.0],
                    b: [WALL_U, 0.0],
                },
                SegmentSpec {
                    a: [WALL_U, 0.0],
                    b: [WALL_U, 0.6],
                },
            ],
        },
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

const STILL_BEFORE: usize = 40;
const STILL_AFTER: usize = 15;

/// Planar object and palm poses per demo frame.
fn scripted(task: Task) -> Vec<(Pose2, Pose2)> {
    let mut out = Vec::new();
    match task {
        Task::Push => {
            let moving = 90;
            let start = V2::new(0.35, -0.12);
            let travel = 0.25;
            let back = PUCK_RADIUS + CAPSULE_RADIUS + 0.012;
            for k in 0..STILL_BEFORE + moving + STILL_AFTER {
                let u = smoothstep((k as f64 - STILL_BEFORE as f64) / moving as f64);
                let c = start + V2::new(0.0, travel * u);
                out.push((
                    Pose2::new(c.x, c.y, 0.0),
                    Pose2::new(c.x, c.y - back, FRAC_PI_2),
                ));
            }
        }
        Task::Pivot => {
            // The plate rests flush against the wall. The lower fingertip
            // presses the near end and drags it up; the far top corner slides
            // down the wall and the far bottom corner away from it until the
            // plate stands on its short edge.
            let lift = 60;
            let (l, t) = (PLATE_LENGTH, PLATE_THICKNESS);
            let tip_from_palm = V2::new(PHALANX[0] + PHALANX[1], -PALM_HALF_WIDTH);
            let press_frames = 8;
            for k in 0..STILL_BEFORE + press_frames + lift + STILL_AFTER {
                let k = k as f64 - STILL_BEFORE as f64;
                let phi = PIVOT_END * smoothstep((k - press_frames as f64) / lift as f64);
                // clear of the plate at rest, then pressing 3 mm before lifting
                let press =
                    CAPSULE_RADIUS + 0.002 - 0.005 * (k / press_frames as f64).clamp(0.0, 1.0);
                let (s, c) = phi.sin_cos();
                let centre = V2::new(
                    WALL_U - 0.5 * t * s - 0.5 * l * c,
                    0.5 * l * s + 0.5 * t * c,
                );
                let near = V2::new(WALL_U - t * s - l * c, l * s);
                let along = V2::new(c, -s);
                let across = V2::new(s, c);
                let tip = near - along * press + across * (0.5 * t);
                out.push((
                    Pose2::new(centre.x, centre.y, -phi),
                    Pose2::new(tip.x - tip_from_palm.x, tip.y - tip_from_palm.y, 0.0),
                ));
            }
        }
    }
    out
}

pub fn demo(task: Task, plane: Plane) -> DemoTrajectory {
    let poses = scripted(task)
        .iter()
        .map(|(o, _)| plane.to_world(o))
        .collect();
    DemoTrajectory::from_poses(poses, DEMO_RATE_HZ).expect("scripted demo is valid")
}

/// Hand keypoints per demo frame, generated from the scripted palm path with open fingers.
pub fn hand(task: Task, plane: Plane) -> Vec<HandObservation> {
    let spec = planar_chain_spec(task, plane);
    let chain = KinematicChain::from_spec(spec).expect("built-in chain is valid");
    let robot =
        PlanarRobot::new(&chain, plane, &geometry().capsules).expect("built-in chain is planar");
    let mut q = chain.rest.clone();
    for (k, &j) in robot.fingers.iter().enumerate() {
        q[j] = robot.synergy_open[k];
    }
    let poses = robot.link_poses(&q);
    let palm = poses[robot.palm];
    let rel: Vec<V2> = robot
        .fingertips
        .iter()
        .map(|&f| palm.inverse().apply(&poses[f].p))
        .collect();
    let knuckle_rel = palm.inverse().compose(&poses[chain.knuckle]);
    scripted(task)
        .iter()
        .enumerate()
        .map(|(k, (_, p))| HandObservation {
            t: k as i64,
            knuckle_pose: plane.to_world(&p.compose(&knuckle_rel)),
            wrist_orientation: None,
            fingertips: rel.iter().map(|r| plane.point(&p.apply(r))).collect(),
            valid: true,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_in_assets_are_consistent() {
        for (task, plane) in [
            (Task::Push, Plane::Horizontal),
            (Task::Pivot, Plane::Vertical),
        ] {
            let spec = planar_chain_spec(task, plane);
            let chain = KinematicChain::from_spec(spec).unwrap();
            let robot = PlanarRobot::new(&chain, plane, &geometry().capsules).unwrap();
            // the planar model and the 3-D chain agree
            let q = [0.3, -0.7, 1.1, -0.2, -0.4, 0.5, 0.1];
            let p2 = robot.link_poses(&q);
            let p3 = chain.link_poses(&q);
            for (a, b) in p2.iter().zip(&p3) {
                let w = plane.to_world(a);
                assert!((w.position - b.position).norm() < 1e-12);
                assert!(w.angle_to(b) < 1e-7);
            }
            let d = demo(task, plane);
            let h = hand(task, plane);
            assert_eq!(d.len(), h.len());
            assert!(h.iter().all(|o| o.is_usable()));
            // every scripted palm pose is reachable
            let mut q = chain.rest.clone();
            for (_, palm) in scripted(task) {
                q = robot.reach_palm(&q, &palm).expect("reachable palm");
            }
        }
    }
}
