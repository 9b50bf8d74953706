use h2s2r_core::geometry::{
    interp_pose, pose_distance, symmetric_anchor_reduce, tracking_reward, AnchorSet, Pose, Vec3,
    DEFAULT_ALPHA,
};
use h2s2r_core::pointcloud::{largest_component_filter, radius_components, PointCloud};
use h2s2r_core::trajectory::oa_warp;
use nalgebra::UnitQuaternion;
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = Pose> {
    (vec3(1.0), vec3(1.0), -3.1..3.1f64).prop_map(|(t, axis, angle)| {
        let q = if axis.norm() < 1e-3 {
            UnitQuaternion::identity()
        } else {
            UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
        };
        Pose::new(t, q)
    })
}

fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
    (a.position - b.position).norm() <= tol && a.angle_to(b) <= tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn distance_is_left_invariant(g in pose(), a in pose(), b in pose()) {
        let k = AnchorSet::default();
        let d = pose_distance(&a, &b, &k);
        let dg = pose_distance(&g.compose(&a), &g.compose(&b), &k);
        prop_assert!((d - dg).abs() <= 1e-9 * (1.0 + d));
        let r = tracking_reward(&a, &b, &k, DEFAULT_ALPHA);
        prop_assert!((r - tracking_reward(&g.compose(&a), &g.compose(&b), &k, DEFAULT_ALPHA)).abs() <= 1e-9);
        prop_assert!(r > 0.0 && r <= 1.0);
    }

    #[test]
    fn distance_is_a_pseudometric(a in pose(), b in pose(), c in pose()) {
        let k = AnchorSet::default();
        prop_assert!(pose_distance(&a, &a, &k).abs() <= 1e-12);
        prop_assert!((pose_distance(&a, &b, &k) - pose_distance(&b, &a, &k)).abs() <= 1e-12);
        prop_assert!(pose_distance(&a, &c, &k) <= pose_distance(&a, &b, &k) + pose_distance(&b, &c, &k) + 1e-12);
    }

    #[test]
    fn reduced_anchors_ignore_spin_about_the_axis(a in pose(), b in pose(), spin in -3.1..3.1f64) {
        let z = Vec3::z();
        let k = symmetric_anchor_reduce(&AnchorSet::default(), &z).unwrap();
        let spun = b.compose(&Pose::from_axis_angle(z, spin));
        let d = pose_distance(&a, &b, &k);
        prop_assert!((d - pose_distance(&a, &spun, &k)).abs() <= 1e-9);
    }

    #[test]
    fn compose_is_associative_and_inverse_cancels(a in pose(), b in pose(), c in pose()) {
        prop_assert!(close(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)), 1e-9));
        prop_assert!(close(&a.compose(&a.inverse()), &Pose::default(), 1e-9));
        prop_assert!(close(&a.inverse().compose(&a), &Pose::default(), 1e-9));
    }

    #[test]
    fn interpolation_hits_endpoints(a in pose(), b in pose(), u in 0.0..1.0f64) {
        prop_assert!(close(&interp_pose(&a, &b, 0.0).unwrap(), &a, 1e-9));
        prop_assert!(close(&interp_pose(&a, &b, 1.0).unwrap(), &b, 1e-9));
        let m = interp_pose(&a, &b, u).unwrap();
        // slerp angle splits in proportion to u
        let total = a.angle_to(&b);
        prop_assert!((a.angle_to(&m) - u * total).abs() <= 1e-7);
    }

    #[test]
    fn identity_warp_is_a_no_op(init in pose(), traj in prop::collection::vec(pose(), 1..20)) {
        let w = oa_warp(&traj, &init, &init);
        for (p, q) in traj.iter().zip(&w) {
            prop_assert!(close(p, q, 1e-12));
        }
    }

    #[test]
    fn warp_preserves_pose_relative_to_the_object(
        demo in pose(),
        new in pose(),
        traj in prop::collection::vec(pose(), 1..20),
    ) {
        let w = oa_warp(&traj, &demo, &new);
        prop_assert_eq!(w.len(), traj.len());
        for (p, q) in traj.iter().zip(&w) {
            let before = demo.inverse().compose(p);
            let after = new.inverse().compose(q);
            prop_assert!(close(&before, &after, 1e-9));
        }
    }
}

/// Union-find over every pair closer than `radius`.
fn brute_force_labels(points: &[Vec3], radius: f64) -> Vec<usize> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &[usize], mut x: usize) -> usize {
        while parent[x] != x {
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if (points[i] - points[j]).norm() <= radius {
                let (a, b) = (root(&parent, i), root(&parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    (0..n).map(|i| root(&parent, i)).collect()
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let n = a.len();
    (0..n).all(|i| (0..n).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn components_match_brute_force(points in prop::collection::vec(vec3(0.3), 1..120), radius in 0.02..0.12f64) {
        let mut uf = radius_components(&points, radius);
        let fast: Vec<usize> = (0..points.len()).map(|i| uf.find(i)).collect();
        let slow = brute_force_labels(&points, radius);
        prop_assert!(same_partition(&fast, &slow));

        let kept = largest_component_filter(&PointCloud::new(points.clone()), radius);
        let mut size = std::collections::HashMap::new();
        for &l in &slow {
            *size.entry(l).or_insert(0usize) += 1;
        }
        let best = size.values().copied().max().unwrap();
        prop_assert_eq!(kept.len(), best);
        // kept points form one component and keep input order
        let idx: Vec<usize> = kept.points.iter().map(|p| points.iter().position(|q| q == p).unwrap()).collect();
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().all(|&i| slow[i] == slow[idx[0]]));
    }
}
