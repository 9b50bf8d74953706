//! Point-to-point ICP with a closed-form SVD rigid fit.

use nalgebra::{Matrix3, SymmetricEigen, UnitQuaternion};

use super::{KdTree, PointCloud, PointCloudError};
use crate::geometry::{Pose, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Maps source points into the destination frame.
    pub pose: Pose,
    pub rmse: f64,
    pub iterations: usize,
    /// RMSE after each correspondence step, starting with the initial guess.
    pub rmse_history: Vec<f64>,
}

fn centroid(points: &[Vec3]) -> Vec3 {
    let mut c = Vec3::zeros();
    for p in points {
        c += p;
    }
    c / points.len() as f64
}

fn check_spread(points: &[Vec3], which: &str) -> Result<(), PointCloudError> {
    if points.len() < 3 {
        return Err(PointCloudError::Degenerate(format!(
            "{which} cloud has {} points, need 3",
            points.len()
        )));
    }
    let c = centroid(points);
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - c;
        scatter += d * d.transpose();
    }
    let eig = SymmetricEigen::new(scatter).eigenvalues;
    let mut ev: Vec<f64> = eig.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(PointCloudError::Degenerate(format!(
            "{which} cloud is collinear"
        )));
    }
    Ok(())
}

/// Least-squares rigid transform taking `src[i]` onto `dst[i]`, with the
/// reflection case folded back into a proper rotation.
pub fn rigid_fit(src: &[Vec3], dst: &[Vec3]) -> Pose {
    assert_eq!(src.len(), dst.len());
    let cs = centroid(src);
    let cd = centroid(dst);
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let v = svd.v_t.unwrap().transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = v * fix * u.transpose();
    let rot = UnitQuaternion::from_matrix(&r);
    let t = cd - rot * cs;
    Pose::new(t, rot)
}

struct Matches {
    targets: Vec<Vec3>,
    rmse: f64,
}

fn correspond(src: &[Vec3], tree: &KdTree, dst: &[Vec3], pose: &Pose) -> Matches {
    let mut targets = Vec::with_capacity(src.len());
    let mut sq = 0.0;
    for p in src {
        let (j, d2) = tree
            .nearest(&pose.transform_point(p))
            .expect("non-empty destination");
        targets.push(dst[j]);
        sq += d2;
    }
    Matches {
        targets,
        rmse: (sq / src.len() as f64).sqrt(),
    }
}

/// Registers `src` onto `dst` starting from `init`. Stops once an iteration
/// improves RMSE by less than `tol` or after `max_iters` fits.
pub fn icp_register(
    src: &PointCloud,
    dst: &PointCloud,
    init: &Pose,
    max_iters: usize,
    tol: f64,
) -> Result<IcpResult, PointCloudError> {
    check_spread(&src.points, "source")?;
    check_spread(&dst.points, "destination")?;
    let tree = KdTree::build(&dst.points);
    let mut pose = *init;
    let mut matches = correspond(&src.points, &tree, &dst.points, &pose);
    let mut history = vec![matches.rmse];
    let mut iterations = 0;
    while iterations < max_iters {
        let candidate = rigid_fit(&src.points, &matches.targets);
        let next = correspond(&src.points, &tree, &dst.points, &candidate);
        iterations += 1;
        if next.rmse > matches.rmse {
            // only round-off can make a fit worse; keep the better pose
            break;
        }
        let improvement = matches.rmse - next.rmse;
        pose = candidate;
        matches = next;
        history.push(matches.rmse);
        if improvement < tol {
            break;
        }
    }
    Ok(IcpResult {
        pose,
        rmse: matches.rmse,
        iterations,
        rmse_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rigid_fit_recovers_exact_transform() {
        let src = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            Vec3::new(0.0, 0.0, 3.0),
        ];
        let g = Pose::from_axis_angle(Vec3::new(1.0, 2.0, 0.5), 0.8)
            .with_position(Vec3::new(0.1, -0.2, 0.3));
        let dst: Vec<Vec3> = src.iter().map(|p| g.transform_point(p)).collect();
        let fit = rigid_fit(&src, &dst);
        assert!((fit.position - g.position).norm() < 1e-12);
        assert!(fit.angle_to(&g) < 1e-7);
    }

    #[test]
    fn identity_registration() {
        let pts: Vec<Vec3> = (0..50)
            .map(|i| {
                let f = i as f64;
                Vec3::new((f * 0.37).sin(), (f * 0.91).cos(), f * 0.01)
            })
            .collect();
        let cloud = PointCloud::new(pts);
        let res = icp_register(&cloud, &cloud, &Pose::identity(), 30, 1e-10).unwrap();
        assert!(res.rmse < 1e-12);
        assert!(res.pose.position.norm() < 1e-12);
    }

    #[test]
    fn collinear_is_degenerate() {
        let line = PointCloud::new((0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect());
        assert!(matches!(
            icp_register(&line, &line, &Pose::identity(), 10, 1e-9),
            Err(PointCloudError::Degenerate(_))
        ));
        let two = PointCloud::new(vec![Vec3::zeros(), Vec3::x()]);
        assert!(icp_register(&two, &two, &Pose::identity(), 10, 1e-9).is_err());
    }
}
