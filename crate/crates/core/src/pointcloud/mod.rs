//! Depth alignment: masked depth to points, radius-graph component
//! filtering and point-to-point ICP.

mod icp;
pub mod io;
mod kdtree;
mod union_find;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

pub use icp::{icp_register, rigid_fit, IcpResult};
pub use kdtree::KdTree;
pub use union_find::UnionFind;

/// Neighborhood radius for the component filter, meters.
pub const DEFAULT_COMPONENT_RADIUS: f64 = 0.05;

#[derive(Debug, Error)]
pub enum PointCloudError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("depth is {dw}x{dh} but mask is {mw}x{mh}")]
    DimensionMismatch {
        dw: usize,
        dh: usize,
        mw: usize,
        mh: usize,
    },
    #[error("buffer holds {len} values, expected {expected}")]
    BufferSize { len: usize, expected: usize },
    #[error("intrinsics must be positive focal lengths")]
    BadIntrinsics,
    #[error("degenerate cloud: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Row-major 16-bit depth in millimeters; 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<u16>,
    pub intrinsics: Intrinsics,
}

impl DepthFrame {
    pub fn new(
        width: usize,
        height: usize,
        depth: Vec<u16>,
        intrinsics: Intrinsics,
    ) -> Result<Self, PointCloudError> {
        if depth.len() != width * height {
            return Err(PointCloudError::BufferSize {
                len: depth.len(),
                expected: width * height,
            });
        }
        if !(intrinsics.fx > 0.0 && intrinsics.fy > 0.0) {
            return Err(PointCloudError::BadIntrinsics);
        }
        Ok(Self {
            width,
            height,
            depth,
            intrinsics,
        })
    }
}

/// Row-major 8-bit selection mask; nonzero pixels are selected.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskFrame {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<u8>,
}

impl MaskFrame {
    pub fn new(width: usize, height: usize, mask: Vec<u8>) -> Result<Self, PointCloudError> {
        if mask.len() != width * height {
            return Err(PointCloudError::BufferSize {
                len: mask.len(),
                expected: width * height,
            });
        }
        Ok(Self {
            width,
            height,
            mask,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &crate::geometry::Pose) -> PointCloud {
        PointCloud::new(
            self.points
                .iter()
                .map(|p| pose.transform_point(p))
                .collect(),
        )
    }
}

/// Back-projects every selected pixel with nonzero depth through the pinhole model.
pub fn depth_to_points(
    depth: &DepthFrame,
    mask: &MaskFrame,
) -> Result<PointCloud, PointCloudError> {
    if depth.width != mask.width || depth.height != mask.height {
        return Err(PointCloudError::DimensionMismatch {
            dw: depth.width,
            dh: depth.height,
            mw: mask.width,
            mh: mask.height,
        });
    }
    let k = &depth.intrinsics;
    let mut points = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let i = v * depth.width + u;
            let d = depth.depth[i];
            if mask.mask[i] == 0 || d == 0 {
                continue;
            }
            let z = d as f64 / 1000.0;
            points.push(Vec3::new(
                z * (u as f64 - k.cx) / k.fx,
                z * (v as f64 - k.cy) / k.fy,
                z,
            ));
        }
    }
    Ok(PointCloud::new(points))
}

/// Connected-component labels of the graph linking points within `radius`.
pub fn radius_components(points: &[Vec3], radius: f64) -> UnionFind {
    let tree = KdTree::build(points);
    let mut uf = UnionFind::new(points.len());
    for (i, p) in points.iter().enumerate() {
        for j in tree.within_radius(p, radius) {
            if j > i {
                uf.union(i, j);
            }
        }
    }
    uf
}

/// Keeps the largest connected component of the radius graph. Ties go to the
/// component containing the lowest point index; input order is preserved.
pub fn largest_component_filter(cloud: &PointCloud, radius: f64) -> PointCloud {
    assert!(radius > 0.0, "radius must be positive");
    if cloud.is_empty() {
        return PointCloud::default();
    }
    let mut uf = radius_components(&cloud.points, radius);
    let n = cloud.len();
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    let mut size = vec![0usize; n];
    let mut first = vec![usize::MAX; n];
    for (i, &r) in roots.iter().enumerate() {
        size[r] += 1;
        first[r] = first[r].min(i);
    }
    let best = (0..n)
        .filter(|&r| size[r] > 0)
        .min_by(|&a, &b| size[b].cmp(&size[a]).then(first[a].cmp(&first[b])))
        .unwrap();
    PointCloud::new(
        cloud
            .points
            .iter()
            .zip(&roots)
            .filter(|(_, &r)| r == best)
            .map(|(p, _)| *p)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> Intrinsics {
        Intrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 2.0,
            cy: 1.0,
        }
    }

    #[test]
    fn pinhole_examples() {
        let (w, h) = (4 + 500, 3);
        let mut depth = vec![0u16; w * h];
        let mut mask = vec![0u8; w * h];
        depth[w + 2] = 1000; // (cx, cy)
        mask[w + 2] = 1;
        depth[w + 502] = 2000; // (cx + fx, cy)
        mask[w + 502] = 255;
        depth[0] = 700; // unmasked
        mask[1] = 1; // masked, zero depth
        let df = DepthFrame::new(w, h, depth, intr()).unwrap();
        let mf = MaskFrame::new(w, h, mask).unwrap();
        let cloud = depth_to_points(&df, &mf).unwrap();
        assert_eq!(
            cloud.points,
            vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(2.0, 0.0, 2.0)]
        );

        let empty = MaskFrame::new(w, h, vec![0; w * h]).unwrap();
        assert!(depth_to_points(&df, &empty).unwrap().is_empty());
        let small = MaskFrame::new(2, 2, vec![1; 4]).unwrap();
        assert!(matches!(
            depth_to_points(&df, &small),
            Err(PointCloudError::DimensionMismatch { .. })
        ));
        assert!(DepthFrame::new(2, 2, vec![0; 3], intr()).is_err());
    }

    #[test]
    fn filter_edge_cases() {
        let one = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0)]);
        assert_eq!(largest_component_filter(&one, 0.05), one);
        assert!(largest_component_filter(&PointCloud::default(), 0.05).is_empty());
        // two equal clusters; the second one listed first in index order wins
        let pts = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.01, 0.0, 0.0),
            Vec3::new(1.01, 0.0, 0.0),
        ];
        let out = largest_component_filter(&PointCloud::new(pts.clone()), 0.05);
        assert_eq!(out.points, vec![pts[0], pts[3]]);
    }
}
