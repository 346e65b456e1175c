//! Point-cloud field-of-view overlap.
//!
//! Each camera sees the subset of cloud points that project inside its image
//! through a pinhole model. Two images are as similar as the IoU of those
//! index sets. No occlusion test is applied.
//!
//! Conventions: poses are camera-to-world, quaternions are Hamilton and
//! stored `(w, x, y, z)`. The camera looks along its +z axis with +x right
//! and +y down in the image.

use log::warn;
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom2d::{normalize_heading, CameraPose2D};
use crate::mining::GradedPairSet;

/// Tolerance on `|‖q‖ - 1|` for rotation quaternions.
pub const QUATERNION_NORM_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose6DOF {
    pub id: String,
    pub translation: [f64; 3],
    /// `(w, x, y, z)`, camera-to-world.
    pub rotation: [f64; 4],
}

impl Pose6DOF {
    pub fn new(id: impl Into<String>, translation: [f64; 3], rotation: [f64; 4]) -> Result<Self> {
        let p = Self {
            id: id.into(),
            translation,
            rotation,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self
            .translation
            .iter()
            .chain(self.rotation.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid(format!(
                "pose '{}' has non-finite fields",
                self.id
            )));
        }
        let norm = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOL {
            return Err(Error::invalid(format!(
                "pose '{}' rotation is not a unit quaternion (norm {norm})",
                self.id
            )));
        }
        Ok(())
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z))
    }

    /// Rotation about the world vertical axis, math convention (radians,
    /// counter-clockwise from +x).
    pub fn yaw(&self) -> f64 {
        let [w, x, y, z] = self.rotation;
        (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z))
    }

    /// Horizontal projection: position `(x, y)` and the compass heading of
    /// the pose's yaw.
    pub fn planar_pose(&self) -> Result<CameraPose2D> {
        self.validate()?;
        Ok(CameraPose2D {
            id: self.id.clone(),
            t0: self.translation[0],
            t1: self.translation[1],
            heading_deg: normalize_heading(90.0 - self.yaw().to_degrees()),
        })
    }

    /// Maps a world point into the camera frame.
    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let t = Vector3::from(self.translation);
        let c = self
            .unit_quaternion()
            .inverse_transform_vector(&(Vector3::from(p) - t));
        [c.x, c.y, c.z]
    }
}

/// Geodesic angle between two rotations, `2 acos |<q1, q2>|`, in degrees.
pub fn rotation_angle_deg(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    (2.0 * dot.abs().min(1.0).acos()).to_degrees()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("principal point must be finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        Ok(())
    }

    /// Pixel coordinates of a camera-frame point, `None` unless `z > 0`.
    pub fn project(&self, c: [f64; 3]) -> Option<[f64; 2]> {
        if c[2] <= 0.0 {
            return None;
        }
        Some([
            self.fx * c[0] / c[2] + self.cx,
            self.fy * c[1] / c[2] + self.cy,
        ])
    }

    /// Half-open image bounds `[0, width) x [0, height)`.
    pub fn in_image(&self, uv: [f64; 2]) -> bool {
        uv[0] >= 0.0 && uv[0] < self.width as f64 && uv[1] >= 0.0 && uv[1] < self.height as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        let c = Self { points };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        if !self.points.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::invalid("point cloud has non-finite coordinates"));
        }
        Ok(())
    }
}

/// Sorted, deduplicated indices of visible cloud points.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VisibleSet {
    indices: Vec<u32>,
}

impl VisibleSet {
    pub fn from_indices(mut indices: Vec<u32>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn intersection_len(&self, other: &VisibleSet) -> usize {
        let (a, b) = (&self.indices, &other.indices);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    /// `|A ∩ B| / |A ∪ B|`, zero when both are empty.
    pub fn iou(&self, other: &VisibleSet) -> f64 {
        let inter = self.intersection_len(other);
        let union = self.len() + other.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

pub fn visible_points(
    cloud: &PointCloud,
    pose: &Pose6DOF,
    intr: &CameraIntrinsics,
) -> Result<VisibleSet> {
    cloud.validate()?;
    pose.validate()?;
    intr.validate()?;
    let rot = pose.unit_quaternion();
    let t = Vector3::from(pose.translation);
    let indices = cloud
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let c = rot.inverse_transform_vector(&(Vector3::from(*p) - t));
            intr.project([c.x, c.y, c.z])
                .filter(|uv| intr.in_image(*uv))
                .map(|_| i as u32)
        })
        .collect();
    // enumeration order is already ascending and unique
    Ok(VisibleSet { indices })
}

fn set_similarity(a: &VisibleSet, b: &VisibleSet, same_pose: bool, id: &str) -> f64 {
    if a.is_empty() && same_pose {
        warn!("pose '{id}' sees no cloud points; self-similarity defined as 0");
    }
    a.iou(b)
}

pub fn fov3d_similarity(
    cloud: &PointCloud,
    pose_a: &Pose6DOF,
    pose_b: &Pose6DOF,
    intr: &CameraIntrinsics,
) -> Result<f64> {
    let va = visible_points(cloud, pose_a, intr)?;
    let vb = visible_points(cloud, pose_b, intr)?;
    Ok(set_similarity(&va, &vb, pose_a == pose_b, &pose_a.id))
}

/// All-pairs point-cloud overlap. Visible sets are computed once per pose;
/// zero-overlap pairs are left implicit in the returned set.
pub fn fov3d_matrix(
    cloud: &PointCloud,
    queries: &[Pose6DOF],
    maps: &[Pose6DOF],
    intr: &CameraIntrinsics,
) -> Result<GradedPairSet> {
    if queries.is_empty() || maps.is_empty() {
        return Err(Error::invalid("pose lists must be non-empty"));
    }
    let mut set = GradedPairSet::with_domain(
        queries.iter().map(|p| p.id.clone()),
        maps.iter().map(|p| p.id.clone()),
    )?;
    let vis = |poses: &[Pose6DOF]| -> Result<Vec<VisibleSet>> {
        poses
            .par_iter()
            .map(|p| visible_points(cloud, p, intr))
            .collect()
    };
    let qv = vis(queries)?;
    let mv = vis(maps)?;
    for (q, a) in queries.iter().zip(&qv) {
        for (m, b) in maps.iter().zip(&mv) {
            let psi = set_similarity(a, b, q == m, &q.id);
            if psi > 0.0 {
                set.insert(&q.id, &m.id, psi)?;
            }
        }
    }
    Ok(set)
}
