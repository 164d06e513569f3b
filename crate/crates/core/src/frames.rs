//! Reference frames, rigid transforms, point clouds and the vehicle pose log.
//!
//! Conventions: a [`RigidTransform`] maps coordinates expressed in its `from`
//! frame into its `to` frame, `p_to = R * p_from + t`. A transform written
//! `T_ab` therefore takes points from `b` to `a`, and `compose(T_ab, T_bc)`
//! yields `T_ac`.

use std::fmt;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Point3;

const ORTHO_TOL: f64 = 1e-9;

/// Largest accepted gap between a camera timestamp and its pose record.
pub const MAX_POSE_GAP: f64 = 0.050;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrameId {
    /// Vehicle base, rear-axle center.
    Base,
    LidarLeft,
    LidarRight,
    Camera(u8),
    Imu,
    /// Local tangent-plane approximation of UTM.
    World,
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameId::Base => write!(f, "B"),
            FrameId::LidarLeft => write!(f, "L_L"),
            FrameId::LidarRight => write!(f, "L_R"),
            FrameId::Camera(k) => write!(f, "C_{k}"),
            FrameId::Imu => write!(f, "I"),
            FrameId::World => write!(f, "W"),
        }
    }
}

pub fn is_finite(p: &Point3) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.z.is_finite()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    from: FrameId,
    to: FrameId,
}

impl RigidTransform {
    /// Builds a transform after checking that `rotation` is a proper rotation.
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        from: FrameId,
        to: FrameId,
    ) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rigid transform"));
        }
        let gram = rotation.transpose() * rotation;
        let off = (gram - Matrix3::identity()).amax();
        if off > ORTHO_TOL {
            return Err(Error::Config(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {off:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::Config(format!("rotation determinant is {det}, expected 1")));
        }
        Ok(Self {
            rotation,
            translation,
            from,
            to,
        })
    }

    pub fn identity(frame: FrameId) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            from: frame,
            to: frame,
        }
    }

    pub fn translation_only(t: Vector3<f64>, from: FrameId, to: FrameId) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
            from,
            to,
        }
    }

    /// Rotation of `yaw` radians about +z followed by a translation.
    pub fn from_yaw(yaw: f64, t: Vector3<f64>, from: FrameId, to: FrameId) -> Self {
        let (s, c) = yaw.sin_cos();
        let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self {
            rotation,
            translation: t,
            from,
            to,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn from_frame(&self) -> FrameId {
        self.from
    }

    pub fn to_frame(&self) -> FrameId {
        self.to
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
            from: self.to,
            to: self.from,
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// `T_ab ∘ T_bc`: maps frame `c` into frame `a`.
pub fn compose(t_ab: &RigidTransform, t_bc: &RigidTransform) -> Result<RigidTransform> {
    if t_ab.from != t_bc.to {
        return Err(Error::Frame {
            expected: t_ab.from,
            found: t_bc.to,
        });
    }
    Ok(RigidTransform {
        rotation: t_ab.rotation * t_bc.rotation,
        translation: t_ab.rotation * t_bc.translation + t_ab.translation,
        from: t_bc.from,
        to: t_ab.to,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPointCloud {
    pub points: Vec<Point3>,
    pub frame: FrameId,
    pub labels: Option<Vec<u16>>,
    pub timestamp: f64,
}

impl LabeledPointCloud {
    pub fn new(
        points: Vec<Point3>,
        frame: FrameId,
        labels: Option<Vec<u16>>,
        timestamp: f64,
    ) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::Config(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.len()
                )));
            }
        }
        if !points.iter().all(is_finite) {
            return Err(Error::NonFinite("point cloud"));
        }
        Ok(Self {
            points,
            frame,
            labels,
            timestamp,
        })
    }

    pub fn empty(frame: FrameId, timestamp: f64) -> Self {
        Self {
            points: Vec::new(),
            frame,
            labels: None,
            timestamp,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn transform_cloud(cloud: &LabeledPointCloud, t: &RigidTransform) -> Result<LabeledPointCloud> {
    if t.from != cloud.frame {
        return Err(Error::Frame {
            expected: t.from,
            found: cloud.frame,
        });
    }
    Ok(LabeledPointCloud {
        points: cloud.points.iter().map(|p| t.apply(p)).collect(),
        frame: t.to,
        labels: cloud.labels.clone(),
        timestamp: cloud.timestamp,
    })
}

/// One Base → World pose, stamped with the camera frame time it belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub timestamp: f64,
    pub base_to_world: RigidTransform,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseLog {
    records: Vec<PoseRecord>,
}

impl PoseLog {
    pub fn new(mut records: Vec<PoseRecord>) -> Result<Self> {
        for r in &records {
            if r.base_to_world.from != FrameId::Base || r.base_to_world.to != FrameId::World {
                return Err(Error::Frame {
                    expected: FrameId::Base,
                    found: r.base_to_world.from,
                });
            }
            if !r.timestamp.is_finite() {
                return Err(Error::NonFinite("pose timestamp"));
            }
        }
        records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        Ok(Self { records })
    }

    pub fn records(&self) -> &[PoseRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Nearest-timestamp pose. Gaps above [`MAX_POSE_GAP`] are rejected
    /// rather than interpolated.
    pub fn lookup(&self, timestamp: f64) -> Result<&RigidTransform> {
        let i = self
            .records
            .partition_point(|r| r.timestamp < timestamp);
        let candidates = [i.checked_sub(1), Some(i)];
        let best = candidates
            .iter()
            .flatten()
            .filter_map(|&k| self.records.get(k))
            .min_by(|a, b| {
                (a.timestamp - timestamp)
                    .abs()
                    .total_cmp(&(b.timestamp - timestamp).abs())
            });
        match best {
            Some(r) if (r.timestamp - timestamp).abs() <= MAX_POSE_GAP => Ok(&r.base_to_world),
            Some(r) => Err(Error::StalePose {
                timestamp,
                gap: (r.timestamp - timestamp).abs(),
                max_gap: MAX_POSE_GAP,
            }),
            None => Err(Error::EmptyInput("pose log")),
        }
    }
}
