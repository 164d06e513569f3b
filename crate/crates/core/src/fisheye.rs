//! Generic fisheye camera: odd radial polynomial in the incidence angle.
//!
//! `r(θ) = k1·θ + k2·θ³ + k3·θ⁵ + k4·θ⁷`, with `θ` the angle between the ray
//! and the optical axis. With `k = [1, 0, 0, 0]` this is the ideal
//! equidistant projection. Camera frame: +z optical axis, +x right, +y down.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::frames::{FrameId, LabeledPointCloud, RigidTransform};
use crate::Point3;

/// Default half field of view, degrees.
pub const DEFAULT_THETA_MAX_DEG: f64 = 100.0;

const MONOTONE_SAMPLES: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    /// Nearest integer pixel; exact halves go toward +∞.
    pub fn rounded(&self) -> (i64, i64) {
        ((self.u + 0.5).floor() as i64, (self.v + 0.5).floor() as i64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    Pixel(PixelCoord),
    OutOfView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisheyeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k: [f64; 4],
    pub width: u32,
    pub height: u32,
    /// Largest admitted incidence angle, radians.
    pub theta_max: f64,
    /// Base → camera.
    pub extrinsic: RigidTransform,
}

impl FisheyeCamera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        k: [f64; 4],
        width: u32,
        height: u32,
        theta_max: f64,
        extrinsic: RigidTransform,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            k,
            width,
            height,
            theta_max,
            extrinsic,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::Config("principal point outside the image".into()));
        }
        if !(self.theta_max > 0.0 && self.theta_max < std::f64::consts::PI) {
            return Err(Error::Config("theta_max must lie in (0, π)".into()));
        }
        if self.extrinsic.from_frame() != FrameId::Base {
            return Err(Error::Frame {
                expected: FrameId::Base,
                found: self.extrinsic.from_frame(),
            });
        }
        // r(θ) must be strictly increasing or distinct rays collapse onto one pixel.
        let mut prev = self.radial(0.0);
        for i in 1..=MONOTONE_SAMPLES {
            let theta = self.theta_max * i as f64 / MONOTONE_SAMPLES as f64;
            let r = self.radial(theta);
            if !(r > prev) {
                return Err(Error::Config(format!(
                    "radial polynomial not increasing at θ = {theta:.4} rad"
                )));
            }
            prev = r;
        }
        Ok(())
    }

    #[inline]
    pub fn radial(&self, theta: f64) -> f64 {
        let t2 = theta * theta;
        theta * (self.k[0] + t2 * (self.k[1] + t2 * (self.k[2] + t2 * self.k[3])))
    }

    /// Projection without image-bound or field-of-view culling. Returns
    /// `None` only at the optical center.
    pub fn project_unbounded(&self, p_cam: &Point3) -> Option<(PixelCoord, f64)> {
        let rho = p_cam.x.hypot(p_cam.y);
        if rho == 0.0 && p_cam.z == 0.0 {
            return None;
        }
        let theta = rho.atan2(p_cam.z);
        let d = self.radial(theta);
        let (cos_phi, sin_phi) = if rho > 0.0 {
            (p_cam.x / rho, p_cam.y / rho)
        } else {
            (1.0, 0.0)
        };
        Some((
            PixelCoord {
                u: self.fx * d * cos_phi + self.cx,
                v: self.fy * d * sin_phi + self.cy,
            },
            theta,
        ))
    }

    /// Projects a point already expressed in the camera frame.
    pub fn project(&self, p_cam: &Point3) -> Result<Projection> {
        let (px, theta) = self
            .project_unbounded(p_cam)
            .ok_or_else(|| Error::DegenerateInput("point at the optical center".into()))?;
        if theta >= self.theta_max || !self.in_image(&px) {
            return Ok(Projection::OutOfView);
        }
        Ok(Projection::Pixel(px))
    }

    pub fn in_image(&self, px: &PixelCoord) -> bool {
        px.u >= 0.0 && px.u < self.width as f64 && px.v >= 0.0 && px.v < self.height as f64
    }

    pub fn frame(&self) -> FrameId {
        self.extrinsic.to_frame()
    }
}

/// Result of projecting a whole cloud.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProjectedCloud {
    /// `(index into the input cloud, pixel)` for every in-view point.
    pub hits: Vec<(usize, PixelCoord)>,
    /// Points skipped for sitting exactly on the optical center.
    pub degenerate: usize,
}

pub fn project_cloud(cam: &FisheyeCamera, cloud: &LabeledPointCloud) -> Result<ProjectedCloud> {
    project_cloud_with(Execution::default(), cam, cloud)
}

pub fn project_cloud_with(
    exec: Execution,
    cam: &FisheyeCamera,
    cloud: &LabeledPointCloud,
) -> Result<ProjectedCloud> {
    if cloud.frame != FrameId::Base {
        return Err(Error::Frame {
            expected: FrameId::Base,
            found: cloud.frame,
        });
    }
    let per_point = exec::map_slice(exec, &cloud.points, |p| {
        cam.project(&cam.extrinsic.apply(p))
    });
    let mut out = ProjectedCloud::default();
    for (i, r) in per_point.into_iter().enumerate() {
        match r {
            Ok(Projection::Pixel(px)) => out.hits.push((i, px)),
            Ok(Projection::OutOfView) => {}
            Err(_) => out.degenerate += 1,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn cam_with(k: [f64; 4], f: f64, c: f64, size: u32) -> FisheyeCamera {
        FisheyeCamera::new(
            f,
            f,
            c,
            c,
            k,
            size,
            size,
            DEFAULT_THETA_MAX_DEG.to_radians(),
            RigidTransform::identity(FrameId::Base),
        )
        .unwrap_or_else(|e| panic!("{e}"))
    }

    // Rebuilds the identity extrinsic so the tests can feed camera-frame points
    // through project_cloud.
    fn as_base_cam(mut cam: FisheyeCamera) -> FisheyeCamera {
        cam.extrinsic = RigidTransform::translation_only(
            Vector3::zeros(),
            FrameId::Base,
            FrameId::Camera(0),
        );
        cam
    }

    /// Numeric inverse of the radial polynomial by bisection; test-only oracle.
    fn invert(cam: &FisheyeCamera, px: &PixelCoord) -> Vector3<f64> {
        let mx = (px.u - cam.cx) / cam.fx;
        let my = (px.v - cam.cy) / cam.fy;
        let d = mx.hypot(my);
        let (mut lo, mut hi) = (0.0, cam.theta_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cam.radial(mid) < d {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let theta = 0.5 * (lo + hi);
        let phi = my.atan2(mx);
        Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
    }

    #[test]
    fn on_axis_hits_principal_point() {
        let cam = cam_with([1.0, -0.05, 0.002, -1e-4], 300.0, 250.0, 600);
        match cam.project(&Point3::new(0.0, 0.0, 1.0)).unwrap() {
            Projection::Pixel(px) => {
                assert_eq!(px.u, 250.0);
                assert_eq!(px.v, 250.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equidistant_closed_form() {
        let cam = cam_with([1.0, 0.0, 0.0, 0.0], 100.0, 200.0, 400);
        let Projection::Pixel(px) = cam.project(&Point3::new(1.0, 0.0, 1.0)).unwrap() else {
            panic!("out of view");
        };
        assert!((px.u - (200.0 + 100.0 * FRAC_PI_4)).abs() < 1e-12);
        assert!((px.u - 278.54).abs() < 5e-3);
        assert_eq!(px.v, 200.0);
    }

    #[test]
    fn optical_center_is_degenerate() {
        let cam = cam_with([1.0, 0.0, 0.0, 0.0], 100.0, 200.0, 400);
        assert!(matches!(cam.project(&Point3::origin()), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn non_monotone_polynomial_rejected() {
        let r = FisheyeCamera::new(
            100.0,
            100.0,
            50.0,
            50.0,
            [1.0, -0.5, 0.0, 0.0],
            100,
            100,
            DEFAULT_THETA_MAX_DEG.to_radians(),
            RigidTransform::identity(FrameId::Base),
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn beyond_theta_max_is_out_of_view() {
        let cam = cam_with([1.0, 0.0, 0.0, 0.0], 10.0, 200.0, 400);
        // 120° off-axis.
        let p = Point3::new(120f64.to_radians().sin(), 0.0, 120f64.to_radians().cos());
        assert_eq!(cam.project(&p).unwrap(), Projection::OutOfView);
    }

    #[test]
    fn empty_and_behind_clouds() {
        let cam = as_base_cam(cam_with([1.0, 0.0, 0.0, 0.0], 100.0, 200.0, 400));
        let empty = LabeledPointCloud::empty(FrameId::Base, 0.0);
        assert!(project_cloud(&cam, &empty).unwrap().hits.is_empty());

        let behind = LabeledPointCloud::new(
            (0..50)
                .map(|i| Point3::new(0.01 * i as f64, -0.02 * i as f64, -1.0 - i as f64))
                .collect(),
            FrameId::Base,
            None,
            0.0,
        )
        .unwrap();
        assert!(project_cloud(&cam, &behind).unwrap().hits.is_empty());

        let wrong = LabeledPointCloud::empty(FrameId::World, 0.0);
        assert!(matches!(project_cloud(&cam, &wrong), Err(Error::Frame { .. })));
    }

    #[test]
    fn batch_matches_per_point_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut cam = cam_with([1.0, -0.02, 0.001, 0.0], 250.0, 320.0, 640);
        cam.extrinsic = RigidTransform::new(
            *Rotation3::from_euler_angles(0.3, -0.2, 1.0).matrix(),
            Vector3::new(0.5, -1.0, 2.0),
            FrameId::Base,
            FrameId::Camera(1),
        )
        .unwrap();
        let pts: Vec<Point3> = (0..3000)
            .map(|_| {
                Point3::new(
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect();
        let cloud = LabeledPointCloud::new(pts.clone(), FrameId::Base, None, 0.0).unwrap();
        let batch = project_cloud(&cam, &cloud).unwrap();
        let seq = project_cloud_with(Execution::Sequential, &cam, &cloud).unwrap();
        assert_eq!(batch, seq);
        let mut count = 0;
        for p in &pts {
            if let Ok(Projection::Pixel(_)) = cam.project(&cam.extrinsic.apply(p)) {
                count += 1;
            }
        }
        assert_eq!(batch.hits.len(), count);
        assert!(count > 100 && count < pts.len());
    }

    proptest! {
        #[test]
        fn projection_inverts_to_direction(
            theta in 0.0f64..1.6,
            phi in -3.14f64..3.14,
            range in 0.5f64..50.0,
        ) {
            let cam = cam_with([1.0, -0.02, 0.001, -1e-5], 150.0, 400.0, 800);
            let dir = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            let p = Point3::from(dir * range);
            if let Projection::Pixel(px) = cam.project(&p).unwrap() {
                let back = invert(&cam, &px);
                let ang = back.dot(&dir).clamp(-1.0, 1.0).acos();
                prop_assert!(ang < 1e-6, "angle error {ang}");
                prop_assert!(px.u >= 0.0 && px.u < 800.0 && px.v >= 0.0 && px.v < 800.0);
            }
        }

        #[test]
        fn rotation_about_axis_rotates_pixel(
            x in -3.0f64..3.0, y in -3.0f64..3.0, z in 0.2f64..5.0, alpha in -3.1f64..3.1,
        ) {
            let cam = cam_with([1.0, -0.03, 0.002, 0.0], 200.0, 1000.0, 2000);
            let p = Point3::new(x, y, z);
            let (s, c) = alpha.sin_cos();
            let q = Point3::new(c * x - s * y, s * x + c * y, z);
            let (a, _) = cam.project_unbounded(&p).unwrap();
            let (b, _) = cam.project_unbounded(&q).unwrap();
            let (du, dv) = (a.u - cam.cx, a.v - cam.cy);
            let expect = (c * du - s * dv, s * du + c * dv);
            prop_assert!((b.u - cam.cx - expect.0).abs() < 1e-9);
            prop_assert!((b.v - cam.cy - expect.1).abs() < 1e-9);
        }
    }
}
