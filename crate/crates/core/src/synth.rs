//! Synthetic road scenes with exact ground truth.
//!
//! Curbs are extruded along a polyline as a vertical face (road level up to
//! `curb_height`) and a horizontal top face of `curb_top_width` on the side
//! away from the road. The ground-truth polyline is the top front edge. Lidar
//! returns are drawn per frame from the curb faces and from road and sidewalk
//! bands next to each curb, all within `lidar_range` of the vehicle. Masks are
//! painted by projecting dense surface samples through the two front cameras.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::association::SemanticMask;
use crate::clustering::PointTag;
use crate::error::{Error, Result};
use crate::eval::GroundTruthCurb;
use crate::exec::{map_indices, Execution};
use crate::fisheye::{FisheyeCamera, Projection, DEFAULT_THETA_MAX_DEG};
use crate::frames::{FrameId, LabeledPointCloud, PoseRecord, RigidTransform};
use crate::{seeds, Point3};

pub const CLASS_UNLABELED: u16 = 0;
pub const CLASS_ROAD: u16 = 1;
pub const CLASS_SIDEWALK: u16 = 2;
pub const CLASS_CURB: u16 = 3;

/// Half the road width for the straight and curved layouts, meters.
const HALF_ROAD: f64 = 3.5;
/// Width of the road band sampled next to each curb.
const ROAD_BAND: f64 = 3.0;
const SIDEWALK_BAND: f64 = 2.0;
/// Time between frames, seconds.
const FRAME_DT: f64 = 0.1;
/// Closest an outlier gets to the curb sample it was derived from.
const OUTLIER_MIN_OFFSET: f64 = 0.25;
/// Surface step used when painting curb pixels.
const PAINT_STEP_CURB: f64 = 0.01;
const PAINT_STEP_GROUND: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    Straight,
    Curve { radius: f64 },
    IntersectionIsle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub layout: Layout,
    pub curb_count: usize,
    pub curb_height: f64,
    pub curb_top_width: f64,
    /// Isotropic Gaussian lidar noise, meters.
    pub sigma: f64,
    /// Probability that a curb return is replaced by an outlier.
    pub outlier_rate: f64,
    /// Largest outlier displacement from its curb sample, meters.
    pub outlier_offset: f64,
    pub n_frames: usize,
    /// Distance driven between frames, meters.
    pub frame_spacing: f64,
    pub lidar_range: f64,
    /// Curb returns per meter of curb per frame.
    pub curb_density: f64,
    /// Road and sidewalk returns per square meter per frame.
    pub ground_density: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            layout: Layout::Straight,
            curb_count: 2,
            curb_height: 0.15,
            curb_top_width: 0.15,
            sigma: 0.03,
            outlier_rate: 0.1,
            outlier_offset: 1.5,
            n_frames: 10,
            frame_spacing: 0.7,
            lidar_range: 30.0,
            curb_density: 20.0,
            ground_density: 2.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scene: {m}")));
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad("sigma must be a finite value ≥ 0");
        }
        if !(0.0..1.0).contains(&self.outlier_rate) {
            return bad("outlier_rate must lie in [0, 1)");
        }
        if self.outlier_rate > 0.0 && !(self.outlier_offset > OUTLIER_MIN_OFFSET) {
            return bad("outlier_offset must exceed 0.25 m");
        }
        let max_curbs = match self.layout {
            Layout::Straight => 2,
            Layout::Curve { radius } => {
                if !(radius > HALF_ROAD + 1.0) || !radius.is_finite() {
                    return bad("curve radius must exceed 4.5 m");
                }
                2
            }
            Layout::IntersectionIsle => 3,
        };
        if self.curb_count == 0 || self.curb_count > max_curbs {
            return bad(&format!("curb_count must lie in 1..={max_curbs} for this layout"));
        }
        if self.layout == Layout::IntersectionIsle && self.curb_count != 3 {
            return bad("intersection_isle has exactly 3 curbs");
        }
        for (v, name) in [
            (self.curb_height, "curb_height"),
            (self.curb_top_width, "curb_top_width"),
            (self.lidar_range, "lidar_range"),
            (self.curb_density, "curb_density"),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.ground_density >= 0.0) || !(self.frame_spacing >= 0.0) {
            return bad("densities and spacing must be ≥ 0");
        }
        if self.n_frames == 0 {
            return bad("n_frames must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthClass {
    CurbInlier,
    Outlier,
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthLabel {
    pub class: TruthClass,
    /// Curb the point was generated from; `None` for road and sidewalk.
    pub segment: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthFrame {
    /// Lidar returns in the Base frame.
    pub cloud: LabeledPointCloud,
    /// One mask per scene camera, same order as `SynthScene::cameras`.
    pub masks: Vec<SemanticMask>,
    pub pose: PoseRecord,
    pub truth: Vec<TruthLabel>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub spec: SceneSpec,
    pub cameras: Vec<FisheyeCamera>,
    pub frames: Vec<SynthFrame>,
    pub gt: Vec<GroundTruthCurb>,
}

pub fn mask_classes() -> BTreeMap<String, u16> {
    BTreeMap::from([
        ("unlabeled".to_string(), CLASS_UNLABELED),
        ("road".to_string(), CLASS_ROAD),
        ("sidewalk".to_string(), CLASS_SIDEWALK),
        ("curb".to_string(), CLASS_CURB),
    ])
}

/// Camera looking along `yaw` (about +z) tilted by `pitch` (negative looks
/// down), mounted at `pos` in the Base frame. Camera axes: x right, y down,
/// z forward.
pub fn mounted_camera(id: u8, pos: Vector3<f64>, yaw: f64, pitch: f64) -> FisheyeCamera {
    let f = Vector3::new(yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), pitch.sin());
    let r = Vector3::new(yaw.sin(), -yaw.cos(), 0.0);
    let d = f.cross(&r);
    let rot = Matrix3::from_rows(&[r.transpose(), d.transpose(), f.transpose()]);
    let ext = RigidTransform::new(rot, -(rot * pos), FrameId::Base, FrameId::Camera(id))
        .expect("camera axes are orthonormal");
    FisheyeCamera::new(
        280.0,
        280.0,
        512.0,
        320.0,
        [1.0, -0.02, 0.001, 0.0],
        1024,
        640,
        DEFAULT_THETA_MAX_DEG.to_radians(),
        ext,
    )
    .expect("valid built-in camera")
}

/// Front-left and front-right fisheye cameras.
pub fn default_cameras() -> Vec<FisheyeCamera> {
    let pitch = (-20.0f64).to_radians();
    vec![
        mounted_camera(0, Vector3::new(2.0, 0.9, 1.8), 40f64.to_radians(), pitch),
        mounted_camera(1, Vector3::new(2.0, -0.9, 1.8), -40f64.to_radians(), pitch),
    ]
}

/// Road-level footprint of one curb.
#[derive(Clone, Debug)]
struct CurbShape {
    /// Front edge at z = 0.
    base: Vec<Point3>,
    /// Cumulative length at each vertex.
    cum: Vec<f64>,
    /// +1 when the sidewalk lies on the left of the travel direction.
    away: f64,
}

impl CurbShape {
    fn new(base: Vec<Point3>, away: f64) -> Self {
        let mut cum = vec![0.0];
        for w in base.windows(2) {
            cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
        }
        Self { base, cum, away }
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Front-edge point at arc length `s` and the unit direction away from
    /// the road there.
    fn at(&self, s: f64) -> (Point3, Vector3<f64>) {
        let k = match self.cum.partition_point(|&c| c <= s) {
            0 => 0,
            i => (i - 1).min(self.base.len() - 2),
        };
        let (a, b) = (self.base[k], self.base[k + 1]);
        let seg = self.cum[k + 1] - self.cum[k];
        let u = ((s - self.cum[k]) / seg).clamp(0.0, 1.0);
        let t = (b - a) / seg;
        let left = Vector3::new(-t.y, t.x, 0.0);
        (a + (b - a) * u, left * self.away)
    }

    /// Point on the curb surface; `c` runs up the vertical face and then
    /// back across the top face.
    fn surface(&self, s: f64, c: f64, h: f64) -> Point3 {
        let (p, away) = self.at(s);
        if c < h {
            p + Vector3::z() * c
        } else {
            p + away * (c - h) + Vector3::z() * h
        }
    }
}

fn arc(center: (f64, f64), radius: f64, a0: f64, a1: f64, step: f64) -> Vec<Point3> {
    let n = ((a1 - a0).abs() * radius / step).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| {
            let a = a0 + (a1 - a0) * i as f64 / n as f64;
            Point3::new(center.0 + radius * a.cos(), center.1 + radius * a.sin(), 0.0)
        })
        .collect()
}

fn line(a: (f64, f64), b: (f64, f64), step: f64) -> Vec<Point3> {
    let len = (b.0 - a.0).hypot(b.1 - a.1);
    let n = (len / step).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| {
            let u = i as f64 / n as f64;
            Point3::new(a.0 + (b.0 - a.0) * u, a.1 + (b.1 - a.1) * u, 0.0)
        })
        .collect()
}

fn chain(parts: Vec<Vec<Point3>>) -> Vec<Point3> {
    let mut out: Vec<Point3> = Vec::new();
    for p in parts {
        let skip = usize::from(out.last().is_some_and(|l| (l - p[0]).norm() < 1e-9));
        out.extend_from_slice(&p[skip..]);
    }
    out
}

const VERTEX_STEP: f64 = 0.25;

fn curb_shapes(spec: &SceneSpec) -> Vec<CurbShape> {
    let mut shapes = match spec.layout {
        Layout::Straight => vec![
            CurbShape::new(line((-15.0, -HALF_ROAD), (45.0, -HALF_ROAD), VERTEX_STEP), -1.0),
            CurbShape::new(line((-15.0, HALF_ROAD), (45.0, HALF_ROAD), VERTEX_STEP), 1.0),
        ],
        Layout::Curve { radius } => {
            // Left-hand bend around (0, radius); the vehicle starts at the
            // origin heading +x.
            let a0 = -std::f64::consts::FRAC_PI_2 - 15.0 / radius;
            let a1 = -std::f64::consts::FRAC_PI_2 + 45.0 / radius;
            vec![
                CurbShape::new(arc((0.0, radius), radius + HALF_ROAD, a0, a1, VERTEX_STEP), -1.0),
                CurbShape::new(arc((0.0, radius), radius - HALF_ROAD, a0, a1, VERTEX_STEP), 1.0),
            ]
        }
        Layout::IntersectionIsle => {
            use std::f64::consts::FRAC_PI_2;
            let right = line((-15.0, -HALF_ROAD), (40.0, -HALF_ROAD), VERTEX_STEP);
            // Left curb turning into a side road at x = 15.
            let left = chain(vec![
                line((-15.0, HALF_ROAD), (12.0, HALF_ROAD), VERTEX_STEP),
                arc((12.0, HALF_ROAD + 3.0), 3.0, -FRAC_PI_2, 0.0, VERTEX_STEP),
                line((15.0, HALF_ROAD + 3.0), (15.0, 20.0), VERTEX_STEP),
            ]);
            // Stadium-shaped traffic isle in the junction, counter-clockwise
            // so that its interior lies on the left.
            let (cx, cy, half, r) = (24.0, 8.0, 2.5, 0.8);
            let isle = chain(vec![
                line((cx - half, cy - r), (cx + half, cy - r), VERTEX_STEP),
                arc((cx + half, cy), r, -FRAC_PI_2, FRAC_PI_2, VERTEX_STEP),
                line((cx + half, cy + r), (cx - half, cy + r), VERTEX_STEP),
                arc((cx - half, cy), r, FRAC_PI_2, 3.0 * FRAC_PI_2, VERTEX_STEP),
            ]);
            vec![
                CurbShape::new(right, -1.0),
                CurbShape::new(left, 1.0),
                CurbShape::new(isle, 1.0),
            ]
        }
    };
    shapes.truncate(spec.curb_count);
    shapes
}

/// Vehicle pose after driving `s` meters.
fn vehicle_pose(spec: &SceneSpec, s: f64) -> RigidTransform {
    let (x, y, yaw) = match spec.layout {
        Layout::Straight | Layout::IntersectionIsle => (s, 0.0, 0.0),
        Layout::Curve { radius } => {
            let a = s / radius;
            (radius * a.sin(), radius - radius * a.cos(), a)
        }
    };
    RigidTransform::from_yaw(yaw, Vector3::new(x, y, 0.0), FrameId::Base, FrameId::World)
}

fn horizontal_dist(a: &Point3, b: &Point3) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Camera whose image contains `p_base`, if any, with its center in Base.
fn seeing_camera<'a>(cams: &'a [FisheyeCamera], p_base: &Point3) -> Option<(&'a FisheyeCamera, Point3)> {
    cams.iter().find_map(|c| match c.project(&c.extrinsic.apply(p_base)) {
        Ok(Projection::Pixel(_)) => Some((c, c.extrinsic.inverse().apply(&Point3::origin()))),
        _ => None,
    })
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..1.0);
    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    Vector3::new(r * a.cos(), r * a.sin(), z)
}

fn generate_frame(
    spec: &SceneSpec,
    shapes: &[CurbShape],
    cams: &[FisheyeCamera],
    k: usize,
) -> SynthFrame {
    let mut rng = seeds::stream(spec.seed, &format!("synth/frame{k}"));
    let noise = Normal::new(0.0, spec.sigma.max(0.0)).expect("finite sigma");
    let pose = vehicle_pose(spec, k as f64 * spec.frame_spacing);
    let to_base = pose.inverse();
    let here = pose.apply(&Point3::origin());
    let h = spec.curb_height;
    let cross = h + spec.curb_top_width;
    let mut points = Vec::new();
    let mut truth = Vec::new();
    let jitter = |p: Point3, rng: &mut ChaCha8Rng| {
        if spec.sigma > 0.0 {
            p + Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
        } else {
            p
        }
    };
    for (id, shape) in shapes.iter().enumerate() {
        let segment = Some(id as u32);
        let len = shape.length();
        let n_curb = (spec.curb_density * len).round() as usize;
        for _ in 0..n_curb {
            let s = rng.random_range(0.0..len);
            let c = rng.random_range(0.0..cross);
            let p = shape.surface(s, c, h);
            // The outlier draw happens for every sample so the stream does
            // not depend on which samples are in range.
            let is_outlier = rng.random::<f64>() < spec.outlier_rate;
            let d = rng.random_range(OUTLIER_MIN_OFFSET..spec.outlier_offset.max(OUTLIER_MIN_OFFSET + 1e-9));
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let dir = random_unit(&mut rng);
            if horizontal_dist(&p, &here) > spec.lidar_range {
                continue;
            }
            let pb = to_base.apply(&p);
            if is_outlier {
                // Depth error along the viewing ray of a camera that sees
                // the curb, so the outlier lands on curb pixels.
                let q = match seeing_camera(cams, &pb) {
                    Some((_, center)) => pb + (pb - center).normalize() * (sign * d),
                    None => pb + dir * d,
                };
                points.push(jitter(q, &mut rng));
                truth.push(TruthLabel { class: TruthClass::Outlier, segment });
            } else {
                points.push(jitter(pb, &mut rng));
                truth.push(TruthLabel { class: TruthClass::CurbInlier, segment });
            }
        }
        for (band, z, off) in [(ROAD_BAND, 0.0, -1.0), (SIDEWALK_BAND, h, 1.0)] {
            let n = (spec.ground_density * band * len).round() as usize;
            for _ in 0..n {
                let s = rng.random_range(0.0..len);
                let u = rng.random_range(0.0..band);
                let (p, away) = shape.at(s);
                let p = if off < 0.0 {
                    p - away * (0.05 + u)
                } else {
                    p + away * (spec.curb_top_width + u) + Vector3::z() * z
                };
                if horizontal_dist(&p, &here) > spec.lidar_range {
                    continue;
                }
                points.push(jitter(to_base.apply(&p), &mut rng));
                truth.push(TruthLabel { class: TruthClass::Other, segment: None });
            }
        }
    }
    let timestamp = k as f64 * FRAME_DT;
    let cloud = LabeledPointCloud::new(points, FrameId::Base, None, timestamp)
        .expect("generated points are finite");
    let masks = cams
        .iter()
        .map(|c| paint_mask(spec, shapes, c, &to_base, &here))
        .collect();
    SynthFrame {
        cloud,
        masks,
        pose: PoseRecord { timestamp, base_to_world: pose },
        truth,
    }
}

/// Rasterizes class ids by projecting surface samples; curbs are painted last
/// so they win over the ground.
fn paint_mask(
    spec: &SceneSpec,
    shapes: &[CurbShape],
    cam: &FisheyeCamera,
    to_base: &RigidTransform,
    here: &Point3,
) -> SemanticMask {
    let (w, hgt) = (cam.width, cam.height);
    let mut labels = vec![CLASS_UNLABELED; (w * hgt) as usize];
    let reach = spec.lidar_range + 1.0;
    let mut paint = |p: &Point3, class: u16| {
        if horizontal_dist(p, here) > reach {
            return;
        }
        if let Ok(Projection::Pixel(px)) = cam.project(&cam.extrinsic.apply(&to_base.apply(p))) {
            let (u, v) = px.rounded();
            if u >= 0 && v >= 0 && (u as u32) < w && (v as u32) < hgt {
                labels[v as usize * w as usize + u as usize] = class;
            }
        }
    };
    let h = spec.curb_height;
    for shape in shapes {
        let len = shape.length();
        let n = (len / PAINT_STEP_GROUND).ceil() as usize;
        for i in 0..=n {
            let s = len * i as f64 / n as f64;
            let (p, away) = shape.at(s);
            if horizontal_dist(&p, here) > reach + ROAD_BAND + SIDEWALK_BAND {
                continue;
            }
            let mut u = 0.05;
            while u <= ROAD_BAND {
                paint(&(p - away * u), CLASS_ROAD);
                u += PAINT_STEP_GROUND;
            }
            let mut u = 0.0;
            while u <= SIDEWALK_BAND {
                paint(&(p + away * (spec.curb_top_width + u) + Vector3::z() * h), CLASS_SIDEWALK);
                u += PAINT_STEP_GROUND;
            }
        }
    }
    let cross = h + spec.curb_top_width;
    let nc = (cross / PAINT_STEP_CURB).ceil() as usize;
    for shape in shapes {
        let len = shape.length();
        let n = (len / PAINT_STEP_CURB).ceil() as usize;
        for i in 0..=n {
            let s = len * i as f64 / n as f64;
            if horizontal_dist(&shape.at(s).0, here) > reach {
                continue;
            }
            for j in 0..=nc {
                paint(&shape.surface(s, cross * j as f64 / nc as f64, h), CLASS_CURB);
            }
        }
    }
    SemanticMask::new(w, hgt, labels, CLASS_CURB, mask_classes()).expect("mask size matches")
}

/// Ground-truth polylines: the top front edge of every curb, World frame.
pub fn ground_truth(spec: &SceneSpec) -> Vec<GroundTruthCurb> {
    curb_shapes(spec)
        .iter()
        .enumerate()
        .map(|(id, s)| {
            let pts = s.base.iter().map(|p| p + Vector3::z() * spec.curb_height).collect();
            GroundTruthCurb::new(id as u32, pts).expect("built-in curbs are valid")
        })
        .collect()
}

pub fn generate(spec: &SceneSpec) -> Result<SynthScene> {
    generate_with(Execution::default(), spec)
}

/// Frames draw from independent named streams, so the parallel and
/// sequential paths produce identical scenes.
pub fn generate_with(exec: Execution, spec: &SceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    let shapes = curb_shapes(spec);
    let cameras = default_cameras();
    let frames = map_indices(exec, spec.n_frames, |k| generate_frame(spec, &shapes, &cameras, k));
    Ok(SynthScene {
        spec: spec.clone(),
        cameras,
        frames,
        gt: ground_truth(spec),
    })
}

impl SynthScene {
    pub fn truth(&self, tag: PointTag) -> Option<TruthLabel> {
        self.frames
            .get(tag.frame as usize)?
            .truth
            .get(tag.index as usize)
            .copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthScore {
    /// `None` when nothing was kept.
    pub precision: Option<f64>,
    /// `None` when the reference set holds no curb points.
    pub recall: Option<f64>,
    pub kept: usize,
    pub kept_curb: usize,
    pub total_curb: usize,
}

/// Precision and recall of `kept` against the curb inliers of `universe`,
/// the point set the filter was given.
pub fn end_to_end_truth_score(scene: &SynthScene, universe: &[PointTag], kept: &[PointTag]) -> TruthScore {
    let is_curb = |t: &PointTag| {
        scene
            .truth(*t)
            .is_some_and(|l| l.class == TruthClass::CurbInlier)
    };
    let total_curb = universe.iter().filter(|t| is_curb(t)).count();
    let kept_curb = kept.iter().filter(|t| is_curb(t)).count();
    TruthScore {
        precision: (!kept.is_empty()).then(|| kept_curb as f64 / kept.len() as f64),
        recall: (total_curb > 0).then(|| kept_curb as f64 / total_curb as f64),
        kept: kept.len(),
        kept_curb,
        total_curb,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::point_polyline_distance;

    fn small(layout: Layout, curbs: usize) -> SceneSpec {
        SceneSpec {
            layout,
            curb_count: curbs,
            n_frames: 2,
            ..Default::default()
        }
    }

    fn world_points(f: &SynthFrame) -> Vec<Point3> {
        f.cloud.points.iter().map(|p| f.pose.base_to_world.apply(p)).collect()
    }

    #[test]
    fn noiseless_curb_points_lie_on_the_surface() {
        let spec = SceneSpec {
            sigma: 0.0,
            outlier_rate: 0.0,
            ..small(Layout::Straight, 2)
        };
        let scene = generate(&spec).unwrap();
        let f = &scene.frames[1];
        for (p, l) in world_points(f).iter().zip(&f.truth) {
            if l.class != TruthClass::CurbInlier {
                continue;
            }
            let y0 = if l.segment == Some(0) { -HALF_ROAD } else { HALF_ROAD };
            let dy = (p.y.abs() - y0.abs()).abs();
            // Either on the vertical face (y = y0, 0 ≤ z ≤ h) or on the top
            // (z = h, within the top width behind the edge).
            let on_face = (p.y - y0).abs() < 1e-9 && p.z >= -1e-9 && p.z <= 0.15 + 1e-9;
            let on_top = (p.z - 0.15).abs() < 1e-9 && p.y.abs() >= y0.abs() - 1e-9 && dy <= 0.15 + 1e-9;
            assert!(on_face || on_top, "{p:?}");
        }
    }

    #[test]
    fn outlier_count_is_binomial() {
        let spec = SceneSpec {
            n_frames: 1,
            lidar_range: 1e6,
            curb_density: 10000.0 / 120.0,
            ground_density: 0.0,
            ..small(Layout::Straight, 2)
        };
        let scene = generate(&spec).unwrap();
        let t = &scene.frames[0].truth;
        let n = t.len() as f64;
        assert!((n - 10000.0).abs() < 1.0);
        let out = t.iter().filter(|l| l.class == TruthClass::Outlier).count() as f64;
        let sd = (n * 0.1 * 0.9).sqrt();
        assert!((out - 0.1 * n).abs() <= 4.0 * sd, "{out}");
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = small(Layout::IntersectionIsle, 3);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let seq = generate_with(Execution::Sequential, &spec).unwrap();
        assert_eq!(seq, generate(&spec).unwrap());
        let other = SceneSpec { seed: 1, ..spec };
        assert_ne!(generate(&other).unwrap().frames[0].cloud, seq.frames[0].cloud);
    }

    #[test]
    fn inliers_stay_near_their_segment() {
        for layout in [Layout::Straight, Layout::Curve { radius: 40.0 }, Layout::IntersectionIsle] {
            let curbs = if layout == Layout::IntersectionIsle { 3 } else { 2 };
            let scene = generate(&small(layout, curbs)).unwrap();
            let tol = 3.0 * scene.spec.sigma * 3f64.sqrt() + scene.spec.curb_height.max(scene.spec.curb_top_width);
            for f in &scene.frames {
                for (p, l) in world_points(f).iter().zip(&f.truth) {
                    if l.class == TruthClass::CurbInlier {
                        let g = &scene.gt[l.segment.unwrap() as usize];
                        assert!(point_polyline_distance(p, &g.points) <= tol + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn curb_pixels_come_from_curb_samples() {
        let spec = small(Layout::Straight, 2);
        let scene = generate(&spec).unwrap();
        let f = &scene.frames[0];
        let curb = f.masks.iter().map(|m| m.labels.iter().filter(|&&c| c == CLASS_CURB).count());
        assert!(curb.clone().all(|n| n > 1000), "{:?}", curb.collect::<Vec<_>>());
        // Every painted pixel is the rounding of a projected sample, so a
        // densely resampled curb lands within a pixel of a curb label.
        let cam = &scene.cameras[1];
        let mask = &f.masks[1];
        let shapes = curb_shapes(&spec);
        let to_base = f.pose.base_to_world.inverse();
        let mut checked = 0;
        for i in 0..200 {
            let s = shapes[0].length() * (i as f64 + 0.37) / 200.0;
            let p = shapes[0].surface(s, 0.07, spec.curb_height);
            if let Ok(Projection::Pixel(px)) = cam.project(&cam.extrinsic.apply(&to_base.apply(&p))) {
                let (u, v) = px.rounded();
                let near = (-1..=1).any(|du| {
                    (-1..=1).any(|dv| {
                        let (x, y) = (u + du, v + dv);
                        x >= 0 && y >= 0 && (x as u32) < mask.width && (y as u32) < mask.height
                            && mask.label(x as u32, y as u32) == CLASS_CURB
                    })
                });
                if horizontal_dist(&p, &f.pose.base_to_world.apply(&Point3::origin())) <= spec.lidar_range {
                    assert!(near, "s = {s}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn outliers_reach_the_curb_mask() {
        use crate::association::associate_cameras;
        use crate::association::WindowShape;
        let scene = generate(&small(Layout::Straight, 2)).unwrap();
        let f = &scene.frames[0];
        let views: Vec<_> = scene.cameras.iter().zip(&f.masks).collect();
        let cand = associate_cameras(Execution::default(), &f.cloud, &views, 3, WindowShape::Chebyshev).unwrap();
        let count = |c: TruthClass| cand.indices.iter().filter(|&&i| f.truth[i].class == c).count();
        let (inl, out) = (count(TruthClass::CurbInlier), count(TruthClass::Outlier));
        assert!(inl > 500);
        let rate = out as f64 / (inl + out) as f64;
        assert!(rate > 0.05 && rate < 0.15, "outlier share {rate}");
    }

    #[test]
    fn truth_score_edges() {
        let scene = generate(&small(Layout::Straight, 1)).unwrap();
        let f = &scene.frames[0];
        let all: Vec<PointTag> = (0..f.truth.len() as u32).map(|i| PointTag { frame: 0, index: i }).collect();
        let curb: Vec<PointTag> = all
            .iter()
            .copied()
            .filter(|t| f.truth[t.index as usize].class == TruthClass::CurbInlier)
            .collect();
        let perfect = end_to_end_truth_score(&scene, &all, &curb);
        assert_eq!((perfect.precision, perfect.recall), (Some(1.0), Some(1.0)));
        let pass = end_to_end_truth_score(&scene, &all, &all);
        assert_eq!(pass.recall, Some(1.0));
        assert_eq!(pass.precision, Some(curb.len() as f64 / all.len() as f64));
        let none = end_to_end_truth_score(&scene, &all, &[]);
        assert_eq!((none.precision, none.recall), (None, Some(0.0)));
    }

    #[test]
    fn spec_validation() {
        assert!(SceneSpec { outlier_rate: 1.0, ..Default::default() }.validate().is_err());
        assert!(SceneSpec { sigma: -0.1, ..Default::default() }.validate().is_err());
        assert!(SceneSpec { curb_count: 3, ..Default::default() }.validate().is_err());
        assert!(SceneSpec { layout: Layout::IntersectionIsle, curb_count: 2, ..Default::default() }
            .validate()
            .is_err());
        let json = serde_json::to_string(&SceneSpec::default()).unwrap();
        assert_eq!(serde_json::from_str::<SceneSpec>(&json).unwrap(), SceneSpec::default());
        assert!(serde_json::from_str::<SceneSpec>(r#"{"sigmaa": 1}"#).is_err());
    }
}
