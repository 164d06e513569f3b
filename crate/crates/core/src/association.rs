//! Lidar/camera fusion: keep lidar points whose fisheye projection lands
//! next to a curb-labeled mask pixel.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::fisheye::{FisheyeCamera, PixelCoord, Projection};
use crate::frames::{FrameId, LabeledPointCloud};
use crate::Point3;

/// Per-pixel class ids from a segmentation network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticMask {
    pub width: u32,
    pub height: u32,
    /// Row-major, `labels[v * width + u]`.
    pub labels: Vec<u16>,
    pub curb_class: u16,
    /// Class name → id vocabulary from the mask sidecar.
    pub classes: BTreeMap<String, u16>,
}

impl SemanticMask {
    pub fn new(
        width: u32,
        height: u32,
        labels: Vec<u16>,
        curb_class: u16,
        classes: BTreeMap<String, u16>,
    ) -> Result<Self> {
        if labels.len() != width as usize * height as usize {
            return Err(Error::Config(format!(
                "mask has {} labels for a {width}x{height} image",
                labels.len()
            )));
        }
        if !classes.values().any(|&c| c == curb_class) {
            return Err(Error::Config(format!(
                "curb class {curb_class} missing from the mask vocabulary"
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
            curb_class,
            classes,
        })
    }

    #[inline]
    pub fn label(&self, u: u32, v: u32) -> u16 {
        self.labels[v as usize * self.width as usize + u as usize]
    }
}

/// Shape of the ±bound neighbourhood around curb pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowShape {
    /// `|du| <= b` and `|dv| <= b`.
    #[default]
    Chebyshev,
    /// `du² + dv² <= b²`.
    Disc,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitGrid {
    pub width: u32,
    pub height: u32,
    bits: Vec<bool>,
}

impl BitGrid {
    fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, u: i64, v: i64) -> bool {
        if u < 0 || v < 0 || u >= self.width as i64 || v >= self.height as i64 {
            return false;
        }
        self.bits[v as usize * self.width as usize + u as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Square-window dilation of the curb pixels, done as two 1-D running max
/// passes.
pub fn curb_pixel_mask_dilate(mask: &SemanticMask, bound: u32) -> BitGrid {
    dilate(mask, bound, WindowShape::Chebyshev)
}

pub fn dilate(mask: &SemanticMask, bound: u32, shape: WindowShape) -> BitGrid {
    match shape {
        WindowShape::Chebyshev => dilate_square(mask, bound),
        WindowShape::Disc => dilate_disc(mask, bound),
    }
}

fn dilate_square(mask: &SemanticMask, bound: u32) -> BitGrid {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let b = bound as usize;
    // Horizontal pass via prefix counts of curb pixels per row.
    let mut horiz = vec![false; w * h];
    let mut prefix = vec![0u32; w + 1];
    for v in 0..h {
        for u in 0..w {
            prefix[u + 1] = prefix[u] + u32::from(mask.labels[v * w + u] == mask.curb_class);
        }
        for u in 0..w {
            let lo = u.saturating_sub(b);
            let hi = (u + b + 1).min(w);
            horiz[v * w + u] = prefix[hi] > prefix[lo];
        }
    }
    let mut out = BitGrid::new(mask.width, mask.height);
    let mut col = vec![0u32; h + 1];
    for u in 0..w {
        for v in 0..h {
            col[v + 1] = col[v] + u32::from(horiz[v * w + u]);
        }
        for v in 0..h {
            let lo = v.saturating_sub(b);
            let hi = (v + b + 1).min(h);
            out.bits[v * w + u] = col[hi] > col[lo];
        }
    }
    out
}

fn dilate_disc(mask: &SemanticMask, bound: u32) -> BitGrid {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let b = bound as i64;
    let mut out = BitGrid::new(mask.width, mask.height);
    for v in 0..h {
        for u in 0..w {
            if mask.labels[(v * w + u) as usize] != mask.curb_class {
                continue;
            }
            for dv in -b..=b {
                for du in -b..=b {
                    if du * du + dv * dv > b * b {
                        continue;
                    }
                    let (x, y) = (u + du, v + dv);
                    if x >= 0 && y >= 0 && x < w && y < h {
                        out.bits[(y * w + x) as usize] = true;
                    }
                }
            }
        }
    }
    out
}

/// Lidar points picked as curb candidates, still in the base frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurbCandidateCloud {
    pub points: Vec<Point3>,
    pub source_pixel: Vec<PixelCoord>,
    /// Index of each point in the originating lidar cloud.
    pub indices: Vec<usize>,
    pub timestamp: f64,
}

impl CurbCandidateCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn associate(
    cloud: &LabeledPointCloud,
    cam: &FisheyeCamera,
    mask: &SemanticMask,
    bound: u32,
) -> Result<CurbCandidateCloud> {
    associate_with(Execution::default(), cloud, cam, mask, bound, WindowShape::Chebyshev)
}

pub fn associate_with(
    exec: Execution,
    cloud: &LabeledPointCloud,
    cam: &FisheyeCamera,
    mask: &SemanticMask,
    bound: u32,
    shape: WindowShape,
) -> Result<CurbCandidateCloud> {
    if cloud.frame != FrameId::Base {
        return Err(Error::Frame {
            expected: FrameId::Base,
            found: cloud.frame,
        });
    }
    if mask.width != cam.width || mask.height != cam.height {
        return Err(Error::Config(format!(
            "mask is {}x{} but camera {} is {}x{}",
            mask.width,
            mask.height,
            cam.frame(),
            cam.width,
            cam.height
        )));
    }
    let grid = dilate(mask, bound, shape);
    let hits = exec::map_slice(exec, &cloud.points, |p| {
        match cam.project(&cam.extrinsic.apply(p)) {
            Ok(Projection::Pixel(px)) => {
                let (u, v) = px.rounded();
                grid.get(u, v).then_some(px)
            }
            _ => None,
        }
    });
    let mut out = CurbCandidateCloud {
        timestamp: cloud.timestamp,
        ..Default::default()
    };
    for (i, hit) in hits.into_iter().enumerate() {
        if let Some(px) = hit {
            out.points.push(cloud.points[i]);
            out.source_pixel.push(px);
            out.indices.push(i);
        }
    }
    Ok(out)
}

/// Runs [`associate_with`] per camera and unions the selections. A point seen
/// by several cameras is kept once, with the pixel from the first camera.
pub fn associate_cameras(
    exec: Execution,
    cloud: &LabeledPointCloud,
    views: &[(&FisheyeCamera, &SemanticMask)],
    bound: u32,
    shape: WindowShape,
) -> Result<CurbCandidateCloud> {
    let mut picked: BTreeMap<usize, PixelCoord> = BTreeMap::new();
    for (cam, mask) in views {
        let one = associate_with(exec, cloud, cam, mask, bound, shape)?;
        for (i, px) in one.indices.into_iter().zip(one.source_pixel) {
            picked.entry(i).or_insert(px);
        }
    }
    let mut out = CurbCandidateCloud {
        timestamp: cloud.timestamp,
        ..Default::default()
    };
    for (i, px) in picked {
        out.points.push(cloud.points[i]);
        out.source_pixel.push(px);
        out.indices.push(i);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisheye::DEFAULT_THETA_MAX_DEG;
    use crate::frames::RigidTransform;
    use nalgebra::Matrix3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> BTreeMap<String, u16> {
        BTreeMap::from([("road".to_string(), 1), ("curb".to_string(), 3)])
    }

    fn mask_from(w: u32, h: u32, curb: &[(u32, u32)]) -> SemanticMask {
        let mut labels = vec![1u16; (w * h) as usize];
        for &(u, v) in curb {
            labels[(v * w + u) as usize] = 3;
        }
        SemanticMask::new(w, h, labels, 3, vocab()).unwrap()
    }

    fn brute_dilate(mask: &SemanticMask, b: i64) -> Vec<bool> {
        let (w, h) = (mask.width as i64, mask.height as i64);
        let mut out = vec![false; (w * h) as usize];
        for v in 0..h {
            for u in 0..w {
                'search: for y in 0..h {
                    for x in 0..w {
                        if (x - u).abs() <= b
                            && (y - v).abs() <= b
                            && mask.label(x as u32, y as u32) == 3
                        {
                            out[(v * w + u) as usize] = true;
                            break 'search;
                        }
                    }
                }
            }
        }
        out
    }

    // Camera looking along base +x, with y-down image axes.
    fn forward_cam(w: u32, h: u32) -> FisheyeCamera {
        let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        let ext = RigidTransform::new(r, Default::default(), FrameId::Base, FrameId::Camera(0))
            .unwrap();
        FisheyeCamera::new(
            60.0,
            60.0,
            w as f64 / 2.0,
            h as f64 / 2.0,
            [1.0, -0.02, 0.001, 0.0],
            w,
            h,
            DEFAULT_THETA_MAX_DEG.to_radians(),
            ext,
        )
        .unwrap()
    }

    fn random_cloud(n: usize, seed: u64) -> LabeledPointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-5.0..20.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect();
        LabeledPointCloud::new(pts, FrameId::Base, None, 0.5).unwrap()
    }

    fn random_mask(w: u32, h: u32, n: usize, seed: u64) -> SemanticMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let curb: Vec<(u32, u32)> = (0..n)
            .map(|_| (rng.random_range(0..w), rng.random_range(0..h)))
            .collect();
        mask_from(w, h, &curb)
    }

    fn brute_associate(
        cloud: &LabeledPointCloud,
        cam: &FisheyeCamera,
        mask: &SemanticMask,
        b: i64,
    ) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, p) in cloud.points.iter().enumerate() {
            let q = cam.extrinsic.apply(p);
            let Ok(Projection::Pixel(px)) = cam.project(&q) else {
                continue;
            };
            let (u, v) = ((px.u + 0.5).floor() as i64, (px.v + 0.5).floor() as i64);
            let mut hit = false;
            for y in (v - b)..=(v + b) {
                for x in (u - b)..=(u + b) {
                    if x >= 0
                        && y >= 0
                        && x < mask.width as i64
                        && y < mask.height as i64
                        && mask.label(x as u32, y as u32) == mask.curb_class
                    {
                        hit = true;
                    }
                }
            }
            if hit {
                out.push(i);
            }
        }
        out
    }

    #[test]
    fn bound_zero_is_identity() {
        let m = random_mask(40, 30, 60, 1);
        let g = curb_pixel_mask_dilate(&m, 0);
        for v in 0..30 {
            for u in 0..40 {
                assert_eq!(g.get(u, v), m.label(u as u32, v as u32) == 3);
            }
        }
    }

    #[test]
    fn single_pixel_gives_seven_by_seven() {
        let m = mask_from(32, 32, &[(10, 10)]);
        let g = curb_pixel_mask_dilate(&m, 3);
        assert_eq!(g.count(), 49);
        assert!(g.get(7, 13) && g.get(13, 7) && !g.get(6, 10) && !g.get(10, 14));
    }

    #[test]
    fn dilation_matches_pairwise_oracle() {
        for seed in 0..8 {
            let m = random_mask(64, 48, 25, seed);
            let g = curb_pixel_mask_dilate(&m, 3);
            let brute = brute_dilate(&m, 3);
            for v in 0..48 {
                for u in 0..64 {
                    assert_eq!(g.get(u, v), brute[(v * 64 + u) as usize]);
                }
            }
        }
    }

    #[test]
    fn disc_is_inside_square() {
        let m = random_mask(50, 50, 20, 5);
        let sq = dilate(&m, 3, WindowShape::Chebyshev);
        let disc = dilate(&m, 3, WindowShape::Disc);
        for v in 0..50 {
            for u in 0..50 {
                assert!(!disc.get(u, v) || sq.get(u, v));
            }
        }
        assert!(disc.count() < sq.count());
    }

    #[test]
    fn no_curb_pixels_selects_nothing() {
        let cam = forward_cam(320, 200);
        let mask = mask_from(320, 200, &[]);
        let mut mask = mask;
        mask.labels.iter_mut().for_each(|l| *l = 1);
        let out = associate(&random_cloud(2000, 3), &cam, &mask, 3).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn all_curb_mask_selects_in_view_subset() {
        let cam = forward_cam(320, 200);
        let mut mask = mask_from(320, 200, &[]);
        mask.labels.iter_mut().for_each(|l| *l = 3);
        let cloud = random_cloud(3000, 4);
        let out = associate(&cloud, &cam, &mask, 0).unwrap();
        let in_view: Vec<usize> = crate::fisheye::project_cloud(&cam, &cloud)
            .unwrap()
            .hits
            .iter()
            .map(|h| h.0)
            .collect();
        assert_eq!(out.indices, in_view);
        for (k, &i) in out.indices.iter().enumerate() {
            assert_eq!(out.points[k], cloud.points[i]);
        }
    }

    #[test]
    fn matches_per_point_oracle_for_small_bounds() {
        let cam = forward_cam(320, 200);
        let cloud = random_cloud(4000, 6);
        let mask = random_mask(320, 200, 300, 7);
        for b in 0..=5 {
            let fast = associate(&cloud, &cam, &mask, b).unwrap();
            assert_eq!(fast.indices, brute_associate(&cloud, &cam, &mask, b as i64));
        }
    }

    #[test]
    fn size_mismatch_is_config_error() {
        let cam = forward_cam(320, 200);
        let mask = mask_from(100, 100, &[(1, 1)]);
        assert!(matches!(
            associate(&random_cloud(10, 1), &cam, &mask, 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unknown_curb_class_rejected() {
        assert!(SemanticMask::new(2, 2, vec![0; 4], 9, vocab()).is_err());
        assert!(SemanticMask::new(2, 2, vec![0; 3], 3, vocab()).is_err());
    }

    #[test]
    fn two_cameras_dedupe_by_index() {
        let cam = forward_cam(320, 200);
        let mut mask = mask_from(320, 200, &[]);
        mask.labels.iter_mut().for_each(|l| *l = 3);
        let cloud = random_cloud(1000, 8);
        let one = associate(&cloud, &cam, &mask, 0).unwrap();
        let both = associate_cameras(
            Execution::Sequential,
            &cloud,
            &[(&cam, &mask), (&cam, &mask)],
            0,
            WindowShape::Chebyshev,
        )
        .unwrap();
        assert_eq!(one.indices, both.indices);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn selection_grows_with_bound(seed in 0u64..1000, b1 in 0u32..4, extra in 0u32..4) {
            let cam = forward_cam(160, 100);
            let cloud = random_cloud(800, seed);
            let mask = random_mask(160, 100, 40, seed + 1);
            let small = associate(&cloud, &cam, &mask, b1).unwrap();
            let large = associate(&cloud, &cam, &mask, b1 + extra).unwrap();
            prop_assert!(small.indices.iter().all(|i| large.indices.binary_search(i).is_ok()));
        }
    }
}
