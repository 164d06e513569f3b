//! Scoring of filtered curb points against ground-truth curb polylines.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clustering::CurbClusterSet;
use crate::error::{Error, Result};
use crate::ransac::fit_polynomial_lsq;
use crate::spatial::{point_polyline_distance, GridIndex};
use crate::Point3;

/// Above this many points in either set the nearest-neighbor search goes
/// through a grid index.
const GRID_MIN: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthCurb {
    pub segment_id: u32,
    /// Ordered polyline vertices, World frame.
    pub points: Vec<Point3>,
}

impl GroundTruthCurb {
    pub fn new(segment_id: u32, points: Vec<Point3>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::DegenerateInput(format!(
                "ground-truth segment {segment_id} needs at least 2 points"
            )));
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("ground-truth point"));
        }
        Ok(Self { segment_id, points })
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Points along the polyline no farther than `step` apart, vertices
    /// included.
    pub fn densify(&self, step: f64) -> Vec<Point3> {
        assert!(step > 0.0);
        let mut out = vec![self.points[0]];
        for w in self.points.windows(2) {
            let n = ((w[1] - w[0]).norm() / step).ceil().max(1.0) as usize;
            for k in 1..=n {
                out.push(w[0] + (w[1] - w[0]) * (k as f64 / n as f64));
            }
        }
        out
    }
}

/// The points of `gt` within `radius` of some point in `observed`: the part
/// of a reference curve the sensors actually covered. Empty when nothing is
/// in range.
pub fn crop_to_coverage(gt: &[Point3], observed: &[Point3], radius: f64) -> Vec<Point3> {
    if observed.is_empty() {
        return Vec::new();
    }
    let grid = GridIndex::new(observed, radius.max(1e-6));
    let r2 = radius * radius;
    gt.iter()
        .filter(|q| grid.nearest(q).is_some_and(|(_, d2)| d2 <= r2))
        .copied()
        .collect()
}

fn mean_nearest_sq(from: &[Point3], to: &[Point3]) -> f64 {
    let sum: f64 = if from.len().max(to.len()) > GRID_MIN {
        let grid = GridIndex::with_auto_cell(to);
        from.iter()
            .map(|p| grid.nearest(p).expect("nonempty").1)
            .sum()
    } else {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| (p - q).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    };
    sum / from.len() as f64
}

/// Symmetric Chamfer distance with squared norms, in m².
pub fn chamfer(p1: &[Point3], p2: &[Point3]) -> Result<f64> {
    if p1.is_empty() || p2.is_empty() {
        return Err(Error::EmptyInput("chamfer point set"));
    }
    let a = mean_nearest_sq(p1, p2);
    let b = mean_nearest_sq(p2, p1);
    // Fixed summation order keeps the metric exactly symmetric.
    Ok(if a <= b { a + b } else { b + a })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L2Score {
    pub value: f64,
    pub flags: Vec<String>,
}

/// Max deviation (m) of the fitted GT polynomial from the GT vertices before
/// the polyline itself is used instead.
pub const GT_FIT_TOL: f64 = 0.05;

/// Mean distance from each filtered point to the nearest of `samples` points
/// taken uniformly in `t` along a polynomial fitted to the GT vertices.
///
/// Sample sets are nested when `samples - 1` divides evenly, which is what
/// makes refinement monotone.
pub fn normalized_l2(
    filtered: &[Point3],
    gt: &GroundTruthCurb,
    degree: usize,
    samples: usize,
) -> Result<L2Score> {
    if filtered.is_empty() {
        return Err(Error::EmptyInput("filtered points"));
    }
    if samples < 2 {
        return Err(Error::Config("normalized_l2 needs at least 2 samples".into()));
    }
    let polyline = |tag: &str| L2Score {
        value: filtered
            .iter()
            .map(|p| point_polyline_distance(p, &gt.points))
            .sum::<f64>()
            / filtered.len() as f64,
        flags: vec![tag.to_string()],
    };
    let model = match fit_polynomial_lsq(&gt.points, degree) {
        Ok(m) => m,
        Err(e) => return Ok(polyline(e.tag())),
    };
    // A curve that folds back along the principal axis (an island outline, a
    // corner) is not a function of t; the fit is useless there.
    if gt.points.iter().any(|p| model.residual(p) > GT_FIT_TOL) {
        return Ok(polyline("DegenerateInput"));
    }
    let ts: Vec<f64> = gt.points.iter().map(|p| model.param(p)).collect();
    let lo = ts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let curve: Vec<Point3> = (0..samples)
        .map(|i| model.eval(lo + (hi - lo) * i as f64 / (samples - 1) as f64))
        .collect();
    let sum: f64 = if filtered.len().max(curve.len()) > GRID_MIN {
        let grid = GridIndex::with_auto_cell(&curve);
        filtered
            .iter()
            .map(|p| grid.nearest(p).expect("nonempty").1.sqrt())
            .sum()
    } else {
        filtered
            .iter()
            .map(|p| {
                curve
                    .iter()
                    .map(|s| (p - s).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    };
    Ok(L2Score {
        value: sum / filtered.len() as f64,
        flags: Vec::new(),
    })
}

/// Assigns each cluster to the GT segment nearest its centroid; `None` marks
/// clusters farther than `d_assoc` from every segment (false positives).
pub fn associate_segments(
    clusters: &CurbClusterSet,
    gt: &[GroundTruthCurb],
    d_assoc: f64,
) -> BTreeMap<u32, Option<u32>> {
    let mut order: Vec<&GroundTruthCurb> = gt.iter().collect();
    order.sort_by_key(|g| g.segment_id);
    clusters
        .clusters
        .iter()
        .map(|c| {
            let mut best: Option<(u32, f64)> = None;
            for g in &order {
                let d = point_polyline_distance(&c.centroid, &g.points);
                if d <= d_assoc && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((g.segment_id, d));
                }
            }
            (c.id, best.map(|b| b.0))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub clustering: String,
    pub method: String,
    pub segment_id: u32,
    pub normalized_l2: Option<f64>,
    pub chamfer: Option<f64>,
    pub detected_points: usize,
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTotals {
    pub clustering: String,
    pub method: String,
    pub detected_points: usize,
    /// Means over the rows that produced a value.
    pub mean_normalized_l2: Option<f64>,
    pub mean_chamfer: Option<f64>,
    pub false_positive_clusters: usize,
    pub flagged_rows: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_hash: String,
    pub seed: u64,
    /// Problems that are not tied to one row, such as skipped frames.
    pub flags: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub totals: Vec<ReportTotals>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl EvaluationReport {
    /// Recomputes `totals` from `rows`, one entry per (clustering, method)
    /// in first-appearance order.
    pub fn summarize(&mut self, false_positives: &BTreeMap<(String, String), usize>) {
        let mut keys: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            let k = (r.clustering.clone(), r.method.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        self.totals = keys
            .into_iter()
            .map(|k| {
                let rows: Vec<&ReportRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.clustering == k.0 && r.method == k.1)
                    .collect();
                ReportTotals {
                    detected_points: rows.iter().map(|r| r.detected_points).sum(),
                    mean_normalized_l2: mean(rows.iter().filter_map(|r| r.normalized_l2)),
                    mean_chamfer: mean(rows.iter().filter_map(|r| r.chamfer)),
                    false_positive_clusters: false_positives.get(&k).copied().unwrap_or(0),
                    flagged_rows: rows.iter().filter(|r| !r.flags.is_empty()).count(),
                    clustering: k.0,
                    method: k.1,
                }
            })
            .collect();
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty() || self.rows.iter().any(|r| !r.flags.is_empty())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.9}"));
        let mut out = String::from(
            "clustering,method,segment_id,normalized_l2,chamfer,detected_points,flags\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.clustering,
                r.method,
                r.segment_id,
                fmt(r.normalized_l2),
                fmt(r.chamfer),
                r.detected_points,
                r.flags.join(";")
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{CurbCluster, PointTag};
    use crate::frames::{FrameId, RigidTransform};
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_chamfer(a: &[Point3], b: &[Point3]) -> f64 {
        let one = |x: &[Point3], y: &[Point3]| {
            let mut s = 0.0;
            for p in x {
                let mut m = f64::INFINITY;
                for q in y {
                    let d = (p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2);
                    if d < m {
                        m = d;
                    }
                }
                s += m;
            }
            s / x.len() as f64
        };
        one(a, b) + one(b, a)
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize, ext: f64) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-ext..ext),
                    rng.random_range(-ext..ext),
                    rng.random_range(-ext..ext),
                )
            })
            .collect()
    }

    #[test]
    fn chamfer_basics() {
        let a = vec![Point3::origin()];
        let b = vec![Point3::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert!(matches!(chamfer(&a, &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn chamfer_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let a = cloud(&mut rng, 100, 5.0);
            let b = cloud(&mut rng, 100, 5.0);
            assert!((chamfer(&a, &b).unwrap() - naive_chamfer(&a, &b)).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_path_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = cloud(&mut rng, 1500, 20.0);
        let b = cloud(&mut rng, 1200, 20.0);
        assert!((chamfer(&a, &b).unwrap() - naive_chamfer(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn crop_keeps_only_covered_reference() {
        let gt: Vec<Point3> = (0..=100).map(|i| Point3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let seen = [Point3::new(2.0, 0.3, 0.0), Point3::new(3.0, -0.3, 0.0)];
        let kept = crop_to_coverage(&gt, &seen, 0.5);
        let oracle: Vec<Point3> = gt
            .iter()
            .filter(|q| seen.iter().any(|p| (*q - p).norm() <= 0.5))
            .copied()
            .collect();
        assert_eq!(kept, oracle);
        assert!(crop_to_coverage(&gt, &[], 1.0).is_empty());
    }

    fn straight_gt() -> GroundTruthCurb {
        GroundTruthCurb::new(
            0,
            (0..=10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn l2_on_the_curve_is_tiny() {
        let gt = straight_gt();
        let pts: Vec<Point3> = (0..37).map(|i| Point3::new(0.27 * i as f64, 0.0, 0.0)).collect();
        let s = normalized_l2(&pts, &gt, 3, 1000).unwrap();
        let step = 10.0 / 999.0;
        assert!(s.value <= step / 2.0 + 1e-12, "{}", s.value);
        assert!(s.flags.is_empty());
    }

    #[test]
    fn l2_single_offset_point() {
        let s = normalized_l2(&[Point3::new(4.3, 0.0, 2.0)], &straight_gt(), 3, 1000).unwrap();
        assert!((s.value - 2.0).abs() < 1e-4);
    }

    #[test]
    fn l2_converges_with_sampling() {
        let gt = GroundTruthCurb::new(
            1,
            (0..=40)
                .map(|i| {
                    let t = i as f64 * 0.5;
                    Point3::new(t, 0.01 * t * t, 0.0)
                })
                .collect(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3> = (0..300)
            .map(|_| {
                let t = rng.random_range(0.0..20.0);
                Point3::new(t, 0.01 * t * t + rng.random_range(-0.5..0.5), rng.random_range(-0.2..0.2))
            })
            .collect();
        let base = normalized_l2(&pts, &gt, 3, 1000).unwrap().value;
        let dense = normalized_l2(&pts, &gt, 3, 10_000).unwrap().value;
        assert!((base - dense).abs() <= 0.01 * dense, "{base} vs {dense}");
    }

    #[test]
    fn folded_gt_uses_polyline() {
        // An L-shaped corner is not a function of the principal parameter.
        let gt = GroundTruthCurb::new(
            2,
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(5.0, 0.0, 0.0),
                Point3::new(5.0, 5.0, 0.0),
                Point3::new(0.0, 5.0, 0.0),
            ],
        )
        .unwrap();
        let s = normalized_l2(&[Point3::new(2.5, 5.0, 1.0)], &gt, 3, 1000).unwrap();
        assert_eq!(s.flags, vec!["DegenerateInput".to_string()]);
        assert!((s.value - 1.0).abs() < 1e-12);
    }

    fn cluster_at(id: u32, c: Point3) -> CurbCluster {
        let pts = vec![c + Vector3::new(-0.1, 0.0, 0.0), c + Vector3::new(0.1, 0.0, 0.0)];
        let tags = (0..2).map(|i| PointTag { frame: id, index: i }).collect();
        CurbCluster::new(id, pts, tags, 5)
    }

    #[test]
    fn association_rules() {
        let gt = vec![
            GroundTruthCurb::new(7, vec![Point3::new(0.0, 1.0, 0.0), Point3::new(10.0, 1.0, 0.0)]).unwrap(),
            GroundTruthCurb::new(3, vec![Point3::new(0.0, -1.0, 0.0), Point3::new(10.0, -1.0, 0.0)]).unwrap(),
        ];
        let set = CurbClusterSet {
            clusters: vec![
                cluster_at(0, Point3::new(5.0, 0.0, 0.0)),
                cluster_at(1, Point3::new(5.0, 1.2, 0.0)),
                cluster_at(2, Point3::new(5.0, 40.0, 0.0)),
            ],
            next_id: 3,
        };
        let m = associate_segments(&set, &gt, 5.0);
        assert_eq!(m[&0], Some(3));
        assert_eq!(m[&1], Some(7));
        assert_eq!(m[&2], None);
    }

    #[test]
    fn totals_sum_rows() {
        let row = |seg, n, c| ReportRow {
            clustering: "dbscan".into(),
            method: "delaunay".into(),
            segment_id: seg,
            normalized_l2: Some(0.1),
            chamfer: c,
            detected_points: n,
            flags: vec![],
        };
        let mut r = EvaluationReport {
            rows: vec![row(0, 10, Some(1.0)), row(1, 5, None), row(2, 7, Some(3.0))],
            ..Default::default()
        };
        r.summarize(&BTreeMap::new());
        assert_eq!(r.totals.len(), 1);
        assert_eq!(r.totals[0].detected_points, 22);
        assert_eq!(r.totals[0].mean_chamfer, Some(2.0));
        assert!(r.to_csv().lines().count() == 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn chamfer_symmetric_and_rigid(
            seed in 0u64..10_000,
            n1 in 1usize..60,
            n2 in 1usize..60,
            angles in prop::array::uniform3(-3.0f64..3.0),
            shift in prop::array::uniform3(-100.0f64..100.0),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = cloud(&mut rng, n1, 3.0);
            let b = cloud(&mut rng, n2, 3.0);
            let ab = chamfer(&a, &b).unwrap();
            prop_assert_eq!(ab, chamfer(&b, &a).unwrap());
            prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
            let t = RigidTransform::new(
                *Rotation3::from_euler_angles(angles[0], angles[1], angles[2]).matrix(),
                Vector3::from(shift),
                FrameId::World,
                FrameId::World,
            ).unwrap();
            let ta: Vec<Point3> = a.iter().map(|p| t.apply(p)).collect();
            let tb: Vec<Point3> = b.iter().map(|p| t.apply(p)).collect();
            prop_assert!((chamfer(&ta, &tb).unwrap() - ab).abs() < 1e-9);
        }

        #[test]
        fn l2_refinement_never_increases(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = GroundTruthCurb::new(
                0,
                (0..=20).map(|i| {
                    let t = i as f64;
                    Point3::new(t, 0.02 * t * t - 0.001 * t * t * t, 0.0)
                }).collect(),
            ).unwrap();
            let pts = cloud(&mut rng, 40, 10.0)
                .into_iter()
                .map(|p| p + Vector3::new(10.0, 0.0, 0.0))
                .collect::<Vec<_>>();
            let mut prev = f64::INFINITY;
            // Each count refines the previous grid in t.
            for samples in [11, 21, 41, 81, 161, 321, 641] {
                let v = normalized_l2(&pts, &gt, 3, samples).unwrap().value;
                prop_assert!(v <= prev + 1e-12);
                prev = v;
            }
        }
    }
}
