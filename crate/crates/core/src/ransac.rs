//! RANSAC polynomial baseline for curb clusters.
//!
//! A curb is modelled as a space curve `origin + t·axis + y(t)·normal +
//! z(t)·binormal`, where `axis` is the principal direction of the points and
//! `y`, `z` are polynomials in the arc-like parameter `t`.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, SymmetricEigen, Vector2};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_slice, Execution};
use crate::spatial::centroid;
use crate::{seeds, Point3, Vector3};

/// Relative gap required between the two largest covariance eigenvalues.
const EIGEN_GAP: f64 = 1e-9;
/// Smallest accepted singular-value ratio of the design matrix.
const RANK_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// Residual is the perpendicular distance in the (normal, binormal) plane.
    #[default]
    Spatial,
    /// Axis taken in the ground plane; residual ignores height.
    Planar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialModel {
    pub degree: usize,
    /// Ascending powers of `t`.
    pub coeffs_y: Vec<f64>,
    pub coeffs_z: Vec<f64>,
    pub axis: Vector3,
    pub normal: Vector3,
    pub binormal: Vector3,
    pub origin: Point3,
    pub mode: FitMode,
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * t + a)
}

impl PolynomialModel {
    pub fn eval(&self, t: f64) -> Point3 {
        self.origin
            + self.axis * t
            + self.normal * horner(&self.coeffs_y, t)
            + self.binormal * horner(&self.coeffs_z, t)
    }

    /// Parameter of `p` along the axis.
    pub fn param(&self, p: &Point3) -> f64 {
        (p - self.origin).dot(&self.axis)
    }

    pub fn residual(&self, p: &Point3) -> f64 {
        self.frame().residual(&self.frame().local(p), &self.coeffs_y, &self.coeffs_z)
    }

    fn frame(&self) -> Frame {
        Frame {
            origin: self.origin,
            axis: self.axis,
            normal: self.normal,
            binormal: self.binormal,
            mode: self.mode,
        }
    }
}

/// Local orthonormal frame of a point set.
#[derive(Clone, Copy, Debug)]
struct Frame {
    origin: Point3,
    axis: Vector3,
    normal: Vector3,
    binormal: Vector3,
    mode: FitMode,
}

/// Flips `v` so its largest-magnitude component is positive.
fn canonical_sign(v: Vector3) -> Vector3 {
    let mut k = 0;
    for i in 1..3 {
        if v[i].abs() > v[k].abs() {
            k = i;
        }
    }
    if v[k] < 0.0 {
        -v
    } else {
        v
    }
}

impl Frame {
    fn of(points: &[Point3], mode: FitMode) -> Result<Frame> {
        if points.is_empty() {
            return Err(Error::EmptyInput("points"));
        }
        let origin = centroid(points);
        let (axis, normal) = match mode {
            FitMode::Spatial => {
                let mut cov = Matrix3::zeros();
                for p in points {
                    let d = p - origin;
                    cov += d * d.transpose();
                }
                let eig = SymmetricEigen::new(cov);
                let mut order = [0usize, 1, 2];
                order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
                let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
                if !(l1 > 0.0) || l1 - l2 <= EIGEN_GAP * l1 {
                    return Err(Error::DegenerateInput(
                        "principal direction is not well defined".into(),
                    ));
                }
                let axis = canonical_sign(eig.eigenvectors.column(order[0]).into_owned());
                let mut normal = eig.eigenvectors.column(order[1]).into_owned();
                normal -= axis * axis.dot(&normal);
                (axis, canonical_sign(normal.normalize()))
            }
            FitMode::Planar => {
                let mut cov = Matrix2::zeros();
                for p in points {
                    let d = Vector2::new(p.x - origin.x, p.y - origin.y);
                    cov += d * d.transpose();
                }
                let eig = SymmetricEigen::new(cov);
                let (i1, i2) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
                    (0, 1)
                } else {
                    (1, 0)
                };
                let (l1, l2) = (eig.eigenvalues[i1], eig.eigenvalues[i2]);
                if !(l1 > 0.0) || l1 - l2 <= EIGEN_GAP * l1 {
                    return Err(Error::DegenerateInput(
                        "principal direction is not well defined".into(),
                    ));
                }
                let e = eig.eigenvectors.column(i1);
                let axis = canonical_sign(Vector3::new(e[0], e[1], 0.0).normalize());
                (axis, Vector3::new(-axis.y, axis.x, 0.0))
            }
        };
        Ok(Frame {
            origin,
            axis,
            normal,
            binormal: axis.cross(&normal),
            mode,
        })
    }

    /// (t, u, w) coordinates of `p`.
    fn local(&self, p: &Point3) -> [f64; 3] {
        let d = p - self.origin;
        [d.dot(&self.axis), d.dot(&self.normal), d.dot(&self.binormal)]
    }

    fn residual(&self, l: &[f64; 3], cy: &[f64], cz: &[f64]) -> f64 {
        let du = l[1] - horner(cy, l[0]);
        match self.mode {
            FitMode::Spatial => du.hypot(l[2] - horner(cz, l[0])),
            FitMode::Planar => du.abs(),
        }
    }
}

/// Least-squares fit of `u(t)` and `w(t)` over the given local coordinates.
fn fit_local(local: &[[f64; 3]], idx: &[usize], degree: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if idx.len() < degree + 1 {
        return Err(Error::DegenerateInput(format!(
            "{} points cannot determine a degree-{degree} polynomial",
            idx.len()
        )));
    }
    // Fit on t / scale so the Vandermonde columns have comparable size.
    let scale = idx.iter().map(|&i| local[i][0].abs()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::DegenerateInput("parameter range is empty".into()));
    }
    let a = DMatrix::from_fn(idx.len(), degree + 1, |r, c| {
        (local[idx[r]][0] / scale).powi(c as i32)
    });
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > RANK_TOL * smax) {
        return Err(Error::DegenerateInput("rank-deficient design matrix".into()));
    }
    let solve = |col: usize| -> Result<Vec<f64>> {
        let b = DVector::from_iterator(idx.len(), idx.iter().map(|&i| local[i][col]));
        let x = svd
            .solve(&b, 0.0)
            .map_err(|e| Error::DegenerateInput(e.to_string()))?;
        Ok(x.iter()
            .enumerate()
            .map(|(k, c)| c / scale.powi(k as i32))
            .collect())
    };
    Ok((solve(1)?, solve(2)?))
}

/// Least-squares polynomial fit in the principal frame of `points`.
pub fn fit_polynomial_lsq(points: &[Point3], degree: usize) -> Result<PolynomialModel> {
    fit_polynomial_lsq_mode(points, degree, FitMode::Spatial)
}

pub fn fit_polynomial_lsq_mode(
    points: &[Point3],
    degree: usize,
    mode: FitMode,
) -> Result<PolynomialModel> {
    if degree == 0 {
        return Err(Error::Config("polynomial degree must be at least 1".into()));
    }
    if points.len() < degree + 1 {
        return Err(Error::DegenerateInput(format!(
            "{} points cannot determine a degree-{degree} polynomial",
            points.len()
        )));
    }
    let frame = Frame::of(points, mode)?;
    let local: Vec<[f64; 3]> = points.iter().map(|p| frame.local(p)).collect();
    let idx: Vec<usize> = (0..points.len()).collect();
    let (coeffs_y, coeffs_z) = fit_local(&local, &idx, degree)?;
    Ok(PolynomialModel {
        degree,
        coeffs_y,
        coeffs_z,
        axis: frame.axis,
        normal: frame.normal,
        binormal: frame.binormal,
        origin: frame.origin,
        mode,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacParams {
    pub inlier_tol: f64,
    pub max_iters: usize,
    pub degrees: Vec<usize>,
    /// Fraction of points the winning model must explain.
    pub min_consensus: f64,
    /// Degrees within this fraction of the best consensus count as ties.
    pub parsimony: f64,
    pub mode: FitMode,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_tol: 0.15,
            max_iters: 500,
            degrees: vec![1, 2, 3],
            min_consensus: 0.2,
            parsimony: 0.01,
            mode: FitMode::Spatial,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_tol > 0.0) || !self.inlier_tol.is_finite() {
            return Err(Error::Config("ransac.inlier_tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("ransac.max_iters must be positive".into()));
        }
        if self.degrees.is_empty() || self.degrees.contains(&0) {
            return Err(Error::Config("ransac.degrees must be nonempty and ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_consensus) || !(0.0..1.0).contains(&self.parsimony) {
            return Err(Error::Config("ransac fractions must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacOutcome {
    /// Indices of consensus points, ascending.
    pub inliers: Vec<usize>,
    pub model: PolynomialModel,
    pub consensus: usize,
    /// Best consensus per candidate degree, in `params.degrees` order.
    pub consensus_by_degree: Vec<(usize, usize)>,
    pub seed: u64,
}

/// Best sample consensus for one degree.
fn search_degree(
    frame: &Frame,
    local: &[[f64; 3]],
    degree: usize,
    params: &RansacParams,
    seed: u64,
) -> Option<Vec<usize>> {
    let n = local.len();
    if n < degree + 1 {
        return None;
    }
    let mut rng = seeds::stream(seed, &format!("ransac/degree{degree}"));
    let mut best: Option<Vec<usize>> = None;
    for _ in 0..params.max_iters {
        let pick = sample(&mut rng, n, degree + 1).into_vec();
        let Ok((cy, cz)) = fit_local(local, &pick, degree) else {
            continue;
        };
        let inl: Vec<usize> = (0..n)
            .filter(|&i| frame.residual(&local[i], &cy, &cz) <= params.inlier_tol)
            .collect();
        if best.as_ref().is_none_or(|b| inl.len() > b.len()) {
            best = Some(inl);
        }
    }
    best
}

pub fn ransac_filter(points: &[Point3], params: &RansacParams, seed: u64) -> Result<RansacOutcome> {
    ransac_filter_with(Execution::default(), points, params, seed)
}

/// Runs the per-degree searches (concurrently under `Parallel`), then picks
/// the lowest degree whose consensus is within `parsimony` of the best.
pub fn ransac_filter_with(
    exec: Execution,
    points: &[Point3],
    params: &RansacParams,
    seed: u64,
) -> Result<RansacOutcome> {
    params.validate()?;
    let max_d = *params.degrees.iter().max().expect("validated");
    if points.len() < max_d + 1 {
        return Err(Error::DegenerateInput(format!(
            "{} points cannot determine a degree-{max_d} polynomial",
            points.len()
        )));
    }
    let frame = Frame::of(points, params.mode)?;
    let local: Vec<[f64; 3]> = points.iter().map(|p| frame.local(p)).collect();
    let found = map_slice(exec, &params.degrees, |&d| {
        search_degree(&frame, &local, d, params, seed)
    });
    let consensus_by_degree: Vec<(usize, usize)> = params
        .degrees
        .iter()
        .zip(&found)
        .map(|(&d, f)| (d, f.as_ref().map_or(0, Vec::len)))
        .collect();
    let best = consensus_by_degree.iter().map(|c| c.1).max().unwrap_or(0);
    let required = (params.min_consensus * points.len() as f64).ceil() as usize;
    if best == 0 || best < required {
        return Err(Error::NoConsensus { best, required });
    }
    let cut = (1.0 - params.parsimony) * best as f64;
    let (k, &(degree, consensus)) = consensus_by_degree
        .iter()
        .enumerate()
        .filter(|(_, c)| c.1 as f64 >= cut)
        .min_by_key(|(_, c)| c.0)
        .expect("the best degree passes");
    let inliers = found[k].clone().expect("nonzero consensus");
    let subset: Vec<Point3> = inliers.iter().map(|&i| points[i]).collect();
    let model = fit_polynomial_lsq_mode(&subset, degree, params.mode)?;
    Ok(RansacOutcome {
        inliers,
        model,
        consensus,
        consensus_by_degree,
        seed,
    })
}
