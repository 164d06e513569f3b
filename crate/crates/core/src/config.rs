//! Pipeline configuration: one JSON document, every field optional.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::association::WindowShape;
use crate::clustering::{AltMethod, ClusterParams};
use crate::delaunay::{DelaunayParams, RadiusPolicy};
use crate::error::{Error, Result};
use crate::ransac::RansacParams;

/// Per-frame segmentation used before the cross-frame merge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ClusteringMethod {
    #[default]
    Dbscan,
    #[serde(untagged)]
    Alt(AltMethod),
}

impl ClusteringMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ClusteringMethod::Dbscan => "dbscan",
            ClusteringMethod::Alt(m) => m.name(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMethod {
    /// Pass-through.
    None,
    Ransac,
    Delaunay,
}

impl FilterMethod {
    pub fn name(&self) -> &'static str {
        match self {
            FilterMethod::None => "none",
            FilterMethod::Ransac => "ransac",
            FilterMethod::Delaunay => "delaunay",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FilterMethod::None),
            "ransac" => Ok(FilterMethod::Ransac),
            "delaunay" => Ok(FilterMethod::Delaunay),
            other => Err(Error::Config(format!("unknown filter method `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssociationConfig {
    /// Pixel tolerance around curb pixels.
    pub bound_px: u32,
    pub window: WindowShape,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            bound_px: 3,
            window: WindowShape::Chebyshev,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Degree of the polynomial fitted to ground truth for normalized L2.
    pub l2_degree: usize,
    pub l2_samples: usize,
    /// Clusters farther than this from every segment are false positives.
    pub d_assoc: f64,
    /// Ground-truth polylines are densified to this step for Chamfer.
    pub gt_spacing: f64,
    /// Chamfer only uses densified ground truth within this distance of the
    /// segment's unfiltered cluster points; `null` keeps the whole curve.
    pub gt_crop: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            l2_degree: 3,
            l2_samples: 1000,
            d_assoc: 5.0,
            gt_spacing: 0.05,
            gt_crop: Some(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub association: AssociationConfig,
    pub clustering: ClusterParams,
    pub clustering_methods: Vec<ClusteringMethod>,
    pub filter_methods: Vec<FilterMethod>,
    pub delaunay: DelaunayParams,
    pub ransac: RansacParams,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            association: AssociationConfig::default(),
            clustering: ClusterParams::default(),
            clustering_methods: vec![ClusteringMethod::Dbscan],
            filter_methods: vec![FilterMethod::None, FilterMethod::Ransac, FilterMethod::Delaunay],
            delaunay: DelaunayParams::default(),
            ransac: RansacParams::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let c = &self.clustering;
        if !(c.eps > 0.0) || c.min_pts == 0 || c.k == 0 || !(c.theta_merge > 0.0) {
            return bad("clustering: eps, min_pts, k and theta_merge must be positive");
        }
        if self.clustering_methods.is_empty() || self.filter_methods.is_empty() {
            return bad("at least one clustering and one filter method are required");
        }
        match self.delaunay.radius_policy {
            RadiusPolicy::Absolute(r) | RadiusPolicy::Adaptive(r) if !(r > 0.0) => {
                return bad("delaunay.radius_policy value must be positive")
            }
            _ => {}
        }
        if !(self.delaunay.tau_axis >= 0.0) {
            return bad("delaunay.tau_axis must be ≥ 0");
        }
        self.ransac.validate()?;
        let e = &self.eval;
        if e.l2_degree == 0 || e.l2_samples < 2 || !(e.d_assoc >= 0.0) || !(e.gt_spacing > 0.0) {
            return bad("eval: l2_degree ≥ 1, l2_samples ≥ 2, d_assoc ≥ 0, gt_spacing > 0");
        }
        if e.gt_crop.is_some_and(|r| !(r > 0.0)) {
            return bad("eval.gt_crop must be positive");
        }
        Ok(())
    }
}
