//! End-to-end stages: extraction, clustering, filtering and evaluation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::association::{associate_cameras, SemanticMask};
use crate::clustering::{
    alt_cluster, dbscan_with, merge_clusters, CurbCluster, CurbClusterSet, PointTag,
};
use crate::config::{ClusteringMethod, FilterMethod, PipelineConfig};
use crate::delaunay::{delaunay_filter, MedialAxis};
use crate::error::{Error, Result};
use crate::eval::{
    associate_segments, chamfer, crop_to_coverage, normalized_l2, EvaluationReport, GroundTruthCurb, ReportRow,
};
use crate::exec::{map_indices, map_slice, Execution};
use crate::fisheye::FisheyeCamera;
use crate::frames::{LabeledPointCloud, PoseLog};
use crate::ransac::{ransac_filter_with, PolynomialModel};
use crate::synth::SynthScene;
use crate::{seeds, Point3, Vector3};

#[derive(Clone, Debug, PartialEq)]
pub struct FrameInput {
    /// Lidar returns in the Base frame.
    pub cloud: LabeledPointCloud,
    /// One mask per camera, same order as `SceneInput::cameras`.
    pub masks: Vec<SemanticMask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneInput {
    pub cameras: Vec<FisheyeCamera>,
    pub frames: Vec<FrameInput>,
    pub poses: PoseLog,
    pub gt: Vec<GroundTruthCurb>,
}

impl From<&SynthScene> for SceneInput {
    fn from(s: &SynthScene) -> Self {
        SceneInput {
            cameras: s.cameras.clone(),
            frames: s
                .frames
                .iter()
                .map(|f| FrameInput {
                    cloud: f.cloud.clone(),
                    masks: f.masks.clone(),
                })
                .collect(),
            poses: PoseLog::new(s.frames.iter().map(|f| f.pose.clone()).collect())
                .expect("synthetic poses are Base → World"),
            gt: s.gt.clone(),
        }
    }
}

/// Curb candidates of one frame, moved to the World frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameCandidates {
    pub frame: u32,
    pub points: Vec<Point3>,
    /// `index` is the point's position in the frame's lidar cloud.
    pub tags: Vec<PointTag>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub frames: Vec<FrameCandidates>,
    /// One entry per skipped frame.
    pub flags: Vec<String>,
}

/// Associates every frame with the masks and moves the picks to World. A
/// frame that fails (stale pose, mask mismatch) is skipped and flagged.
pub fn extract(exec: Execution, input: &SceneInput, cfg: &PipelineConfig) -> Extraction {
    let per_frame = map_indices(exec, input.frames.len(), |k| -> Result<FrameCandidates> {
        let f = &input.frames[k];
        if f.masks.len() != input.cameras.len() {
            return Err(Error::Config(format!(
                "frame {k} has {} masks for {} cameras",
                f.masks.len(),
                input.cameras.len()
            )));
        }
        let views: Vec<(&FisheyeCamera, &SemanticMask)> = input.cameras.iter().zip(&f.masks).collect();
        let cand = associate_cameras(
            Execution::Sequential,
            &f.cloud,
            &views,
            cfg.association.bound_px,
            cfg.association.window,
        )?;
        let pose = input.poses.lookup(f.cloud.timestamp)?;
        Ok(FrameCandidates {
            frame: k as u32,
            points: cand.points.iter().map(|p| pose.apply(p)).collect(),
            tags: cand
                .indices
                .iter()
                .map(|&i| PointTag {
                    frame: k as u32,
                    index: i as u32,
                })
                .collect(),
        })
    });
    let mut out = Extraction::default();
    for (k, r) in per_frame.into_iter().enumerate() {
        match r {
            Ok(c) => out.frames.push(c),
            Err(e) => {
                log::warn!("frame {k} skipped: {e}");
                out.flags.push(format!("frame {k}: {}", e.tag()));
            }
        }
    }
    out
}

/// Per-frame labels with the chosen clusterer.
pub fn frame_labels(exec: Execution, points: &[Point3], method: &ClusteringMethod, cfg: &PipelineConfig) -> Result<Vec<i32>> {
    match method {
        ClusteringMethod::Dbscan => Ok(dbscan_with(exec, points, cfg.clustering.eps, cfg.clustering.min_pts)),
        ClusteringMethod::Alt(m) => alt_cluster(points, m),
    }
}

/// Folds the frames into a cluster set in frame order.
pub fn cluster(
    exec: Execution,
    frames: &[FrameCandidates],
    method: &ClusteringMethod,
    cfg: &PipelineConfig,
) -> Result<CurbClusterSet> {
    let mut set = CurbClusterSet::default();
    for f in frames {
        let labels = frame_labels(exec, &f.points, method, cfg)?;
        set = merge_clusters(&set, &f.points, &f.tags, &labels, &cfg.clustering);
    }
    Ok(set)
}

/// Fitted model as written to `models.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDump {
    pub degree: usize,
    pub origin: Point3,
    pub axis: Vector3,
    pub coeffs_y: Vec<f64>,
    pub coeffs_z: Vec<f64>,
    pub consensus: usize,
    pub seed: u64,
}

impl ModelDump {
    fn new(m: &PolynomialModel, consensus: usize, seed: u64) -> Self {
        Self {
            degree: m.degree,
            origin: m.origin,
            axis: m.axis,
            coeffs_y: m.coeffs_y.clone(),
            coeffs_z: m.coeffs_z.clone(),
            consensus,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilteredCluster {
    pub cluster_id: u32,
    /// Indices into the cluster's points, ascending.
    pub kept: Vec<usize>,
    pub flags: Vec<String>,
    pub model: Option<ModelDump>,
    pub axis: Option<MedialAxis>,
}

/// RANSAC seed of one cluster, derived from the run seed.
pub fn ransac_seed(seed: u64, cluster_id: u32) -> u64 {
    seeds::derive(seed, &format!("ransac/cluster{cluster_id}"))
}

/// Runs one filter on one cluster; failures fall back to pass-through with
/// the error tag as a flag.
pub fn filter_cluster(c: &CurbCluster, method: FilterMethod, cfg: &PipelineConfig) -> FilteredCluster {
    let all = || (0..c.points.len()).collect::<Vec<_>>();
    let mut out = FilteredCluster {
        cluster_id: c.id,
        kept: Vec::new(),
        flags: Vec::new(),
        model: None,
        axis: None,
    };
    match method {
        FilterMethod::None => out.kept = all(),
        FilterMethod::Ransac => {
            let seed = ransac_seed(cfg.seed, c.id);
            match ransac_filter_with(Execution::Sequential, &c.points, &cfg.ransac, seed) {
                Ok(r) => {
                    out.model = Some(ModelDump::new(&r.model, r.consensus, seed));
                    out.kept = r.inliers;
                }
                Err(e) => {
                    out.kept = all();
                    out.flags.push(e.tag().to_string());
                }
            }
        }
        FilterMethod::Delaunay => {
            let r = delaunay_filter(&c.points, &cfg.delaunay);
            out.kept = r.kept;
            out.flags = r.flags;
            out.axis = r.axis;
        }
    }
    out
}

pub fn filter_set(exec: Execution, set: &CurbClusterSet, method: FilterMethod, cfg: &PipelineConfig) -> Vec<FilteredCluster> {
    map_slice(exec, &set.clusters, |c| filter_cluster(c, method, cfg))
}

/// Everything produced for one clustering method.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusteringRun {
    pub clustering: String,
    pub clusters: CurbClusterSet,
    /// Cluster id → segment id, `None` for false positives.
    pub assignment: BTreeMap<u32, Option<u32>>,
    pub filtered: BTreeMap<FilterMethod, Vec<FilteredCluster>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineRun {
    pub extraction: Extraction,
    pub runs: Vec<ClusteringRun>,
    pub report: EvaluationReport,
}

/// Scores one segment: the union of the kept points of every cluster
/// assigned to it.
fn score_segment(
    gt: &GroundTruthCurb,
    reference: &[Point3],
    points: &[Point3],
    mut flags: BTreeSet<String>,
    cfg: &PipelineConfig,
) -> (Option<f64>, Option<f64>, BTreeSet<String>) {
    if points.is_empty() {
        flags.insert(Error::EmptyInput("").tag().to_string());
        return (None, None, flags);
    }
    let l2 = match normalized_l2(points, gt, cfg.eval.l2_degree, cfg.eval.l2_samples) {
        Ok(s) => {
            flags.extend(s.flags.into_iter().map(|f| format!("l2:{f}")));
            Some(s.value)
        }
        Err(e) => {
            flags.insert(e.tag().to_string());
            None
        }
    };
    let cd = chamfer(points, reference).ok();
    (l2, cd, flags)
}

/// Builds report rows for one clustering run.
pub fn report_rows(run: &ClusteringRun, gt: &[GroundTruthCurb], cfg: &PipelineConfig) -> Vec<ReportRow> {
    let mut segs: Vec<&GroundTruthCurb> = gt.iter().collect();
    segs.sort_by_key(|g| g.segment_id);
    let mut rows = Vec::new();
    // Chamfer reference per segment: the same for every filter method.
    let references: Vec<Vec<Point3>> = segs
        .iter()
        .map(|g| {
            let dense = g.densify(cfg.eval.gt_spacing);
            let Some(r) = cfg.eval.gt_crop else {
                return dense;
            };
            let raw: Vec<Point3> = run
                .clusters
                .clusters
                .iter()
                .filter(|c| run.assignment.get(&c.id) == Some(&Some(g.segment_id)))
                .flat_map(|c| c.points.iter().copied())
                .collect();
            let cropped = crop_to_coverage(&dense, &raw, r);
            if cropped.is_empty() {
                dense
            } else {
                cropped
            }
        })
        .collect();
    for (&method, filtered) in &run.filtered {
        for (g, reference) in segs.iter().zip(&references) {
            let mut pts = Vec::new();
            let mut flags = BTreeSet::new();
            for (c, f) in run.clusters.clusters.iter().zip(filtered) {
                if run.assignment.get(&c.id) == Some(&Some(g.segment_id)) {
                    pts.extend(f.kept.iter().map(|&i| c.points[i]));
                    flags.extend(f.flags.iter().cloned());
                }
            }
            let (l2, cd, flags) = score_segment(g, reference, &pts, flags, cfg);
            rows.push(ReportRow {
                clustering: run.clustering.clone(),
                method: method.name().to_string(),
                segment_id: g.segment_id,
                normalized_l2: l2,
                chamfer: cd,
                detected_points: pts.len(),
                flags: flags.into_iter().collect(),
            });
        }
    }
    rows
}

/// Runs every configured (clustering, filter) combination on one scene.
/// Matches clusters to ground truth and bundles the filter outputs.
pub fn clustering_run(
    clustering: &str,
    clusters: CurbClusterSet,
    filtered: BTreeMap<FilterMethod, Vec<FilteredCluster>>,
    gt: &[GroundTruthCurb],
    cfg: &PipelineConfig,
) -> ClusteringRun {
    let assignment = associate_segments(&clusters, gt, cfg.eval.d_assoc);
    ClusteringRun {
        clustering: clustering.to_string(),
        clusters,
        assignment,
        filtered,
    }
}

/// Report rows of every run plus per-(clustering, method) totals.
pub fn build_report(runs: &[ClusteringRun], gt: &[GroundTruthCurb], cfg: &PipelineConfig, flags: Vec<String>) -> EvaluationReport {
    let mut report = EvaluationReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        flags,
        ..Default::default()
    };
    let mut false_pos = BTreeMap::new();
    for run in runs {
        let fp = run.assignment.values().filter(|s| s.is_none()).count();
        for f in run.filtered.keys() {
            false_pos.insert((run.clustering.clone(), f.name().to_string()), fp);
        }
        report.rows.extend(report_rows(run, gt, cfg));
    }
    report.summarize(&false_pos);
    report
}

pub fn run(exec: Execution, input: &SceneInput, cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let extraction = extract(exec, input, cfg);
    let mut runs = Vec::new();
    for method in &cfg.clustering_methods {
        let clusters = cluster(exec, &extraction.frames, method, cfg)?;
        let mut filtered = BTreeMap::new();
        for &f in &cfg.filter_methods {
            filtered.insert(f, filter_set(exec, &clusters, f, cfg));
        }
        runs.push(clustering_run(method.name(), clusters, filtered, &input.gt, cfg));
    }
    let report = build_report(&runs, &input.gt, cfg, extraction.flags.clone());
    Ok(PipelineRun {
        extraction,
        runs,
        report,
    })
}
