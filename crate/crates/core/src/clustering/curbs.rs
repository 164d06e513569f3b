//! Curb clusters accumulated over frames and the boundary-point merge rule.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::dbscan::dbscan_with;
use crate::exec::Execution;
use crate::spatial::{centroid, GridIndex};
use crate::Point3;

/// Where a clustered point came from: frame number and index in that frame's
/// lidar cloud.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PointTag {
    pub frame: u32,
    pub index: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurbCluster {
    pub id: u32,
    pub points: Vec<Point3>,
    pub tags: Vec<PointTag>,
    pub centroid: Point3,
    pub boundary: Vec<Point3>,
}

impl CurbCluster {
    pub fn new(id: u32, points: Vec<Point3>, tags: Vec<PointTag>, k: usize) -> Self {
        assert_eq!(points.len(), tags.len());
        let c = centroid(&points);
        let boundary = boundary_points(&points, &c, k);
        Self {
            id,
            points,
            tags,
            centroid: c,
            boundary,
        }
    }

    fn refresh(&mut self, k: usize) {
        self.centroid = centroid(&self.points);
        self.boundary = boundary_points(&self.points, &self.centroid, k);
    }
}

/// The `min(k, n)` points farthest from `centroid`; ties are broken by
/// lexicographic `(x, y, z)`.
pub fn boundary_points(points: &[Point3], centroid: &Point3, k: usize) -> Vec<Point3> {
    let mut order: Vec<(f64, Point3)> = points.iter().map(|p| ((p - centroid).norm(), *p)).collect();
    order.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.x.total_cmp(&b.1.x))
            .then(a.1.y.total_cmp(&b.1.y))
            .then(a.1.z.total_cmp(&b.1.z))
    });
    order.into_iter().take(k).map(|x| x.1).collect()
}

/// How a new cluster is tested against an existing one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeRule {
    /// Closest pair between the two boundary sets.
    BoundaryPairs,
    /// Closest approach of either boundary set to the other cluster's
    /// points. Tolerates frames that extend a curb by more than the merge
    /// threshold.
    BoundaryReach,
    /// Closest approach between the two full point sets. With this rule no
    /// two clusters of a merged set are closer than the threshold, which
    /// makes re-applying a batch a no-op.
    #[default]
    PointReach,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterParams {
    pub eps: f64,
    pub min_pts: usize,
    /// Boundary points per cluster.
    pub k: usize,
    pub theta_merge: f64,
    pub merge_rule: MergeRule,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            eps: 0.5,
            min_pts: 8,
            k: 5,
            theta_merge: 1.0,
            merge_rule: MergeRule::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurbClusterSet {
    pub clusters: Vec<CurbCluster>,
    pub next_id: u32,
}

fn min_dist(a: &[Point3], b: &[Point3]) -> f64 {
    let mut best = f64::INFINITY;
    for p in a {
        for q in b {
            best = best.min((p - q).norm());
        }
    }
    best
}

fn link_distance(old: &CurbCluster, new: &CurbCluster, rule: MergeRule) -> f64 {
    match rule {
        MergeRule::BoundaryPairs => min_dist(&old.boundary, &new.boundary),
        MergeRule::BoundaryReach => {
            min_dist(&new.boundary, &old.points).min(min_dist(&old.boundary, &new.points))
        }
        MergeRule::PointReach => {
            let grid = GridIndex::with_auto_cell(&old.points);
            new.points
                .iter()
                .filter_map(|p| grid.nearest(p))
                .map(|(_, d2)| d2)
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        }
    }
}

impl CurbClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn total_points(&self) -> usize {
        self.clusters.iter().map(|c| c.points.len()).sum()
    }

    pub fn get(&self, id: u32) -> Option<&CurbCluster> {
        self.clusters.iter().find(|c| c.id == id)
    }
}

/// Folds one clustered batch into `set`.
///
/// Clusters closer than `theta_merge` under the merge rule belong to the same
/// curb. Each new cluster is linked to every pre-batch cluster and every other
/// new cluster within the threshold, and each linked group becomes one
/// cluster. A group containing pre-batch clusters keeps the lowest of their
/// ids; a group of new clusters only gets a fresh id. Points whose tag is
/// already present in the group are not added twice.
pub fn merge_clusters(
    set: &CurbClusterSet,
    points: &[Point3],
    tags: &[PointTag],
    labels: &[i32],
    params: &ClusterParams,
) -> CurbClusterSet {
    assert!(params.theta_merge > 0.0, "theta_merge must be positive");
    assert_eq!(points.len(), labels.len());
    assert_eq!(points.len(), tags.len());
    let mut groups: BTreeMap<i32, (Vec<Point3>, Vec<PointTag>)> = BTreeMap::new();
    for i in 0..points.len() {
        if labels[i] >= 0 {
            let g = groups.entry(labels[i]).or_default();
            g.0.push(points[i]);
            g.1.push(tags[i]);
        }
    }
    let fresh: Vec<CurbCluster> = groups
        .into_values()
        .map(|(pts, tg)| CurbCluster::new(0, pts, tg, params.k))
        .collect();
    let existing = set.clusters.len();
    // Nodes are pre-batch slots followed by new clusters; the root of a group
    // is its lowest node, so a pre-batch slot whenever one is present.
    let mut parent: Vec<usize> = (0..existing + fresh.len()).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let link = |parent: &mut Vec<usize>, a: usize, b: usize| {
        let (ra, rb) = (root(parent, a), root(parent, b));
        parent[ra.max(rb)] = ra.min(rb);
    };
    for (j, f) in fresh.iter().enumerate() {
        for (slot, old) in set.clusters.iter().enumerate() {
            if link_distance(old, f, params.merge_rule) < params.theta_merge {
                link(&mut parent, slot, existing + j);
            }
        }
        for (i, g) in fresh[..j].iter().enumerate() {
            if link_distance(g, f, params.merge_rule) < params.theta_merge {
                link(&mut parent, existing + i, existing + j);
            }
        }
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for node in 0..parent.len() {
        let r = root(&mut parent, node);
        members.entry(r).or_default().push(node);
    }
    let cluster_of = |node: usize| {
        if node < existing {
            &set.clusters[node]
        } else {
            &fresh[node - existing]
        }
    };
    let mut out = CurbClusterSet {
        clusters: Vec::with_capacity(members.len()),
        next_id: set.next_id,
    };
    for (r, nodes) in members {
        if nodes.len() == 1 && r < existing {
            out.clusters.push(set.clusters[r].clone());
            continue;
        }
        let mut target = cluster_of(r).clone();
        if r >= existing {
            target.id = out.next_id;
            out.next_id += 1;
        }
        let mut seen: HashSet<PointTag> = target.tags.iter().copied().collect();
        for &n in &nodes[1..] {
            let c = cluster_of(n);
            for (p, t) in c.points.iter().zip(&c.tags) {
                if seen.insert(*t) {
                    target.points.push(*p);
                    target.tags.push(*t);
                }
            }
        }
        target.refresh(params.k);
        out.clusters.push(target);
    }
    out
}

/// One frame of the tracking loop: DBSCAN on the new world-frame points,
/// then [`merge_clusters`].
pub fn temporal_associate(
    set: &CurbClusterSet,
    points: &[Point3],
    tags: &[PointTag],
    params: &ClusterParams,
) -> CurbClusterSet {
    let labels = dbscan_with(Execution::default(), points, params.eps, params.min_pts);
    merge_clusters(set, points, tags, &labels, params)
}
