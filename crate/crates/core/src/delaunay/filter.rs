//! Medial-axis outlier filter for a single curb cluster.

use serde::{Deserialize, Serialize};

use super::mesh::{tetrahedralize, TetraMesh};
use super::voronoi::{
    circumspheres, shortest_path, voronoi_subgraph, MedialAxis, RadiusPolicy, VoronoiSubgraph,
};
use crate::error::Error;
use crate::exec::Execution;
use crate::spatial::point_polyline_distance;
use crate::Point3;

/// Above this many points the diameter pair is searched over the mesh
/// boundary only.
const EXACT_DIAMETER_MAX: usize = 5000;

/// Length multiplier for medial-axis edges that only exist under a relaxed
/// radius cut.
const GAP_PENALTY: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelaunayParams {
    pub radius_policy: RadiusPolicy,
    /// Points farther than this from the medial axis are dropped, meters.
    pub tau_axis: f64,
}

impl Default for DelaunayParams {
    fn default() -> Self {
        Self {
            radius_policy: RadiusPolicy::default(),
            tau_axis: 0.3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DelaunayOutcome {
    /// Indices of kept points, ascending.
    pub kept: Vec<usize>,
    /// Error tags of degeneracies met on the way (pass-through or fallback).
    pub flags: Vec<String>,
    pub axis: Option<MedialAxis>,
}

/// Intermediate geometry, for debug dumps.
#[derive(Clone, Debug, PartialEq)]
pub struct DelaunayTrace {
    pub mesh: TetraMesh,
    pub subgraph: VoronoiSubgraph,
}

pub fn delaunay_filter(points: &[Point3], params: &DelaunayParams) -> DelaunayOutcome {
    delaunay_filter_traced(points, params).0
}

pub fn delaunay_filter_traced(
    points: &[Point3],
    params: &DelaunayParams,
) -> (DelaunayOutcome, Option<DelaunayTrace>) {
    let pass = |e: Error| DelaunayOutcome {
        kept: (0..points.len()).collect(),
        flags: vec![e.tag().to_string()],
        axis: None,
    };
    let mesh = match tetrahedralize(points) {
        Ok(m) => m,
        Err(e) => return (pass(e), None),
    };
    let g = match voronoi_subgraph(&mesh, params.radius_policy) {
        Ok(g) => g,
        Err(e) => return (pass(e), None),
    };
    let mut flags = Vec::new();
    let (a, b) = diameter_pair(points, &mesh);
    let s = g.nearest_vertex(&points[a]).expect("subgraph is not empty");
    let t = g.nearest_vertex(&points[b]).expect("subgraph is not empty");
    let (g, axis) = match shortest_path(&g, &g.adjacency(), s, t) {
        Ok(axis) => (g, axis),
        Err(e) => {
            flags.push(e.tag().to_string());
            // Raise the radius cut just enough to join the two ends.
            let cut = bottleneck_radius(&mesh, &points[a], &points[b]).max(g.threshold);
            let relaxed = voronoi_subgraph(&mesh, RadiusPolicy::Absolute(cut)).expect("cut keeps tets");
            let s = relaxed.nearest_vertex(&points[a]).expect("subgraph is not empty");
            let t = relaxed.nearest_vertex(&points[b]).expect("subgraph is not empty");
            // Edges through tetrahedra admitted only by the relaxed cut cost
            // extra, so the path leaves the regular subgraph only to cross gaps.
            let mut adj = relaxed.adjacency();
            let wide = |v: u32| relaxed.vertices[v as usize].radius > g.threshold;
            for (v, list) in adj.iter_mut().enumerate() {
                for (w, len) in list.iter_mut() {
                    if wide(v as u32) || wide(*w) {
                        *len *= GAP_PENALTY;
                    }
                }
            }
            let mut axis = shortest_path(&relaxed, &adj, s, t).expect("cut joins the ends");
            axis.length = axis.polyline.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
            (relaxed, axis)
        }
    };
    let kept = (0..points.len())
        .filter(|&i| point_polyline_distance(&points[i], &axis.polyline) <= params.tau_axis)
        .collect();
    (
        DelaunayOutcome {
            kept,
            flags,
            axis: Some(axis),
        },
        Some(DelaunayTrace { mesh, subgraph: g }),
    )
}

/// Indices of the two points realizing the set diameter; the first such pair
/// in index order on ties.
fn diameter_pair(points: &[Point3], mesh: &TetraMesh) -> (usize, usize) {
    let candidates: Vec<usize> = if points.len() <= EXACT_DIAMETER_MAX {
        (0..points.len()).collect()
    } else {
        // The diameter is realized by hull vertices, and those all sit on the
        // mesh boundary.
        mesh.boundary_vertices().into_iter().map(|v| v as usize).collect()
    };
    let mut best = (candidates[0], candidates[0], -1.0);
    for (k, &i) in candidates.iter().enumerate() {
        for &j in &candidates[k + 1..] {
            let d = (points[i] - points[j]).norm_squared();
            if d > best.2 {
                best = (i, j, d);
            }
        }
    }
    (best.0, best.1)
}

/// Smallest radius cut under which the tetrahedra whose circumcenters are
/// nearest `start` and `end` are face-connected: the minimax radius over
/// all tetrahedron paths between them, found by adding tetrahedra in
/// increasing radius order to a union-find.
fn bottleneck_radius(mesh: &TetraMesh, start: &Point3, end: &Point3) -> f64 {
    let spheres = circumspheres(Execution::Sequential, mesh);
    let nearest = |q: &Point3| {
        (0..spheres.len())
            .filter(|&i| spheres[i].1.is_finite())
            .min_by(|&i, &j| {
                (spheres[i].0 - q)
                    .norm_squared()
                    .total_cmp(&(spheres[j].0 - q).norm_squared())
                    .then(i.cmp(&j))
            })
            .expect("a finite circumsphere exists")
    };
    let (s, t) = (nearest(start), nearest(end));
    let mut neighbors = vec![Vec::new(); spheres.len()];
    for (x, y) in mesh.face_adjacency() {
        neighbors[x as usize].push(y as usize);
        neighbors[y as usize].push(x as usize);
    }
    let mut order: Vec<usize> = (0..spheres.len()).collect();
    order.sort_by(|&i, &j| spheres[i].1.total_cmp(&spheres[j].1).then(i.cmp(&j)));
    let mut parent: Vec<usize> = (0..spheres.len()).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut active = vec![false; spheres.len()];
    for k in order {
        active[k] = true;
        for &w in &neighbors[k] {
            if active[w] {
                let (x, y) = (root(&mut parent, k), root(&mut parent, w));
                parent[x.max(y)] = x.min(y);
            }
        }
        if active[s] && active[t] && root(&mut parent, s) == root(&mut parent, t) {
            return spheres[k].1;
        }
    }
    f64::INFINITY
}
