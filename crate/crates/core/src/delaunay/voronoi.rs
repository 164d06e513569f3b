//! Circumspheres, the radius-filtered Voronoi dual graph and the medial-axis
//! shortest path through it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::mesh::{TetraMesh, EPS_GEOM};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::Point3;

/// Center and radius of the sphere through four points.
///
/// Solves `2 (v_j - v_1) · c = |v_j|² - |v_1|²`, `j = 2, 3, 4`, in
/// coordinates shifted to `v_1` so the right-hand side stays well scaled.
pub fn circumcenter(t: &[Point3; 4]) -> Result<(Point3, f64)> {
    let a = t[1] - t[0];
    let b = t[2] - t[0];
    let c = t[3] - t[0];
    let bc = b.cross(&c);
    let det = 2.0 * a.dot(&bc);
    let scale = 8.0 * a.norm() * b.norm() * c.norm();
    if !(det.abs() > EPS_GEOM * scale) {
        return Err(Error::DegenerateInput("coplanar tetrahedron".into()));
    }
    let rel = (bc * a.norm_squared() + c.cross(&a) * b.norm_squared() + a.cross(&b) * c.norm_squared())
        / det;
    Ok((t[0] + rel, rel.norm()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum RadiusPolicy {
    /// Keep tetrahedra with circumradius `<= r_max` meters.
    Absolute(f64),
    /// Keep tetrahedra with circumradius `<= alpha * median radius`.
    Adaptive(f64),
}

impl Default for RadiusPolicy {
    fn default() -> Self {
        RadiusPolicy::Adaptive(2.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoronoiVertex {
    pub center: Point3,
    pub radius: f64,
    pub tet: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoronoiSubgraph {
    pub vertices: Vec<VoronoiVertex>,
    /// Index pairs into `vertices`, `a < b`.
    pub edges: Vec<(u32, u32)>,
    /// Radius cut-off in force when the graph was built.
    pub threshold: f64,
}

/// Circumsphere of every tetrahedron. Sliver tetrahedra whose system is
/// singular get an infinite radius and their vertex centroid as center.
pub fn circumspheres(exec: Execution, mesh: &TetraMesh) -> Vec<(Point3, f64)> {
    exec::map_indices(exec, mesh.tets.len(), |t| {
        let p = mesh.tet_points(t);
        circumcenter(&p).unwrap_or_else(|_| {
            let c = Point3::from((p[0].coords + p[1].coords + p[2].coords + p[3].coords) / 4.0);
            (c, f64::INFINITY)
        })
    })
}

pub fn voronoi_subgraph(mesh: &TetraMesh, policy: RadiusPolicy) -> Result<VoronoiSubgraph> {
    voronoi_subgraph_with(Execution::Sequential, mesh, policy)
}

pub fn voronoi_subgraph_with(
    exec: Execution,
    mesh: &TetraMesh,
    policy: RadiusPolicy,
) -> Result<VoronoiSubgraph> {
    let spheres = circumspheres(exec, mesh);
    let threshold = match policy {
        RadiusPolicy::Absolute(r) => r,
        RadiusPolicy::Adaptive(alpha) => {
            let mut radii: Vec<f64> = spheres.iter().map(|s| s.1).collect();
            if radii.is_empty() {
                return Err(Error::EmptySubgraph);
            }
            radii.sort_by(f64::total_cmp);
            let m = radii.len();
            let median = if m % 2 == 1 {
                radii[m / 2]
            } else {
                0.5 * (radii[m / 2 - 1] + radii[m / 2])
            };
            if alpha.is_infinite() {
                f64::INFINITY
            } else {
                alpha * median
            }
        }
    };
    let mut index = vec![u32::MAX; spheres.len()];
    let mut vertices = Vec::new();
    for (t, &(center, radius)) in spheres.iter().enumerate() {
        if radius <= threshold {
            index[t] = vertices.len() as u32;
            vertices.push(VoronoiVertex {
                center,
                radius,
                tet: t as u32,
            });
        }
    }
    if vertices.is_empty() {
        return Err(Error::EmptySubgraph);
    }
    let edges = mesh
        .face_adjacency()
        .into_iter()
        .filter_map(|(s, t)| {
            let (a, b) = (index[s as usize], index[t as usize]);
            (a != u32::MAX && b != u32::MAX).then_some((a.min(b), a.max(b)))
        })
        .collect();
    Ok(VoronoiSubgraph {
        vertices,
        edges,
        threshold,
    })
}

impl VoronoiSubgraph {
    pub fn adjacency(&self) -> Vec<Vec<(u32, f64)>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for &(a, b) in &self.edges {
            let w = (self.vertices[a as usize].center - self.vertices[b as usize].center).norm();
            adj[a as usize].push((b, w));
            adj[b as usize].push((a, w));
        }
        for list in &mut adj {
            list.sort_by_key(|e| e.0);
        }
        adj
    }

    /// Nearest vertex to `q`, lower index on ties.
    pub fn nearest_vertex(&self, q: &Point3) -> Option<u32> {
        let mut best: Option<(u32, f64)> = None;
        for (i, v) in self.vertices.iter().enumerate() {
            let d = (v.center - q).norm_squared();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i as u32, d));
            }
        }
        best.map(|b| b.0)
    }

    /// Connected component id per vertex, numbered by lowest member.
    pub fn components(&self) -> Vec<u32> {
        let adj = self.adjacency();
        let mut comp = vec![u32::MAX; self.vertices.len()];
        let mut next = 0;
        for s in 0..self.vertices.len() {
            if comp[s] != u32::MAX {
                continue;
            }
            comp[s] = next;
            let mut stack = vec![s];
            while let Some(v) = stack.pop() {
                for &(w, _) in &adj[v] {
                    if comp[w as usize] == u32::MAX {
                        comp[w as usize] = next;
                        stack.push(w as usize);
                    }
                }
            }
            next += 1;
        }
        comp
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedialAxis {
    pub polyline: Vec<Point3>,
    /// Subgraph vertex ids along the path.
    pub vertices: Vec<u32>,
    pub length: f64,
}

#[derive(PartialEq)]
struct Entry(f64, u32);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on distance, then on vertex id.
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest path between the subgraph vertices nearest to `start` and `end`.
pub fn medial_axis(g: &VoronoiSubgraph, start: &Point3, end: &Point3) -> Result<MedialAxis> {
    let s = g.nearest_vertex(start).ok_or(Error::EmptySubgraph)?;
    let t = g.nearest_vertex(end).ok_or(Error::EmptySubgraph)?;
    shortest_path(g, &g.adjacency(), s, t)
}

pub(crate) fn shortest_path(
    g: &VoronoiSubgraph,
    adj: &[Vec<(u32, f64)>],
    s: u32,
    t: u32,
) -> Result<MedialAxis> {
    let n = g.vertices.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![u32::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[s as usize] = 0.0;
    heap.push(Entry(0.0, s));
    while let Some(Entry(d, v)) = heap.pop() {
        if d > dist[v as usize] {
            continue;
        }
        if v == t {
            break;
        }
        for &(w, len) in &adj[v as usize] {
            let nd = d + len;
            if nd < dist[w as usize] {
                dist[w as usize] = nd;
                prev[w as usize] = v;
                heap.push(Entry(nd, w));
            }
        }
    }
    if !dist[t as usize].is_finite() {
        return Err(Error::NoPath);
    }
    let mut vertices = vec![t];
    let mut v = t;
    while v != s {
        v = prev[v as usize];
        vertices.push(v);
    }
    vertices.reverse();
    Ok(MedialAxis {
        polyline: vertices.iter().map(|&v| g.vertices[v as usize].center).collect(),
        vertices,
        length: dist[t as usize],
    })
}
