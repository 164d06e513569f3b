//! Alternative clusterers used for comparison: single-linkage agglomerative,
//! BIRCH (CF-tree leaves, no global phase) and OPTICS with ξ extraction.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::dbscan::{relabel_by_first_appearance, NOISE};
use crate::error::{Error, Result};
use crate::spatial::GridIndex;
use crate::Point3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method", deny_unknown_fields)]
pub enum AltMethod {
    /// Merge while the closest pair across two clusters is `< threshold`.
    Agglomerative { threshold: f64 },
    Birch { branching: usize, threshold: f64 },
    Optics {
        min_pts: usize,
        xi: f64,
        /// Smallest accepted cluster, in points; `0` means `min_pts`.
        #[serde(default)]
        min_cluster_size: usize,
        /// Neighbourhood cap, meters; unbounded when absent.
        #[serde(default)]
        max_eps: Option<f64>,
    },
}

impl AltMethod {
    pub fn name(&self) -> &'static str {
        match self {
            AltMethod::Agglomerative { .. } => "agglomerative",
            AltMethod::Birch { .. } => "birch",
            AltMethod::Optics { .. } => "optics",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            AltMethod::Agglomerative { threshold } => threshold >= 0.0,
            AltMethod::Birch { branching, threshold } => branching >= 2 && threshold >= 0.0,
            AltMethod::Optics {
                min_pts, xi, max_eps, ..
            } => min_pts >= 2 && xi > 0.0 && xi < 1.0 && max_eps.is_none_or(|e| e > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid parameters for {}", self.name())))
        }
    }
}

pub fn alt_cluster(points: &[Point3], method: &AltMethod) -> Result<Vec<i32>> {
    method.validate()?;
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let mut labels = match *method {
        AltMethod::Agglomerative { threshold } => agglomerative(points, threshold),
        AltMethod::Birch {
            branching,
            threshold,
        } => birch(points, branching, threshold),
        AltMethod::Optics {
            min_pts,
            xi,
            min_cluster_size,
            max_eps,
        } => {
            let size = if min_cluster_size == 0 { min_pts } else { min_cluster_size };
            optics(points, min_pts, xi, size, max_eps.unwrap_or(f64::INFINITY))
        }
    };
    relabel_by_first_appearance(&mut labels);
    Ok(labels)
}

/// Looks a method up by name with default parameters.
pub fn alt_method_by_name(name: &str) -> Result<AltMethod> {
    match name {
        "agglomerative" => Ok(AltMethod::Agglomerative { threshold: 0.5 }),
        "birch" => Ok(AltMethod::Birch {
            branching: 50,
            threshold: 0.5,
        }),
        "optics" => Ok(AltMethod::Optics {
            min_pts: 4,
            xi: 0.05,
            min_cluster_size: 0,
            max_eps: None,
        }),
        other => Err(Error::Config(format!("unknown clustering method `{other}`"))),
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Single linkage with a distance threshold is the connected-component
/// structure of the `d < threshold` graph.
fn agglomerative(points: &[Point3], threshold: f64) -> Vec<i32> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    if threshold > 0.0 {
        let grid = GridIndex::new(points, threshold);
        for i in 0..n {
            for j in grid.within(&points[i], threshold) {
                if j > i && (points[j] - points[i]).norm() < threshold {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    (0..n).map(|i| find(&mut parent, i) as i32).collect()
}

#[derive(Clone, Copy, Debug, Default)]
struct Cf {
    n: f64,
    ls: Vector3<f64>,
    ss: f64,
}

impl Cf {
    fn of(p: &Vector3<f64>) -> Self {
        Self {
            n: 1.0,
            ls: *p,
            ss: p.norm_squared(),
        }
    }

    fn add(&mut self, o: &Cf) {
        self.n += o.n;
        self.ls += o.ls;
        self.ss += o.ss;
    }

    fn centroid(&self) -> Vector3<f64> {
        self.ls / self.n
    }

    fn radius(&self) -> f64 {
        let c = self.centroid();
        (self.ss / self.n - c.norm_squared()).max(0.0).sqrt()
    }
}

struct Entry {
    cf: Cf,
    child: Option<usize>,
}

struct Node {
    leaf: bool,
    entries: Vec<Entry>,
}

struct CfTree {
    nodes: Vec<Node>,
    root: usize,
    branching: usize,
    threshold: f64,
}

fn closest(entries: &[Entry], p: &Vector3<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in entries.iter().enumerate() {
        let d = (e.cf.centroid() - p).norm_squared();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|b| b.0)
}

impl CfTree {
    fn insert(&mut self, p: &Vector3<f64>) {
        if let Some(sib) = self.insert_at(self.root, p) {
            let old = self.root;
            let entries = vec![
                Entry {
                    cf: self.summary(old),
                    child: Some(old),
                },
                Entry {
                    cf: self.summary(sib),
                    child: Some(sib),
                },
            ];
            self.nodes.push(Node {
                leaf: false,
                entries,
            });
            self.root = self.nodes.len() - 1;
        }
    }

    fn summary(&self, node: usize) -> Cf {
        let mut cf = Cf::default();
        for e in &self.nodes[node].entries {
            cf.add(&e.cf);
        }
        cf
    }

    /// Returns the id of a new sibling when `node` had to split.
    fn insert_at(&mut self, node: usize, p: &Vector3<f64>) -> Option<usize> {
        let point = Cf::of(p);
        if self.nodes[node].leaf {
            let entries = &mut self.nodes[node].entries;
            match closest(entries, p) {
                Some(j) => {
                    let mut merged = entries[j].cf;
                    merged.add(&point);
                    if merged.radius() <= self.threshold {
                        entries[j].cf = merged;
                    } else {
                        entries.push(Entry {
                            cf: point,
                            child: None,
                        });
                    }
                }
                None => entries.push(Entry {
                    cf: point,
                    child: None,
                }),
            }
        } else {
            let j = closest(&self.nodes[node].entries, p).expect("inner nodes are never empty");
            let child = self.nodes[node].entries[j].child.expect("inner entry has a child");
            match self.insert_at(child, p) {
                Some(sib) => {
                    let cf = self.summary(child);
                    self.nodes[node].entries[j].cf = cf;
                    let cf = self.summary(sib);
                    self.nodes[node].entries.push(Entry {
                        cf,
                        child: Some(sib),
                    });
                }
                None => self.nodes[node].entries[j].cf.add(&point),
            }
        }
        (self.nodes[node].entries.len() > self.branching).then(|| self.split(node))
    }

    /// Splits around the farthest pair of entry centroids.
    fn split(&mut self, node: usize) -> usize {
        let entries = std::mem::take(&mut self.nodes[node].entries);
        let c: Vec<Vector3<f64>> = entries.iter().map(|e| e.cf.centroid()).collect();
        let mut seeds = (0, 1, -1.0);
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                let d = (c[i] - c[j]).norm_squared();
                if d > seeds.2 {
                    seeds = (i, j, d);
                }
            }
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (k, e) in entries.into_iter().enumerate() {
            let da = (c[k] - c[seeds.0]).norm_squared();
            let db = (c[k] - c[seeds.1]).norm_squared();
            if k == seeds.0 || (k != seeds.1 && da <= db) {
                a.push(e);
            } else {
                b.push(e);
            }
        }
        let leaf = self.nodes[node].leaf;
        self.nodes[node].entries = a;
        self.nodes.push(Node { leaf, entries: b });
        self.nodes.len() - 1
    }

    fn leaf_centroids(&self) -> Vec<Vector3<f64>> {
        self.nodes
            .iter()
            .filter(|n| n.leaf)
            .flat_map(|n| n.entries.iter().map(|e| e.cf.centroid()))
            .collect()
    }
}

fn birch(points: &[Point3], branching: usize, threshold: f64) -> Vec<i32> {
    let mut tree = CfTree {
        nodes: vec![Node {
            leaf: true,
            entries: Vec::new(),
        }],
        root: 0,
        branching,
        threshold,
    };
    for p in points {
        tree.insert(&p.coords);
    }
    let centers: Vec<Point3> = tree.leaf_centroids().into_iter().map(Point3::from).collect();
    let grid = GridIndex::with_auto_cell(&centers);
    points
        .iter()
        .map(|p| grid.nearest(p).map_or(NOISE, |(i, _)| i as i32))
        .collect()
}

/// OPTICS ordering followed by ξ-steep-area cluster extraction with
/// predecessor correction.
fn optics(points: &[Point3], min_pts: usize, xi: f64, min_cluster_size: usize, max_eps: f64) -> Vec<i32> {
    let (ordering, reach, pred) = optics_graph(points, min_pts, max_eps);
    let plot: Vec<f64> = ordering.iter().map(|&i| reach[i]).collect();
    let pred_plot: Vec<i64> = ordering.iter().map(|&i| pred[i]).collect();
    let clusters = xi_clusters(&plot, &pred_plot, &ordering, xi, min_pts, min_cluster_size);
    let mut in_plot = vec![NOISE; points.len()];
    let mut label = 0;
    for &(s, e) in &clusters {
        if in_plot[s..=e].iter().all(|&l| l == NOISE) {
            in_plot[s..=e].iter_mut().for_each(|l| *l = label);
            label += 1;
        }
    }
    let mut labels = vec![NOISE; points.len()];
    for (k, &i) in ordering.iter().enumerate() {
        labels[i] = in_plot[k];
    }
    labels
}

/// Returns `(ordering, reachability, predecessor)`; predecessor is `-1` when
/// unset.
pub(crate) fn optics_graph(points: &[Point3], min_pts: usize, max_eps: f64) -> (Vec<usize>, Vec<f64>, Vec<i64>) {
    let n = points.len();
    let neighbours = |i: usize| -> Vec<(usize, f64)> {
        (0..n)
            .map(|j| (j, (points[j] - points[i]).norm()))
            .filter(|&(_, d)| d <= max_eps)
            .collect()
    };
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = neighbours(i).into_iter().map(|x| x.1).collect();
            if d.len() < min_pts {
                return f64::INFINITY;
            }
            d.sort_by(f64::total_cmp);
            d[min_pts - 1]
        })
        .collect();
    let mut reach = vec![f64::INFINITY; n];
    let mut pred = vec![-1i64; n];
    let mut done = vec![false; n];
    let mut ordering = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = usize::MAX;
        for i in 0..n {
            if !done[i] && (p == usize::MAX || reach[i] < reach[p]) {
                p = i;
            }
        }
        done[p] = true;
        ordering.push(p);
        if core[p].is_finite() {
            for (j, d) in neighbours(p) {
                if done[j] {
                    continue;
                }
                let r = d.max(core[p]);
                if r < reach[j] {
                    reach[j] = r;
                    pred[j] = p as i64;
                }
            }
        }
    }
    (ordering, reach, pred)
}

#[derive(Clone, Copy)]
struct SteepDown {
    start: usize,
    end: usize,
    mib: f64,
}

fn extend_region(steep: &[bool], xward: &[bool], start: usize, min_pts: usize) -> usize {
    let mut non_xward = 0;
    let mut end = start;
    let mut index = start;
    while index < steep.len() {
        if steep[index] {
            non_xward = 0;
            end = index;
        } else if !xward[index] {
            non_xward += 1;
            if non_xward > min_pts {
                break;
            }
        } else {
            return end;
        }
        index += 1;
    }
    end
}

fn update_filter_sdas(sdas: Vec<SteepDown>, mib: f64, xi_c: f64, plot: &[f64]) -> Vec<SteepDown> {
    if mib.is_infinite() {
        return Vec::new();
    }
    sdas.into_iter()
        .filter(|d| mib <= plot[d.start] * xi_c)
        .map(|mut d| {
            d.mib = d.mib.max(mib);
            d
        })
        .collect()
}

fn correct_predecessor(
    plot: &[f64],
    pred: &[i64],
    ordering: &[usize],
    s: usize,
    mut e: usize,
) -> Option<(usize, usize)> {
    while s < e {
        if plot[s] > plot[e] {
            return Some((s, e));
        }
        let p_e = pred[e];
        if (s..e).any(|i| ordering[i] as i64 == p_e) {
            return Some((s, e));
        }
        e -= 1;
    }
    None
}

fn xi_clusters(
    plot_in: &[f64],
    pred: &[i64],
    ordering: &[usize],
    xi: f64,
    min_pts: usize,
    min_cluster_size: usize,
) -> Vec<(usize, usize)> {
    let mut plot = plot_in.to_vec();
    plot.push(f64::INFINITY);
    let xi_c = 1.0 - xi;
    let m = plot_in.len();
    let ratio: Vec<f64> = (0..m).map(|i| plot[i] / plot[i + 1]).collect();
    let steep_up: Vec<bool> = ratio.iter().map(|&r| r <= xi_c).collect();
    let steep_down: Vec<bool> = ratio.iter().map(|&r| r >= 1.0 / xi_c).collect();
    let down: Vec<bool> = ratio.iter().map(|&r| r > 1.0).collect();
    let up: Vec<bool> = ratio.iter().map(|&r| r < 1.0).collect();

    let mut sdas: Vec<SteepDown> = Vec::new();
    let mut clusters = Vec::new();
    let mut index = 0usize;
    let mut mib = 0.0f64;
    for steep_index in (0..m).filter(|&i| steep_up[i] || steep_down[i]) {
        if steep_index < index {
            continue;
        }
        mib = plot[index..=steep_index].iter().fold(mib, |a, &b| a.max(b));
        if steep_down[steep_index] {
            sdas = update_filter_sdas(sdas, mib, xi_c, &plot);
            let end = extend_region(&steep_down, &up, steep_index, min_pts);
            sdas.push(SteepDown {
                start: steep_index,
                end,
                mib: 0.0,
            });
            index = end + 1;
            mib = plot[index];
        } else {
            sdas = update_filter_sdas(sdas, mib, xi_c, &plot);
            let u_start = steep_index;
            let u_end = extend_region(&steep_up, &down, u_start, min_pts);
            index = u_end + 1;
            mib = plot[index];
            let mut found = Vec::new();
            for d in &sdas {
                let mut c_start = d.start;
                let mut c_end = u_end;
                if plot[c_end + 1] * xi_c < d.mib {
                    continue;
                }
                let d_max = plot[d.start];
                if d_max * xi_c >= plot[c_end + 1] {
                    while plot[c_start + 1] > plot[c_end + 1] && c_start < d.end {
                        c_start += 1;
                    }
                } else if plot[c_end + 1] * xi_c >= d_max {
                    while plot[c_end - 1] > d_max && c_end > u_start {
                        c_end -= 1;
                    }
                }
                let Some((s, e)) = correct_predecessor(&plot, pred, ordering, c_start, c_end) else {
                    continue;
                };
                if e + 1 - s < min_cluster_size || s > d.end || e < u_start {
                    continue;
                }
                found.push((s, e));
            }
            found.reverse();
            clusters.extend(found);
        }
    }
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::dbscan::partition;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn methods() -> Vec<AltMethod> {
        vec![
            AltMethod::Agglomerative { threshold: 1.0 },
            AltMethod::Birch {
                branching: 8,
                threshold: 2.0,
            },
            AltMethod::Optics {
                min_pts: 8,
                xi: 0.3,
                min_cluster_size: 0,
                max_eps: None,
            },
        ]
    }

    fn two_blobs(seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        for c in [Point3::origin(), Point3::new(20.0, 5.0, 0.0)] {
            for _ in 0..40 {
                pts.push(
                    c + Vector3::new(
                        rng.random_range(-0.4..0.4),
                        rng.random_range(-0.4..0.4),
                        rng.random_range(-0.4..0.4),
                    ),
                );
            }
        }
        pts
    }

    #[test]
    fn two_blobs_under_every_method() {
        let pts = two_blobs(4);
        let truth = partition(&[vec![0; 40], vec![1; 40]].concat());
        for m in methods() {
            let labels = alt_cluster(&pts, &m).unwrap();
            assert_eq!(partition(&labels), truth, "{}", m.name());
        }
    }

    #[test]
    fn duplicates_form_one_cluster() {
        let pts = vec![Point3::new(1.0, 2.0, 3.0); 10];
        for m in methods() {
            let labels = alt_cluster(&pts, &m).unwrap();
            assert_eq!(labels, vec![0; 10], "{}", m.name());
        }
    }

    #[test]
    fn zero_threshold_keeps_points_apart() {
        let pts = two_blobs(5);
        let labels = alt_cluster(&pts, &AltMethod::Agglomerative { threshold: 0.0 }).unwrap();
        assert_eq!(labels, (0..80).collect::<Vec<i32>>());
    }

    #[test]
    fn unknown_name_is_config_error() {
        assert!(matches!(alt_method_by_name("kmeans"), Err(Error::Config(_))));
        assert!(alt_method_by_name("optics").is_ok());
        assert!(alt_cluster(&[Point3::origin()], &AltMethod::Birch { branching: 1, threshold: 1.0 }).is_err());
    }

    #[test]
    fn birch_leaves_respect_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Point3> = (0..500)
            .map(|_| Point3::new(rng.random_range(0.0..20.0), rng.random_range(0.0..2.0), 0.0))
            .collect();
        let labels = alt_cluster(&pts, &AltMethod::Birch { branching: 5, threshold: 0.7 }).unwrap();
        let k = labels.iter().max().unwrap() + 1;
        assert!(k > 5, "a 20 m strip needs several 0.7 m subclusters, got {k}");
    }

    #[test]
    fn optics_reachability_is_valid_ordering() {
        let pts = two_blobs(6);
        let (ordering, reach, _) = optics_graph(&pts, 4, f64::INFINITY);
        let mut seen = ordering.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..pts.len()).collect::<Vec<_>>());
        assert!(reach[ordering[0]].is_infinite());
        // Exactly one big jump separates the blobs.
        let jumps = ordering.iter().skip(1).filter(|&&i| reach[i] > 5.0).count();
        assert_eq!(jumps, 1);
    }
}
