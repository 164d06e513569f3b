//! Uniform hash grid for fixed-radius and nearest-neighbor queries, plus a few
//! small distance helpers shared across modules.

use std::collections::HashMap;

use crate::Point3;

type Cell = [i64; 3];

pub struct GridIndex<'a> {
    points: &'a [Point3],
    cell: f64,
    cells: HashMap<Cell, Vec<u32>>,
    lo: Cell,
    hi: Cell,
}

impl<'a> GridIndex<'a> {
    pub fn new(points: &'a [Point3], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell size must be positive");
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let c = key(p, cell);
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
            cells.entry(c).or_default().push(i as u32);
        }
        Self {
            points,
            cell,
            cells,
            lo,
            hi,
        }
    }

    /// Picks a cell size so that an elongated cloud still ends up with a
    /// handful of points per occupied cell.
    pub fn with_auto_cell(points: &'a [Point3]) -> Self {
        let (lo, hi) = bounding_box(points);
        let ext = hi - lo;
        let longest = ext.amax().max(1e-9);
        let n = points.len().max(1) as f64;
        Self::new(points, (longest / n.sqrt()).max(longest * 1e-6))
    }

    pub fn points(&self) -> &'a [Point3] {
        self.points
    }

    /// Indices of all points with `|p - q| <= radius`, in ascending order.
    pub fn within(&self, q: &Point3, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i64;
        let c = key(q, self.cell);
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(ids) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &i in ids {
                            if (self.points[i as usize] - q).norm_squared() <= r2 {
                                out.push(i as usize);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Nearest point to `q` as `(index, squared distance)`; ties go to the
    /// lower index. `None` only for an empty index.
    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let c = key(q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        // Chebyshev distance from the query cell to the occupied box bounds the
        // number of empty rings that have to be skipped.
        let first = (0..3)
            .map(|k| (self.lo[k] - c[k]).max(c[k] - self.hi[k]).max(0))
            .max()
            .unwrap_or(0);
        let last = (0..3)
            .map(|k| (c[k] - self.lo[k]).abs().max((self.hi[k] - c[k]).abs()))
            .max()
            .unwrap_or(0);
        let mut ring = first;
        loop {
            self.scan_ring(c, ring, q, &mut best);
            if let Some((_, d2)) = best {
                // Anything in ring r+1 is at least r cells away.
                let bound = ring as f64 * self.cell;
                if bound * bound > d2 {
                    break;
                }
            }
            if ring >= last {
                break;
            }
            ring += 1;
        }
        best
    }

    fn scan_ring(&self, c: Cell, r: i64, q: &Point3, best: &mut Option<(usize, f64)>) {
        let range = |k: usize| (c[k] - r).max(self.lo[k])..=(c[k] + r).min(self.hi[k]);
        for x in range(0) {
            for y in range(1) {
                let edge_xy = (x - c[0]).abs() == r || (y - c[1]).abs() == r;
                let zs: Vec<i64> = if edge_xy {
                    range(2).collect()
                } else {
                    [c[2] - r, c[2] + r]
                        .into_iter()
                        .filter(|z| *z >= self.lo[2] && *z <= self.hi[2])
                        .collect()
                };
                for z in zs {
                    if let Some(ids) = self.cells.get(&[x, y, z]) {
                        for &i in ids {
                            let d2 = (self.points[i as usize] - q).norm_squared();
                            let better = match *best {
                                None => true,
                                Some((bi, bd)) => d2 < bd || (d2 == bd && (i as usize) < bi),
                            };
                            if better {
                                *best = Some((i as usize, d2));
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn key(p: &Point3, cell: f64) -> Cell {
    [
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    ]
}

pub fn bounding_box(points: &[Point3]) -> (Point3, Point3) {
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if points.is_empty() {
        return (Point3::origin(), Point3::origin());
    }
    (lo, hi)
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let n = points.len().max(1) as f64;
    let sum = points
        .iter()
        .fold(nalgebra::Vector3::zeros(), |acc, p| acc + p.coords);
    Point3::from(sum / n)
}

/// Distance from `p` to the closed segment `[a, b]`.
pub fn point_segment_distance(p: &Point3, a: &Point3, b: &Point3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Distance from `p` to a polyline; a single-vertex polyline is a point.
pub fn point_polyline_distance(p: &Point3, line: &[Point3]) -> f64 {
    match line.len() {
        0 => f64::INFINITY,
        1 => (p - line[0]).norm(),
        _ => line
            .windows(2)
            .map(|w| point_segment_distance(p, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.2..0.2),
                )
            })
            .collect()
    }

    #[test]
    fn nearest_matches_linear_scan() {
        let pts = random_cloud(500, 1);
        let grid = GridIndex::new(&pts, 0.37);
        let queries = random_cloud(200, 2)
            .into_iter()
            .chain([Point3::new(100.0, -40.0, 7.0)]);
        for q in queries {
            let (gi, gd) = grid.nearest(&q).unwrap();
            let (bi, bd) = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm_squared()))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .unwrap();
            assert_eq!(gd, bd);
            assert_eq!(gi, bi);
        }
    }

    #[test]
    fn within_matches_linear_scan() {
        let pts = random_cloud(400, 3);
        let grid = GridIndex::new(&pts, 0.5);
        for q in random_cloud(50, 4) {
            let r = 0.8;
            let brute: Vec<usize> = (0..pts.len())
                .filter(|&i| (pts[i] - q).norm() <= r)
                .collect();
            assert_eq!(grid.within(&q, r), brute);
        }
    }

    #[test]
    fn segment_distance_cases() {
        let a = Point3::new(0.0, 0.0, 0.0);
        let b = Point3::new(2.0, 0.0, 0.0);
        assert_eq!(point_segment_distance(&Point3::new(1.0, 2.0, 0.0), &a, &b), 2.0);
        assert_eq!(point_segment_distance(&Point3::new(-3.0, 0.0, 4.0), &a, &b), 5.0);
        assert_eq!(point_segment_distance(&Point3::new(1.0, 1.0, 0.0), &a, &a), 2f64.sqrt());
    }
}
