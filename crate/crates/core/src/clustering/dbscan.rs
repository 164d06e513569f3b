//! Density-based clustering with a deterministic, order-free border rule.

use crate::exec::{self, Execution};
use crate::spatial::GridIndex;
use crate::Point3;

/// Label given to points that belong to no cluster.
pub const NOISE: i32 = -1;

/// DBSCAN over `points`.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`. Clusters are the connected components of the core graph.
/// A border point joins the cluster of its nearest core neighbour, ties going
/// to the lexicographically smallest neighbour, so the partition does not
/// depend on input order. Labels are numbered by first appearance in the
/// input.
pub fn dbscan(points: &[Point3], eps: f64, min_pts: usize) -> Vec<i32> {
    dbscan_with(Execution::default(), points, eps, min_pts)
}

pub fn dbscan_with(exec: Execution, points: &[Point3], eps: f64, min_pts: usize) -> Vec<i32> {
    assert!(eps > 0.0 && min_pts >= 1, "dbscan needs eps > 0 and min_pts >= 1");
    if points.is_empty() {
        return Vec::new();
    }
    let grid = GridIndex::new(points, eps);
    let neighbors = exec::map_slice(exec, points, |p| grid.within(p, eps));
    label_from_neighbors(points, &neighbors, min_pts)
}

/// Shared tail of the fast and the reference implementation: core graph
/// components, border assignment, first-appearance relabeling.
pub(crate) fn label_from_neighbors(
    points: &[Point3],
    neighbors: &[Vec<usize>],
    min_pts: usize,
) -> Vec<i32> {
    let n = points.len();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut comp = vec![NOISE; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || comp[s] != NOISE {
            continue;
        }
        comp[s] = next;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &w in &neighbors[v] {
                if core[w] && comp[w] == NOISE {
                    comp[w] = next;
                    stack.push(w);
                }
            }
        }
        next += 1;
    }
    let mut labels = comp.clone();
    for i in 0..n {
        if core[i] {
            continue;
        }
        let best = neighbors[i]
            .iter()
            .filter(|&&j| core[j])
            .min_by(|&&a, &&b| {
                let (da, db) = ((points[a] - points[i]).norm_squared(), (points[b] - points[i]).norm_squared());
                da.total_cmp(&db).then_with(|| lex(&points[a], &points[b]))
            });
        if let Some(&j) = best {
            labels[i] = comp[j];
        }
    }
    relabel_by_first_appearance(&mut labels);
    labels
}

fn lex(a: &Point3, b: &Point3) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}

/// Renumbers non-noise labels 0, 1, ... in order of first occurrence.
pub fn relabel_by_first_appearance(labels: &mut [i32]) {
    let mut map = std::collections::HashMap::new();
    for l in labels.iter_mut() {
        if *l < 0 {
            *l = NOISE;
            continue;
        }
        let next = map.len() as i32;
        *l = *map.entry(*l).or_insert(next);
    }
}

/// Partition as a canonical set of sorted member lists; noise excluded.
pub fn partition(labels: &[i32]) -> std::collections::BTreeSet<Vec<usize>> {
    let mut groups: std::collections::BTreeMap<i32, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            groups.entry(l).or_default().push(i);
        }
    }
    groups.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Quadratic neighbour scan feeding the same labeling rules.
    fn naive(points: &[Point3], eps: f64, min_pts: usize) -> Vec<i32> {
        let nb: Vec<Vec<usize>> = points
            .iter()
            .map(|p| (0..points.len()).filter(|&j| (points[j] - p).norm() <= eps).collect())
            .collect();
        label_from_neighbors(points, &nb, min_pts)
    }

    fn blob(center: Point3, n: usize, spread: f64, rng: &mut ChaCha8Rng) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                center
                    + nalgebra::Vector3::new(
                        rng.random_range(-spread..spread),
                        rng.random_range(-spread..spread),
                        rng.random_range(-spread..spread),
                    )
            })
            .collect()
    }

    #[test]
    fn two_dense_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = blob(Point3::origin(), 20, 0.25, &mut rng);
        pts.extend(blob(Point3::new(10.0, 0.0, 0.0), 20, 0.25, &mut rng));
        let labels = dbscan(&pts, 1.0, 3);
        assert!(labels[..20].iter().all(|&l| l == 0));
        assert!(labels[20..].iter().all(|&l| l == 1));
        assert_eq!(labels, naive(&pts, 1.0, 3));
    }

    #[test]
    fn lone_point_is_noise() {
        assert_eq!(dbscan(&[Point3::origin()], 1.0, 2), vec![NOISE]);
        assert!(dbscan(&[], 1.0, 2).is_empty());
    }

    #[test]
    fn chained_line_is_one_cluster() {
        let pts: Vec<Point3> = (0..10).map(|i| Point3::new(0.5 * i as f64, 0.0, 0.0)).collect();
        assert_eq!(dbscan(&pts, 0.6, 2), vec![0; 10]);
    }

    #[test]
    fn border_goes_to_nearest_core() {
        // Two core chains at x <= 0 and x >= 2; the border point at 0.9 is
        // within eps of both ends but closer to the left one.
        let mut pts: Vec<Point3> = (0..4).map(|i| Point3::new(-0.5 * i as f64, 0.0, 0.0)).collect();
        pts.extend((0..4).map(|i| Point3::new(2.0 + 0.5 * i as f64, 0.0, 0.0)));
        pts.push(Point3::new(0.9, 0.0, 0.0));
        let labels = dbscan(&pts, 1.15, 4);
        assert_eq!(labels[8], labels[0]);
        assert_ne!(labels[0], labels[4]);
    }

    fn random_instance(seed: u64) -> (Vec<Point3>, f64, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=200);
        let pts = (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(0.0..6.0),
                    rng.random_range(0.0..3.0),
                    rng.random_range(0.0..0.5),
                )
            })
            .collect();
        (pts, rng.random_range(0.2..0.9), rng.random_range(1..6))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn grid_matches_naive(seed in 0u64..100_000) {
            let (pts, eps, m) = random_instance(seed);
            prop_assert_eq!(dbscan(&pts, eps, m), naive(&pts, eps, m));
        }

        #[test]
        fn partition_ignores_order(seed in 0u64..100_000) {
            let (pts, eps, m) = random_instance(seed);
            let base = partition(&dbscan(&pts, eps, m));
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let mut perm: Vec<usize> = (0..pts.len()).collect();
            perm.shuffle(&mut rng);
            let shuffled: Vec<Point3> = perm.iter().map(|&i| pts[i]).collect();
            let labels = dbscan(&shuffled, eps, m);
            let mut back = vec![NOISE; pts.len()];
            for (k, &i) in perm.iter().enumerate() {
                back[i] = labels[k];
            }
            prop_assert_eq!(partition(&back), base);
        }
    }
}
