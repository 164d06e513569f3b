//! Incremental (Bowyer–Watson) Delaunay tetrahedralization.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::predicates::{insphere_perturbed, orient3d};
use crate::error::{Error, Result};
use crate::spatial::bounding_box;
use crate::Point3;

/// Relative tolerance for rejecting flat input and singular circumcenter
/// systems.
pub const EPS_GEOM: f64 = 1e-10;

const NONE: u32 = u32::MAX;
/// Super-tetrahedron size as a multiple of the input extent.
const SUPER_SCALE: f64 = 1e5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tetrahedron {
    pub v: [u32; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TetraMesh {
    pub points: Vec<Point3>,
    /// Positively oriented (see [`super::predicates`]).
    pub tets: Vec<Tetrahedron>,
    /// `neighbors[t][i]` is the tetrahedron across the face opposite
    /// `tets[t].v[i]`, or `None` on the mesh boundary.
    pub neighbors: Vec<[Option<u32>; 4]>,
    /// Input indices that repeat an earlier point and were left out.
    pub duplicates: Vec<u32>,
}

impl TetraMesh {
    /// Pairs `(s, t)`, `s < t`, of tetrahedra sharing a triangular face.
    pub fn face_adjacency(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for (t, nb) in self.neighbors.iter().enumerate() {
            for u in nb.iter().flatten() {
                if (t as u32) < *u {
                    out.push((t as u32, *u));
                }
            }
        }
        out
    }

    /// Faces with a single incident tetrahedron, as sorted vertex triples.
    pub fn boundary_faces(&self) -> Vec<[u32; 3]> {
        let mut out = Vec::new();
        for (t, nb) in self.neighbors.iter().enumerate() {
            for i in 0..4 {
                if nb[i].is_none() {
                    out.push(face(&self.tets[t].v, i));
                }
            }
        }
        out
    }

    pub fn boundary_vertices(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.boundary_faces().into_iter().flatten().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn tet_points(&self, t: usize) -> [Point3; 4] {
        self.tets[t].v.map(|i| self.points[i as usize])
    }

    pub fn volume(&self) -> f64 {
        (0..self.tets.len())
            .map(|t| {
                let [a, b, c, d] = self.tet_points(t);
                ((b - a).cross(&(c - a)).dot(&(d - a)) / 6.0).abs()
            })
            .sum()
    }
}

/// Sorted vertex triple of the face opposite `v[i]`.
pub(crate) fn face(v: &[u32; 4], i: usize) -> [u32; 3] {
    let mut f = [0; 3];
    let mut k = 0;
    for (j, &x) in v.iter().enumerate() {
        if j != i {
            f[k] = x;
            k += 1;
        }
    }
    f.sort_unstable();
    f
}

#[derive(Clone, Copy)]
struct Cell {
    v: [u32; 4],
    n: [u32; 4],
    alive: bool,
}

struct Builder {
    pts: Vec<Point3>,
    n_input: u32,
    cells: Vec<Cell>,
    free: Vec<u32>,
    in_cavity: Vec<u32>,
    tested: Vec<u32>,
    stamp: u32,
    last: u32,
}

/// Delaunay tetrahedralization of `points`.
///
/// Cospherical configurations are resolved by a symbolic perturbation keyed
/// on the input index, so the output is a valid tetrahedralization even for
/// highly regular input (cube corners, grids). Exact duplicates are skipped.
pub fn tetrahedralize(points: &[Point3]) -> Result<TetraMesh> {
    if points.len() < 5 {
        return Err(Error::DegenerateInput(format!(
            "{} points, at least 5 are needed",
            points.len()
        )));
    }
    if !points.iter().all(crate::frames::is_finite) {
        return Err(Error::NonFinite("tetrahedralization input"));
    }
    check_not_flat(points)?;

    let n = points.len() as u32;
    let (lo, hi) = bounding_box(points);
    let center = nalgebra::center(&lo, &hi);
    let m = SUPER_SCALE * (hi - lo).amax();
    let mut pts = points.to_vec();
    for s in [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]] {
        pts.push(center + nalgebra::Vector3::new(s[0], s[1], s[2]) * m);
    }
    let mut sv = [n, n + 1, n + 2, n + 3];
    if orient3d(
        &pts[sv[0] as usize],
        &pts[sv[1] as usize],
        &pts[sv[2] as usize],
        &pts[sv[3] as usize],
    ) < 0.0
    {
        sv.swap(0, 1);
    }
    let mut b = Builder {
        pts,
        n_input: n,
        cells: vec![Cell {
            v: sv,
            n: [NONE; 4],
            alive: true,
        }],
        free: Vec::new(),
        in_cavity: vec![0],
        tested: vec![0],
        stamp: 0,
        last: 0,
    };

    let mut duplicates = Vec::new();
    for i in morton_order(points) {
        if !b.insert(i) {
            duplicates.push(i);
        }
    }
    duplicates.sort_unstable();
    Ok(b.finish(points, duplicates))
}

/// Rejects input whose points all lie (nearly) in one plane.
fn check_not_flat(points: &[Point3]) -> Result<()> {
    let p0 = points[0];
    let far = |it: &mut dyn Iterator<Item = (usize, f64)>| {
        it.fold((0usize, -1.0f64), |best, (i, d)| if d > best.1 { (i, d) } else { best })
    };
    let (i1, d1) = far(&mut points.iter().enumerate().map(|(i, p)| (i, (p - p0).norm())));
    if d1 == 0.0 {
        return Err(Error::DegenerateInput("all points coincide".into()));
    }
    let p1 = points[i1];
    let axis = (p1 - p0) / d1;
    let (i2, d2) = far(&mut points.iter().enumerate().map(|(i, p)| {
        let r = p - p0;
        (i, (r - axis * r.dot(&axis)).norm())
    }));
    if d2 <= EPS_GEOM * d1 {
        return Err(Error::DegenerateInput("all points are collinear".into()));
    }
    let p2 = points[i2];
    let (_, d3) = far(
        &mut points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, orient3d(&p0, &p1, &p2, p).abs())),
    );
    if d3 <= EPS_GEOM * d1 * d1 * d1 {
        return Err(Error::DegenerateInput("all points are coplanar".into()));
    }
    Ok(())
}

/// Insertion order along a Z-order curve keeps consecutive points close,
/// which keeps the point-location walks short.
fn morton_order(points: &[Point3]) -> Vec<u32> {
    let (lo, hi) = bounding_box(points);
    let ext = (hi - lo).map(|e| if e > 0.0 { e } else { 1.0 });
    let scale = ((1u64 << 21) - 1) as f64;
    let spread = |mut x: u64| {
        x &= 0x1f_ffff;
        x = (x | x << 32) & 0x1f00000000ffff;
        x = (x | x << 16) & 0x1f0000ff0000ff;
        x = (x | x << 8) & 0x100f00f00f00f00f;
        x = (x | x << 4) & 0x10c30c30c30c30c3;
        (x | x << 2) & 0x1249249249249249
    };
    let mut keyed: Vec<(u64, u32)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let q = |k: usize| (((p[k] - lo[k]) / ext[k]) * scale) as u64;
            (spread(q(0)) | spread(q(1)) << 1 | spread(q(2)) << 2, i as u32)
        })
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

impl Builder {
    fn rank(&self, v: u32) -> i64 {
        if v < self.n_input {
            v as i64
        } else {
            -1 - (v - self.n_input) as i64
        }
    }

    fn p(&self, v: u32) -> &Point3 {
        &self.pts[v as usize]
    }

    fn in_conflict(&self, c: u32, pi: u32) -> bool {
        let cell = &self.cells[c as usize];
        let tet = cell.v.map(|v| self.p(v));
        let ranks = cell.v.map(|v| self.rank(v));
        insphere_perturbed(tet, ranks, self.p(pi), self.rank(pi))
    }

    /// Signed orientation of cell `c` with vertex `i` replaced by `q`.
    fn orient_replaced(&self, c: u32, i: usize, q: &Point3) -> f64 {
        let cell = &self.cells[c as usize];
        let mut t = cell.v.map(|v| self.p(v));
        t[i] = q;
        orient3d(t[0], t[1], t[2], t[3])
    }

    fn locate(&self, q: &Point3) -> u32 {
        let limit = 4 * self.cells.len() + 64;
        let mut c = self.last;
        let mut step = 0usize;
        'walk: while step < limit {
            step += 1;
            let off = step % 4;
            for j in 0..4 {
                let i = (j + off) % 4;
                if self.orient_replaced(c, i, q) < 0.0 {
                    let nb = self.cells[c as usize].n[i];
                    if nb == NONE {
                        break 'walk;
                    }
                    c = nb;
                    continue 'walk;
                }
            }
            return c;
        }
        self.locate_scan(q)
    }

    fn locate_scan(&self, q: &Point3) -> u32 {
        (0..self.cells.len() as u32)
            .find(|&c| {
                self.cells[c as usize].alive
                    && (0..4).all(|i| self.orient_replaced(c, i, q) >= 0.0)
            })
            .expect("super-tetrahedron encloses every input point")
    }

    fn alloc(&mut self, cell: Cell) -> u32 {
        if let Some(id) = self.free.pop() {
            self.cells[id as usize] = cell;
            id
        } else {
            self.cells.push(cell);
            self.in_cavity.push(0);
            self.tested.push(0);
            (self.cells.len() - 1) as u32
        }
    }

    /// Returns false when `pi` duplicates an existing vertex.
    fn insert(&mut self, pi: u32) -> bool {
        let q = *self.p(pi);
        let c0 = self.locate(&q);
        if self.cells[c0 as usize].v.iter().any(|&v| *self.p(v) == q) {
            return false;
        }
        self.stamp += 1;
        let stamp = self.stamp;
        debug_assert!(self.in_conflict(c0, pi));

        let mut cavity = vec![c0];
        self.in_cavity[c0 as usize] = stamp;
        let mut stack = vec![c0];
        while let Some(c) = stack.pop() {
            for i in 0..4 {
                let nb = self.cells[c as usize].n[i];
                if nb == NONE
                    || self.in_cavity[nb as usize] == stamp
                    || self.tested[nb as usize] == stamp
                {
                    continue;
                }
                if self.in_conflict(nb, pi) {
                    self.in_cavity[nb as usize] = stamp;
                    cavity.push(nb);
                    stack.push(nb);
                } else {
                    self.tested[nb as usize] = stamp;
                }
            }
        }

        // (old cell, face index, outside neighbour) on the cavity surface.
        let mut surface = Vec::new();
        for &c in &cavity {
            let cell = self.cells[c as usize];
            for i in 0..4 {
                let nb = cell.n[i];
                if nb == NONE || self.in_cavity[nb as usize] != stamp {
                    surface.push((c, i, nb));
                }
            }
        }
        let old: Vec<Cell> = cavity.iter().map(|&c| self.cells[c as usize]).collect();
        let old_of: HashMap<u32, usize> = cavity.iter().enumerate().map(|(k, &c)| (c, k)).collect();
        for &c in &cavity {
            self.cells[c as usize].alive = false;
        }

        let mut open: HashMap<(u32, u32), (u32, usize)> = HashMap::new();
        let mut last = NONE;
        for (c, i, nb) in surface {
            let mut v = old[old_of[&c]].v;
            v[i] = pi;
            let mut n = [NONE; 4];
            n[i] = nb;
            let id = self.alloc(Cell { v, n, alive: true });
            if nb != NONE {
                let back = &mut self.cells[nb as usize].n;
                let j = back.iter().position(|&x| x == c).expect("mutual adjacency");
                back[j] = id;
            }
            for j in 0..4 {
                if j == i {
                    continue;
                }
                let mut e = [0u32; 2];
                let mut k = 0;
                for (m, &x) in v.iter().enumerate() {
                    if m != i && m != j {
                        e[k] = x;
                        k += 1;
                    }
                }
                let key = (e[0].min(e[1]), e[0].max(e[1]));
                if let Some((other, oj)) = open.remove(&key) {
                    self.cells[id as usize].n[j] = other;
                    self.cells[other as usize].n[oj] = id;
                } else {
                    open.insert(key, (id, j));
                }
            }
            last = id;
        }
        debug_assert!(open.is_empty(), "cavity surface must be closed");
        // Slots are recycled only now, so that back-links searched above
        // never see a cavity id reused for a new cell.
        self.free.extend_from_slice(&cavity);
        self.last = last;
        true
    }

    fn finish(self, points: &[Point3], duplicates: Vec<u32>) -> TetraMesh {
        let n = self.n_input;
        let mut remap = vec![NONE; self.cells.len()];
        let mut tets = Vec::new();
        for (c, cell) in self.cells.iter().enumerate() {
            if cell.alive && cell.v.iter().all(|&v| v < n) {
                remap[c] = tets.len() as u32;
                tets.push(Tetrahedron { v: cell.v });
            }
        }
        let mut neighbors = Vec::with_capacity(tets.len());
        for cell in self.cells.iter() {
            if cell.alive && cell.v.iter().all(|&v| v < n) {
                neighbors.push(cell.n.map(|nb| {
                    if nb == NONE || remap[nb as usize] == NONE {
                        None
                    } else {
                        Some(remap[nb as usize])
                    }
                }));
            }
        }
        TetraMesh {
            points: points.to_vec(),
            tets,
            neighbors,
            duplicates,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delaunay::predicates::insphere;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    /// Every 4-subset whose open circumsphere holds no other input point.
    fn brute_force_delaunay(pts: &[Point3]) -> BTreeSet<[u32; 4]> {
        let n = pts.len();
        let mut out = BTreeSet::new();
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    for d in c + 1..n {
                        let mut t = [a, b, c, d];
                        let o = orient3d(&pts[a], &pts[b], &pts[c], &pts[d]);
                        if o == 0.0 {
                            continue;
                        }
                        if o < 0.0 {
                            t.swap(0, 1);
                        }
                        let empty = (0..n).filter(|e| !t.contains(e)).all(|e| {
                            insphere(&pts[t[0]], &pts[t[1]], &pts[t[2]], &pts[t[3]], &pts[e]) <= 0.0
                        });
                        if empty {
                            out.insert([a as u32, b as u32, c as u32, d as u32]);
                        }
                    }
                }
            }
        }
        out
    }

    fn sorted_tets(mesh: &TetraMesh) -> BTreeSet<[u32; 4]> {
        mesh.tets
            .iter()
            .map(|t| {
                let mut v = t.v;
                v.sort_unstable();
                v
            })
            .collect()
    }

    fn assert_valid(mesh: &TetraMesh) {
        for (t, tet) in mesh.tets.iter().enumerate() {
            let [a, b, c, d] = mesh.tet_points(t);
            assert!(orient3d(&a, &b, &c, &d) > 0.0, "tet {t} not positively oriented");
            for (i, nb) in mesh.neighbors[t].iter().enumerate() {
                if let Some(u) = nb {
                    let back = mesh.neighbors[*u as usize]
                        .iter()
                        .position(|x| *x == Some(t as u32))
                        .expect("neighbour relation is symmetric");
                    assert_eq!(face(&tet.v, i), face(&mesh.tets[*u as usize].v, back));
                }
            }
        }
        // Every face is used by one or two tetrahedra.
        let mut count: HashMap<[u32; 3], usize> = HashMap::new();
        for tet in &mesh.tets {
            for i in 0..4 {
                *count.entry(face(&tet.v, i)).or_default() += 1;
            }
        }
        assert!(count.values().all(|&c| c == 1 || c == 2));
        assert_eq!(
            count.values().filter(|&&c| c == 1).count(),
            mesh.boundary_faces().len()
        );
    }

    #[test]
    fn unit_tet_with_centroid() {
        let mut pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ];
        pts.push(Point3::new(0.25, 0.25, 0.25));
        let mesh = tetrahedralize(&pts).unwrap();
        assert_eq!(mesh.tets.len(), 4);
        assert!(mesh.tets.iter().all(|t| t.v.contains(&4)));
        assert_eq!(sorted_tets(&mesh), brute_force_delaunay(&pts));
        assert!((mesh.volume() - 1.0 / 6.0).abs() < 1e-12);
        assert_valid(&mesh);
    }

    #[test]
    fn far_fifth_point_matches_brute_force() {
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.1, 0.0),
            Point3::new(0.2, 1.0, 0.1),
            Point3::new(0.1, 0.3, 1.0),
            Point3::new(8.0, 7.5, 9.0),
        ];
        let mesh = tetrahedralize(&pts).unwrap();
        let brute = brute_force_delaunay(&pts);
        assert_eq!(mesh.tets.len(), brute.len());
        assert_eq!(sorted_tets(&mesh), brute);
    }

    #[test]
    fn cube_corners_tile_the_cube() {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push(Point3::new(x, y, z));
                }
            }
        }
        let mesh = tetrahedralize(&pts).unwrap();
        assert_valid(&mesh);
        assert!((mesh.volume() - 1.0).abs() < 1e-12);
        for t in 0..mesh.tets.len() {
            let [a, b, c, d] = mesh.tet_points(t);
            for e in &pts {
                assert!(insphere(&a, &b, &c, &d, e) <= 1e-10);
            }
        }
    }

    #[test]
    fn regular_grid_is_valid() {
        let mut pts = Vec::new();
        for x in 0..5 {
            for y in 0..4 {
                for z in 0..3 {
                    pts.push(Point3::new(x as f64, y as f64 * 0.5, z as f64 * 0.25));
                }
            }
        }
        let mesh = tetrahedralize(&pts).unwrap();
        assert_valid(&mesh);
        assert!((mesh.volume() - 4.0 * 1.5 * 0.5).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let four = random_points(4, 1);
        assert!(matches!(tetrahedralize(&four), Err(Error::DegenerateInput(_))));
        let flat: Vec<Point3> = random_points(30, 2)
            .into_iter()
            .map(|p| Point3::new(p.x, p.y, 0.5 * p.x - 0.25 * p.y))
            .collect();
        assert!(matches!(tetrahedralize(&flat), Err(Error::DegenerateInput(_))));
        let line: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(tetrahedralize(&line), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn duplicates_are_skipped() {
        let mut pts = random_points(40, 3);
        pts.push(pts[5]);
        pts.push(pts[7]);
        let mesh = tetrahedralize(&pts).unwrap();
        assert_eq!(mesh.duplicates.len(), 2);
        assert_valid(&mesh);
    }

    #[test]
    fn random_sets_match_brute_force() {
        for seed in 0..10 {
            let pts = random_points(12 + seed as usize, seed);
            let mesh = tetrahedralize(&pts).unwrap();
            assert_eq!(sorted_tets(&mesh), brute_force_delaunay(&pts), "seed {seed}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn empty_circumsphere_holds(seed in 0u64..10_000, n in 5usize..150) {
            let pts = random_points(n, seed);
            let mesh = tetrahedralize(&pts).unwrap();
            assert_valid(&mesh);
            for t in 0..mesh.tets.len() {
                let [a, b, c, d] = mesh.tet_points(t);
                for (i, e) in pts.iter().enumerate() {
                    if mesh.tets[t].v.contains(&(i as u32)) {
                        continue;
                    }
                    prop_assert!(insphere(&a, &b, &c, &d, e) <= 0.0);
                }
            }
        }
    }
}
