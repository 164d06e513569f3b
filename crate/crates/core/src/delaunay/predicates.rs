//! Exact orientation and in-sphere tests on top of the adaptive-precision
//! predicates from the `robust` crate.
//!
//! Sign conventions: `orient3d(a, b, c, d) > 0` means the tetrahedron
//! `(a, b, c, d)` is positively oriented; for such a tetrahedron
//! `insphere(a, b, c, d, e) > 0` means `e` is strictly inside its
//! circumsphere.

use robust::Coord3D;

use crate::Point3;

#[inline]
fn c(p: &Point3) -> Coord3D<f64> {
    Coord3D {
        x: p.x,
        y: p.y,
        z: p.z,
    }
}

#[inline]
pub fn orient3d(a: &Point3, b: &Point3, c_: &Point3, d: &Point3) -> f64 {
    robust::orient3d(c(a), c(b), c(c_), c(d))
}

#[inline]
pub fn insphere(a: &Point3, b: &Point3, c_: &Point3, d: &Point3, e: &Point3) -> f64 {
    robust::insphere(c(a), c(b), c(c_), c(d), c(e))
}

/// In-sphere test with a symbolic perturbation that breaks every cospherical
/// tie.
///
/// Each point is lifted onto the paraboloid with an extra infinitesimal
/// height whose order is fixed by `rank` (a larger rank gets the larger
/// offset). When the exact test returns zero, the leading perturbation term
/// decides: raising the query point pushes it outside, raising tetrahedron
/// vertex `k` pulls the query inside exactly when its barycentric coordinate
/// for `k` is positive.
///
/// `tet` must be positively oriented.
pub fn insphere_perturbed(tet: [&Point3; 4], ranks: [i64; 4], e: &Point3, e_rank: i64) -> bool {
    let s = insphere(tet[0], tet[1], tet[2], tet[3], e);
    if s != 0.0 {
        return s > 0.0;
    }
    let mut order = [(e_rank, 4usize), (ranks[0], 0), (ranks[1], 1), (ranks[2], 2), (ranks[3], 3)];
    order.sort_unstable_by(|a, b| b.0.cmp(&a.0));
    for &(_, k) in &order {
        if k == 4 {
            return false;
        }
        let mut q = tet;
        q[k] = e;
        let o = orient3d(q[0], q[1], q[2], q[3]);
        if o != 0.0 {
            return o > 0.0;
        }
    }
    // Unreachable for a non-degenerate tetrahedron: e cannot be coplanar with
    // all four faces at once.
    false
}
