//! Planar convex hulls (monotone chain) and the lofted "delta cone" surface between two hulls.

use serde::{Deserialize, Serialize};

use super::ClusterError;
use crate::scalar::Scalar;

#[inline]
fn cross<T: Scalar>(o: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise hull without collinear vertices, starting at the lowest-x (then
/// lowest-y) point. A single distinct point gives one vertex, collinear input gives the two
/// extreme points.
pub fn convex_hull<T: Scalar>(points: &[[T; 2]]) -> Vec<[T; 2]> {
    let mut pts: Vec<[T; 2]> = points.to_vec();
    pts.sort_by(|a, b| {
        a[0].partial_cmp(&b[0])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a[1].partial_cmp(&b[1]).unwrap_or(std::cmp::Ordering::Equal))
    });
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<[T; 2]> = Vec::with_capacity(pts.len() + 1);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= T::zero() {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= T::zero() {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area<T: Scalar>(poly: &[[T; 2]]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    let mut twice = T::zero();
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        twice += a[0] * b[1] - b[0] * a[1];
    }
    twice / T::lit(2.0)
}

/// True when `p` lies inside or on the counter-clockwise polygon, within `eps` of each edge.
pub fn contains<T: Scalar>(poly: &[[T; 2]], p: [T; 2], eps: T) -> bool {
    match poly.len() {
        0 => false,
        1 => (poly[0][0] - p[0]).abs() <= eps && (poly[0][1] - p[1]).abs() <= eps,
        2 => {
            let (a, b) = (poly[0], poly[1]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let along = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1])) / len;
            cross(a, b, p).abs() / len <= eps && along >= -eps && along <= len + eps
        }
        n => (0..n).all(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            cross(a, b, p) / len >= -eps
        }),
    }
}

/// Triangulated side surface joining a parent hull at `z_bottom` to a child hull at `z_top`.
///
/// `vertices` holds the bottom ring followed by the top ring; `triangles` index into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCone {
    pub vertices: Vec<[f64; 3]>,
    pub bottom_len: usize,
    pub triangles: Vec<[usize; 3]>,
}

/// Cumulative perimeter fraction at each vertex, starting at 0 for vertex 0.
fn arclength_params(poly: &[[f64; 2]]) -> Vec<f64> {
    let n = poly.len();
    let mut acc = Vec::with_capacity(n);
    let mut total = 0.0;
    for i in 0..n {
        acc.push(total);
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        total += ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    }
    acc.iter().map(|v| v / total).collect()
}

/// Lofts two hulls by matching normalized perimeter arclength. Produces exactly
/// `|parent| + |child|` triangles.
pub fn delta_cone(parent: &[[f64; 2]], z_bottom: f64, child: &[[f64; 2]], z_top: f64) -> Result<DeltaCone, ClusterError> {
    if !(z_top > z_bottom) {
        return Err(ClusterError::InvertedLevels { z_bottom, z_top });
    }
    if parent.len() < 3 || polygon_area(parent) <= 0.0 {
        return Err(ClusterError::DegenerateHull(parent.len()));
    }
    if child.len() < 3 || polygon_area(child) <= 0.0 {
        return Err(ClusterError::DegenerateHull(child.len()));
    }
    let (na, nb) = (parent.len(), child.len());
    let (ta, tb) = (arclength_params(parent), arclength_params(child));
    let next = |t: &[f64], k: usize| if k + 1 < t.len() { t[k + 1] } else { 1.0 };

    let mut triangles = Vec::with_capacity(na + nb);
    let (mut i, mut j) = (0usize, 0usize);
    while i < na || j < nb {
        let advance_bottom = j == nb || (i < na && next(&ta, i) <= next(&tb, j));
        let (a, b) = (i % na, na + j % nb);
        if advance_bottom {
            triangles.push([a, b, (i + 1) % na]);
            i += 1;
        } else {
            triangles.push([a, b, na + (j + 1) % nb]);
            j += 1;
        }
    }
    let vertices = parent
        .iter()
        .map(|p| [p[0], p[1], z_bottom])
        .chain(child.iter().map(|p| [p[0], p[1], z_top]))
        .collect();
    Ok(DeltaCone {
        vertices,
        bottom_len: na,
        triangles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n^3) oracle: an ordered pair (p, q) is a hull edge when every other point lies on its
    /// left or on the segment. Returns the area of the polygon traced by those edges.
    fn brute_force_hull_area(points: &[[f64; 2]]) -> f64 {
        let mut edges = Vec::new();
        for (i, &p) in points.iter().enumerate() {
            for (j, &q) in points.iter().enumerate() {
                if i == j || p == q {
                    continue;
                }
                let ok = points.iter().all(|&r| {
                    let c = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
                    if c > 0.0 {
                        return true;
                    }
                    if c < 0.0 {
                        return false;
                    }
                    // Collinear points must lie within the segment.
                    let t = (r[0] - p[0]) * (q[0] - p[0]) + (r[1] - p[1]) * (q[1] - p[1]);
                    t >= 0.0 && t <= (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)
                });
                if ok {
                    edges.push((p, q));
                }
            }
        }
        // Each hull edge contributes its shoelace term; summing over the closed loop gives 2A.
        edges.iter().map(|(a, b)| a[0] * b[1] - b[0] * a[1]).sum::<f64>() / 2.0
    }

    #[test]
    fn triangle_is_its_own_hull() {
        let h = convex_hull(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(h, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!(polygon_area(&h) > 0.0);
    }

    #[test]
    fn interior_point_is_dropped() {
        let h = convex_hull(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]]);
        assert_eq!(h, vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(convex_hull(&[[2.0, 3.0]]), vec![[2.0, 3.0]]);
        assert_eq!(convex_hull(&[[2.0, 3.0], [2.0, 3.0]]), vec![[2.0, 3.0]]);
        assert_eq!(
            convex_hull(&[[0.0, 0.0], [2.0, 2.0], [1.0, 1.0]]),
            vec![[0.0, 0.0], [2.0, 2.0]]
        );
        assert!(convex_hull::<f64>(&[]).is_empty());
    }

    #[test]
    fn disc_hull_area_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<[f64; 2]> = (0..200)
            .map(|_| {
                let r = rng.random::<f64>().sqrt();
                let a = rng.random::<f64>() * std::f64::consts::TAU;
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        let h = convex_hull(&pts);
        assert!((polygon_area(&h) - brute_force_hull_area(&pts)).abs() < 1e-9);
    }

    #[test]
    fn prism_between_equal_triangles() {
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let cone = delta_cone(&tri, 0.0, &tri, 1.0).unwrap();
        assert_eq!(cone.triangles.len(), 6);
        assert_eq!(cone.vertices.len(), 6);
        assert_eq!(cone.bottom_len, 3);
    }

    #[test]
    fn triangle_to_square() {
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let cone = delta_cone(&tri, 0.0, &sq, 1.0).unwrap();
        assert_eq!(cone.triangles.len(), 7);
        // Every triangle spans both rings.
        for t in &cone.triangles {
            let bottoms = t.iter().filter(|&&v| v < 3).count();
            assert!(bottoms == 1 || bottoms == 2);
        }
    }

    #[test]
    fn degenerate_hulls_are_refused() {
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let seg = [[0.0, 0.0], [1.0, 1.0]];
        assert!(matches!(delta_cone(&tri, 0.0, &seg, 1.0), Err(ClusterError::DegenerateHull(2))));
        assert!(matches!(delta_cone(&tri, 1.0, &tri, 1.0), Err(ClusterError::InvertedLevels { .. })));
    }

    proptest! {
        #[test]
        fn every_point_is_inside_its_hull(pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..80)) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let h = convex_hull(&pts);
            for p in &pts {
                prop_assert!(contains(&h, *p, 1e-12), "{:?} outside {:?}", p, h);
            }
            prop_assert!(polygon_area(&h) >= 0.0);
        }
    }
}
