use serde::{Deserialize, Serialize};

/// Convex polygon in the (P, Q) plane with its H-representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope2D {
    /// Counter-clockwise, no duplicates, no collinear triples.
    pub vertices: Vec<[f64; 2]>,
    /// Rows `(a_P, a_Q, b)` with unit normal, `a·w ≤ b`.
    pub halfspaces: Vec<[f64; 3]>,
    pub area: f64,
    /// Set when the hull is a point or a segment.
    pub degenerate: bool,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Drops points within `tol` of an earlier kept point.
pub fn dedup_points(points: &[[f64; 2]], tol: f64) -> Vec<[f64; 2]> {
    let mut kept: Vec<[f64; 2]> = Vec::new();
    for &p in points {
        if kept.iter().all(|&k| dist(k, p) > tol) {
            kept.push(p);
        }
    }
    kept
}

/// Shoelace area of a CCW polygon.
pub fn polygon_area(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    0.5 * twice
}

/// Monotone-chain hull. Points within `tol` of each other are merged and
/// vertices closer than `tol` to the line through their neighbours are pruned.
pub fn convex_hull_2d(points: &[[f64; 2]], tol: f64) -> Polytope2D {
    let mut pts: Vec<[f64; 2]> = points.iter().copied().filter(|p| p[0].is_finite() && p[1].is_finite()).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let pts = dedup_points(&pts, tol);
    if pts.len() < 3 {
        return degenerate(pts);
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let hull = prune_collinear(hull, tol);
    if hull.len() < 3 {
        // Everything lies on one line: keep the two extreme points.
        let (a, b) = farthest_pair(&pts);
        return degenerate(vec![a, b]);
    }
    from_ccw(hull)
}

fn farthest_pair(pts: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let mut best = (pts[0], pts[0], 0.0);
    for &a in pts {
        for &b in pts {
            let d = dist(a, b);
            if d > best.2 {
                best = (a, b, d);
            }
        }
    }
    (best.0, best.1)
}

fn prune_collinear(mut hull: Vec<[f64; 2]>, tol: f64) -> Vec<[f64; 2]> {
    loop {
        let n = hull.len();
        if n < 3 {
            return hull;
        }
        let idx = (0..n).find(|&i| {
            let (a, b, c) = (hull[(i + n - 1) % n], hull[i], hull[(i + 1) % n]);
            let base = dist(a, c);
            base <= tol || cross(a, b, c).abs() / base <= tol
        });
        match idx {
            Some(i) => {
                hull.remove(i);
            }
            None => return hull,
        }
    }
}

fn from_ccw(vertices: Vec<[f64; 2]>) -> Polytope2D {
    let n = vertices.len();
    let halfspaces = (0..n)
        .map(|i| {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy);
            let (nx, ny) = (dy / len, -dx / len);
            [nx, ny, nx * a[0] + ny * a[1]]
        })
        .collect();
    let area = polygon_area(&vertices);
    Polytope2D { vertices, halfspaces, area, degenerate: false }
}

fn degenerate(points: Vec<[f64; 2]>) -> Polytope2D {
    let halfspaces = match points.as_slice() {
        [] => vec![],
        [p] => vec![[1.0, 0.0, p[0]], [-1.0, 0.0, -p[0]], [0.0, 1.0, p[1]], [0.0, -1.0, -p[1]]],
        [a, b, ..] => {
            let len = dist(*a, *b);
            let (ux, uy) = ((b[0] - a[0]) / len, (b[1] - a[1]) / len);
            let (nx, ny) = (uy, -ux);
            vec![
                [nx, ny, nx * a[0] + ny * a[1]],
                [-nx, -ny, -(nx * a[0] + ny * a[1])],
                [ux, uy, ux * b[0] + uy * b[1]],
                [-ux, -uy, -(ux * a[0] + uy * a[1])],
            ]
        }
    };
    Polytope2D { vertices: points, halfspaces, area: 0.0, degenerate: true }
}

impl Polytope2D {
    pub fn contains(&self, w: [f64; 2], tol: f64) -> bool {
        !self.vertices.is_empty() && self.halfspaces.iter().all(|h| h[0] * w[0] + h[1] * w[1] <= h[2] + tol)
    }

    /// Area centroid, or the vertex mean for degenerate hulls.
    pub fn centroid(&self) -> [f64; 2] {
        let n = self.vertices.len();
        if self.degenerate || self.area <= 0.0 {
            let s = self.vertices.iter().fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
            return [s[0] / n.max(1) as f64, s[1] / n.max(1) as f64];
        }
        let mut c = [0.0, 0.0];
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            let k = a[0] * b[1] - b[0] * a[1];
            c[0] += (a[0] + b[0]) * k;
            c[1] += (a[1] + b[1]) * k;
        }
        [c[0] / (6.0 * self.area), c[1] / (6.0 * self.area)]
    }

    /// Maximum of `dir · v` over the vertices.
    pub fn support(&self, dir: [f64; 2]) -> f64 {
        self.vertices.iter().map(|v| dir[0] * v[0] + dir[1] * v[1]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Symmetric Hausdorff distance between two convex polygons, evaluated
    /// on vertices against the other polygon's boundary and interior.
    pub fn hausdorff(&self, other: &Polytope2D) -> f64 {
        let one_way = |a: &Polytope2D, b: &Polytope2D| {
            a.vertices.iter().map(|&v| b.distance_to(v)).fold(0.0, f64::max)
        };
        one_way(self, other).max(one_way(other, self))
    }

    /// Euclidean distance from `w` to the polygon (0 inside).
    pub fn distance_to(&self, w: [f64; 2]) -> f64 {
        if self.contains(w, 0.0) && !self.degenerate {
            return 0.0;
        }
        let n = self.vertices.len();
        match n {
            0 => f64::INFINITY,
            1 => dist(self.vertices[0], w),
            _ => (0..n)
                .map(|i| segment_distance(self.vertices[i], self.vertices[(i + 1) % n], w))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

fn segment_distance(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist(a, p);
    }
    let s = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    dist([a[0] + s * dx, a[1] + s * dy], p)
}

/// Reference hull by checking every ordered pair as a candidate edge. Cubic in
/// the worst case; used to cross-check [`convex_hull_2d`].
pub fn brute_force_hull(points: &[[f64; 2]], tol: f64) -> Vec<[f64; 2]> {
    let pts = dedup_points(points, tol);
    let mut verts: Vec<[f64; 2]> = Vec::new();
    for (i, &a) in pts.iter().enumerate() {
        for (j, &b) in pts.iter().enumerate() {
            if i == j {
                continue;
            }
            let len = dist(a, b);
            let is_edge = pts.iter().enumerate().all(|(k, &c)| {
                if k == i || k == j {
                    return true;
                }
                let side = cross(a, b, c) / len;
                if side > tol {
                    return true;
                }
                if side < -tol {
                    return false;
                }
                // On the line: must lie between a and b.
                let s = ((c[0] - a[0]) * (b[0] - a[0]) + (c[1] - a[1]) * (b[1] - a[1])) / (len * len);
                (-1e-12..=1.0 + 1e-12).contains(&s)
            });
            if is_edge {
                for p in [a, b] {
                    if verts.iter().all(|&v| dist(v, p) > tol) {
                        verts.push(p);
                    }
                }
            }
        }
    }
    verts
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_square_with_interior_point() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        let h = convex_hull_2d(&pts, 1e-9);
        assert_eq!(h.vertices.len(), 4);
        assert!((h.area - 1.0).abs() < 1e-12);
        for v in &h.vertices {
            assert!(h.contains(*v, 1e-12));
        }
        assert!(!h.contains([1.5, 0.5], 1e-9));
    }

    #[test]
    fn two_points_are_a_segment() {
        let h = convex_hull_2d(&[[0.0, 0.0], [2.0, 1.0]], 1e-9);
        assert!(h.degenerate);
        assert_eq!(h.area, 0.0);
        assert_eq!(h.vertices.len(), 2);
        let p = convex_hull_2d(&[[1.0, 1.0], [1.0, 1.0]], 1e-9);
        assert!(p.degenerate);
        assert_eq!(p.vertices.len(), 1);
    }

    #[test]
    fn collinear_points_are_pruned() {
        let pts = [[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert_eq!(convex_hull_2d(&pts, 1e-9).vertices.len(), 4);
        let line = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        let h = convex_hull_2d(&line, 1e-9);
        assert!(h.degenerate);
        assert_eq!(h.vertices.len(), 2);
    }

    #[test]
    fn matches_brute_force_in_disk() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<[f64; 2]> = (0..200)
            .map(|_| loop {
                let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                if p[0] * p[0] + p[1] * p[1] <= 1.0 {
                    break p;
                }
            })
            .collect();
        let fast = convex_hull_2d(&pts, 1e-9);
        let mut slow = brute_force_hull(&pts, 1e-9);
        let mut fv = fast.vertices.clone();
        let key = |a: &[f64; 2], b: &[f64; 2]| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]));
        fv.sort_by(key);
        slow.sort_by(key);
        assert_eq!(fv, slow);
    }

    #[test]
    fn centroid_and_hausdorff() {
        let sq = convex_hull_2d(&[[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]], 1e-9);
        let c = sq.centroid();
        assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] - 1.0).abs() < 1e-12);
        let bigger = convex_hull_2d(&[[0.0, 0.0], [3.0, 0.0], [3.0, 2.0], [0.0, 2.0]], 1e-9);
        assert!((sq.hausdorff(&bigger) - 1.0).abs() < 1e-12);
    }
}
