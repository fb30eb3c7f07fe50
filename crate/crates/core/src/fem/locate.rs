//! Triangle lookup by uniform bucket grid.

use crate::geometry::{segment_distance, Point2, TriangleMesh};

/// Barycentric tolerance for points on shared edges.
const INSIDE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Locator {
    min: Point2,
    cell: [f64; 2],
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

/// Barycentric coordinates of `p` in triangle `c`.
pub fn barycentric(c: [Point2; 3], p: Point2) -> [f64; 3] {
    let det = (c[1].y - c[2].y) * (c[0].x - c[2].x) + (c[2].x - c[1].x) * (c[0].y - c[2].y);
    let l0 = ((c[1].y - c[2].y) * (p.x - c[2].x) + (c[2].x - c[1].x) * (p.y - c[2].y)) / det;
    let l1 = ((c[2].y - c[0].y) * (p.x - c[2].x) + (c[0].x - c[2].x) * (p.y - c[2].y)) / det;
    [l0, l1, 1.0 - l0 - l1]
}

/// Distance from `p` to the closed triangle `c`; zero inside.
pub fn triangle_distance(c: [Point2; 3], p: Point2) -> f64 {
    if barycentric(c, p).iter().all(|&l| l >= -INSIDE_TOL) {
        return 0.0;
    }
    (0..3).map(|i| segment_distance(p, c[i], c[(i + 1) % 3])).fold(f64::INFINITY, f64::min)
}

impl Locator {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let (mut min, mut max) =
            (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in &mesh.nodes {
            min = Point2::new(min.x.min(p.x), min.y.min(p.y));
            max = Point2::new(max.x.max(p.x), max.y.max(p.y));
        }
        let side = (mesh.triangle_count().max(1) as f64).sqrt().ceil() as usize;
        let dims = [side.max(1), side.max(1)];
        let span = [(max.x - min.x).max(f64::MIN_POSITIVE), (max.y - min.y).max(f64::MIN_POSITIVE)];
        let cell = [span[0] / dims[0] as f64, span[1] / dims[1] as f64];
        let mut loc = Self { min, cell, dims, buckets: vec![Vec::new(); dims[0] * dims[1]] };
        for t in 0..mesh.triangle_count() {
            let c = mesh.corners(t);
            let lo = loc.cell_of(Point2::new(
                c.iter().map(|p| p.x).fold(f64::INFINITY, f64::min),
                c.iter().map(|p| p.y).fold(f64::INFINITY, f64::min),
            ));
            let hi = loc.cell_of(Point2::new(
                c.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max),
                c.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max),
            ));
            for i in lo[0]..=hi[0] {
                for j in lo[1]..=hi[1] {
                    loc.buckets[j * dims[0] + i].push(t);
                }
            }
        }
        loc
    }

    fn cell_of(&self, p: Point2) -> [usize; 2] {
        let f = |v: f64, lo: f64, h: f64, n: usize| (((v - lo) / h).floor().max(0.0) as usize).min(n - 1);
        [f(p.x, self.min.x, self.cell[0], self.dims[0]), f(p.y, self.min.y, self.cell[1], self.dims[1])]
    }

    /// Lowest-index triangle containing `p` (edges inclusive), with its barycentric coordinates.
    pub fn locate(&self, mesh: &TriangleMesh, p: Point2) -> Option<(usize, [f64; 3])> {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return None;
        }
        let [i, j] = self.cell_of(p);
        self.buckets[j * self.dims[0] + i].iter().find_map(|&t| {
            let l = barycentric(mesh.corners(t), p);
            l.iter().all(|&v| v >= -INSIDE_TOL).then_some((t, l))
        })
    }

    /// Closest triangle by Euclidean distance, for diagnostics.
    pub fn nearest(mesh: &TriangleMesh, p: Point2) -> Option<(usize, f64)> {
        (0..mesh.triangle_count())
            .map(|t| (t, triangle_distance(mesh.corners(t), p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}
