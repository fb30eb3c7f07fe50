use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Domain2D, GeometryError, Point2, TriangleMesh};

/// Where collocation points come from.
#[derive(Debug, Clone, Copy)]
pub enum CollocationSource<'a> {
    /// Uniform rejection sampling over the material region.
    Domain(&'a Domain2D),
    /// Every mesh node, in mesh order.
    Mesh(&'a TriangleMesh),
    /// One uniform point per cell of a grid over the bounding box, kept when inside
    /// the material. The grid is sized so about `n` points survive.
    Stratified(&'a Domain2D),
    /// Cell centres of the same grid as `Stratified`; deterministic.
    Grid(&'a Domain2D),
}

/// Collocation points; `n` is ignored in mesh mode and approximate in stratified mode.
pub fn sample_collocation(source: CollocationSource<'_>, n: usize, seed: u64) -> Result<Vec<Point2>, GeometryError> {
    if n == 0 {
        return Err(GeometryError::InvalidRequest("collocation count must be positive".into()));
    }
    let domain = match source {
        CollocationSource::Mesh(mesh) => return Ok(mesh.nodes.clone()),
        CollocationSource::Stratified(d) => return cell_points(d, n, Some(seed)),
        CollocationSource::Grid(d) => return cell_points(d, n, None),
        CollocationSource::Domain(d) => d,
    };
    let area = domain.material_area();
    if !(area > 0.0) {
        return Err(GeometryError::DegenerateDomain(area));
    }
    let (lo, hi) = domain.bounds();
    let box_area = (hi.x - lo.x) * (hi.y - lo.y);
    // Enough draws to fill `n` with overwhelming probability.
    let budget = ((n as f64) * (box_area / area) * 20.0) as usize + 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..budget {
        let p = Point2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
        if domain.contains(p) {
            out.push(p);
            if out.len() == n {
                return Ok(out);
            }
        }
    }
    Err(GeometryError::DegenerateDomain(area))
}

/// One point per grid cell inside the material: jittered when seeded, else the centre.
fn cell_points(domain: &Domain2D, n: usize, seed: Option<u64>) -> Result<Vec<Point2>, GeometryError> {
    let area = domain.material_area();
    if !(area > 0.0) {
        return Err(GeometryError::DegenerateDomain(area));
    }
    let (lo, hi) = domain.bounds();
    let (w, h) = (hi.x - lo.x, hi.y - lo.y);
    let cells = n as f64 * w * h / area;
    let nx = ((cells * w / h).sqrt().round() as usize).max(1);
    let ny = ((cells / nx as f64).round() as usize).max(1);
    let (dx, dy) = (w / nx as f64, h / ny as f64);
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let mut offset = || rng.as_mut().map_or(0.5, |r| r.random::<f64>());
    let mut out = Vec::with_capacity(n);
    for j in 0..ny {
        for i in 0..nx {
            let (ox, oy) = (offset(), offset());
            let p = Point2::new(lo.x + dx * (i as f64 + ox), lo.y + dy * (j as f64 + oy));
            if domain.contains(p) {
                out.push(p);
            }
        }
    }
    if out.is_empty() {
        return Err(GeometryError::DegenerateDomain(area));
    }
    Ok(out)
}

/// `n` points evenly spaced by arc length along a named edge, endpoints included.
pub fn sample_boundary(domain: &Domain2D, edge: &str, n: usize) -> Result<Vec<Point2>, GeometryError> {
    let line = domain.edge(edge)?;
    if n < 2 {
        return Err(GeometryError::InvalidRequest(format!("boundary sampling needs n >= 2, got {n}")));
    }
    let seg: Vec<f64> = line.windows(2).map(|w| w[0].dist(w[1])).collect();
    let total: f64 = seg.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    let mut start = 0.0;
    for i in 0..n {
        if i == n - 1 {
            out.push(*line.last().expect("edge has points"));
            break;
        }
        let s = total * i as f64 / (n - 1) as f64;
        while k + 1 < seg.len() && s > start + seg[k] {
            start += seg[k];
            k += 1;
        }
        let t = if seg[k] > 0.0 { ((s - start) / seg[k]).clamp(0.0, 1.0) } else { 0.0 };
        out.push(line[k].lerp(line[k + 1], t));
    }
    Ok(out)
}
