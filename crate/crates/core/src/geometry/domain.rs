use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::polygon::{bounds, is_simple, point_in_polygon, polygon_area, rings_cross, segment_distance};
use super::{GeometryError, Point2, Polygon};

const ON_EDGE_TOL: f64 = 1e-9;

/// Material region: an outer ring minus holes, with named boundary polylines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDomain")]
pub struct Domain2D {
    /// Counter-clockwise.
    outer: Polygon,
    /// Clockwise.
    holes: Vec<Polygon>,
    edges: BTreeMap<String, Vec<Point2>>,
}

#[derive(Deserialize)]
struct RawDomain {
    outer: Polygon,
    holes: Vec<Polygon>,
    edges: BTreeMap<String, Vec<Point2>>,
}

impl TryFrom<RawDomain> for Domain2D {
    type Error = GeometryError;

    fn try_from(raw: RawDomain) -> Result<Self, Self::Error> {
        Domain2D::new(raw.outer, raw.holes, raw.edges)
    }
}

impl Domain2D {
    /// Validates and normalizes ring orientation.
    pub fn new(
        mut outer: Polygon,
        mut holes: Vec<Polygon>,
        edges: BTreeMap<String, Vec<Point2>>,
    ) -> Result<Self, GeometryError> {
        let invalid = |m: String| Err(GeometryError::InvalidDomain(m));
        if outer.len() < 3 || !is_simple(&outer) {
            return invalid("outer boundary is not a simple polygon".into());
        }
        if polygon_area(&outer) < 0.0 {
            outer.reverse();
        }
        for (k, hole) in holes.iter_mut().enumerate() {
            if hole.len() < 3 || !is_simple(hole) {
                return invalid(format!("hole {k} is not a simple polygon"));
            }
            if polygon_area(hole) > 0.0 {
                hole.reverse();
            }
            if !hole.iter().all(|&p| point_in_polygon(p, &outer)) || rings_cross(hole, &outer) {
                return invalid(format!("hole {k} is not strictly inside the outer boundary"));
            }
        }
        for i in 0..holes.len() {
            for j in i + 1..holes.len() {
                if rings_cross(&holes[i], &holes[j]) || point_in_polygon(holes[j][0], &holes[i]) {
                    return invalid(format!("holes {i} and {j} overlap"));
                }
            }
        }
        let domain = Self { outer, holes, edges };
        for (name, line) in &domain.edges {
            if line.len() < 2 {
                return invalid(format!("edge `{name}` has fewer than two points"));
            }
            let off = line
                .windows(2)
                .any(|w| (0..=8).any(|k| domain.outer_distance(w[0].lerp(w[1], k as f64 / 8.0)) > ON_EDGE_TOL));
            if off {
                return invalid(format!("edge `{name}` does not lie on the outer boundary"));
            }
        }
        Ok(domain)
    }

    /// Axis-aligned rectangle with edges `base` (bottom), `right`, `top`, `left`.
    pub fn rectangle(x0: f64, y0: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        let p = [
            Point2::new(x0, y0),
            Point2::new(x0 + width, y0),
            Point2::new(x0 + width, y0 + height),
            Point2::new(x0, y0 + height),
        ];
        let edges = [("base", 0, 1), ("right", 1, 2), ("top", 3, 2), ("left", 0, 3)]
            .into_iter()
            .map(|(n, a, b)| (n.to_string(), vec![p[a], p[b]]))
            .collect();
        Self::new(p.to_vec(), Vec::new(), edges)
    }

    pub fn outer(&self) -> &[Point2] {
        &self.outer
    }

    pub fn holes(&self) -> &[Polygon] {
        &self.holes
    }

    pub fn edges(&self) -> &BTreeMap<String, Vec<Point2>> {
        &self.edges
    }

    pub fn edge(&self, name: &str) -> Result<&[Point2], GeometryError> {
        self.edges.get(name).map(Vec::as_slice).ok_or_else(|| GeometryError::UnknownEdge(name.to_string()))
    }

    /// Inside the outer ring and outside every hole.
    pub fn contains(&self, p: Point2) -> bool {
        point_in_polygon(p, &self.outer) && !self.holes.iter().any(|h| point_in_polygon(p, h))
    }

    /// Outer area minus hole areas.
    pub fn material_area(&self) -> f64 {
        polygon_area(&self.outer) + self.holes.iter().map(|h| polygon_area(h)).sum::<f64>()
    }

    pub fn outer_area(&self) -> f64 {
        polygon_area(&self.outer)
    }

    pub fn hole_areas(&self) -> Vec<f64> {
        self.holes.iter().map(|h| -polygon_area(h)).collect()
    }

    pub fn bounds(&self) -> (Point2, Point2) {
        bounds(&self.outer)
    }

    /// Distance from `p` to the named polyline.
    pub fn edge_distance(&self, name: &str, p: Point2) -> Result<f64, GeometryError> {
        let line = self.edge(name)?;
        Ok(line.windows(2).map(|w| segment_distance(p, w[0], w[1])).fold(f64::INFINITY, f64::min))
    }

    fn outer_distance(&self, p: Point2) -> f64 {
        let n = self.outer.len();
        (0..n).map(|i| segment_distance(p, self.outer[i], self.outer[(i + 1) % n])).fold(f64::INFINITY, f64::min)
    }
}
