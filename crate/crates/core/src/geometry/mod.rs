//! Planar geometry: polygons, the parametric Fin Ray outline, point sampling
//! and triangle meshes.

mod domain;
mod finray;
mod mesh;
mod mesher;
mod msh;
mod polygon;
mod sampling;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use domain::Domain2D;
pub use finray::{build_finray, FinRayParams};
pub use mesh::{TaggedEdge, TriangleMesh, DEGENERATE_AREA};
pub use mesher::{mesh_domain, MeshOptions};
pub use msh::{parse_mesh, write_mesh};
pub use polygon::{point_in_polygon, polygon_area, segment_distance, Polygon};
pub use sampling::{sample_boundary, sample_collocation, CollocationSource};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(self, other: Point2, t: f64) -> Point2 {
        Point2::new(self.x + t * (other.x - self.x), self.y + t * (other.y - self.y))
    }
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid Fin Ray parameters: {0}")]
    InvalidParams(String),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("unknown edge `{0}`")]
    UnknownEdge(String),
    #[error("degenerate domain: material area is {0}")]
    DegenerateDomain(f64),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("degenerate triangle {index} (area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },
    #[error("MSH line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("MSH line {line}: unsupported element type {element_type}")]
    UnsupportedElement { line: usize, element_type: u32 },
    #[error("meshing failed: {0}")]
    Meshing(String),
}
