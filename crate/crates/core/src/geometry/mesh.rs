use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{GeometryError, Point2};

/// Triangles with smaller absolute area (mm^2) are rejected.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// A boundary segment carrying a physical tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedEdge {
    pub nodes: [usize; 2],
    pub tag: i32,
}

/// Linear triangle mesh with optional tagged boundary segments.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub nodes: Vec<Point2>,
    /// Counter-clockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    /// Physical tag per triangle (0 when untagged).
    pub triangle_tags: Vec<i32>,
    pub edges: Vec<TaggedEdge>,
    /// Physical tag to `(dimension, name)`.
    pub physical_names: BTreeMap<i32, (u32, String)>,
}

pub(crate) fn signed_area(a: Point2, b: Point2, c: Point2) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x))
}

impl TriangleMesh {
    /// Untagged mesh; clockwise triangles are flipped.
    pub fn new(nodes: Vec<Point2>, triangles: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        let n = triangles.len();
        Self::with_tags(nodes, triangles, vec![0; n], Vec::new(), BTreeMap::new())
    }

    pub fn with_tags(
        nodes: Vec<Point2>,
        triangles: Vec<[usize; 3]>,
        triangle_tags: Vec<i32>,
        edges: Vec<TaggedEdge>,
        physical_names: BTreeMap<i32, (u32, String)>,
    ) -> Result<Self, GeometryError> {
        if triangle_tags.len() != triangles.len() {
            return Err(GeometryError::InvalidMesh("one tag per triangle required".into()));
        }
        let mut mesh = Self { nodes, triangles, triangle_tags, edges, physical_names };
        mesh.orient_and_check()?;
        Ok(mesh)
    }

    fn orient_and_check(&mut self) -> Result<(), GeometryError> {
        let n = self.nodes.len();
        for (i, t) in self.triangles.iter_mut().enumerate() {
            if let Some(&bad) = t.iter().find(|&&k| k >= n) {
                return Err(GeometryError::InvalidMesh(format!("triangle {i} references node {bad} of {n}")));
            }
            let area = signed_area(self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]);
            if area.abs() <= DEGENERATE_AREA {
                return Err(GeometryError::DegenerateTriangle { index: i, area });
            }
            if area < 0.0 {
                t.swap(1, 2);
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.nodes.iter().any(|&k| k >= n) {
                return Err(GeometryError::InvalidMesh(format!("edge {i} references a node out of range")));
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn corners(&self, t: usize) -> [Point2; 3] {
        self.triangles[t].map(|k| self.nodes[k])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        signed_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> Point2 {
        let [a, b, c] = self.corners(t);
        Point2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
    }

    /// Edges used by exactly one triangle.
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        let mut count: HashMap<[usize; 2], (usize, [usize; 2])> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                count.entry([a.min(b), a.max(b)]).or_insert((0, [a, b])).0 += 1;
            }
        }
        let mut out: Vec<[usize; 2]> = count.into_values().filter(|(c, _)| *c == 1).map(|(_, e)| e).collect();
        out.sort_unstable();
        out
    }

    /// Nodes used by no triangle.
    pub fn orphan_nodes(&self) -> Vec<usize> {
        let mut used = vec![false; self.nodes.len()];
        for t in &self.triangles {
            for &k in t {
                used[k] = true;
            }
        }
        used.iter().enumerate().filter(|(_, u)| !**u).map(|(i, _)| i).collect()
    }

    /// Physical tag registered under `name`.
    pub fn tag_of(&self, name: &str) -> Option<i32> {
        self.physical_names.iter().find(|(_, (_, n))| n == name).map(|(t, _)| *t)
    }

    /// Distinct nodes on edges tagged `tag`, ascending.
    pub fn nodes_with_tag(&self, tag: i32) -> Vec<usize> {
        let mut v: Vec<usize> = self.edges.iter().filter(|e| e.tag == tag).flat_map(|e| e.nodes).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Node closest to `p` (lowest index on ties).
    pub fn nearest_node(&self, p: Point2) -> Option<usize> {
        self.nodes.iter().enumerate().min_by(|a, b| a.1.dist(p).total_cmp(&b.1.dist(p))).map(|(i, _)| i)
    }

    /// Regular grid of `nx * ny` cells, each split along its rising diagonal.
    pub fn structured_rectangle(
        origin: Point2,
        width: f64,
        height: f64,
        nx: usize,
        ny: usize,
    ) -> Result<Self, GeometryError> {
        if nx == 0 || ny == 0 {
            return Err(GeometryError::InvalidRequest("grid needs at least one cell per axis".into()));
        }
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push(Point2::new(
                    origin.x + width * i as f64 / nx as f64,
                    origin.y + height * j as f64 / ny as f64,
                ));
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut tris = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                tris.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                tris.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Self::new(nodes, tris)
    }
}
