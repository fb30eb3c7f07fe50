//! Quality triangulation of a [`Domain2D`] via constrained Delaunay refinement.

use std::collections::{BTreeMap, HashMap, HashSet};

use spade::handles::FixedVertexHandle;
use spade::{AngleLimit, ConstrainedDelaunayTriangulation, RefinementParameters, Triangulation};

use super::mesh::signed_area;
use super::polygon::segment_distance;
use super::{Domain2D, GeometryError, Point2, TaggedEdge, TriangleMesh};

/// Physical tag given to hole boundaries.
pub const HOLE_TAG: i32 = 90;
/// Physical tag given to triangles.
pub const SURFACE_TAG: i32 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct MeshOptions {
    /// Upper bound on triangle area, mm^2.
    pub max_area: f64,
    pub min_angle_deg: f64,
    /// Points that must become mesh nodes; points on a boundary split it.
    pub required_points: Vec<Point2>,
    pub max_extra_vertices: usize,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self { max_area: 1.0, min_angle_deg: 25.0, required_points: Vec::new(), max_extra_vertices: 2_000_000 }
    }
}

type Cdt = ConstrainedDelaunayTriangulation<spade::Point2<f64>>;

fn insert(cdt: &mut Cdt, p: Point2) -> Result<FixedVertexHandle, GeometryError> {
    cdt.insert(spade::Point2::new(p.x, p.y))
        .map_err(|e| GeometryError::Meshing(format!("cannot insert ({}, {}): {e:?}", p.x, p.y)))
}

/// Splices each point lying on a ring segment into that ring.
fn splice(ring: &mut Vec<Point2>, points: &mut Vec<Point2>, tol: f64) {
    points.retain(|&p| {
        let n = ring.len();
        for i in 0..n {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            if p.dist(a) <= tol || p.dist(b) <= tol {
                return false;
            }
            if segment_distance(p, a, b) <= tol {
                ring.insert(i + 1, p);
                return false;
            }
        }
        true
    });
}

/// Triangulates the material region; boundary segments are tagged by the
/// domain's edge names (tags `1..` in name order), hole boundaries by
/// [`HOLE_TAG`].
pub fn mesh_domain(domain: &Domain2D, opts: &MeshOptions) -> Result<TriangleMesh, GeometryError> {
    if !(opts.max_area > 0.0) {
        return Err(GeometryError::InvalidRequest("max_area must be positive".into()));
    }
    let (lo, hi) = domain.bounds();
    let tol = 1e-9 * (hi.x - lo.x).max(hi.y - lo.y).max(1.0);

    let mut pending = opts.required_points.clone();
    let mut rings = vec![domain.outer().to_vec()];
    rings.extend(domain.holes().iter().cloned());
    for ring in &mut rings {
        splice(ring, &mut pending, tol);
    }

    let mut cdt = Cdt::new();
    for ring in &rings {
        let handles: Vec<FixedVertexHandle> = ring.iter().map(|&p| insert(&mut cdt, p)).collect::<Result<_, _>>()?;
        for i in 0..handles.len() {
            let (a, b) = (handles[i], handles[(i + 1) % handles.len()]);
            if !cdt.can_add_constraint(a, b) {
                return Err(GeometryError::Meshing("boundary segments intersect".into()));
            }
            cdt.add_constraint(a, b);
        }
    }
    for p in pending {
        if !domain.contains(p) {
            return Err(GeometryError::InvalidRequest(format!(
                "required point ({}, {}) is outside the material",
                p.x, p.y
            )));
        }
        insert(&mut cdt, p)?;
    }

    let params = RefinementParameters::<f64>::new()
        .exclude_outer_faces(true)
        .with_max_allowed_area(opts.max_area)
        .with_angle_limit(AngleLimit::from_deg(opts.min_angle_deg))
        .with_max_additional_vertices(opts.max_extra_vertices);
    let result = cdt.refine(params);
    if !result.refinement_complete {
        return Err(GeometryError::Meshing("refinement exceeded the extra-vertex budget".into()));
    }
    let excluded: HashSet<usize> = result.excluded_faces.iter().map(|f| f.index()).collect();

    let mut remap: HashMap<usize, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut triangles = Vec::new();
    for face in cdt.inner_faces() {
        if excluded.contains(&face.fix().index()) {
            continue;
        }
        let mut tri = [0usize; 3];
        for (k, v) in face.vertices().iter().enumerate() {
            tri[k] = *remap.entry(v.fix().index()).or_insert_with(|| {
                let p = v.position();
                nodes.push(Point2::new(p.x, p.y));
                nodes.len() - 1
            });
        }
        if signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]) < 0.0 {
            tri.swap(1, 2);
        }
        triangles.push(tri);
    }
    if triangles.is_empty() {
        return Err(GeometryError::DegenerateDomain(domain.material_area()));
    }

    let names: Vec<&String> = domain.edges().keys().collect();
    let mut physical_names: BTreeMap<i32, (u32, String)> =
        names.iter().enumerate().map(|(i, n)| (i as i32 + 1, (1, (*n).clone()))).collect();
    physical_names.insert(HOLE_TAG, (1, "hole".into()));
    physical_names.insert(SURFACE_TAG, (2, "material".into()));

    let n_tri = triangles.len();
    let mut mesh = TriangleMesh::with_tags(nodes, triangles, vec![SURFACE_TAG; n_tri], Vec::new(), physical_names)?;
    let mut edges = Vec::new();
    for [a, b] in mesh.boundary_edges() {
        let (pa, pb) = (mesh.nodes[a], mesh.nodes[b]);
        let mid = pa.lerp(pb, 0.5);
        let on = |name: &str| [pa, pb, mid].iter().all(|&p| domain.edge_distance(name, p).map_or(false, |d| d <= tol));
        let tag = names.iter().position(|n| on(n)).map_or(HOLE_TAG, |i| i as i32 + 1);
        edges.push(TaggedEdge { nodes: [a, b], tag });
    }
    mesh.edges = edges;
    Ok(mesh)
}
