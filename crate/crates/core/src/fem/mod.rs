//! Linear-triangle finite elements for plane elastostatics.
//!
//! Stiffness comes from constant-strain triangles with the same constitutive
//! matrix the loss uses, Dirichlet values are eliminated exactly, and the
//! reduced system is factored by an envelope Cholesky after reverse
//! Cuthill-McKee reordering.

mod element;
mod locate;
mod sparse;

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::elasticity::{energy_density, stress_from_strain, MaterialError, MaterialModel, Strain2, Stress2};
use crate::geometry::{Point2, TriangleMesh, DEGENERATE_AREA};

pub use element::{element_stiffness, element_strain, strain_displacement, ElementMatrix};
pub use locate::{barycentric, triangle_distance, Locator};
pub use sparse::{reverse_cuthill_mckee, CsrMatrix, EnvelopeCholesky, SingularPivot};

pub const NODE_CSV_HEADER: [&str; 4] = ["x", "y", "u", "v"];
pub const ELEMENT_CSV_HEADER: [&str; 8] = ["xc", "yc", "eps_xx", "eps_yy", "eps_xy", "sig_xx", "sig_yy", "sig_xy"];

/// Relative pivot threshold for declaring the reduced system singular.
const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("invalid FEM problem: {0}")]
    Invalid(String),
    #[error("degenerate element {index} (area {area:e})")]
    DegenerateElement { index: usize, area: f64 },
    #[error("singular system: unconstrained rigid modes: {}", modes.join("; "))]
    RigidModes { modes: Vec<String> },
    #[error("singular system: zero pivot {pivot:e} at node {node} component {component}")]
    Singular { node: usize, component: char, pivot: f64 },
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error("point ({x}, {y}) is outside the mesh; nearest triangle {nearest} at distance {distance:e}")]
    Outside { x: f64, y: f64, nearest: usize, distance: f64 },
    #[error("FEM output I/O: {0}")]
    Io(#[from] io::Error),
    #[error("FEM output CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// Mesh, material, prescribed nodal displacements (mm) and nodal forces (N per mm thickness).
#[derive(Debug, Clone, PartialEq)]
pub struct FemProblem {
    pub mesh: TriangleMesh,
    pub material: MaterialModel,
    pub dirichlet: BTreeMap<usize, [f64; 2]>,
    pub loads: BTreeMap<usize, [f64; 2]>,
}

impl FemProblem {
    pub fn new(mesh: TriangleMesh, material: MaterialModel) -> Self {
        Self { mesh, material, dirichlet: BTreeMap::new(), loads: BTreeMap::new() }
    }

    /// Prescribes `(u, v)` at each node; later calls overwrite earlier ones.
    pub fn prescribe(&mut self, nodes: impl IntoIterator<Item = usize>, u: f64, v: f64) -> &mut Self {
        for k in nodes {
            self.dirichlet.insert(k, [u, v]);
        }
        self
    }

    /// Adds a nodal force.
    pub fn load(&mut self, node: usize, fx: f64, fy: f64) -> &mut Self {
        let f = self.loads.entry(node).or_insert([0.0; 2]);
        f[0] += fx;
        f[1] += fy;
        self
    }

    pub fn validate(&self) -> Result<(), FemError> {
        self.material.validate()?;
        let n = self.mesh.node_count();
        for (what, map) in [("Dirichlet", &self.dirichlet), ("load", &self.loads)] {
            if let Some((k, _)) = map.range(n..).next() {
                return Err(FemError::Invalid(format!("{what} node {k} out of range ({n} nodes)")));
            }
            if let Some((k, v)) = map.iter().find(|(_, v)| !(v[0].is_finite() && v[1].is_finite())) {
                return Err(FemError::Invalid(format!("{what} value at node {k} is not finite: {v:?}")));
            }
        }
        for t in 0..self.mesh.triangle_count() {
            let area = self.mesh.triangle_area(t);
            if area <= DEGENERATE_AREA {
                return Err(FemError::DegenerateElement { index: t, area });
            }
        }
        let modes = self.rigid_modes();
        if !modes.is_empty() {
            return Err(FemError::RigidModes { modes });
        }
        Ok(())
    }

    /// Rigid motions left free, per connected component of the element graph.
    pub fn rigid_modes(&self) -> Vec<String> {
        let components = connected_components(&self.mesh);
        let mut out = Vec::new();
        for nodes in components {
            let fixed: Vec<usize> = nodes.iter().copied().filter(|k| self.dirichlet.contains_key(k)).collect();
            let label = format!("component containing node {}", nodes[0]);
            match fixed.as_slice() {
                [] => out.push(format!("{label}: x translation, y translation, rotation")),
                [k] => {
                    let p = self.mesh.nodes[*k];
                    out.push(format!("{label}: rotation about constrained node {k} at ({}, {})", p.x, p.y));
                }
                _ => {
                    let p0 = self.mesh.nodes[fixed[0]];
                    if fixed.iter().all(|&k| self.mesh.nodes[k].dist(p0) == 0.0) {
                        out.push(format!("{label}: rotation about ({}, {})", p0.x, p0.y));
                    }
                }
            }
        }
        out
    }
}

/// Node sets of the element graph's connected components, each ascending,
/// ordered by smallest node. Orphan nodes are excluded.
fn connected_components(mesh: &TriangleMesh) -> Vec<Vec<usize>> {
    let n = mesh.node_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut k: usize) -> usize {
        while parent[k] != k {
            parent[k] = parent[parent[k]];
            k = parent[k];
        }
        k
    }
    let mut used = vec![false; n];
    for t in &mesh.triangles {
        for &k in t {
            used[k] = true;
        }
        for i in 1..3 {
            let (a, b) = (root(&mut parent, t[0]), root(&mut parent, t[i]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for k in (0..n).filter(|&k| used[k]) {
        let r = root(&mut parent, k);
        groups.entry(r).or_default().push(k);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|g| g[0]);
    out
}

/// Global stiffness (2 dofs per node, `u` then `v`) and load vector.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub stiffness: CsrMatrix,
    pub load: Vec<f64>,
}

pub fn assemble(problem: &FemProblem) -> Result<Assembly, FemError> {
    let d = problem.material.voigt_matrix()?;
    let mesh = &problem.mesh;
    let mut triplets = Vec::with_capacity(36 * mesh.triangle_count());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.triangle_area(t);
        if area <= DEGENERATE_AREA {
            return Err(FemError::DegenerateElement { index: t, area });
        }
        let ke = element_stiffness(mesh.corners(t), &d);
        let dofs = tri.map(|k| [2 * k, 2 * k + 1]).concat();
        for i in 0..6 {
            for j in 0..6 {
                triplets.push((dofs[i], dofs[j], ke[i][j]));
            }
        }
    }
    let mut load = vec![0.0; 2 * mesh.node_count()];
    for (&k, f) in &problem.loads {
        load[2 * k] += f[0];
        load[2 * k + 1] += f[1];
    }
    Ok(Assembly { stiffness: CsrMatrix::from_triplets(2 * mesh.node_count(), triplets), load })
}

/// Nodal displacements with per-element strain and stress.
#[derive(Debug, Clone)]
pub struct FemSolution {
    pub mesh: TriangleMesh,
    pub material: MaterialModel,
    /// `(u, v)` per node, mm.
    pub displacements: Vec<[f64; 2]>,
    pub strains: Vec<Strain2>,
    pub stresses: Vec<Stress2>,
    /// `K u - f` at every Dirichlet node.
    pub reactions: BTreeMap<usize, [f64; 2]>,
    /// `u^T K u / 2`.
    pub energy: f64,
    locator: Locator,
}

pub fn solve(problem: &FemProblem) -> Result<FemSolution, FemError> {
    problem.validate()?;
    let Assembly { stiffness: k, load: f } = assemble(problem)?;
    let mesh = &problem.mesh;
    let n = mesh.node_count();

    // orphan nodes carry no stiffness; pin them unless prescribed
    let mut fixed: BTreeMap<usize, [f64; 2]> = mesh.orphan_nodes().into_iter().map(|k| (k, [0.0; 2])).collect();
    fixed.extend(problem.dirichlet.iter().map(|(&k, &v)| (k, v)));

    let mut u = vec![0.0; 2 * n];
    for (&node, v) in &fixed {
        u[2 * node] = v[0];
        u[2 * node + 1] = v[1];
    }

    let mut adjacency = vec![Vec::new(); n];
    for t in &mesh.triangles {
        for &a in t {
            for &b in t {
                if a != b {
                    adjacency[a].push(b);
                }
            }
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }
    let order = reverse_cuthill_mckee(&adjacency);
    let mut free_index = vec![usize::MAX; 2 * n];
    let mut free_dofs = Vec::new();
    for &node in &order {
        if fixed.contains_key(&node) {
            continue;
        }
        for c in 0..2 {
            free_index[2 * node + c] = free_dofs.len();
            free_dofs.push(2 * node + c);
        }
    }

    // f_free - K_fc u_c
    let rhs: Vec<f64> = free_dofs
        .iter()
        .map(|&g| f[g] - k.row(g).filter(|(j, _)| free_index[*j] == usize::MAX).map(|(j, v)| v * u[j]).sum::<f64>())
        .collect();
    let (free_index, free_dofs) = (&free_index, &free_dofs);
    let factor = EnvelopeCholesky::factor(
        free_dofs.len(),
        |i| {
            let g = free_dofs[i];
            k.row(g).filter_map(move |(j, v)| {
                let fj = free_index[j];
                (fj != usize::MAX && fj <= i).then_some((fj, v))
            })
        },
        PIVOT_TOL,
    )
    .map_err(|e| {
        let g = free_dofs[e.row];
        FemError::Singular { node: g / 2, component: if g % 2 == 0 { 'u' } else { 'v' }, pivot: e.pivot }
    })?;
    let x = factor.solve(&rhs);
    for (i, &g) in free_dofs.iter().enumerate() {
        u[g] = x[i];
    }

    let ku = k.matvec(&u);
    let energy = 0.5 * u.iter().zip(&ku).map(|(a, b)| a * b).sum::<f64>();
    let reactions = problem
        .dirichlet
        .keys()
        .map(|&node| (node, [ku[2 * node] - f[2 * node], ku[2 * node + 1] - f[2 * node + 1]]))
        .collect();

    let mut strains = Vec::with_capacity(mesh.triangle_count());
    let mut stresses = Vec::with_capacity(mesh.triangle_count());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let mut ue = [0.0; 6];
        for (i, &node) in tri.iter().enumerate() {
            ue[2 * i] = u[2 * node];
            ue[2 * i + 1] = u[2 * node + 1];
        }
        let eps = element_strain(mesh.corners(t), &ue);
        stresses.push(stress_from_strain(eps, &problem.material)?);
        strains.push(eps);
    }
    let displacements = u.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    Ok(FemSolution {
        mesh: mesh.clone(),
        material: problem.material,
        displacements,
        strains,
        stresses,
        reactions,
        energy,
        locator: Locator::new(mesh),
    })
}

impl FemSolution {
    /// `sum_e area_e * W(sigma_e, eps_e)`.
    pub fn element_energy(&self) -> f64 {
        (0..self.mesh.triangle_count())
            .map(|t| self.mesh.triangle_area(t) * energy_density(self.stresses[t], self.strains[t]))
            .sum()
    }

    /// Containing triangle and barycentric weights.
    pub fn locate(&self, p: Point2) -> Result<(usize, [f64; 3]), FemError> {
        self.locator.locate(&self.mesh, p).ok_or_else(|| {
            let (nearest, distance) = Locator::nearest(&self.mesh, p).unwrap_or((0, f64::INFINITY));
            FemError::Outside { x: p.x, y: p.y, nearest, distance }
        })
    }

    /// Barycentric interpolation of the nodal displacements.
    pub fn interpolate(&self, p: Point2) -> Result<[f64; 2], FemError> {
        let (t, l) = self.locate(p)?;
        let tri = self.mesh.triangles[t];
        let mut out = [0.0; 2];
        for i in 0..3 {
            for c in 0..2 {
                out[c] += l[i] * self.displacements[tri[i]][c];
            }
        }
        Ok(out)
    }

    /// Displacement, strain and stress at `p`; the latter two are the containing element's.
    pub fn field_at(&self, p: Point2) -> Result<([f64; 2], Strain2, Stress2), FemError> {
        let (t, _) = self.locate(p)?;
        Ok((self.interpolate(p)?, self.strains[t], self.stresses[t]))
    }

    pub fn max_abs_displacement(&self) -> [f64; 2] {
        self.displacements.iter().fold([0.0f64; 2], |m, d| [m[0].max(d[0].abs()), m[1].max(d[1].abs())])
    }

    pub fn write_nodes<W: io::Write>(&self, w: &mut csv::Writer<W>) -> Result<(), FemError> {
        w.write_record(NODE_CSV_HEADER)?;
        for (p, d) in self.mesh.nodes.iter().zip(&self.displacements) {
            w.write_record([p.x, p.y, d[0], d[1]].map(|v| format!("{v:?}")))?;
        }
        Ok(())
    }

    pub fn write_elements<W: io::Write>(&self, w: &mut csv::Writer<W>) -> Result<(), FemError> {
        w.write_record(ELEMENT_CSV_HEADER)?;
        for t in 0..self.mesh.triangle_count() {
            let c = self.mesh.centroid(t);
            let (e, s) = (self.strains[t], self.stresses[t]);
            w.write_record([c.x, c.y, e.xx, e.yy, e.xy, s.xx, s.yy, s.xy].map(|v| format!("{v:?}")))?;
        }
        Ok(())
    }

    pub fn write_nodes_csv(&self, path: &Path) -> Result<(), FemError> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_nodes(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_elements_csv(&self, path: &Path) -> Result<(), FemError> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_elements(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
