//! Experiment bundles: geometry, mesh, material, point sets, network and
//! training settings in one JSON file, plus the standard presets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elasticity::MaterialModel;
use crate::evaluation::{
    fit_pixel_to_world, read_correspondences_csv, read_displacements_csv, read_markers_csv, smooth_and_difference,
    split_phases, EvalError, MarkerDisplacement,
};
use crate::fem::{FemError, FemProblem, FemSolution};
use crate::geometry::{
    build_finray, mesh_domain, parse_mesh, sample_boundary, sample_collocation, CollocationSource, Domain2D,
    FinRayParams, GeometryError, MeshOptions, Point2, TriangleMesh,
};
use crate::network::{NetworkConfig, Normalizer};
use crate::training::{PointSets, TargetPoint, TrainConfig};

/// Number of tracked markers on the physical finger.
pub const MARKER_COUNT: usize = 9;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Which PINN variant to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Std,
    Asm,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Std => "std",
            Variant::Asm => "asm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySpec {
    /// Fin Ray outline from a parameter JSON file.
    Finray {
        params: PathBuf,
    },
    Rectangle {
        x0: f64,
        y0: f64,
        width: f64,
        height: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollocationKind {
    /// Uniform samples over the material region.
    #[default]
    Domain,
    /// The mesh nodes.
    Mesh,
    /// One jittered point per grid cell, about `n_collocation` in total.
    Stratified,
    /// Grid cell centres, about `n_collocation` in total.
    Grid,
}

/// A prescribed displacement on a point or on every point of a named edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcedSpec {
    Point { x: f64, y: f64, u: f64, v: f64 },
    Edge { edge: String, u: f64, v: f64 },
}

/// Marker displacements given directly, recovered from pixel tracks, or
/// taken from this experiment's FEM solution at the back-wall marker sites.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerSpec {
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
    /// CSV `marker_id,x,y,u,v`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub displacements: Option<PathBuf>,
    /// CSV `marker_id,phase,frame_index,px,py`; needs `correspondences`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correspondences: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub n_collocation: usize,
    #[serde(default)]
    pub collocation: CollocationKind,
    /// Points per fixed or forced edge.
    pub n_bc: usize,
    /// Zero-displacement edge; `None` leaves the body unsupported.
    pub fixed_edge: Option<String>,
    pub forced: Vec<ForcedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markers: Option<MarkerSpec>,
}

fn default_mesh_area() -> f64 {
    1.0
}

fn default_spacing() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub geometry: GeometrySpec,
    /// MSH 2.2 file; generated from the geometry when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<PathBuf>,
    /// Triangle area bound for generated meshes, mm^2.
    #[serde(default = "default_mesh_area")]
    pub mesh_max_area: f64,
    pub material: MaterialModel,
    pub points: PointSpec,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Grid step for field export, mm.
    #[serde(default = "default_spacing")]
    pub export_spacing: f64,
    pub output: PathBuf,
}

fn read_text(path: &Path) -> Result<String, ExperimentError> {
    fs::read_to_string(path).map_err(|source| ExperimentError::Read { path: path.display().to_string(), source })
}

pub fn read_finray_params(path: &Path) -> Result<FinRayParams, ExperimentError> {
    let text = read_text(path)?;
    serde_json::from_str(&text)
        .map_err(|e| ExperimentError::Parse { path: path.display().to_string(), message: e.to_string() })
}

pub fn read_mesh(path: &Path) -> Result<TriangleMesh, ExperimentError> {
    let text = read_text(path)?;
    parse_mesh(&text).map_err(|e| ExperimentError::Parse { path: path.display().to_string(), message: e.to_string() })
}

fn rebase(dir: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = dir.join(&*p);
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("experiment spec serializes") + "\n"
    }

    /// Parses `path` and makes every relative path relative to its directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = read_text(path)?;
        let mut spec = Self::from_json(&text)
            .map_err(|e| ExperimentError::Parse { path: path.display().to_string(), message: e.to_string() })?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        spec.rebase_paths(&dir);
        Ok(spec)
    }

    pub fn rebase_paths(&mut self, dir: &Path) {
        if let GeometrySpec::Finray { params } = &mut self.geometry {
            rebase(dir, params);
        }
        if let Some(m) = &mut self.mesh {
            rebase(dir, m);
        }
        if let Some(m) = &mut self.points.markers {
            for p in [&mut m.displacements, &mut m.observations, &mut m.correspondences].into_iter().flatten() {
                rebase(dir, p);
            }
        }
        rebase(dir, &mut self.output);
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.mesh_max_area.is_finite() && self.mesh_max_area > 0.0) {
            return Err(ExperimentError::Config(format!("mesh_max_area must be positive, got {}", self.mesh_max_area)));
        }
        if !(self.export_spacing.is_finite() && self.export_spacing > 0.0) {
            return Err(ExperimentError::Config(format!(
                "export_spacing must be positive, got {}",
                self.export_spacing
            )));
        }
        if self.points.n_collocation == 0 && self.points.collocation != CollocationKind::Mesh {
            return Err(ExperimentError::Config("n_collocation must be positive".into()));
        }
        if self.points.n_bc < 2 {
            return Err(ExperimentError::Config("n_bc must be at least 2".into()));
        }
        self.train.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.network.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.material.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn finray_params(&self) -> Result<Option<FinRayParams>, ExperimentError> {
        match &self.geometry {
            GeometrySpec::Finray { params } => Ok(Some(read_finray_params(params)?)),
            GeometrySpec::Rectangle { .. } => Ok(None),
        }
    }

    pub fn domain(&self) -> Result<Domain2D, ExperimentError> {
        Ok(match &self.geometry {
            GeometrySpec::Finray { params } => build_finray(&read_finray_params(params)?)?,
            &GeometrySpec::Rectangle { x0, y0, width, height } => Domain2D::rectangle(x0, y0, width, height)?,
        })
    }

    fn forced_points(&self) -> Vec<Point2> {
        self.points
            .forced
            .iter()
            .filter_map(|f| match *f {
                ForcedSpec::Point { x, y, .. } => Some(Point2::new(x, y)),
                ForcedSpec::Edge { .. } => None,
            })
            .collect()
    }

    /// Reads the configured mesh or triangulates the domain with the forced
    /// points as nodes.
    pub fn mesh(&self, domain: &Domain2D) -> Result<TriangleMesh, ExperimentError> {
        if let Some(path) = &self.mesh {
            return read_mesh(path);
        }
        let opts =
            MeshOptions { max_area: self.mesh_max_area, required_points: self.forced_points(), ..Default::default() };
        Ok(mesh_domain(domain, &opts)?)
    }

    pub fn normalizer(&self, domain: &Domain2D) -> Normalizer {
        let (lo, hi) = domain.bounds();
        Normalizer::from_bounds(lo, hi)
    }

    /// Base nodes fixed; forced points move their nearest node, forced edges every tagged node.
    pub fn fem_problem(&self, mesh: TriangleMesh) -> Result<FemProblem, ExperimentError> {
        let tagged = |name: &str| -> Result<Vec<usize>, ExperimentError> {
            let tag = mesh
                .tag_of(name)
                .ok_or_else(|| ExperimentError::Config(format!("mesh has no boundary named `{name}`")))?;
            Ok(mesh.nodes_with_tag(tag))
        };
        let fixed = match &self.points.fixed_edge {
            Some(edge) => tagged(edge)?,
            None => Vec::new(),
        };
        let mut forced = Vec::new();
        for f in &self.points.forced {
            match f {
                ForcedSpec::Point { x, y, u, v } => {
                    let k = mesh
                        .nearest_node(Point2::new(*x, *y))
                        .ok_or_else(|| ExperimentError::Config("empty mesh".into()))?;
                    forced.push((vec![k], *u, *v));
                }
                ForcedSpec::Edge { edge, u, v } => forced.push((tagged(edge)?, *u, *v)),
            }
        }
        let mut prob = FemProblem::new(mesh, self.material);
        prob.prescribe(fixed, 0.0, 0.0);
        for (nodes, u, v) in forced {
            prob.prescribe(nodes, u, v);
        }
        Ok(prob)
    }

    /// Measured marker displacements, if the experiment names any.
    pub fn markers(&self) -> Result<Option<Vec<MarkerDisplacement>>, ExperimentError> {
        let Some(m) = &self.points.markers else {
            return Ok(None);
        };
        match (m.synthetic, &m.displacements, &m.observations, &m.correspondences) {
            (true, None, None, None) => {
                let params = self
                    .finray_params()?
                    .ok_or_else(|| ExperimentError::Config("synthetic markers need a Fin Ray geometry".into()))?;
                let domain = self.domain()?;
                let sol = crate::fem::solve(&self.fem_problem(self.mesh(&domain)?)?)?;
                Ok(Some(synthetic_markers(&sol, &marker_sites(&params))?))
            }
            (false, Some(d), None, None) => Ok(Some(read_displacements_csv(d)?)),
            (false, None, Some(obs), Some(corr)) => {
                let cal = fit_pixel_to_world(&read_correspondences_csv(corr)?)?;
                let (initial, final_) = split_phases(&read_markers_csv(obs)?);
                Ok(Some(smooth_and_difference(&initial, &final_, &cal.transform)?))
            }
            _ => Err(ExperimentError::Config(
                "markers need exactly one of `synthetic`, `displacements`, or `observations` with `correspondences`"
                    .into(),
            )),
        }
    }

    /// Training point sets; `mesh` is required for mesh collocation.
    pub fn point_sets(
        &self,
        domain: &Domain2D,
        mesh: Option<&TriangleMesh>,
        markers: &[MarkerDisplacement],
    ) -> Result<PointSets, ExperimentError> {
        let p = &self.points;
        let collocation = match (p.collocation, mesh) {
            (CollocationKind::Domain, _) => {
                sample_collocation(CollocationSource::Domain(domain), p.n_collocation, self.train.seed)?
            }
            (CollocationKind::Mesh, Some(m)) => sample_collocation(CollocationSource::Mesh(m), 1, self.train.seed)?,
            (CollocationKind::Mesh, None) => {
                return Err(ExperimentError::Config("mesh collocation needs a mesh".into()))
            }
            (CollocationKind::Stratified, _) => {
                sample_collocation(CollocationSource::Stratified(domain), p.n_collocation, self.train.seed)?
            }
            (CollocationKind::Grid, _) => {
                sample_collocation(CollocationSource::Grid(domain), p.n_collocation, self.train.seed)?
            }
        };
        let fixed = match &p.fixed_edge {
            Some(edge) => sample_boundary(domain, edge, p.n_bc)?,
            None => Vec::new(),
        };
        let mut forced = Vec::new();
        for f in &p.forced {
            match f {
                ForcedSpec::Point { x, y, u, v } => forced.push(TargetPoint::new(Point2::new(*x, *y), *u, *v)),
                ForcedSpec::Edge { edge, u, v } => forced
                    .extend(sample_boundary(domain, edge, p.n_bc)?.into_iter().map(|q| TargetPoint::new(q, *u, *v))),
            }
        }
        let assimilation = markers.iter().map(|m| TargetPoint::new(m.position(), m.u, m.v)).collect();
        Ok(PointSets { collocation, fixed, forced, assimilation })
    }

    /// The training config with the variant's assimilation switch applied.
    pub fn train_config(&self, variant: Variant) -> TrainConfig {
        TrainConfig { assimilation_enabled: variant == Variant::Asm, ..self.train.clone() }
    }
}

/// Marker sites on the back-wall centreline, evenly spaced, marker 1 nearest the base.
pub fn marker_sites(params: &FinRayParams) -> Vec<Point2> {
    let tip = params.tip_point();
    let base = Point2::new(0.0, params.base_length);
    let len = tip.dist(base);
    // left normal of the tip-to-base edge points into the material
    let inward = Point2::new(-(base.y - tip.y) / len, (base.x - tip.x) / len);
    let off = 0.5 * params.t_back;
    (1..=MARKER_COUNT)
        .map(|k| {
            let p = base.lerp(tip, (k as f64 - 0.5) / MARKER_COUNT as f64);
            Point2::new(p.x + off * inward.x, p.y + off * inward.y)
        })
        .collect()
}

/// FEM displacements interpolated at the sites, numbered from 1.
pub fn synthetic_markers(sol: &FemSolution, sites: &[Point2]) -> Result<Vec<MarkerDisplacement>, ExperimentError> {
    sites
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let [u, v] = sol.interpolate(p)?;
            Ok(MarkerDisplacement { marker_id: i as u32 + 1, x: p.x, y: p.y, u, v })
        })
        .collect()
}

/// Named presets shipped under `configs/`.
pub mod presets {
    use super::*;
    use crate::training::LossWeights;

    fn finray(
        n_collocation: usize,
        epochs: usize,
        network: NetworkConfig,
        max_area: f64,
        output: &str,
    ) -> ExperimentSpec {
        ExperimentSpec {
            geometry: GeometrySpec::Finray { params: "finray_params.json".into() },
            mesh: None,
            mesh_max_area: max_area,
            material: MaterialModel::default(),
            points: PointSpec {
                n_collocation,
                collocation: CollocationKind::Domain,
                n_bc: 1000,
                fixed_edge: Some("base".into()),
                forced: vec![ForcedSpec::Point { x: 35.0, y: 0.0, u: 0.0, v: -10.0 }],
                markers: Some(MarkerSpec { synthetic: true, ..Default::default() }),
            },
            network,
            train: TrainConfig {
                epochs,
                learning_rate: 1e-3,
                weights: LossWeights { lambda_bc: 1000.0, lambda_asm: 1000.0 },
                seed: 0,
                log_every: 100,
                keep_best: true,
                ..TrainConfig::default()
            },
            export_spacing: 0.5,
            output: output.into(),
        }
    }

    /// CI-sized Fin Ray run.
    pub fn desk() -> ExperimentSpec {
        finray(5000, 10_000, NetworkConfig::new(2, 16, 0), 1.0, "../out/desk")
    }

    /// Full-size Fin Ray run.
    pub fn paper() -> ExperimentSpec {
        let mut s = finray(90_959, 60_000, NetworkConfig::new(4, 64, 0), 0.05, "../out/paper");
        s.points.collocation = CollocationKind::Mesh;
        s
    }

    /// Unit square, base fixed, top pushed down by 0.1 mm.
    pub fn square_stretch() -> ExperimentSpec {
        ExperimentSpec {
            geometry: GeometrySpec::Rectangle { x0: 0.0, y0: 0.0, width: 1.0, height: 1.0 },
            mesh: None,
            mesh_max_area: 0.005,
            material: MaterialModel { poisson_ratio: 0.0, ..MaterialModel::default() },
            points: PointSpec {
                n_collocation: 2000,
                collocation: CollocationKind::Grid,
                n_bc: 100,
                fixed_edge: Some("base".into()),
                forced: vec![ForcedSpec::Edge { edge: "top".into(), u: 0.0, v: -0.1 }],
                markers: None,
            },
            network: NetworkConfig { zero_head: true, ..NetworkConfig::new(2, 32, 0) },
            train: TrainConfig {
                epochs: 5000,
                learning_rate: 1e-3,
                weights: LossWeights { lambda_bc: 1000.0, lambda_asm: 1000.0 },
                seed: 0,
                log_every: 100,
                keep_best: true,
                ..TrainConfig::default()
            },
            export_spacing: 0.05,
            output: "../out/square_stretch".into(),
        }
    }

    pub fn by_name(name: &str) -> Option<ExperimentSpec> {
        match name {
            "desk" => Some(desk()),
            "paper" => Some(paper()),
            "square_stretch" => Some(square_stretch()),
            _ => None,
        }
    }
}
