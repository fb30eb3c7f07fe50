//! Fixtures shared by the benchmarks.

use finray_core::experiment::presets;
use finray_core::geometry::{build_finray, mesh_domain, MeshOptions};
use finray_core::training::{LossProblem, LossWeights};
use finray_core::{DisplacementNet, Domain2D, FinRayParams, NetworkConfig, TriangleMesh, Variant};

pub fn finray_domain() -> Domain2D {
    build_finray(&FinRayParams::default()).expect("default parameters are valid")
}

pub fn finray_mesh(max_area: f64) -> TriangleMesh {
    mesh_domain(&finray_domain(), &MeshOptions { max_area, ..Default::default() }).expect("default domain meshes")
}

/// Desk point sets over the default finger with `n_collocation` collocation points.
pub fn finray_problem(layers: usize, width: usize, n_collocation: usize) -> (DisplacementNet, LossProblem) {
    let domain = finray_domain();
    let mut spec = presets::desk();
    spec.points.n_collocation = n_collocation;
    spec.network = NetworkConfig::new(layers, width, 0);
    let sets = spec.point_sets(&domain, None, &[]).expect("desk point sets");
    let net = DisplacementNet::init(&spec.network, spec.normalizer(&domain)).expect("valid network");
    let cfg = spec.train_config(Variant::Std);
    let problem = LossProblem::new(&net, &sets, &spec.material, LossWeights::default(), false, cfg.chunk_size, None)
        .expect("valid problem");
    (net, problem)
}
