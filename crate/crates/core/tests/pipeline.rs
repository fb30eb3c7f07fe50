use std::fs;
use std::path::PathBuf;

use finray_core::evaluation::{export_fields, grid_points, write_fields_csv, NetField, FIELD_CSV_HEADER};
use finray_core::experiment::{presets, read_mesh};
use finray_core::fem::solve;
use finray_core::geometry::write_mesh;
use finray_core::training::{read_history_csv, train, write_history_csv};
use finray_core::{DisplacementNet, ExperimentSpec, MetricsReport, Variant};
use tempfile::TempDir;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn short_training_survives_files() {
    let tmp = TempDir::new().unwrap();
    let mut spec = presets::square_stretch();
    spec.train.epochs = 30;
    spec.train.log_every = 10;
    let domain = spec.domain().unwrap();
    let sets = spec.point_sets(&domain, None, &[]).unwrap();
    let mut net = DisplacementNet::init(&spec.network, spec.normalizer(&domain)).unwrap();
    let history =
        train(&mut net, &sets, &spec.material, &spec.train_config(Variant::Std), Some(domain.material_area()), |_| {})
            .unwrap();
    assert_eq!(history.iter().map(|r| r.epoch).collect::<Vec<_>>(), [1, 10, 20, 30]);

    let loss = tmp.path().join("loss.csv");
    write_history_csv(&loss, &history).unwrap();
    assert_eq!(read_history_csv(&loss).unwrap(), history);

    let ck = tmp.path().join("checkpoint.json");
    net.save(&ck).unwrap();
    let loaded = DisplacementNet::load(&ck).unwrap();
    assert_eq!(loaded, net);

    let points = grid_points(&domain, 0.25).unwrap();
    let source = NetField { net: &loaded, material: &spec.material };
    let rows = export_fields(&source, &points).unwrap();
    assert_eq!(rows.len(), points.len());
    let fields = tmp.path().join("fields.csv");
    write_fields_csv(&fields, &rows).unwrap();
    let text = fs::read_to_string(&fields).unwrap();
    assert_eq!(text.lines().next().unwrap(), FIELD_CSV_HEADER.join(","));
    assert_eq!(text.lines().count(), points.len() + 1);
}

#[test]
fn desk_config_fem_markers_and_mesh_file() {
    let tmp = TempDir::new().unwrap();
    let spec = ExperimentSpec::load(&configs().join("finray_desk.json")).unwrap();
    let domain = spec.domain().unwrap();
    let mesh = spec.mesh(&domain).unwrap();
    let path = tmp.path().join("mesh.msh");
    fs::write(&path, write_mesh(&mesh)).unwrap();
    let reread = read_mesh(&path).unwrap();
    assert_eq!(reread, mesh);

    let a = solve(&spec.fem_problem(mesh).unwrap()).unwrap();
    let b = solve(&spec.fem_problem(reread).unwrap()).unwrap();
    assert_eq!(a.displacements, b.displacements);

    let markers = spec.markers().unwrap().unwrap();
    assert_eq!(markers.len(), 9);
    assert!(markers.iter().all(|m| domain.contains(m.position())));
    let est: Vec<[f64; 2]> = markers.iter().map(|m| a.interpolate(m.position()).unwrap()).collect();
    let measured: Vec<[f64; 2]> = markers.iter().map(|m| [m.u, m.v]).collect();
    let report = MetricsReport::compute("fem", &est, &measured).unwrap();
    assert_eq!(report.mae_disp, 0.0);
    assert!(markers.iter().all(|m| m.v < 0.0));
}
