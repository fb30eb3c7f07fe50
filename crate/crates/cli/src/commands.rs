use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use finray_core::evaluation::{
    comparison_table, export_fields, grid_points, write_displacements_csv, write_fields_csv, NetField,
};
use finray_core::experiment::{marker_sites, synthetic_markers, CollocationKind, ExperimentSpec, MARKER_COUNT};
use finray_core::fem::solve;
use finray_core::geometry::{
    build_finray, mesh_domain, sample_collocation, write_mesh, CollocationSource, MeshOptions,
};
use finray_core::network::DisplacementNet;
use finray_core::training::{train, write_history_csv, LossRecord, TrainError};
use finray_core::{FemSolution, MarkerDisplacement, MetricsReport, Variant};

use crate::{Cli, Command, Common};

pub fn run(cli: Cli) -> Result<()> {
    let common = cli.common;
    if let Some(n) = common.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Geometry { params, points, mesh_area } => geometry(&common, params, points, mesh_area),
        Command::Fem => fem(&load_spec(&common)?),
        Command::Train { variant } => train_variant(&load_spec(&common)?, variant.into()),
        Command::Evaluate { checkpoints, no_fem } => evaluate(&load_spec(&common)?, &checkpoints, no_fem),
        Command::Export { variant, fem } => export(&load_spec(&common)?, variant.into(), fem),
    }
}

fn load_spec(common: &Common) -> Result<ExperimentSpec> {
    let path = common.config.as_ref().ok_or_else(|| anyhow!("--config (or PINNRAY_CONFIG) is required"))?;
    let mut spec = ExperimentSpec::load(path)?;
    if let Some(seed) = common.seed {
        spec.train.seed = seed;
        spec.network.seed = seed;
    }
    if let Some(epochs) = common.epochs {
        spec.train.epochs = epochs;
    }
    if let Some(d) = common.deterministic {
        spec.train.deterministic = d;
    }
    if let Some(out) = &common.out {
        spec.output = out.clone();
    }
    spec.validate()?;
    Ok(spec)
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn geometry(common: &Common, params: Option<PathBuf>, points: Option<usize>, mesh_area: Option<f64>) -> Result<()> {
    let (params, out) = match params {
        Some(p) => (finray_core::experiment::read_finray_params(&p)?, common.out.clone().unwrap_or_else(|| ".".into())),
        None => {
            let spec = load_spec(common)?;
            let p = spec.finray_params()?.ok_or_else(|| anyhow!("experiment geometry is not a Fin Ray"))?;
            (p, spec.output)
        }
    };
    let domain = build_finray(&params)?;
    out_dir(&out)?;
    write(&out.join("domain.json"), &(serde_json::to_string_pretty(&domain)? + "\n"))?;
    if let Some(n) = points {
        let pts = sample_collocation(CollocationSource::Domain(&domain), n, common.seed.unwrap_or(0))?;
        let mut text = String::from("x,y\n");
        for p in &pts {
            text.push_str(&format!("{:?},{:?}\n", p.x, p.y));
        }
        write(&out.join("collocation.csv"), &text)?;
    }
    if let Some(area) = mesh_area {
        let mesh = mesh_domain(&domain, &MeshOptions { max_area: area, ..Default::default() })?;
        write(&out.join("mesh.msh"), &write_mesh(&mesh))?;
    }
    println!(
        "domain: {} holes, material area {:.3} mm^2 -> {}",
        domain.holes().len(),
        domain.material_area(),
        out.join("domain.json").display()
    );
    Ok(())
}

fn solve_fem(spec: &ExperimentSpec) -> Result<FemSolution> {
    let domain = spec.domain()?;
    let mesh = spec.mesh(&domain)?;
    let sol = solve(&spec.fem_problem(mesh)?)?;
    if sol.displacements.iter().flatten().any(|v| !v.is_finite()) {
        bail!("FEM solution is not finite");
    }
    Ok(sol)
}

fn fem(spec: &ExperimentSpec) -> Result<()> {
    let sol = solve_fem(spec)?;
    let out = &spec.output;
    out_dir(out)?;
    write(&out.join("mesh.msh"), &write_mesh(&sol.mesh))?;
    sol.write_nodes_csv(&out.join("fem_nodes.csv"))?;
    sol.write_elements_csv(&out.join("fem_elements.csv"))?;
    if let Some(params) = spec.finray_params()? {
        let markers = synthetic_markers(&sol, &marker_sites(&params))?;
        write_displacements_csv(&out.join("fem_markers.csv"), &markers)?;
    }
    let [mu, mv] = sol.max_abs_displacement();
    let summary = serde_json::json!({
        "nodes": sol.mesh.node_count(),
        "elements": sol.mesh.triangle_count(),
        "energy": sol.energy,
        "max_abs_u": mu,
        "max_abs_v": mv,
    });
    write(&out.join("fem_summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    println!(
        "fem: {} nodes, {} elements, energy {:.6e} N mm, max |u| {:.4} mm, max |v| {:.4} mm",
        sol.mesh.node_count(),
        sol.mesh.triangle_count(),
        sol.energy,
        mu,
        mv
    );
    Ok(())
}

fn warn_marker_count(markers: &[MarkerDisplacement]) {
    if markers.len() != MARKER_COUNT {
        eprintln!("warning: expected {MARKER_COUNT} markers, got {}", markers.len());
    }
}

fn checkpoint_path(spec: &ExperimentSpec, variant: Variant) -> PathBuf {
    spec.output.join(format!("checkpoint_{}.json", variant.label()))
}

fn train_variant(spec: &ExperimentSpec, variant: Variant) -> Result<()> {
    let markers = match variant {
        Variant::Asm => {
            let m = spec.markers()?.ok_or_else(|| anyhow!("training config: variant asm needs a markers file"))?;
            warn_marker_count(&m);
            m
        }
        Variant::Std => Vec::new(),
    };
    let domain = spec.domain()?;
    let mesh = match spec.points.collocation {
        CollocationKind::Mesh => Some(spec.mesh(&domain)?),
        CollocationKind::Domain | CollocationKind::Stratified | CollocationKind::Grid => None,
    };
    let sets = spec.point_sets(&domain, mesh.as_ref(), &markers)?;
    let cfg = spec.train_config(variant);
    let mut net = DisplacementNet::init(&spec.network, spec.normalizer(&domain))?;
    out_dir(&spec.output)?;
    let loss_path = spec.output.join(format!("loss_{}.csv", variant.label()));
    let log = |r: &LossRecord| {
        eprintln!(
            "epoch {:>6}  l_pde {:.6e}  l_bc {:.6e}  l_asm {:.6e}  l_total {:.6e}",
            r.epoch, r.l_pde, r.l_bc, r.l_asm, r.l_total
        )
    };
    let history = match train(&mut net, &sets, &spec.material, &cfg, Some(domain.material_area()), log) {
        Ok(h) => h,
        Err(TrainError::Diverged { epoch, last_finite, reason, history }) => {
            write_history_csv(&loss_path, &history)?;
            bail!(
                "training diverged at epoch {epoch} (last finite {last_finite}): {reason}; partial history in {}",
                loss_path.display()
            );
        }
        Err(e) => return Err(e.into()),
    };
    write_history_csv(&loss_path, &history)?;
    let ck = checkpoint_path(spec, variant);
    net.save(&ck)?;
    let last = history.last().ok_or_else(|| anyhow!("empty loss history"))?;
    println!(
        "{}: epoch {} l_pde {:.6e} l_bc {:.6e} l_asm {:.6e} l_total {:.6e} -> {}",
        variant.label(),
        last.epoch,
        last.l_pde,
        last.l_bc,
        last.l_asm,
        last.l_total,
        ck.display()
    );
    Ok(())
}

fn net_estimates(net: &DisplacementNet, markers: &[MarkerDisplacement]) -> Result<Vec<[f64; 2]>> {
    markers
        .iter()
        .map(|m| {
            let (u, v) = net.displacement(m.x, m.y)?;
            Ok([u, v])
        })
        .collect()
}

fn evaluate(spec: &ExperimentSpec, extra: &[String], no_fem: bool) -> Result<()> {
    let markers = spec.markers()?.ok_or_else(|| anyhow!("evaluation needs measured markers in the experiment"))?;
    warn_marker_count(&markers);
    let measured: Vec<[f64; 2]> = markers.iter().map(|m| [m.u, m.v]).collect();
    let mut reports = Vec::new();
    if !no_fem {
        let sol = solve_fem(spec)?;
        let est = markers
            .iter()
            .map(|m| sol.interpolate(m.position()).with_context(|| format!("marker {}", m.marker_id)))
            .collect::<Result<Vec<_>>>()?;
        reports.push(MetricsReport::compute("fem", &est, &measured)?);
    }
    let mut methods: Vec<(String, PathBuf)> = Vec::new();
    if extra.is_empty() {
        for v in [Variant::Std, Variant::Asm] {
            let p = checkpoint_path(spec, v);
            if p.exists() {
                methods.push((format!("pinn_{}", v.label()), p));
            }
        }
    }
    for item in extra {
        let (label, path) =
            item.split_once('=').ok_or_else(|| anyhow!("--checkpoint expects LABEL=PATH, got `{item}`"))?;
        methods.push((label.to_string(), path.into()));
    }
    for (label, path) in methods {
        let net = DisplacementNet::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
        reports.push(MetricsReport::compute(&label, &net_estimates(&net, &markers)?, &measured)?);
    }
    if reports.is_empty() {
        bail!("nothing to evaluate: no FEM and no checkpoints");
    }
    for r in &reports {
        if ![r.mae_u, r.mae_v, r.mae_disp].iter().all(|v| v.is_finite()) {
            bail!("metrics for {} are not finite", r.method);
        }
    }
    out_dir(&spec.output)?;
    write(&spec.output.join("metrics.json"), &(serde_json::to_string_pretty(&reports)? + "\n"))?;
    let table = comparison_table(&reports);
    write(&spec.output.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn export(spec: &ExperimentSpec, variant: Variant, fem: bool) -> Result<()> {
    let domain = spec.domain()?;
    let points = grid_points(&domain, spec.export_spacing)?;
    let (rows, name) = if fem {
        (export_fields(&solve_fem(spec)?, &points)?, "fields_fem.csv".to_string())
    } else {
        let path = checkpoint_path(spec, variant);
        let net = DisplacementNet::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
        let source = NetField { net: &net, material: &spec.material };
        (export_fields(&source, &points)?, format!("fields_{}.csv", variant.label()))
    };
    out_dir(&spec.output)?;
    let path = spec.output.join(name);
    write_fields_csv(&path, &rows)?;
    println!("export: {} of {} grid points -> {}", rows.len(), points.len(), path.display());
    Ok(())
}
