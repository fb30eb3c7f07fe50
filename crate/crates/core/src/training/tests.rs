use super::*;
use crate::elasticity::{energy_density, strain_from_jacobian, stress_from_strain};
use crate::geometry::Point2;

fn set(net: &mut DisplacementNet, half: char, name: &str, values: &[f64]) {
    let h = if half == 'u' { &mut net.net_u } else { &mut net.net_v };
    h.params_mut().block_mut(name).unwrap().copy_from_slice(values);
}

/// u = (s / eps) tanh(eps x), which is s * x up to O(eps^2 x^3).
fn near_affine_u(slope: f64) -> DisplacementNet {
    let c = NetworkConfig::new(1, 1, 0);
    let mut net = DisplacementNet::zeros(&c, Normalizer::identity()).unwrap();
    let eps = 1e-6;
    set(&mut net, 'u', "lift_a.weight", &[eps, 0.0]);
    set(&mut net, 'u', "lift_b.weight", &[eps, 0.0]);
    set(&mut net, 'u', "out.weight", &[slope / eps]);
    net
}

fn zero_net() -> DisplacementNet {
    DisplacementNet::zeros(&NetworkConfig::new(2, 4, 0), Normalizer::identity()).unwrap()
}

#[test]
fn zero_net_has_zero_energy() {
    let pts: Vec<Point2> = (0..20).map(|i| Point2::new(i as f64 * 0.1, 1.0 - i as f64 * 0.05)).collect();
    assert_eq!(loss_pde(&zero_net(), &pts, &MaterialModel::default()).unwrap(), 0.0);
}

#[test]
fn uniaxial_point_matches_hand_value() {
    let net = near_affine_u(0.01);
    let l = loss_pde(&net, &[Point2::new(0.3, 0.2)], &MaterialModel::default()).unwrap();
    let sxx = (11.4 * 0.45 / (1.45 * 0.55) + 11.4 / 1.45) * 0.01;
    let hand = 0.5 * sxx * 0.01;
    assert!((l - hand).abs() < 1e-9 * hand, "{l} vs {hand}");
    assert!((l - 7.146e-4).abs() < 1e-6);
}

#[test]
fn pde_loss_matches_pointwise_chain() {
    let c = NetworkConfig::new(2, 6, 17);
    let net = DisplacementNet::init(&c, Normalizer::identity()).unwrap();
    let mat = MaterialModel::default();
    let pts: Vec<Point2> = (0..7).map(|i| Point2::new(0.1 * i as f64, -0.3 + 0.2 * i as f64)).collect();
    let mut mean = 0.0;
    for p in &pts {
        let (u, v) = net.displacement_with_derivs(p.x, p.y).unwrap();
        let eps = strain_from_jacobian(u.d_dx, u.d_dy, v.d_dx, v.d_dy);
        mean += energy_density(stress_from_strain(eps, &mat).unwrap(), eps) / pts.len() as f64;
    }
    let l = loss_pde(&net, &pts, &mat).unwrap();
    assert!((l - mean).abs() < 1e-13 * mean.abs().max(1e-12));
}

#[test]
fn doubling_displacement_quadruples_energy() {
    let c = NetworkConfig::new(2, 5, 23);
    let mut net = DisplacementNet::init(&c, Normalizer::identity()).unwrap();
    let pts: Vec<Point2> = (0..9).map(|i| Point2::new(0.1 * i as f64, 0.05 * i as f64)).collect();
    let mat = MaterialModel::default();
    let before = loss_pde(&net, &pts, &mat).unwrap();
    for half in [&mut net.net_u, &mut net.net_v] {
        for name in ["out.weight", "out.bias"] {
            for p in half.params_mut().block_mut(name).unwrap() {
                *p *= 2.0;
            }
        }
    }
    let after = loss_pde(&net, &pts, &mat).unwrap();
    assert!((after - 4.0 * before).abs() < 1e-12 * after);

    let affine = near_affine_u(0.01);
    let doubled = near_affine_u(0.02);
    let p = [Point2::new(0.4, 0.1)];
    let (a, b) = (loss_pde(&affine, &p, &mat).unwrap(), loss_pde(&doubled, &p, &mat).unwrap());
    assert!((b / a - 4.0).abs() < 1e-9);
}

#[test]
fn boundary_loss_examples() {
    let net = zero_net();
    let fixed = [Point2::new(0.0, 0.0), Point2::new(0.0, 1.0)];
    assert_eq!(loss_bc(&net, &fixed, &[]).unwrap(), 0.0);
    let forced = [TargetPoint::new(Point2::new(35.0, 0.0), 0.0, -10.0)];
    assert_eq!(loss_bc(&net, &[], &forced).unwrap(), 100.0);
    assert_eq!(loss_bc(&net, &fixed, &forced).unwrap(), 100.0);
    assert!(matches!(loss_bc(&net, &[], &[]), Err(TrainError::Config(_))));

    // constant head (1, 2): fixed mean of 1 + 4, forced residual (0-1)^2 + (-10-2)^2
    let mut c = zero_net();
    set(&mut c, 'u', "out.bias", &[1.0]);
    set(&mut c, 'v', "out.bias", &[2.0]);
    assert_eq!(loss_bc(&c, &fixed, &forced).unwrap(), 5.0 + 145.0);
    let exact = [TargetPoint::new(Point2::new(3.0, 3.0), 1.0, 2.0)];
    assert_eq!(loss_bc(&c, &[], &exact).unwrap(), 0.0);
}

#[test]
fn assimilation_loss_examples() {
    let net = zero_net();
    let m = [TargetPoint::new(Point2::new(1.0, 1.0), 3.0, -4.0)];
    assert_eq!(loss_asm(&net, &m).unwrap(), 25.0);
    let m2 = [TargetPoint::new(Point2::new(1.0, 1.0), 6.0, -8.0)];
    assert_eq!(loss_asm(&net, &m2).unwrap(), 100.0);
    assert!(loss_asm(&net, &[]).is_err());
}

#[test]
fn total_loss_composition() {
    let w = LossWeights { lambda_bc: 1000.0, lambda_asm: 1000.0 };
    let r = LossRecord::compose(0, 0.1, 0.02, 0.003, &w);
    assert!((r.l_total - 23.1).abs() < 1e-12);

    let mut net = zero_net();
    set(&mut net, 'v', "out.bias", &[-1.0]);
    let sets = PointSets {
        collocation: vec![Point2::new(0.5, 0.5)],
        fixed: vec![Point2::new(0.0, 0.0)],
        forced: vec![],
        assimilation: vec![TargetPoint::new(Point2::new(0.5, 0.5), 3.0, -4.0)],
    };
    let mat = MaterialModel::default();
    let off = total_loss(&net, &sets, &mat, w, false).unwrap();
    assert_eq!(off.l_asm, 0.0);
    assert_eq!(off.l_total, off.l_pde + 1000.0 * off.l_bc);
    let on = total_loss(&net, &sets, &mat, w, true).unwrap();
    assert_eq!(on.l_asm, 9.0 + 9.0);
    assert!((on.l_total - (on.l_pde + 1000.0 * on.l_bc + 1000.0 * on.l_asm)).abs() <= 1e-12 * on.l_total);
    let zero_w = total_loss(&net, &sets, &mat, LossWeights { lambda_bc: 0.0, lambda_asm: 0.0 }, true).unwrap();
    assert_eq!(zero_w.l_total, zero_w.l_pde);
}

fn fd_check(net: &DisplacementNet, problem: &LossProblem, terms: Terms, tol: f64) {
    let (_, grad) = problem.loss_and_grad(net, terms, 0).unwrap();
    let eval = |p: &crate::autodiff::ParamVector| {
        let mut n = net.clone();
        n.unflatten(p).unwrap();
        let (r, _) = problem.loss_and_grad(&n, terms, 0).unwrap();
        let w = &problem.weights;
        (if terms.pde { r.l_pde } else { 0.0 })
            + (if terms.bc { w.lambda_bc * r.l_bc } else { 0.0 })
            + (if terms.asm { w.lambda_asm * r.l_asm } else { 0.0 })
    };
    let base = net.flatten();
    let h = 1e-6;
    let scale = grad.as_slice().iter().fold(0.0f64, |m, g| m.max(g.abs()));
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus.as_mut_slice()[i] += h;
        let mut minus = base.clone();
        minus.as_mut_slice()[i] -= h;
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
        let g = grad.as_slice()[i];
        assert!((g - fd).abs() <= tol * fd.abs().max(1e-3 * scale), "param {i}: {g} vs {fd}");
    }
}

#[test]
fn total_gradient_matches_finite_differences() {
    let c = NetworkConfig::new(2, 4, 5);
    let norm = Normalizer::from_bounds(Point2::new(0.0, 0.0), Point2::new(2.0, 1.0));
    let net = DisplacementNet::init(&c, norm).unwrap();
    let sets = PointSets {
        collocation: (0..10).map(|i| Point2::new(0.2 * i as f64, 0.1 * i as f64)).collect(),
        fixed: vec![Point2::new(0.0, 0.0), Point2::new(0.0, 1.0)],
        forced: vec![TargetPoint::new(Point2::new(2.0, 0.5), 0.0, -0.1)],
        assimilation: vec![TargetPoint::new(Point2::new(1.0, 0.5), 0.02, -0.05)],
    };
    let w = LossWeights { lambda_bc: 3.0, lambda_asm: 2.0 };
    let p = LossProblem::new(&net, &sets, &MaterialModel::default(), w, true, 3, None).unwrap();
    fd_check(&net, &p, Terms::ALL, 1e-4);
}

#[test]
fn fused_and_tape_engines_agree() {
    let c = NetworkConfig::new(3, 5, 8);
    let norm = Normalizer::from_bounds(Point2::new(0.0, 0.0), Point2::new(2.0, 1.0));
    let net = DisplacementNet::init(&c, norm).unwrap();
    let sets = PointSets {
        collocation: (0..37).map(|i| Point2::new(0.05 * i as f64, 0.9 - 0.02 * i as f64)).collect(),
        fixed: vec![Point2::new(0.0, 0.0), Point2::new(0.0, 0.4), Point2::new(0.0, 1.0)],
        forced: vec![TargetPoint::new(Point2::new(2.0, 0.5), 0.0, -0.1)],
        assimilation: vec![
            TargetPoint::new(Point2::new(1.0, 0.5), 0.02, -0.05),
            TargetPoint::new(Point2::new(1.5, 0.2), -0.01, -0.08),
        ],
    };
    let w = LossWeights { lambda_bc: 30.0, lambda_asm: 7.0 };
    let mut p = LossProblem::new(&net, &sets, &MaterialModel::default(), w, true, 8, Some(1.7)).unwrap();
    let (rf, gf) = p.loss_and_grad(&net, Terms::ALL, 0).unwrap();
    let ef = p.evaluate(&net, 0).unwrap();
    p.engine = Engine::Tape;
    let (rt, gt) = p.loss_and_grad(&net, Terms::ALL, 0).unwrap();
    let et = p.evaluate(&net, 0).unwrap();
    for (a, b) in [
        (rf.l_pde, rt.l_pde),
        (rf.l_bc, rt.l_bc),
        (rf.l_asm, rt.l_asm),
        (rf.l_total, rt.l_total),
        (ef.l_total, et.l_total),
        (ef.l_total, rf.l_total),
    ] {
        assert!((a - b).abs() <= 1e-13 * b.abs().max(1e-12), "{a} vs {b}");
    }
    for (a, b) in gf.as_slice().iter().zip(gt.as_slice()) {
        assert!((a - b).abs() <= 1e-11 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn evaluate_terms_zeroes_the_others() {
    let c = NetworkConfig::new(2, 4, 3);
    let net = DisplacementNet::init(&c, Normalizer::identity()).unwrap();
    let sets = PointSets {
        collocation: vec![Point2::new(0.1, 0.2), Point2::new(-0.3, 0.5)],
        fixed: vec![Point2::new(0.0, -1.0)],
        forced: vec![TargetPoint::new(Point2::new(0.0, 1.0), 0.0, -0.1)],
        assimilation: vec![TargetPoint::new(Point2::new(0.5, 0.5), 0.01, -0.02)],
    };
    let p = LossProblem::new(&net, &sets, &MaterialModel::default(), LossWeights::default(), true, 4, None).unwrap();
    let all = p.evaluate(&net, 0).unwrap();
    let pde = p.evaluate_terms(&net, Terms::PDE, 0).unwrap();
    let bc = p.evaluate_terms(&net, Terms::BC, 0).unwrap();
    let asm = p.evaluate_terms(&net, Terms::ASM, 0).unwrap();
    assert_eq!((pde.l_pde, pde.l_bc, pde.l_asm), (all.l_pde, 0.0, 0.0));
    assert_eq!((bc.l_pde, bc.l_bc, bc.l_asm), (0.0, all.l_bc, 0.0));
    assert_eq!((asm.l_pde, asm.l_bc, asm.l_asm), (0.0, 0.0, all.l_asm));
}

fn toy_sets() -> PointSets {
    PointSets {
        collocation: (0..50).map(|i| Point2::new((i % 10) as f64 / 9.0, (i / 10) as f64 / 4.0)).collect(),
        fixed: (0..5).map(|i| Point2::new(i as f64 / 4.0, 0.0)).collect(),
        forced: (0..5).map(|i| TargetPoint::new(Point2::new(i as f64 / 4.0, 1.0), 0.0, -0.1)).collect(),
        assimilation: vec![],
    }
}

fn toy_config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, log_every: 10, chunk_size: 16, ..Default::default() }
}

#[test]
fn single_epoch_history() {
    let mut net = DisplacementNet::init(&NetworkConfig::new(1, 4, 1), Normalizer::identity()).unwrap();
    let before = net.flatten();
    let h = train(&mut net, &toy_sets(), &MaterialModel::default(), &toy_config(1), None, |_| {}).unwrap();
    assert_eq!(h.len(), 1);
    assert_eq!(h[0].epoch, 1);
    assert_ne!(net.flatten().as_slice(), before.as_slice());
}

#[test]
fn training_is_reproducible_and_decreasing() {
    let run = || {
        let mut net = DisplacementNet::init(&NetworkConfig::new(2, 8, 3), Normalizer::identity()).unwrap();
        let h = train(
            &mut net,
            &toy_sets(),
            &MaterialModel::new(1.0, 0.0, Default::default()).unwrap(),
            &toy_config(200),
            None,
            |_| {},
        )
        .unwrap();
        (h, net.flatten())
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1, h2);
    assert_eq!(p1.as_slice(), p2.as_slice());
    assert_eq!(h1.len(), 21);
    assert!(h1.last().unwrap().l_total < 0.5 * h1[0].l_total);
    for r in &h1 {
        assert!((r.l_total - (r.l_pde + 1000.0 * r.l_bc)).abs() <= 1e-12 * r.l_total);
    }
}

#[test]
fn keep_best_restores_the_lowest_logged_loss() {
    let mat = MaterialModel::new(1.0, 0.0, Default::default()).unwrap();
    let cfg = TrainConfig { keep_best: true, log_every: 1, learning_rate: 0.05, ..toy_config(60) };
    let mut net = DisplacementNet::init(&NetworkConfig::new(2, 8, 3), Normalizer::identity()).unwrap();
    let h = train(&mut net, &toy_sets(), &mat, &cfg, None, |_| {}).unwrap();
    let best = h.iter().map(|r| r.l_total).fold(f64::INFINITY, f64::min);
    let p = prepare(&net, &toy_sets(), &mat, &cfg, None).unwrap();
    assert_eq!(p.evaluate(&net, 0).unwrap().l_total, best);
}

#[test]
fn assimilation_without_markers_is_config_error() {
    let mut net = zero_net();
    let cfg = TrainConfig { assimilation_enabled: true, ..toy_config(1) };
    let e = train(&mut net, &toy_sets(), &MaterialModel::default(), &cfg, None, |_| {}).unwrap_err();
    assert!(matches!(e, TrainError::Config(_)));
}

#[test]
fn divergence_reports_partial_history() {
    // A huge modulus overflows the energy after a few aggressive steps.
    let mut net = DisplacementNet::init(&NetworkConfig::new(1, 4, 1), Normalizer::identity()).unwrap();
    let mat = MaterialModel::new(1e308, 0.3, Default::default()).unwrap();
    let e = train(&mut net, &toy_sets(), &mat, &toy_config(5), None, |_| {}).unwrap_err();
    match e {
        TrainError::Diverged { epoch, last_finite, .. } => assert!(last_finite < epoch),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn history_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    let w = LossWeights::default();
    let h = vec![LossRecord::compose(1, 0.1, 1.0 / 3.0, 0.0, &w), LossRecord::compose(100, 1e-7, 2e-9, 0.0, &w)];
    write_history_csv(&path, &h).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("epoch,l_pde,l_bc,l_asm,l_total\n"));
    assert_eq!(read_history_csv(&path).unwrap(), h);
}

#[test]
fn config_json_round_trip() {
    let cfg = TrainConfig { seed: 9, assimilation_enabled: true, ..Default::default() };
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&text).unwrap(), cfg);
    assert!(serde_json::from_str::<TrainConfig>(&text.replace("\"seed\"", "\"sede\"")).is_err());
}

#[test]
fn grid_search_shape_and_single_cell() {
    let c = NetworkConfig::new(1, 3, 4);
    let base = toy_config(5);
    let sets = toy_sets();
    let mat = MaterialModel::default();
    let cells =
        grid_search(&base, &c, Normalizer::identity(), &sets, &mat, &[-4, -3, -2], &[-1, 0, 1, 2, 3], None).unwrap();
    assert_eq!(cells.len(), 15);
    for w in cells.windows(2) {
        assert!(w[0].terminal.unwrap().l_total <= w[1].terminal.unwrap().l_total);
    }
    let again =
        grid_search(&base, &c, Normalizer::identity(), &sets, &mat, &[-4, -3, -2], &[-1, 0, 1, 2, 3], None).unwrap();
    assert_eq!(cells, again);

    let single = grid_search(&base, &c, Normalizer::identity(), &sets, &mat, &[-3], &[3], None).unwrap();
    let mut net = DisplacementNet::init(&c, Normalizer::identity()).unwrap();
    let direct = train(&mut net, &sets, &mat, &base, None, |_| {}).unwrap();
    assert_eq!(single[0].terminal, direct.last().copied());
    assert!(grid_search(&base, &c, Normalizer::identity(), &sets, &mat, &[], &[1], None).is_err());
}
