use super::*;
use crate::elasticity::Formulation;
use crate::geometry::{mesh_domain, Domain2D, MeshOptions};

fn square_two_triangles() -> TriangleMesh {
    TriangleMesh::new(
        vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0), Point2::new(0.0, 1.0)],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap()
}

fn unstructured_square() -> TriangleMesh {
    let d = Domain2D::rectangle(0.0, 0.0, 2.0, 1.5).unwrap();
    mesh_domain(&d, &MeshOptions { max_area: 0.02, ..Default::default() }).unwrap()
}

fn affine(p: Point2) -> [f64; 2] {
    [0.01 * p.x, -0.0045 * p.y]
}

fn patch_problem(mesh: TriangleMesh) -> FemProblem {
    let mut prob = FemProblem::new(mesh, MaterialModel::default());
    for [a, b] in prob.mesh.boundary_edges() {
        for k in [a, b] {
            let [u, v] = affine(prob.mesh.nodes[k]);
            prob.dirichlet.insert(k, [u, v]);
        }
    }
    prob
}

fn hand_patch_stress() -> [f64; 3] {
    // plane-stress substitution with E = 11.4, nu = 0.45, strains (0.01, -0.0045, 0)
    let (e, nu) = (11.4, 0.45);
    let f = e / (1.0 - nu * nu);
    [f * (0.01 + nu * -0.0045), f * (-0.0045 + nu * 0.01), 0.0]
}

#[test]
fn stiffness_is_symmetric_with_rigid_null_space() {
    let mesh = unstructured_square();
    let n = mesh.node_count();
    let asm = assemble(&FemProblem::new(mesh.clone(), MaterialModel::default())).unwrap();
    assert!(asm.stiffness.max_asymmetry() < 1e-12);
    let scale = (0..2 * n).map(|i| asm.stiffness.get(i, i)).fold(0.0, f64::max);
    let modes: [Box<dyn Fn(Point2) -> [f64; 2]>; 3] =
        [Box::new(|_| [1.0, 0.0]), Box::new(|_| [0.0, 1.0]), Box::new(|p: Point2| [-p.y, p.x])];
    for mode in &modes {
        let x: Vec<f64> = mesh.nodes.iter().flat_map(|&p| mode(p)).collect();
        let r = asm.stiffness.matvec(&x);
        let worst = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-12 * scale, "{worst}");
    }
}

#[test]
fn two_triangle_patch_has_uniform_hand_stress() {
    let sol = solve(&patch_problem(square_two_triangles())).unwrap();
    let hand = hand_patch_stress();
    for s in &sol.stresses {
        for (got, want) in [s.xx, s.yy, s.xy].iter().zip(hand) {
            assert!((got - want).abs() <= 1e-12 * hand[0].abs(), "{got} vs {want}");
        }
    }
}

#[test]
fn patch_test_on_unstructured_mesh() {
    let sol = solve(&patch_problem(unstructured_square())).unwrap();
    let interior = sol.mesh.node_count() - sol.reactions.len();
    assert!(interior > 20);
    for (p, d) in sol.mesh.nodes.iter().zip(&sol.displacements) {
        let a = affine(*p);
        assert!((d[0] - a[0]).abs() < 1e-10 && (d[1] - a[1]).abs() < 1e-10);
    }
    for e in &sol.strains {
        assert!((e.xx - 0.01).abs() < 1e-10 && (e.yy + 0.0045).abs() < 1e-10 && e.xy.abs() < 1e-10);
    }
    let rel = (sol.energy - sol.element_energy()).abs() / sol.energy;
    assert!(rel < 1e-10, "{rel}");
    for q in [Point2::new(0.37, 0.81), Point2::new(1.99, 0.01), Point2::new(1.0, 0.75)] {
        let [u, v] = sol.interpolate(q).unwrap();
        let a = affine(q);
        assert!((u - a[0]).abs() < 1e-10 && (v - a[1]).abs() < 1e-10);
    }
}

#[test]
fn zero_dirichlet_gives_zero_field() {
    let mesh = unstructured_square();
    let mut prob = FemProblem::new(mesh, MaterialModel::default());
    let base = prob.mesh.tag_of("base").unwrap();
    prob.prescribe(prob.mesh.nodes_with_tag(base), 0.0, 0.0);
    let sol = solve(&prob).unwrap();
    assert!(sol.displacements.iter().all(|d| *d == [0.0, 0.0]));
    assert_eq!(sol.energy, 0.0);
}

#[test]
fn missing_constraints_name_rigid_modes() {
    let prob = FemProblem::new(unstructured_square(), MaterialModel::default());
    let e = solve(&prob).unwrap_err();
    let msg = e.to_string();
    assert!(matches!(e, FemError::RigidModes { .. }));
    assert!(msg.contains("x translation") && msg.contains("rotation"), "{msg}");

    let mut one = FemProblem::new(unstructured_square(), MaterialModel::default());
    one.prescribe([0], 0.0, 0.0);
    let msg = solve(&one).unwrap_err().to_string();
    assert!(msg.contains("rotation about constrained node 0"), "{msg}");
}

#[test]
fn unconstrained_island_is_reported() {
    let mut nodes = square_two_triangles().nodes;
    nodes.extend([Point2::new(5.0, 0.0), Point2::new(6.0, 0.0), Point2::new(5.0, 1.0)]);
    let mesh = TriangleMesh::new(nodes, vec![[0, 1, 2], [0, 2, 3], [4, 5, 6]]).unwrap();
    let mut prob = FemProblem::new(mesh, MaterialModel::default());
    prob.prescribe([0, 1], 0.0, 0.0);
    let msg = solve(&prob).unwrap_err().to_string();
    assert!(msg.contains("component containing node 4"), "{msg}");
    assert!(!msg.contains("node 0:"), "{msg}");
}

#[test]
fn orphan_nodes_are_pinned() {
    let mut nodes = square_two_triangles().nodes;
    nodes.push(Point2::new(0.5, 3.0));
    let mesh = TriangleMesh::new(nodes, vec![[0, 1, 2], [0, 2, 3]]).unwrap();
    let mut prob = FemProblem::new(mesh, MaterialModel::default());
    prob.prescribe([0, 1], 0.0, 0.0).load(2, 0.0, -1.0);
    let sol = solve(&prob).unwrap();
    assert_eq!(sol.displacements[4], [0.0, 0.0]);
    assert!(sol.displacements[2][1] < 0.0);
}

#[test]
fn degenerate_element_is_named() {
    let mut mesh = square_two_triangles();
    mesh.nodes[2] = Point2::new(0.0, 0.5);
    let e = assemble(&FemProblem::new(mesh, MaterialModel::default())).unwrap_err();
    assert!(matches!(e, FemError::DegenerateElement { index: 1, .. }), "{e}");
}

#[test]
fn invalid_node_indices_are_rejected() {
    let mut prob = FemProblem::new(square_two_triangles(), MaterialModel::default());
    prob.prescribe([0, 1, 9], 0.0, 0.0);
    assert!(matches!(solve(&prob).unwrap_err(), FemError::Invalid(_)));
}

#[test]
fn loaded_strip_reactions_balance_the_load() {
    let mesh = TriangleMesh::structured_rectangle(Point2::new(0.0, 0.0), 20.0, 2.0, 40, 4).unwrap();
    let mut prob = FemProblem::new(mesh, MaterialModel::default());
    let base: Vec<usize> = (0..prob.mesh.node_count()).filter(|&k| prob.mesh.nodes[k].x == 0.0).collect();
    prob.prescribe(base, 0.0, 0.0);
    let tip = prob.mesh.nearest_node(Point2::new(20.0, 1.0)).unwrap();
    prob.load(tip, 0.0, -0.01);
    let sol = solve(&prob).unwrap();
    assert!(sol.energy > 0.0);
    let total: [f64; 2] = sol.reactions.values().fold([0.0; 2], |s, r| [s[0] + r[0], s[1] + r[1]]);
    assert!(total[0].abs() < 1e-12 && (total[1] - 0.01).abs() < 1e-12, "{total:?}");
    // work of the load equals twice the strain energy
    let work = 0.5 * -0.01 * sol.displacements[tip][1];
    assert!((work - sol.energy).abs() < 1e-10 * sol.energy);
    assert!(((sol.energy - sol.element_energy()) / sol.energy).abs() < 1e-10);
}

#[test]
fn formulation_flag_changes_the_stiffness() {
    let mut prob = patch_problem(square_two_triangles());
    let a = solve(&prob).unwrap().stresses[0];
    prob.material.formulation = Formulation::PlaneStrain;
    let b = solve(&prob).unwrap().stresses[0];
    assert!((a.xx - b.xx).abs() > 1e-3);
    let expect = stress_from_strain(solve(&prob).unwrap().strains[0], &prob.material).unwrap();
    assert_eq!(b, expect);
}

#[test]
fn interpolation_at_nodes_centroids_and_outside() {
    let mut prob = FemProblem::new(unstructured_square(), MaterialModel::default());
    let base = prob.mesh.tag_of("base").unwrap();
    prob.prescribe(prob.mesh.nodes_with_tag(base), 0.0, 0.0);
    let top = prob.mesh.tag_of("top").unwrap();
    prob.prescribe(prob.mesh.nodes_with_tag(top), 0.02, -0.05);
    let sol = solve(&prob).unwrap();
    for (k, p) in sol.mesh.nodes.iter().enumerate().step_by(7) {
        assert_eq!(sol.interpolate(*p).unwrap(), sol.displacements[k]);
    }
    for t in (0..sol.mesh.triangle_count()).step_by(5) {
        let tri = sol.mesh.triangles[t];
        let [u, v] = sol.interpolate(sol.mesh.centroid(t)).unwrap();
        for (c, got) in [u, v].into_iter().enumerate() {
            let mean = tri.iter().map(|&k| sol.displacements[k][c]).sum::<f64>() / 3.0;
            assert!((got - mean).abs() < 1e-15 + 1e-12 * mean.abs());
        }
    }
    match sol.interpolate(Point2::new(2.5, 0.5)).unwrap_err() {
        FemError::Outside { nearest, distance, .. } => {
            assert!((distance - 0.5).abs() < 1e-12);
            assert!(sol.mesh.corners(nearest).iter().any(|c| c.x == 2.0));
        }
        e => panic!("{e}"),
    }
}

#[test]
fn csv_headers_and_rows() {
    let sol = solve(&patch_problem(square_two_triangles())).unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    sol.write_nodes(&mut w).unwrap();
    let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
    assert!(text.starts_with("x,y,u,v\n"));
    assert_eq!(text.lines().count(), 5);
    let mut w = csv::Writer::from_writer(Vec::new());
    sol.write_elements(&mut w).unwrap();
    let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
    assert!(text.starts_with("xc,yc,eps_xx,eps_yy,eps_xy,sig_xx,sig_yy,sig_xy\n"));
    assert_eq!(text.lines().count(), 3);
}
