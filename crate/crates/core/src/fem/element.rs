//! Constant-strain triangle.

use crate::elasticity::Strain2;
use crate::geometry::Point2;

pub type ElementMatrix = [[f64; 6]; 6];

/// Strain-displacement matrix for engineering shear strain, plus the signed area.
///
/// Rows are `e_xx`, `e_yy`, `gamma_xy`; columns follow `(u0, v0, u1, v1, u2, v2)`.
pub fn strain_displacement(p: [Point2; 3]) -> ([[f64; 6]; 3], f64) {
    let area = 0.5 * ((p[1].x - p[0].x) * (p[2].y - p[0].y) - (p[2].x - p[0].x) * (p[1].y - p[0].y));
    let mut b = [[0.0; 6]; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let bi = (p[j].y - p[k].y) / (2.0 * area);
        let ci = (p[k].x - p[j].x) / (2.0 * area);
        b[0][2 * i] = bi;
        b[1][2 * i + 1] = ci;
        b[2][2 * i] = ci;
        b[2][2 * i + 1] = bi;
    }
    (b, area)
}

/// `area * B^T D B` for unit thickness; `d` acts on engineering shear strain.
pub fn element_stiffness(p: [Point2; 3], d: &[[f64; 3]; 3]) -> ElementMatrix {
    let (b, area) = strain_displacement(p);
    let mut db = [[0.0; 6]; 3];
    for r in 0..3 {
        for c in 0..6 {
            db[r][c] = (0..3).map(|k| d[r][k] * b[k][c]).sum();
        }
    }
    let mut ke = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            ke[i][j] = area.abs() * (0..3).map(|k| b[k][i] * db[k][j]).sum::<f64>();
        }
    }
    // exact symmetry regardless of summation order
    for i in 0..6 {
        for j in 0..i {
            let m = 0.5 * (ke[i][j] + ke[j][i]);
            ke[i][j] = m;
            ke[j][i] = m;
        }
    }
    ke
}

/// Element strain (tensor shear) from its six nodal displacement components.
pub fn element_strain(p: [Point2; 3], ue: &[f64; 6]) -> Strain2 {
    let (b, _) = strain_displacement(p);
    let row = |r: usize| (0..6).map(|c| b[r][c] * ue[c]).sum::<f64>();
    Strain2 { xx: row(0), yy: row(1), xy: 0.5 * row(2) }
}
