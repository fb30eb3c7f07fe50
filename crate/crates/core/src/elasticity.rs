//! Small-strain isotropic elasticity in two dimensions.
//!
//! Units are millimetres and MPa (N/mm²), so energy densities come out in
//! mJ/mm³ and integrated energies in mJ per millimetre of thickness. Shear is
//! always stored as the tensor component `eps_xy`, never engineering shear.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MaterialError {
    #[error("Young's modulus must be positive and finite, got {0}")]
    Modulus(f64),
    #[error("Poisson's ratio must lie in [0, 0.5), got {0}")]
    Poisson(f64),
    #[error("plane-strain material is singular: 1 - 2*mu = {0:e}")]
    Singular(f64),
}

/// Which two-dimensional reduction the constitutive law uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// `(1 - mu)` in the volumetric denominator. Coincides with plane stress.
    #[default]
    AsPaper,
    /// `(1 - 2 mu)` in the volumetric denominator.
    PlaneStrain,
    /// Textbook plane-stress matrix `E / (1 - mu^2) [[1, mu, 0], [mu, 1, 0], [0, 0, (1 - mu) / 2]]`.
    PlaneStress,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    /// Young's modulus, MPa.
    pub youngs_modulus: f64,
    /// Poisson's ratio.
    pub poisson_ratio: f64,
    #[serde(default)]
    pub formulation: Formulation,
}

impl Default for MaterialModel {
    /// The printed finger's digital material.
    fn default() -> Self {
        Self { youngs_modulus: 11.4, poisson_ratio: 0.45, formulation: Formulation::AsPaper }
    }
}

/// `sigma_xx = volumetric * (eps_xx + eps_yy) + shear * eps_xx`, `sigma_xy = shear * eps_xy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LameCoefficients {
    pub volumetric: f64,
    pub shear: f64,
}

impl MaterialModel {
    pub fn new(youngs_modulus: f64, poisson_ratio: f64, formulation: Formulation) -> Result<Self, MaterialError> {
        let m = Self { youngs_modulus, poisson_ratio, formulation };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        if !(self.youngs_modulus.is_finite() && self.youngs_modulus > 0.0) {
            return Err(MaterialError::Modulus(self.youngs_modulus));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return Err(MaterialError::Poisson(self.poisson_ratio));
        }
        Ok(())
    }

    /// Coefficients of the stress-strain map for this formulation.
    pub fn coefficients(&self) -> Result<LameCoefficients, MaterialError> {
        self.validate()?;
        let (e, mu) = (self.youngs_modulus, self.poisson_ratio);
        let shear = e / (1.0 + mu);
        let volumetric = match self.formulation {
            Formulation::AsPaper => e * mu / ((1.0 + mu) * (1.0 - mu)),
            Formulation::PlaneStrain => {
                let d = 1.0 - 2.0 * mu;
                if d < 1e-8 {
                    return Err(MaterialError::Singular(d));
                }
                e * mu / ((1.0 + mu) * d)
            }
            Formulation::PlaneStress => {
                let [[c11, c12, _], _, [_, _, c33]] = plane_stress_voigt(e, mu);
                // c11 = volumetric + shear, c33 = shear / 2 in tensor-shear terms
                debug_assert!((c33 * 2.0 - shear).abs() <= 1e-12 * shear);
                debug_assert!((c11 - c12 - shear).abs() <= 1e-12 * c11);
                c12
            }
        };
        Ok(LameCoefficients { volumetric, shear })
    }

    /// 3x3 Voigt matrix acting on `(eps_xx, eps_yy, gamma_xy = 2 eps_xy)`.
    pub fn voigt_matrix(&self) -> Result<[[f64; 3]; 3], MaterialError> {
        let LameCoefficients { volumetric: a, shear: g } = self.coefficients()?;
        Ok([[a + g, a, 0.0], [a, a + g, 0.0], [0.0, 0.0, 0.5 * g]])
    }
}

fn plane_stress_voigt(e: f64, mu: f64) -> [[f64; 3]; 3] {
    let f = e / (1.0 - mu * mu);
    [[f, f * mu, 0.0], [f * mu, f, 0.0], [0.0, 0.0, f * (1.0 - mu) / 2.0]]
}

/// Symmetric strain sample; dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Strain2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

/// Symmetric stress sample, MPa.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stress2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl Strain2 {
    pub fn new(xx: f64, yy: f64, xy: f64) -> Self {
        Self { xx, yy, xy }
    }

    pub fn scaled(self, k: f64) -> Self {
        Self::new(self.xx * k, self.yy * k, self.xy * k)
    }
}

impl std::ops::Add for Strain2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.xx + o.xx, self.yy + o.yy, self.xy + o.xy)
    }
}

/// Symmetric part of the displacement gradient.
pub fn strain_from_jacobian(du_dx: f64, du_dy: f64, dv_dx: f64, dv_dy: f64) -> Strain2 {
    Strain2 { xx: du_dx, yy: dv_dy, xy: 0.5 * (du_dy + dv_dx) }
}

pub fn stress_from_strain(eps: Strain2, mat: &MaterialModel) -> Result<Stress2, MaterialError> {
    let c = mat.coefficients()?;
    Ok(stress_with(eps, c))
}

/// [`stress_from_strain`] with precomputed coefficients.
pub fn stress_with(eps: Strain2, c: LameCoefficients) -> Stress2 {
    let trace = eps.xx + eps.yy;
    Stress2 {
        xx: c.volumetric * trace + c.shear * eps.xx,
        yy: c.volumetric * trace + c.shear * eps.yy,
        xy: c.shear * eps.xy,
    }
}

/// Internal energy density `½ sigma_ij eps_ij`; the shear pair counts twice.
pub fn energy_density(sigma: Stress2, eps: Strain2) -> f64 {
    0.5 * (sigma.xx * eps.xx + sigma.yy * eps.yy + 2.0 * sigma.xy * eps.xy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn printed() -> MaterialModel {
        MaterialModel::default()
    }

    #[test]
    fn strain_examples() {
        assert_eq!(strain_from_jacobian(0.0, 0.0, 0.0, 0.0), Strain2::default());
        assert_eq!(strain_from_jacobian(0.01, 0.0, 0.0, -0.0045), Strain2::new(0.01, -0.0045, 0.0));
        assert_eq!(strain_from_jacobian(0.0, 0.02, 0.02, 0.0), Strain2::new(0.0, 0.0, 0.02));
        assert_eq!(strain_from_jacobian(0.0, 0.02, -0.02, 0.0), Strain2::default());
    }

    #[test]
    fn uniaxial_and_shear_values() {
        let s = stress_from_strain(Strain2::new(0.01, 0.0, 0.0), &printed()).unwrap();
        let hand_xx = (11.4 * 0.45 / (1.45 * 0.55) + 11.4 / 1.45) * 0.01;
        let hand_yy = 11.4 * 0.45 / (1.45 * 0.55) * 0.01;
        assert!((s.xx - hand_xx).abs() <= 1e-12 * hand_xx);
        assert!((s.yy - hand_yy).abs() <= 1e-12 * hand_yy);
        assert!((s.xx - 0.1429).abs() < 5e-5);
        assert!((s.yy - 0.0643).abs() < 5e-5);
        assert_eq!(s.xy, 0.0);

        let s = stress_from_strain(Strain2::new(0.0, 0.0, 0.01), &printed()).unwrap();
        assert!((s.xy - 11.4 / 1.45 * 0.01).abs() < 1e-15);
        assert!((s.xy - 0.0786).abs() < 5e-5);
        assert_eq!((s.xx, s.yy), (0.0, 0.0));

        let eps = Strain2::new(0.01, 0.0, 0.0);
        let w = energy_density(stress_from_strain(eps, &printed()).unwrap(), eps);
        assert!((w - 0.5 * hand_xx * 0.01).abs() < 1e-18);
        assert!((w - 7.146e-4).abs() < 5e-7);
    }

    #[test]
    fn zero_strain_zero_stress() {
        let s = stress_from_strain(Strain2::default(), &printed()).unwrap();
        assert_eq!(s, Stress2::default());
        assert_eq!(energy_density(s, Strain2::default()), 0.0);
    }

    #[test]
    fn plane_strain_singularity() {
        let m = MaterialModel { poisson_ratio: 0.499_999_999_9, formulation: Formulation::PlaneStrain, ..printed() };
        assert!(matches!(m.coefficients(), Err(MaterialError::Singular(_))));
        let bad = MaterialModel { poisson_ratio: 0.5, ..printed() };
        assert!(matches!(bad.validate(), Err(MaterialError::Poisson(_))));
        assert!(MaterialModel::new(-1.0, 0.3, Formulation::AsPaper).is_err());
    }

    #[test]
    fn as_paper_coincides_with_plane_stress() {
        for mu in [0.0, 0.2, 0.3, 0.45] {
            let a = MaterialModel { poisson_ratio: mu, ..printed() }.voigt_matrix().unwrap();
            let b = plane_stress_voigt(11.4, mu);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((a[i][j] - b[i][j]).abs() < 1e-12, "mu={mu} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn formulations_coincide_at_zero_poisson() {
        let strain = Strain2::new(0.003, -0.001, 0.002);
        let mut prev = None;
        for f in [Formulation::AsPaper, Formulation::PlaneStrain, Formulation::PlaneStress] {
            let m = MaterialModel { poisson_ratio: 0.0, formulation: f, ..printed() };
            let s = stress_from_strain(strain, &m).unwrap();
            if let Some(p) = prev {
                assert_eq!(p, s);
            }
            prev = Some(s);
        }
        // and approach each other as mu -> 0
        let gap = |mu: f64| {
            let a = MaterialModel { poisson_ratio: mu, ..printed() }.coefficients().unwrap();
            let b = MaterialModel { poisson_ratio: mu, formulation: Formulation::PlaneStrain, ..printed() }
                .coefficients()
                .unwrap();
            (a.volumetric - b.volumetric).abs()
        };
        assert!(gap(1e-4) < gap(1e-2) && gap(1e-2) < gap(0.1));
    }

    /// Symmetric 3x3 eigenvalues by cyclic Jacobi rotations.
    fn eigenvalues(mut a: [[f64; 3]; 3]) -> [f64; 3] {
        for _ in 0..50 {
            for (p, q) in [(0, 1), (0, 2), (1, 2)] {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (2.0 * a[p][q]).atan2(a[q][q] - a[p][p]);
                let (s, c) = theta.sin_cos();
                let mut r = [[0.0; 3]; 3];
                for (i, row) in r.iter_mut().enumerate() {
                    row[i] = 1.0;
                }
                r[p][p] = c;
                r[q][q] = c;
                r[p][q] = s;
                r[q][p] = -s;
                let mut tmp = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        tmp[i][j] = (0..3).map(|k| r[k][i] * a[k][j]).sum();
                    }
                }
                for i in 0..3 {
                    for j in 0..3 {
                        a[i][j] = (0..3).map(|k| tmp[i][k] * r[k][j]).sum();
                    }
                }
            }
        }
        [a[0][0], a[1][1], a[2][2]]
    }

    #[test]
    fn constitutive_matrix_positive_definite() {
        for f in [Formulation::AsPaper, Formulation::PlaneStrain, Formulation::PlaneStress] {
            for mu in [0.0, 0.15, 0.3, 0.45] {
                let m = MaterialModel { poisson_ratio: mu, formulation: f, ..printed() };
                let ev = eigenvalues(m.voigt_matrix().unwrap());
                assert!(ev.iter().all(|&l| l > 0.0), "{f:?} mu={mu}: {ev:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn energy_positive_for_nonzero_strain(
            xx in -0.1f64..0.1, yy in -0.1f64..0.1, xy in -0.1f64..0.1,
            mu in 0.0f64..0.45,
            plane_strain in any::<bool>(),
        ) {
            prop_assume!(xx != 0.0 || yy != 0.0 || xy != 0.0);
            let formulation = if plane_strain { Formulation::PlaneStrain } else { Formulation::AsPaper };
            let m = MaterialModel { poisson_ratio: mu, formulation, ..printed() };
            let eps = Strain2::new(xx, yy, xy);
            prop_assert!(energy_density(stress_from_strain(eps, &m).unwrap(), eps) > 0.0);
        }

        #[test]
        fn stress_is_linear(
            a in -3.0f64..3.0, b in -3.0f64..3.0,
            e1 in proptest::array::uniform3(-0.05f64..0.05),
            e2 in proptest::array::uniform3(-0.05f64..0.05),
        ) {
            let m = printed();
            let s1 = Strain2::new(e1[0], e1[1], e1[2]);
            let s2 = Strain2::new(e2[0], e2[1], e2[2]);
            let lhs = stress_from_strain(s1.scaled(a) + s2.scaled(b), &m).unwrap();
            let r1 = stress_from_strain(s1, &m).unwrap();
            let r2 = stress_from_strain(s2, &m).unwrap();
            prop_assert!((lhs.xx - (a * r1.xx + b * r2.xx)).abs() < 1e-14);
            prop_assert!((lhs.yy - (a * r1.yy + b * r2.yy)).abs() < 1e-14);
            prop_assert!((lhs.xy - (a * r1.xy + b * r2.xy)).abs() < 1e-14);
        }

        #[test]
        fn rigid_motion_is_strain_free(theta in -0.01f64..0.01) {
            // infinitesimal rotation: u = -theta * y, v = theta * x
            let eps = strain_from_jacobian(0.0, -theta, theta, 0.0);
            prop_assert_eq!(eps, Strain2::default());
            let s = stress_from_strain(eps, &printed()).unwrap();
            prop_assert_eq!(energy_density(s, eps), 0.0);
        }
    }
}
