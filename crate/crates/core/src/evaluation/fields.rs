//! Displacement, strain and stress sampled on a grid.

use std::io;
use std::path::Path;

use super::EvalError;
use crate::elasticity::{strain_from_jacobian, stress_from_strain, MaterialModel, Strain2, Stress2};
use crate::fem::{FemError, FemSolution};
use crate::geometry::{Domain2D, Point2};
use crate::network::DisplacementNet;

pub const FIELD_CSV_HEADER: [&str; 10] =
    ["x", "y", "u", "v", "eps_xx", "eps_yy", "eps_xy", "sig_xx", "sig_yy", "sig_xy"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub point: Point2,
    pub displacement: [f64; 2],
    pub strain: Strain2,
    pub stress: Stress2,
}

/// Anything that yields a displacement field with strains and stresses.
pub trait FieldSource {
    /// `None` when `p` lies outside the region the source is defined on.
    fn sample(&self, p: Point2) -> Result<Option<FieldSample>, EvalError>;
}

/// A trained network paired with its material.
pub struct NetField<'a> {
    pub net: &'a DisplacementNet,
    pub material: &'a MaterialModel,
}

impl FieldSource for NetField<'_> {
    fn sample(&self, p: Point2) -> Result<Option<FieldSample>, EvalError> {
        let (u, v) = self.net.displacement_with_derivs(p.x, p.y).map_err(|e| EvalError::Field(e.to_string()))?;
        let strain = strain_from_jacobian(u.d_dx, u.d_dy, v.d_dx, v.d_dy);
        let stress = stress_from_strain(strain, self.material).map_err(|e| EvalError::Field(e.to_string()))?;
        Ok(Some(FieldSample { point: p, displacement: [u.value, v.value], strain, stress }))
    }
}

impl FieldSource for FemSolution {
    fn sample(&self, p: Point2) -> Result<Option<FieldSample>, EvalError> {
        match self.field_at(p) {
            Ok((displacement, strain, stress)) => Ok(Some(FieldSample { point: p, displacement, strain, stress })),
            Err(FemError::Outside { .. }) => Ok(None),
            Err(e) => Err(EvalError::Field(e.to_string())),
        }
    }
}

/// Regular grid with the given spacing over the domain bounds, kept where the
/// point is inside the material region. Row-major from the lower-left corner.
pub fn grid_points(domain: &Domain2D, spacing: f64) -> Result<Vec<Point2>, EvalError> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(EvalError::Field(format!("grid spacing must be positive, got {spacing}")));
    }
    let (lo, hi) = domain.bounds();
    let nx = ((hi.x - lo.x) / spacing).floor() as usize + 1;
    let ny = ((hi.y - lo.y) / spacing).floor() as usize + 1;
    if nx.saturating_mul(ny) > 50_000_000 {
        return Err(EvalError::Field(format!("grid of {nx}x{ny} points is too large")));
    }
    Ok((0..ny)
        .flat_map(|j| (0..nx).map(move |i| Point2::new(lo.x + i as f64 * spacing, lo.y + j as f64 * spacing)))
        .filter(|p| domain.contains(*p))
        .collect())
}

/// Samples every point; points outside the source are omitted.
pub fn export_fields(source: &dyn FieldSource, points: &[Point2]) -> Result<Vec<FieldSample>, EvalError> {
    let mut out = Vec::with_capacity(points.len());
    for &p in points {
        out.extend(source.sample(p)?);
    }
    Ok(out)
}

pub fn write_fields<W: io::Write>(w: &mut csv::Writer<W>, rows: &[FieldSample]) -> Result<(), EvalError> {
    w.write_record(FIELD_CSV_HEADER)?;
    for r in rows {
        let vals = [
            r.point.x,
            r.point.y,
            r.displacement[0],
            r.displacement[1],
            r.strain.xx,
            r.strain.yy,
            r.strain.xy,
            r.stress.xx,
            r.stress.yy,
            r.stress.xy,
        ];
        w.write_record(vals.iter().map(|v| format!("{v:?}")))?;
    }
    Ok(())
}

pub fn write_fields_csv(path: &Path, rows: &[FieldSample]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    write_fields(&mut w, rows)?;
    w.flush()?;
    Ok(())
}
