//! Marker observations in pixels, pixel-to-world calibration and displacement recovery.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::Point2;

pub const MARKERS_CSV_HEADER: [&str; 5] = ["marker_id", "phase", "frame_index", "px", "py"];
pub const CORRESPONDENCES_CSV_HEADER: [&str; 4] = ["px", "py", "x", "y"];
pub const DISPLACEMENTS_CSV_HEADER: [&str; 5] = ["marker_id", "x", "y", "u", "v"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initial,
    Final,
}

/// One marker's pixel positions over the frames of one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerObservation {
    pub marker_id: u32,
    pub phase: Phase,
    /// `(px, py)` per frame, in frame-index order.
    pub frames: Vec<[f64; 2]>,
}

impl MarkerObservation {
    pub fn mean_pixel(&self) -> [f64; 2] {
        let n = self.frames.len() as f64;
        let s = self.frames.iter().fold([0.0; 2], |s, f| [s[0] + f[0], s[1] + f[1]]);
        [s[0] / n, s[1] / n]
    }
}

#[derive(Debug, Deserialize)]
struct MarkerRow {
    marker_id: u32,
    phase: Phase,
    frame_index: u64,
    px: f64,
    py: f64,
}

fn check_header<R: io::Read>(r: &mut csv::Reader<R>, expected: &[&str]) -> Result<(), EvalError> {
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != expected {
        return Err(EvalError::Format(format!("expected CSV header {}, got {}", expected.join(","), header.join(","))));
    }
    Ok(())
}

pub fn read_markers<R: io::Read>(reader: R) -> Result<Vec<MarkerObservation>, EvalError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(&mut r, &MARKERS_CSV_HEADER)?;
    let mut grouped: BTreeMap<(Phase, u32), BTreeMap<u64, [f64; 2]>> = BTreeMap::new();
    for row in r.deserialize() {
        let row: MarkerRow = row?;
        if !(row.px.is_finite() && row.py.is_finite()) {
            return Err(EvalError::Format(format!("marker {} has a non-finite pixel", row.marker_id)));
        }
        let frames = grouped.entry((row.phase, row.marker_id)).or_default();
        if frames.insert(row.frame_index, [row.px, row.py]).is_some() {
            return Err(EvalError::Format(format!(
                "marker {} phase {:?} repeats frame {}",
                row.marker_id, row.phase, row.frame_index
            )));
        }
    }
    Ok(grouped
        .into_iter()
        .map(|((phase, marker_id), frames)| MarkerObservation {
            marker_id,
            phase,
            frames: frames.into_values().collect(),
        })
        .collect())
}

pub fn read_markers_csv(path: &Path) -> Result<Vec<MarkerObservation>, EvalError> {
    read_markers(super::open(path)?)
}

pub fn write_markers<W: io::Write>(w: &mut csv::Writer<W>, obs: &[MarkerObservation]) -> Result<(), EvalError> {
    w.write_record(MARKERS_CSV_HEADER)?;
    for o in obs {
        let phase = match o.phase {
            Phase::Initial => "initial",
            Phase::Final => "final",
        };
        for (i, f) in o.frames.iter().enumerate() {
            w.write_record([
                o.marker_id.to_string(),
                phase.into(),
                i.to_string(),
                format!("{:?}", f[0]),
                format!("{:?}", f[1]),
            ])?;
        }
    }
    Ok(())
}

/// Affine map `[x, y]^T = M [px, py, 1]^T`, millimetres per pixel plus offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelToWorld {
    pub matrix: [[f64; 3]; 2],
}

impl PixelToWorld {
    pub fn identity() -> Self {
        Self { matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] }
    }

    pub fn apply(&self, px: [f64; 2]) -> Point2 {
        let m = &self.matrix;
        Point2::new(m[0][0] * px[0] + m[0][1] * px[1] + m[0][2], m[1][0] * px[0] + m[1][1] * px[1] + m[1][2])
    }

    pub fn linear_determinant(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }
}

/// Pixel/world pair used for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub px: f64,
    pub py: f64,
    pub x: f64,
    pub y: f64,
}

/// Least-squares calibration and its residual RMS (mm, over both coordinates).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub transform: PixelToWorld,
    pub residual_rms: f64,
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *o = det(m) / d;
    }
    out
}

/// Needs at least three non-collinear pixel points.
pub fn fit_pixel_to_world(pairs: &[Correspondence]) -> Result<Calibration, EvalError> {
    if pairs.len() < 3 {
        return Err(EvalError::Calibration(format!("need at least 3 correspondences, got {}", pairs.len())));
    }
    if pairs.iter().any(|c| ![c.px, c.py, c.x, c.y].iter().all(|v| v.is_finite())) {
        return Err(EvalError::Calibration("non-finite correspondence".into()));
    }
    // centre pixels for conditioning, then check the spread is two-dimensional
    let n = pairs.len() as f64;
    let (cx, cy) = (pairs.iter().map(|c| c.px).sum::<f64>() / n, pairs.iter().map(|c| c.py).sum::<f64>() / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for c in pairs {
        let (dx, dy) = (c.px - cx, c.py - cy);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let det = sxx * syy - sxy * sxy;
    if !(det > 1e-12 * (sxx + syy).powi(2)) {
        return Err(EvalError::Calibration("correspondences are collinear".into()));
    }
    let normal = [[sxx, sxy, 0.0], [sxy, syy, 0.0], [0.0, 0.0, n]];
    let mut matrix = [[0.0; 3]; 2];
    for (row, target) in matrix.iter_mut().zip([|c: &Correspondence| c.x, |c: &Correspondence| c.y]) {
        let mut rhs = [0.0; 3];
        for c in pairs {
            let t = target(c);
            rhs[0] += (c.px - cx) * t;
            rhs[1] += (c.py - cy) * t;
            rhs[2] += t;
        }
        let [a, b, off] = solve3(normal, rhs);
        *row = [a, b, off - a * cx - b * cy];
    }
    let transform = PixelToWorld { matrix };
    if transform.linear_determinant() == 0.0 {
        return Err(EvalError::Calibration("fitted linear part is singular".into()));
    }
    let sq: f64 = pairs
        .iter()
        .map(|c| {
            let p = transform.apply([c.px, c.py]);
            (p.x - c.x).powi(2) + (p.y - c.y).powi(2)
        })
        .sum();
    Ok(Calibration { transform, residual_rms: (sq / (2.0 * n)).sqrt() })
}

pub fn read_correspondences<R: io::Read>(reader: R) -> Result<Vec<Correspondence>, EvalError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(&mut r, &CORRESPONDENCES_CSV_HEADER)?;
    r.deserialize().map(|row| row.map_err(EvalError::from)).collect()
}

pub fn read_correspondences_csv(path: &Path) -> Result<Vec<Correspondence>, EvalError> {
    read_correspondences(super::open(path)?)
}

/// Initial world position and displacement of one marker, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerDisplacement {
    pub marker_id: u32,
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
}

impl MarkerDisplacement {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Frame-averaged initial and final positions, mapped to world, differenced.
pub fn smooth_and_difference(
    initial: &[MarkerObservation],
    final_: &[MarkerObservation],
    transform: &PixelToWorld,
) -> Result<Vec<MarkerDisplacement>, EvalError> {
    let index = |obs: &[MarkerObservation], phase: Phase| -> Result<BTreeMap<u32, [f64; 2]>, EvalError> {
        let mut out = BTreeMap::new();
        for o in obs {
            if o.phase != phase {
                return Err(EvalError::Markers(format!("marker {} listed under the wrong phase", o.marker_id)));
            }
            if o.frames.is_empty() {
                return Err(EvalError::Markers(format!("marker {} has no frames", o.marker_id)));
            }
            if out.insert(o.marker_id, o.mean_pixel()).is_some() {
                return Err(EvalError::Markers(format!("marker {} repeated in phase {phase:?}", o.marker_id)));
            }
        }
        Ok(out)
    };
    let a = index(initial, Phase::Initial)?;
    let b = index(final_, Phase::Final)?;
    let ids_a: BTreeSet<u32> = a.keys().copied().collect();
    let ids_b: BTreeSet<u32> = b.keys().copied().collect();
    if ids_a != ids_b {
        let only_initial: Vec<_> = ids_a.difference(&ids_b).collect();
        let only_final: Vec<_> = ids_b.difference(&ids_a).collect();
        return Err(EvalError::Markers(format!(
            "markers missing a phase: initial only {only_initial:?}, final only {only_final:?}"
        )));
    }
    Ok(a.iter()
        .map(|(&id, &pa)| {
            let p0 = transform.apply(pa);
            let p1 = transform.apply(b[&id]);
            MarkerDisplacement { marker_id: id, x: p0.x, y: p0.y, u: p1.x - p0.x, v: p1.y - p0.y }
        })
        .collect())
}

/// Splits observations by phase.
pub fn split_phases(obs: &[MarkerObservation]) -> (Vec<MarkerObservation>, Vec<MarkerObservation>) {
    obs.iter().cloned().partition(|o| o.phase == Phase::Initial)
}

pub fn read_displacements<R: io::Read>(reader: R) -> Result<Vec<MarkerDisplacement>, EvalError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(&mut r, &DISPLACEMENTS_CSV_HEADER)?;
    let rows: Vec<MarkerDisplacement> = r.deserialize().collect::<Result<_, _>>()?;
    let mut seen = BTreeSet::new();
    for m in &rows {
        if !seen.insert(m.marker_id) {
            return Err(EvalError::Markers(format!("marker {} repeated", m.marker_id)));
        }
        if ![m.x, m.y, m.u, m.v].iter().all(|v| v.is_finite()) {
            return Err(EvalError::Markers(format!("marker {} has a non-finite value", m.marker_id)));
        }
    }
    Ok(rows)
}

pub fn read_displacements_csv(path: &Path) -> Result<Vec<MarkerDisplacement>, EvalError> {
    read_displacements(super::open(path)?)
}

pub fn write_displacements<W: io::Write>(w: &mut csv::Writer<W>, rows: &[MarkerDisplacement]) -> Result<(), EvalError> {
    w.write_record(DISPLACEMENTS_CSV_HEADER)?;
    for m in rows {
        w.write_record([
            m.marker_id.to_string(),
            format!("{:?}", m.x),
            format!("{:?}", m.y),
            format!("{:?}", m.u),
            format!("{:?}", m.v),
        ])?;
    }
    Ok(())
}

pub fn write_displacements_csv(path: &Path, rows: &[MarkerDisplacement]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    write_displacements(&mut w, rows)?;
    w.flush()?;
    Ok(())
}
