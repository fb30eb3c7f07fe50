//! The three loss terms recorded on reverse tapes.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{column, grad_params_chunked, AutodiffError, ParamVars, ParamVector, Tape, Var};
use crate::elasticity::{LameCoefficients, MaterialModel};
use crate::geometry::Point2;
use crate::network::{BatchInput, DisplacementNet, FusedPass, TapeOutput};

use super::TrainError;

/// A point with a prescribed or measured displacement, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPoint {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
}

impl TargetPoint {
    pub fn new(point: Point2, u: f64, v: f64) -> Self {
        Self { x: point.x, y: point.y, u, v }
    }

    pub fn point(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointSets {
    pub collocation: Vec<Point2>,
    /// Zero-displacement boundary points.
    pub fixed: Vec<Point2>,
    pub forced: Vec<TargetPoint>,
    pub assimilation: Vec<TargetPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_bc: f64,
    pub lambda_asm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_bc: 1000.0, lambda_asm: 1000.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, v) in [("lambda_bc", self.lambda_bc), ("lambda_asm", self.lambda_asm)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrainError::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Loss values at one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub l_pde: f64,
    pub l_bc: f64,
    pub l_asm: f64,
    pub l_total: f64,
}

impl LossRecord {
    /// Composes the total; `l_asm` must already be zero when assimilation is off.
    pub fn compose(epoch: usize, l_pde: f64, l_bc: f64, l_asm: f64, w: &LossWeights) -> Self {
        Self { epoch, l_pde, l_bc, l_asm, l_total: l_pde + w.lambda_bc * l_bc + w.lambda_asm * l_asm }
    }
}

/// Which terms enter an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub pde: bool,
    pub bc: bool,
    pub asm: bool,
}

impl Terms {
    pub const ALL: Terms = Terms { pde: true, bc: true, asm: true };
    pub const PDE: Terms = Terms { pde: true, bc: false, asm: false };
    pub const BC: Terms = Terms { pde: false, bc: true, asm: false };
    pub const ASM: Terms = Terms { pde: false, bc: false, asm: true };
}

struct Targets {
    input: BatchInput,
    u: Array2<f64>,
    v: Array2<f64>,
}

impl Targets {
    fn new(net: &DisplacementNet, pts: &[TargetPoint]) -> Option<Self> {
        if pts.is_empty() {
            return None;
        }
        let locs: Vec<Point2> = pts.iter().map(TargetPoint::point).collect();
        Some(Self {
            input: BatchInput::new(&net.normalizer, &locs),
            u: column(&pts.iter().map(|p| p.u).collect::<Vec<_>>()),
            v: column(&pts.iter().map(|p| p.v).collect::<Vec<_>>()),
        })
    }
}

/// How loss gradients are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Hand-derived batched reverse pass.
    #[default]
    Fused,
    /// Generic reverse tape over dual-number batches.
    Tape,
}

/// Point sets pre-normalized for one network, split into collocation chunks.
pub struct LossProblem {
    pde_chunks: Vec<BatchInput>,
    pde_scale: f64,
    fixed: Option<BatchInput>,
    fixed_scale: f64,
    forced: Option<Targets>,
    asm: Option<Targets>,
    coeffs: LameCoefficients,
    pub weights: LossWeights,
    pub assimilation_enabled: bool,
    pub deterministic: bool,
    pub engine: Engine,
}

#[derive(Clone, Copy)]
enum Piece<'a> {
    Pde(&'a BatchInput),
    Fixed(&'a BatchInput),
    Forced(&'a Targets),
    Asm(&'a Targets),
}

/// Per-piece unweighted contributions `(pde, bc, asm)`.
type Parts = [f64; 3];

impl LossProblem {
    /// `area`, when given, multiplies the energy mean (area-scaled PDE loss).
    pub fn new(
        net: &DisplacementNet,
        sets: &PointSets,
        mat: &MaterialModel,
        weights: LossWeights,
        assimilation_enabled: bool,
        chunk_size: usize,
        area: Option<f64>,
    ) -> Result<Self, TrainError> {
        weights.validate()?;
        if chunk_size == 0 {
            return Err(TrainError::Config("chunk_size must be positive".into()));
        }
        let coeffs = mat.coefficients()?;
        let n_c = sets.collocation.len();
        let pde_chunks = sets.collocation.chunks(chunk_size).map(|c| BatchInput::new(&net.normalizer, c)).collect();
        let pde_scale = if n_c == 0 { 0.0 } else { area.unwrap_or(1.0) / n_c as f64 };
        let fixed = (!sets.fixed.is_empty()).then(|| BatchInput::new(&net.normalizer, &sets.fixed));
        Ok(Self {
            pde_chunks,
            pde_scale,
            fixed,
            fixed_scale: 1.0 / sets.fixed.len().max(1) as f64,
            forced: Targets::new(net, &sets.forced),
            asm: Targets::new(net, &sets.assimilation),
            coeffs,
            weights,
            assimilation_enabled,
            deterministic: true,
            engine: Engine::default(),
        })
    }

    pub fn collocation_count(&self) -> usize {
        self.pde_chunks.iter().map(BatchInput::len).sum()
    }

    pub fn has_boundary(&self) -> bool {
        self.fixed.is_some() || self.forced.is_some()
    }

    pub fn has_markers(&self) -> bool {
        self.asm.is_some()
    }

    fn pieces(&self, terms: Terms) -> Vec<Piece<'_>> {
        let mut out = Vec::new();
        if terms.bc {
            out.extend(self.fixed.as_ref().map(Piece::Fixed));
            out.extend(self.forced.as_ref().map(Piece::Forced));
        }
        if terms.asm && self.assimilation_enabled {
            out.extend(self.asm.as_ref().map(Piece::Asm));
        }
        if terms.pde {
            out.extend(self.pde_chunks.iter().map(Piece::Pde));
        }
        out
    }

    fn record(
        &self,
        net: &DisplacementNet,
        tape: &mut Tape,
        vars: &ParamVars,
        piece: Piece<'_>,
    ) -> Result<(Var, Parts), AutodiffError> {
        match piece {
            Piece::Pde(input) => {
                let (u, v) = net.tape_forward(tape, vars, input, true)?;
                let w = energy_on_tape(tape, u, v, self.coeffs)?;
                let s = tape.sum(w);
                let term = tape.scale(s, self.pde_scale);
                Ok((term, [tape.scalar_value(term), 0.0, 0.0]))
            }
            Piece::Fixed(input) => {
                let (u, v) = net.tape_forward(tape, vars, input, false)?;
                let su = tape.square(u.value);
                let sv = tape.square(v.value);
                let both = tape.add(su, sv)?;
                let s = tape.sum(both);
                let term = tape.scale(s, self.fixed_scale);
                let val = tape.scalar_value(term);
                Ok((tape.scale(term, self.weights.lambda_bc), [0.0, val, 0.0]))
            }
            Piece::Forced(t) | Piece::Asm(t) => {
                let (u, v) = net.tape_forward(tape, vars, &t.input, false)?;
                let tu = tape.constant(t.u.clone());
                let tv = tape.constant(t.v.clone());
                let ru = tape.sub(tu, u.value)?;
                let rv = tape.sub(tv, v.value)?;
                let su = tape.square(ru);
                let sv = tape.square(rv);
                let both = tape.add(su, sv)?;
                let term = tape.mean(both);
                let val = tape.scalar_value(term);
                if matches!(piece, Piece::Forced(_)) {
                    Ok((tape.scale(term, self.weights.lambda_bc), [0.0, val, 0.0]))
                } else {
                    Ok((tape.scale(term, self.weights.lambda_asm), [0.0, 0.0, val]))
                }
            }
        }
    }

    fn run(
        &self,
        net: &DisplacementNet,
        params: &ParamVector,
        terms: Terms,
    ) -> Result<(Parts, ParamVector), TrainError> {
        let pieces = self.pieces(terms);
        if self.engine == Engine::Fused {
            return self.run_fused(net, params, &pieces);
        }
        let out = grad_params_chunked(params, &pieces, self.deterministic, |tape, vars, piece| {
            self.record(net, tape, vars, *piece)
        })?;
        let mut parts = [0.0; 3];
        for p in &out.aux {
            for k in 0..3 {
                parts[k] += p[k];
            }
        }
        Ok((parts, out.grad))
    }

    /// Value and upstream adjoints `(u rows, v rows)` of one piece's weighted
    /// contribution, given both halves' passes.
    fn piece_adjoints(&self, piece: Piece<'_>, u: &FusedPass, v: &FusedPass) -> (Parts, Vec<f64>, Vec<f64>) {
        let n = u.len();
        let mut gu = vec![0.0; u.stacked_rows()];
        let mut gv = vec![0.0; v.stacked_rows()];
        match piece {
            Piece::Pde(_) => {
                let c = self.coeffs;
                let s = self.pde_scale;
                let (ux, uy) = (u.d_dx().expect("derivs"), u.d_dy().expect("derivs"));
                let (vx, vy) = (v.d_dx().expect("derivs"), v.d_dy().expect("derivs"));
                let mut total = 0.0;
                for i in 0..n {
                    let (e_xx, e_yy, e_xy) = (ux[i], vy[i], 0.5 * (uy[i] + vx[i]));
                    let vol = c.volumetric * (e_xx + e_yy);
                    let (s_xx, s_yy, s_xy) = (vol + c.shear * e_xx, vol + c.shear * e_yy, c.shear * e_xy);
                    total += 0.5 * (s_xx * e_xx + s_yy * e_yy + 2.0 * s_xy * e_xy);
                    gu[n + i] = s * s_xx;
                    gu[2 * n + i] = s * s_xy;
                    gv[n + i] = s * s_xy;
                    gv[2 * n + i] = s * s_yy;
                }
                ([total * s, 0.0, 0.0], gu, gv)
            }
            Piece::Fixed(_) => {
                let mut total = 0.0;
                for i in 0..n {
                    let (a, b) = (u.value()[i], v.value()[i]);
                    total += a * a + b * b;
                    gu[i] = 2.0 * self.weights.lambda_bc * self.fixed_scale * a;
                    gv[i] = 2.0 * self.weights.lambda_bc * self.fixed_scale * b;
                }
                ([0.0, total * self.fixed_scale, 0.0], gu, gv)
            }
            Piece::Forced(t) | Piece::Asm(t) => {
                let (lambda, slot) = match piece {
                    Piece::Forced(_) => (self.weights.lambda_bc, 1),
                    _ => (self.weights.lambda_asm, 2),
                };
                let mut total = 0.0;
                for i in 0..n {
                    let ru = u.value()[i] - t.u[[i, 0]];
                    let rv = v.value()[i] - t.v[[i, 0]];
                    total += ru * ru + rv * rv;
                    gu[i] = 2.0 * lambda * ru / n as f64;
                    gv[i] = 2.0 * lambda * rv / n as f64;
                }
                let mut parts = [0.0; 3];
                parts[slot] = total / n as f64;
                (parts, gu, gv)
            }
        }
    }

    fn fused_piece(
        &self,
        net: &DisplacementNet,
        piece: Piece<'_>,
        with_grad: bool,
    ) -> Result<(Parts, Vec<f64>), TrainError> {
        let (input, derivs) = match piece {
            Piece::Pde(i) => (i, true),
            Piece::Fixed(i) => (i, false),
            Piece::Forced(t) | Piece::Asm(t) => (&t.input, false),
        };
        let u = net.net_u.fused_forward(input, derivs)?;
        let v = net.net_v.fused_forward(input, derivs)?;
        let (parts, gu, gv) = self.piece_adjoints(piece, &u, &v);
        if !with_grad {
            return Ok((parts, Vec::new()));
        }
        let nu = net.net_u.params().len();
        let mut grad = vec![0.0; nu + net.net_v.params().len()];
        let (left, right) = grad.split_at_mut(nu);
        net.net_u.fused_backward(&u, &gu, left)?;
        net.net_v.fused_backward(&v, &gv, right)?;
        Ok((parts, grad))
    }

    fn run_fused(
        &self,
        net: &DisplacementNet,
        params: &ParamVector,
        pieces: &[Piece<'_>],
    ) -> Result<(Parts, ParamVector), TrainError> {
        let results: Vec<(Parts, Vec<f64>)> =
            pieces.par_iter().map(|p| self.fused_piece(net, *p, true)).collect::<Result<_, _>>()?;
        let mut parts = [0.0; 3];
        let mut grad = ParamVector::zeros(params.layout().clone());
        let sum = |(pa, ga): (Parts, Vec<f64>), (pb, gb): (Parts, Vec<f64>)| {
            let mut g = ga;
            for (x, y) in g.iter_mut().zip(&gb) {
                *x += y;
            }
            ([pa[0] + pb[0], pa[1] + pb[1], pa[2] + pb[2]], g)
        };
        let combined =
            if self.deterministic { results.into_iter().reduce(sum) } else { results.into_par_iter().reduce_with(sum) };
        if let Some((p, g)) = combined {
            parts = p;
            grad.as_mut_slice().copy_from_slice(&g);
        }
        Ok((parts, grad))
    }

    /// Loss values and the gradient of the weighted sum of `terms`.
    pub fn loss_and_grad(
        &self,
        net: &DisplacementNet,
        terms: Terms,
        epoch: usize,
    ) -> Result<(LossRecord, ParamVector), TrainError> {
        let params = net.flatten();
        let (parts, grad) = self.run(net, &params, terms)?;
        let rec = LossRecord::compose(epoch, parts[0], parts[1], parts[2], &self.weights);
        Ok((rec, grad))
    }

    /// Loss values only.
    pub fn evaluate(&self, net: &DisplacementNet, epoch: usize) -> Result<LossRecord, TrainError> {
        self.evaluate_terms(net, Terms::ALL, epoch)
    }

    /// Loss values of `terms`; the others are recorded as zero.
    pub fn evaluate_terms(&self, net: &DisplacementNet, terms: Terms, epoch: usize) -> Result<LossRecord, TrainError> {
        let mut parts = [0.0; 3];
        for piece in self.pieces(terms) {
            let p = match self.engine {
                Engine::Fused => self.fused_piece(net, piece, false)?.0,
                Engine::Tape => {
                    let params = net.flatten();
                    let mut tape = Tape::new();
                    let vars = ParamVars::register(&mut tape, &params);
                    self.record(net, &mut tape, &vars, piece)?.1
                }
            };
            for k in 0..3 {
                parts[k] += p[k];
            }
        }
        Ok(LossRecord::compose(epoch, parts[0], parts[1], parts[2], &self.weights))
    }
}

/// Energy density per row from the network's spatial derivatives:
/// strain, then stress, then `½ (s_xx e_xx + s_yy e_yy + 2 s_xy e_xy)`.
pub fn energy_on_tape(
    tape: &mut Tape,
    u: TapeOutput,
    v: TapeOutput,
    c: LameCoefficients,
) -> Result<Var, AutodiffError> {
    let missing = || AutodiffError::NonFinite("energy needs input derivatives".into());
    let (du_dx, du_dy) = u.derivs.ok_or_else(missing)?;
    let (dv_dx, dv_dy) = v.derivs.ok_or_else(missing)?;
    let e_xx = du_dx;
    let e_yy = dv_dy;
    let shear_sum = tape.add(du_dy, dv_dx)?;
    let e_xy = tape.scale(shear_sum, 0.5);

    let trace = tape.add(e_xx, e_yy)?;
    let vol = tape.scale(trace, c.volumetric);
    let gxx = tape.scale(e_xx, c.shear);
    let gyy = tape.scale(e_yy, c.shear);
    let s_xx = tape.add(vol, gxx)?;
    let s_yy = tape.add(vol, gyy)?;
    let s_xy = tape.scale(e_xy, c.shear);

    let pxx = tape.mul(s_xx, e_xx)?;
    let pyy = tape.mul(s_yy, e_yy)?;
    let pxy = tape.mul(s_xy, e_xy)?;
    let pxy2 = tape.scale(pxy, 2.0);
    let normal = tape.add(pxx, pyy)?;
    let all = tape.add(normal, pxy2)?;
    Ok(tape.scale(all, 0.5))
}

fn require_nonempty<T>(v: &[T], what: &str) -> Result<(), TrainError> {
    if v.is_empty() {
        return Err(TrainError::Config(format!("{what} set is empty")));
    }
    Ok(())
}

const EVAL_CHUNK: usize = 1024;

/// Mean energy density over the collocation points.
pub fn loss_pde(net: &DisplacementNet, collocation: &[Point2], mat: &MaterialModel) -> Result<f64, TrainError> {
    require_nonempty(collocation, "collocation")?;
    let sets = PointSets { collocation: collocation.to_vec(), ..Default::default() };
    let p = LossProblem::new(net, &sets, mat, LossWeights::default(), false, EVAL_CHUNK, None)?;
    Ok(p.evaluate(net, 0)?.l_pde)
}

/// Fixed-point mean of `u^2 + v^2` plus forced-point mean squared residual.
pub fn loss_bc(net: &DisplacementNet, fixed: &[Point2], forced: &[TargetPoint]) -> Result<f64, TrainError> {
    if fixed.is_empty() && forced.is_empty() {
        return Err(TrainError::Config("boundary loss needs fixed or forced points".into()));
    }
    let sets = PointSets { fixed: fixed.to_vec(), forced: forced.to_vec(), ..Default::default() };
    let p = LossProblem::new(net, &sets, &MaterialModel::default(), LossWeights::default(), false, EVAL_CHUNK, None)?;
    Ok(p.evaluate(net, 0)?.l_bc)
}

/// Mean over markers of the squared residual in both components.
pub fn loss_asm(net: &DisplacementNet, markers: &[TargetPoint]) -> Result<f64, TrainError> {
    require_nonempty(markers, "assimilation")?;
    let sets = PointSets { assimilation: markers.to_vec(), ..Default::default() };
    let p = LossProblem::new(net, &sets, &MaterialModel::default(), LossWeights::default(), true, EVAL_CHUNK, None)?;
    Ok(p.evaluate(net, 0)?.l_asm)
}

/// All three terms composed into a record; `l_asm` is 0 when assimilation is off.
pub fn total_loss(
    net: &DisplacementNet,
    sets: &PointSets,
    mat: &MaterialModel,
    weights: LossWeights,
    assimilation_enabled: bool,
) -> Result<LossRecord, TrainError> {
    if assimilation_enabled {
        require_nonempty(&sets.assimilation, "assimilation")?;
    }
    let p = LossProblem::new(net, sets, mat, weights, assimilation_enabled, EVAL_CHUNK, None)?;
    p.evaluate(net, 0)
}
