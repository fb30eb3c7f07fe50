//! Gated fully connected networks mapping a 2D coordinate to one displacement
//! component.
//!
//! Each half computes
//!
//! ```text
//! A = tanh(X W_a + b_a)         B = tanh(X W_b + b_b)
//! H_1 = tanh(X W_h + b_h)
//! Z_k = tanh(H_k G_k + c_k)     H_{k+1} = (1 - Z_k) * A + Z_k * B     k = 1..L
//! psi = H_{L+1} W_out + b_out
//! ```
//!
//! where `X` is the coordinate mapped to `[-1, 1]^2` by the model's
//! [`Normalizer`]. The input lift `W_h` (2 x width) and the gates `G_k`
//! (width x width) are separate parameters.

use std::fs;
use std::io;
use std::ops::{Add, Mul, Sub};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, DualScalar, ParamLayout, ParamVars, ParamVector, Tape, Var};
use crate::geometry::Point2;

mod fused;

pub use fused::FusedPass;

pub const CHECKPOINT_FORMAT: &str = "finray-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("non-finite value in layer `{layer}` at ({x}, {y})")]
    NonFinite { layer: String, x: f64, y: f64 },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub layers: usize,
    pub width: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
    /// Start the output layer at zero so the initial displacement field is zero.
    #[serde(default)]
    pub zero_head: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::new(4, 64, 0)
    }
}

impl NetworkConfig {
    pub fn new(layers: usize, width: usize, seed: u64) -> Self {
        Self { layers, width, activation: Activation::Tanh, seed, zero_head: false }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.layers == 0 {
            return Err(NetworkError::Config("layers must be >= 1".into()));
        }
        if self.width == 0 {
            return Err(NetworkError::Config("width must be >= 1".into()));
        }
        Ok(())
    }

    /// Parameters of one half: three input lifts, `layers` gates and the head.
    pub fn parameter_count(&self) -> usize {
        let w = self.width;
        3 * (2 * w + w) + self.layers * (w * w + w) + (w + 1)
    }

    pub fn layout(&self) -> ParamLayout {
        let w = self.width;
        let mut l = ParamLayout::new();
        let mut push = |name: String, r, c| l.push(name, r, c).expect("generated names are unique");
        for lift in ["lift_a", "lift_b", "lift_h"] {
            push(format!("{lift}.weight"), 2, w);
            push(format!("{lift}.bias"), 1, w);
        }
        for k in 1..=self.layers {
            push(format!("gate{k}.weight"), w, w);
            push(format!("gate{k}.bias"), 1, w);
        }
        push("out.weight".into(), w, 1);
        push("out.bias".into(), 1, 1);
        l
    }
}

/// Per-axis affine map from physical millimetres onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub center: [f64; 2],
    pub half_extent: [f64; 2],
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::identity()
    }
}

impl Normalizer {
    pub fn identity() -> Self {
        Self { center: [0.0, 0.0], half_extent: [1.0, 1.0] }
    }

    pub fn from_bounds(min: Point2, max: Point2) -> Self {
        let half = |lo: f64, hi: f64| {
            let h = 0.5 * (hi - lo);
            if h > 0.0 {
                h
            } else {
                1.0
            }
        };
        Self {
            center: [0.5 * (min.x + max.x), 0.5 * (min.y + max.y)],
            half_extent: [half(min.x, max.x), half(min.y, max.y)],
        }
    }

    pub fn from_points(points: &[Point2]) -> Self {
        if points.is_empty() {
            return Self::identity();
        }
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        Self::from_bounds(lo, hi)
    }

    pub fn apply(&self, p: Point2) -> [f64; 2] {
        [(p.x - self.center[0]) / self.half_extent[0], (p.y - self.center[1]) / self.half_extent[1]]
    }
}

/// Scalar arithmetic the plain forward pass needs.
pub trait NetScalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> {
    fn from_f64(v: f64) -> Self;
    fn tanh(self) -> Self;
    fn is_finite(self) -> bool;
}

impl NetScalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl NetScalar for DualScalar {
    fn from_f64(v: f64) -> Self {
        DualScalar::constant(v)
    }
    fn tanh(self) -> Self {
        DualScalar::tanh(self)
    }
    fn is_finite(self) -> bool {
        DualScalar::is_finite(self)
    }
}

/// Value and first spatial derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputDerivs {
    pub value: f64,
    pub d_dx: f64,
    pub d_dy: f64,
}

/// One half of a [`DisplacementNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedNet {
    layers: usize,
    width: usize,
    params: ParamVector,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> impl Iterator<Item = f64> + '_ {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(move |_| rng.random_range(-limit..limit))
}

impl GatedNet {
    /// Glorot-uniform weights, zero biases. With `zero_head` the output weights are
    /// drawn and then zeroed, so the other blocks match the default init.
    pub fn init(config: &NetworkConfig, rng: &mut impl Rng) -> Result<Self, NetworkError> {
        config.validate()?;
        let layout = Arc::new(config.layout());
        let mut params = ParamVector::zeros(layout.clone());
        for b in layout.blocks() {
            if b.name == "out.weight" && config.zero_head {
                glorot(b.rows, b.cols, rng).for_each(drop);
            } else if b.name.ends_with(".weight") {
                let vals: Vec<f64> = glorot(b.rows, b.cols, rng).collect();
                params.as_mut_slice()[b.range()].copy_from_slice(&vals);
            }
        }
        Ok(Self { layers: config.layers, width: config.width, params })
    }

    pub fn zeros(config: &NetworkConfig) -> Result<Self, NetworkError> {
        config.validate()?;
        let params = ParamVector::zeros(Arc::new(config.layout()));
        Ok(Self { layers: config.layers, width: config.width, params })
    }

    pub fn from_params(config: &NetworkConfig, params: ParamVector) -> Result<Self, NetworkError> {
        config.validate()?;
        if params.layout().blocks() != config.layout().blocks() {
            return Err(NetworkError::Config("parameter layout does not match config".into()));
        }
        Ok(Self { layers: config.layers, width: config.width, params })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn block(&self, name: &str) -> ndarray::ArrayView2<'_, f64> {
        self.params.block(name).expect("layout fixed by config")
    }

    fn dense<T: NetScalar>(&self, input: &[T], layer: &str) -> Vec<T> {
        let w = self.block(&format!("{layer}.weight"));
        let b = self.block(&format!("{layer}.bias"));
        (0..w.ncols())
            .map(|j| {
                input.iter().enumerate().fold(T::from_f64(b[[0, j]]), |acc, (i, &x)| acc + x * T::from_f64(w[[i, j]]))
            })
            .collect()
    }

    fn activate<T: NetScalar>(v: Vec<T>, layer: &str, at: [f64; 2]) -> Result<Vec<T>, NetworkError> {
        let out: Vec<T> = v.into_iter().map(NetScalar::tanh).collect();
        if out.iter().all(|t| t.is_finite()) {
            Ok(out)
        } else {
            Err(NetworkError::NonFinite { layer: layer.to_string(), x: at[0], y: at[1] })
        }
    }

    /// Forward pass on an already-normalized input.
    pub fn forward_normalized<T: NetScalar>(&self, input: [T; 2], at: [f64; 2]) -> Result<T, NetworkError> {
        let a = Self::activate(self.dense(&input, "lift_a"), "lift_a", at)?;
        let b = Self::activate(self.dense(&input, "lift_b"), "lift_b", at)?;
        let mut h = Self::activate(self.dense(&input, "lift_h"), "lift_h", at)?;
        let one = T::from_f64(1.0);
        for k in 1..=self.layers {
            let name = format!("gate{k}");
            let z = Self::activate(self.dense(&h, &name), &name, at)?;
            h = z.iter().zip(a.iter().zip(&b)).map(|(&z, (&a, &b))| (one - z) * a + z * b).collect();
        }
        let out = self.dense(&h, "out")[0];
        if out.is_finite() {
            Ok(out)
        } else {
            Err(NetworkError::NonFinite { layer: "out".into(), x: at[0], y: at[1] })
        }
    }

    pub fn forward(&self, norm: &Normalizer, x: f64, y: f64) -> Result<f64, NetworkError> {
        let xn = norm.apply(Point2::new(x, y));
        self.forward_normalized(xn, [x, y])
    }

    /// Value and exact spatial partials via two forward-mode sweeps.
    pub fn eval_with_input_derivs(&self, norm: &Normalizer, x: f64, y: f64) -> Result<InputDerivs, NetworkError> {
        let [xn, yn] = norm.apply(Point2::new(x, y));
        let [sx, sy] = [1.0 / norm.half_extent[0], 1.0 / norm.half_extent[1]];
        let along_x = self.forward_normalized([DualScalar::new(xn, sx), DualScalar::constant(yn)], [x, y])?;
        let along_y = self.forward_normalized([DualScalar::constant(xn), DualScalar::new(yn, sy)], [x, y])?;
        Ok(InputDerivs { value: along_x.value, d_dx: along_x.tangent, d_dy: along_y.tangent })
    }
}

/// Normalized batch input shared by both halves of a tape evaluation.
#[derive(Debug, Clone)]
pub struct BatchInput {
    /// `n x 2` normalized coordinates.
    pub coords: Array2<f64>,
    /// `d(normalized)/d(x)` and `d(normalized)/d(y)` as `1 x 2` rows.
    pub seeds: [Array2<f64>; 2],
}

impl BatchInput {
    pub fn new(norm: &Normalizer, points: &[Point2]) -> Self {
        let mut coords = Array2::zeros((points.len(), 2));
        for (i, p) in points.iter().enumerate() {
            let [a, b] = norm.apply(*p);
            coords[[i, 0]] = a;
            coords[[i, 1]] = b;
        }
        let sx = Array2::from_shape_vec((1, 2), vec![1.0 / norm.half_extent[0], 0.0]).expect("1x2");
        let sy = Array2::from_shape_vec((1, 2), vec![0.0, 1.0 / norm.half_extent[1]]).expect("1x2");
        Self { coords, seeds: [sx, sy] }
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tape handles for a batch evaluation; each is `n x 1`.
#[derive(Debug, Clone, Copy)]
pub struct TapeOutput {
    pub value: Var,
    /// `(d/dx, d/dy)` when requested.
    pub derivs: Option<(Var, Var)>,
}

/// A dual batch: value plus tangents along x and y. Tangents may be `1 x w`
/// rows when they do not depend on the point (first layer).
#[derive(Debug, Clone, Copy)]
struct DualVar {
    val: Var,
    tan: Option<[Var; 2]>,
}

/// `tanh` lifted to dual batches.
fn dual_tanh(tape: &mut Tape, pre: DualVar) -> Result<DualVar, AutodiffError> {
    let val = tape.tanh(pre.val);
    let tan = match pre.tan {
        Some(tan) => {
            let sq = tape.square(val);
            let neg = tape.scale(sq, -1.0);
            let slope = tape.shift(neg, 1.0);
            Some([tape.mul(slope, tan[0])?, tape.mul(slope, tan[1])?])
        }
        None => None,
    };
    Ok(DualVar { val, tan })
}

/// `input * W + b` lifted to dual batches.
fn dual_dense(tape: &mut Tape, vars: &ParamVars, layer: &str, input: DualVar) -> Result<DualVar, AutodiffError> {
    let w = vars.get(&format!("{layer}.weight"))?;
    let b = vars.get(&format!("{layer}.bias"))?;
    let prod = tape.matmul(input.val, w)?;
    let val = tape.add(prod, b)?;
    let tan = match input.tan {
        Some([tx, ty]) => Some([tape.matmul(tx, w)?, tape.matmul(ty, w)?]),
        None => None,
    };
    Ok(DualVar { val, tan })
}

impl GatedNet {
    /// Records a batched forward pass on `tape`, optionally with spatial derivatives.
    ///
    /// `vars` must hold this half's parameter blocks (see [`ParamVars::scoped`]).
    pub fn tape_forward(
        layers: usize,
        tape: &mut Tape,
        vars: &ParamVars,
        input: &BatchInput,
        with_derivs: bool,
    ) -> Result<TapeOutput, AutodiffError> {
        let x = tape.constant(input.coords.clone());
        let tan = if with_derivs {
            Some([tape.constant(input.seeds[0].clone()), tape.constant(input.seeds[1].clone())])
        } else {
            None
        };
        let x = DualVar { val: x, tan };

        let pre_a = dual_dense(tape, vars, "lift_a", x)?;
        let a = dual_tanh(tape, pre_a)?;
        let pre_b = dual_dense(tape, vars, "lift_b", x)?;
        let b = dual_tanh(tape, pre_b)?;
        let pre_h = dual_dense(tape, vars, "lift_h", x)?;
        let mut h = dual_tanh(tape, pre_h)?;

        // H' = A + Z * (B - A)
        let gap_val = tape.sub(b.val, a.val)?;
        let gap_tan = match (a.tan, b.tan) {
            (Some(ta), Some(tb)) => Some([tape.sub(tb[0], ta[0])?, tape.sub(tb[1], ta[1])?]),
            _ => None,
        };
        for k in 1..=layers {
            let pre = dual_dense(tape, vars, &format!("gate{k}"), h)?;
            let z = dual_tanh(tape, pre)?;
            let zg = tape.mul(z.val, gap_val)?;
            let val = tape.add(a.val, zg)?;
            let tan = match (z.tan, a.tan, gap_tan) {
                (Some(tz), Some(ta), Some(tg)) => {
                    let mut out = [val; 2];
                    for d in 0..2 {
                        let p = tape.mul(tz[d], gap_val)?;
                        let q = tape.mul(z.val, tg[d])?;
                        let pq = tape.add(p, q)?;
                        out[d] = tape.add(ta[d], pq)?;
                    }
                    Some(out)
                }
                _ => None,
            };
            h = DualVar { val, tan };
        }
        let out = dual_dense(tape, vars, "out", h)?;
        Ok(TapeOutput { value: out.val, derivs: out.tan.map(|[dx, dy]| (dx, dy)) })
    }
}

/// The two independent halves predicting `u` and `v` in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementNet {
    pub config: NetworkConfig,
    pub normalizer: Normalizer,
    pub net_u: GatedNet,
    pub net_v: GatedNet,
}

pub const U_PREFIX: &str = "u.";
pub const V_PREFIX: &str = "v.";

impl DisplacementNet {
    /// Seeded initialization; `u` draws first, then `v`, from one stream.
    pub fn init(config: &NetworkConfig, normalizer: Normalizer) -> Result<Self, NetworkError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net_u = GatedNet::init(config, &mut rng)?;
        let net_v = GatedNet::init(config, &mut rng)?;
        Ok(Self { config: config.clone(), normalizer, net_u, net_v })
    }

    pub fn zeros(config: &NetworkConfig, normalizer: Normalizer) -> Result<Self, NetworkError> {
        Ok(Self {
            config: config.clone(),
            normalizer,
            net_u: GatedNet::zeros(config)?,
            net_v: GatedNet::zeros(config)?,
        })
    }

    pub fn displacement(&self, x: f64, y: f64) -> Result<(f64, f64), NetworkError> {
        Ok((self.net_u.forward(&self.normalizer, x, y)?, self.net_v.forward(&self.normalizer, x, y)?))
    }

    /// `(u, v)` with their spatial partials.
    pub fn displacement_with_derivs(&self, x: f64, y: f64) -> Result<(InputDerivs, InputDerivs), NetworkError> {
        Ok((
            self.net_u.eval_with_input_derivs(&self.normalizer, x, y)?,
            self.net_v.eval_with_input_derivs(&self.normalizer, x, y)?,
        ))
    }

    /// Joint parameter vector with `u.` and `v.` prefixed blocks.
    pub fn flatten(&self) -> ParamVector {
        ParamVector::concat(&[(U_PREFIX, self.net_u.params()), (V_PREFIX, self.net_v.params())])
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn unflatten(&mut self, joint: &ParamVector) -> Result<(), NetworkError> {
        let u = joint.split_prefix(U_PREFIX, self.net_u.params().layout().clone())?;
        let v = joint.split_prefix(V_PREFIX, self.net_v.params().layout().clone())?;
        *self.net_u.params_mut() = u;
        *self.net_v.params_mut() = v;
        Ok(())
    }

    /// Overwrites the joint parameters in place (same layout as [`flatten`](Self::flatten)).
    pub fn set_flat_values(&mut self, values: &[f64]) -> Result<(), NetworkError> {
        let nu = self.net_u.params().len();
        if values.len() != nu + self.net_v.params().len() {
            return Err(NetworkError::Config("joint parameter length mismatch".into()));
        }
        self.net_u.params_mut().as_mut_slice().copy_from_slice(&values[..nu]);
        self.net_v.params_mut().as_mut_slice().copy_from_slice(&values[nu..]);
        Ok(())
    }

    /// Records both halves on a tape whose leaves came from [`flatten`](Self::flatten).
    pub fn tape_forward(
        &self,
        tape: &mut Tape,
        joint: &ParamVars,
        input: &BatchInput,
        with_derivs: bool,
    ) -> Result<(TapeOutput, TapeOutput), AutodiffError> {
        let u = GatedNet::tape_forward(self.config.layers, tape, &joint.scoped(U_PREFIX), input, with_derivs)?;
        let v = GatedNet::tape_forward(self.config.layers, tape, &joint.scoped(V_PREFIX), input, with_derivs)?;
        Ok((u, v))
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String, NetworkError> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            normalizer: self.normalizer,
            net_u: self.net_u.params().clone(),
            net_v: self.net_v.params().clone(),
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(NetworkError::Checkpoint(format!("format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(NetworkError::Checkpoint(format!("version {}", ck.version)));
        }
        Ok(Self {
            net_u: GatedNet::from_params(&ck.config, ck.net_u)?,
            net_v: GatedNet::from_params(&ck.config, ck.net_v)?,
            config: ck.config,
            normalizer: ck.normalizer,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: NetworkConfig,
    normalizer: Normalizer,
    net_u: ParamVector,
    net_v: ParamVector,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_params;

    fn set(net: &mut GatedNet, name: &str, values: &[f64]) {
        net.params_mut().block_mut(name).unwrap().copy_from_slice(values);
    }

    #[test]
    fn parameter_count_by_hand() {
        // L=1, width=1: three lifts of (2 + 1), one gate of (1 + 1), head (1 + 1)
        let c = NetworkConfig::new(1, 1, 0);
        assert_eq!(c.parameter_count(), 9 + 2 + 2);
        assert_eq!(c.layout().total_len(), 13);
        let c = NetworkConfig::new(4, 64, 0);
        assert_eq!(c.parameter_count(), 3 * (128 + 64) + 4 * (4096 + 64) + 65);
        assert_eq!(c.layout().total_len(), c.parameter_count());
    }

    #[test]
    fn invalid_config() {
        assert!(NetworkConfig::new(0, 4, 0).validate().is_err());
        assert!(NetworkConfig::new(2, 0, 0).validate().is_err());
    }

    #[test]
    fn init_is_seeded() {
        let c = NetworkConfig::new(4, 64, 7);
        let a = DisplacementNet::init(&c, Normalizer::identity()).unwrap();
        let b = DisplacementNet::init(&c, Normalizer::identity()).unwrap();
        assert_eq!(a.flatten().as_slice(), b.flatten().as_slice());
        let d = DisplacementNet::init(&NetworkConfig { seed: 8, ..c }, Normalizer::identity()).unwrap();
        assert_ne!(a.flatten().as_slice(), d.flatten().as_slice());
        assert!(a.net_u.params().block("gate1.bias").unwrap().iter().all(|&b| b == 0.0));
        assert_ne!(a.net_u.params().as_slice(), a.net_v.params().as_slice());
    }

    #[test]
    fn zero_head_starts_at_zero_and_keeps_the_other_blocks() {
        let c = NetworkConfig::new(2, 8, 3);
        let plain = DisplacementNet::init(&c, Normalizer::identity()).unwrap();
        let zero = DisplacementNet::init(&NetworkConfig { zero_head: true, ..c }, Normalizer::identity()).unwrap();
        assert_eq!(zero.displacement(0.3, -0.2).unwrap(), (0.0, 0.0));
        let (a, b) = (plain.flatten(), zero.flatten());
        for block in a.layout().blocks() {
            let same = a.block(&block.name) == b.block(&block.name);
            assert_eq!(same, !block.name.ends_with("out.weight"), "{}", block.name);
        }
    }

    /// Width-1 single-gate net with A = B, so H = tanh(x) and the head reads it directly.
    #[test]
    fn tanh_head() {
        let c = NetworkConfig::new(1, 1, 0);
        let mut net = GatedNet::zeros(&c).unwrap();
        set(&mut net, "lift_a.weight", &[1.0, 0.0]);
        set(&mut net, "lift_b.weight", &[1.0, 0.0]);
        set(&mut net, "out.weight", &[1.0]);
        let n = Normalizer::identity();
        let d = net.eval_with_input_derivs(&n, 0.0, 0.0).unwrap();
        assert_eq!(d, InputDerivs { value: 0.0, d_dx: 1.0, d_dy: 0.0 });
        let d = net.eval_with_input_derivs(&n, 0.3, 0.7).unwrap();
        assert!((d.value - 0.3f64.tanh()).abs() < 1e-15);
        assert!((d.d_dx - (1.0 - 0.3f64.tanh().powi(2))).abs() < 1e-15);
        assert_eq!(d.d_dy, 0.0);
    }

    /// With tiny input weights tanh is linear to first order; scaling the head
    /// by the inverse recovers psi(x, y) = x up to O(eps^2).
    #[test]
    fn identity_map() {
        let c = NetworkConfig::new(1, 1, 0);
        let mut net = GatedNet::zeros(&c).unwrap();
        let eps = 1e-6;
        set(&mut net, "lift_a.weight", &[eps, 0.0]);
        set(&mut net, "lift_b.weight", &[eps, 0.0]);
        set(&mut net, "out.weight", &[1.0 / eps]);
        let d = net.eval_with_input_derivs(&Normalizer::identity(), 0.3, 0.7).unwrap();
        assert!((d.value - 0.3).abs() < 1e-10);
        assert!((d.d_dx - 1.0).abs() < 1e-10);
        assert_eq!(d.d_dy, 0.0);
    }

    #[test]
    fn zero_and_constant_nets() {
        let c = NetworkConfig::new(3, 5, 0);
        let mut net = DisplacementNet::zeros(&c, Normalizer::identity()).unwrap();
        for (x, y) in [(0.0, 0.0), (12.0, -3.0), (1e3, 1e3)] {
            assert_eq!(net.displacement(x, y).unwrap(), (0.0, 0.0));
        }
        let mut seeded = DisplacementNet::init(&c, Normalizer::identity()).unwrap();
        set(&mut seeded.net_u, "out.weight", &[0.0; 5]);
        set(&mut seeded.net_u, "out.bias", &[2.5]);
        assert_eq!(seeded.net_u.forward(&Normalizer::identity(), 0.4, -0.9).unwrap(), 2.5);
        set(&mut net.net_v, "out.bias", &[-1.0]);
        assert_eq!(net.displacement(3.0, 4.0).unwrap(), (0.0, -1.0));
    }

    #[test]
    fn halves_are_independent() {
        let c = NetworkConfig::new(2, 8, 3);
        let net = DisplacementNet::init(&c, Normalizer::identity()).unwrap();
        let mut perturbed = net.clone();
        for p in perturbed.net_v.params_mut().as_mut_slice() {
            *p += 0.1;
        }
        for (x, y) in [(0.1, 0.2), (-0.5, 0.9), (0.7, -0.3)] {
            assert_eq!(net.displacement(x, y).unwrap().0, perturbed.displacement(x, y).unwrap().0);
            assert_ne!(net.displacement(x, y).unwrap().1, perturbed.displacement(x, y).unwrap().1);
        }
    }

    #[test]
    fn gate_values_stay_in_open_interval() {
        let c = NetworkConfig::new(4, 16, 11);
        let net = DisplacementNet::init(&c, Normalizer::identity()).unwrap();
        let h = vec![0.9; 16];
        for k in 1..=4 {
            let z = net.net_u.dense(&h, &format!("gate{k}"));
            assert!(z.into_iter().map(f64::tanh).all(|v| v > -1.0 && v < 1.0));
        }
    }

    #[test]
    fn forward_is_deterministic_and_finite_far_away() {
        let c = NetworkConfig::new(2, 8, 42);
        let net = DisplacementNet::init(&c, Normalizer::identity()).unwrap();
        assert_eq!(net.displacement(0.5, 0.5).unwrap(), net.displacement(0.5, 0.5).unwrap());
        let (u, v) = net.displacement(1e12, -1e12).unwrap();
        assert!(u.is_finite() && v.is_finite());
    }

    #[test]
    fn input_derivs_match_finite_differences() {
        let c = NetworkConfig::new(2, 8, 42);
        let norm = Normalizer::from_bounds(Point2::new(0.0, 0.0), Point2::new(90.0, 30.0));
        let net = DisplacementNet::init(&c, norm).unwrap();
        let h = 1e-6;
        let (x, y) = (31.0, 12.5);
        let d = net.net_u.eval_with_input_derivs(&norm, x, y).unwrap();
        let f = |x, y| net.net_u.forward(&norm, x, y).unwrap();
        let fd_x = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
        let fd_y = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
        assert!((d.d_dx - fd_x).abs() / fd_x.abs().max(1e-3) < 1e-6, "{} vs {fd_x}", d.d_dx);
        assert!((d.d_dy - fd_y).abs() / fd_y.abs().max(1e-3) < 1e-6, "{} vs {fd_y}", d.d_dy);
    }

    #[test]
    fn tape_forward_matches_scalar_forward() {
        let c = NetworkConfig::new(3, 6, 5);
        let norm = Normalizer::from_bounds(Point2::new(-2.0, 0.0), Point2::new(4.0, 3.0));
        let net = DisplacementNet::init(&c, norm).unwrap();
        let pts = [Point2::new(0.0, 0.0), Point2::new(3.0, 2.5), Point2::new(-1.5, 1.0)];
        let input = BatchInput::new(&norm, &pts);
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, &net.flatten());
        let (u, v) = net.tape_forward(&mut tape, &vars, &input, true).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let (du, dv) = net.displacement_with_derivs(p.x, p.y).unwrap();
            for (out, d) in [(u, du), (v, dv)] {
                let (dx, dy) = out.derivs.unwrap();
                assert!((tape.value(out.value)[[i, 0]] - d.value).abs() < 1e-13);
                assert!((tape.value(dx)[[i, 0]] - d.d_dx).abs() < 1e-13);
                assert!((tape.value(dy)[[i, 0]] - d.d_dy).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn nested_gradient_matches_finite_differences() {
        // loss = (d psi_u / dx at (0.5, 0.5))^2
        let c = NetworkConfig::new(2, 4, 9);
        let net = DisplacementNet::init(&c, Normalizer::identity()).unwrap();
        let input = BatchInput::new(&net.normalizer, &[Point2::new(0.5, 0.5)]);
        let joint = net.flatten();
        let (loss, grad) = grad_params(&joint, |t, vars| {
            let (u, _) = net.tape_forward(t, vars, &input, true)?;
            let sq = t.square(u.derivs.unwrap().0);
            Ok(t.sum(sq))
        })
        .unwrap();
        let eval = |p: &ParamVector| {
            let mut n = net.clone();
            n.unflatten(p).unwrap();
            n.net_u.eval_with_input_derivs(&n.normalizer, 0.5, 0.5).unwrap().d_dx.powi(2)
        };
        assert!((loss - eval(&joint)).abs() < 1e-14);
        let h = 1e-6;
        for i in 0..joint.len() {
            let mut plus = joint.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = joint.clone();
            minus.as_mut_slice()[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let g = grad.as_slice()[i];
            assert!((g - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "param {i}: {g} vs {fd}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let c = NetworkConfig::new(2, 8, 1);
        let norm = Normalizer::from_bounds(Point2::new(0.0, 0.0), Point2::new(90.0, 30.0));
        let net = DisplacementNet::init(&c, norm).unwrap();
        let back = DisplacementNet::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        let a = net.displacement(17.3, 4.1).unwrap();
        let b = back.displacement(17.3, 4.1).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn checkpoint_rejects_foreign_format() {
        let c = NetworkConfig::new(1, 2, 1);
        let net = DisplacementNet::init(&c, Normalizer::identity()).unwrap();
        let text = net.to_json().unwrap().replace(CHECKPOINT_FORMAT, "other");
        assert!(matches!(DisplacementNet::from_json(&text), Err(NetworkError::Checkpoint(_))));
    }
}
