//! Loss composition, Adam optimization and hyperparameter grid search.

mod adam;
mod loss;

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::elasticity::{MaterialError, MaterialModel};
use crate::network::{DisplacementNet, NetworkConfig, NetworkError, Normalizer};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{
    energy_on_tape, loss_asm, loss_bc, loss_pde, total_loss, Engine, LossProblem, LossRecord, LossWeights, PointSets,
    TargetPoint, Terms,
};

pub const LOSS_CSV_HEADER: [&str; 5] = ["epoch", "l_pde", "l_bc", "l_asm", "l_total"];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training config: {0}")]
    Config(String),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("non-finite gradient at flat index {index}: {value}")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("training diverged at epoch {epoch} (last finite epoch {last_finite}): {reason}")]
    Diverged { epoch: usize, last_finite: usize, reason: String, history: Vec<LossRecord> },
    #[error("loss history I/O: {0}")]
    Io(#[from] io::Error),
    #[error("loss history CSV: {0}")]
    Csv(#[from] csv::Error),
}

fn default_chunk_size() -> usize {
    512
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    /// Seeds network initialization and collocation sampling.
    pub seed: u64,
    pub assimilation_enabled: bool,
    #[serde(default)]
    pub adam: AdamConfig,
    pub log_every: usize,
    /// Multiply the energy mean by the material area.
    #[serde(default)]
    pub area_scaling: bool,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    /// Fixed-order reductions, bit-identical across thread counts.
    #[serde(default = "default_true")]
    pub deterministic: bool,
    #[serde(default)]
    pub engine: Engine,
    /// Finish with the parameters of the lowest total loss seen, not the last step.
    #[serde(default)]
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60_000,
            learning_rate: 1e-3,
            weights: LossWeights::default(),
            seed: 0,
            assimilation_enabled: false,
            adam: AdamConfig::default(),
            log_every: 100,
            area_scaling: false,
            chunk_size: default_chunk_size(),
            deterministic: true,
            engine: Engine::default(),
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.log_every == 0 {
            return Err(TrainError::Config("log_every must be >= 1".into()));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(TrainError::Config("adam needs betas in [0, 1) and epsilon > 0".into()));
        }
        self.weights.validate()
    }
}

/// Builds the loss problem `train` would use.
pub fn prepare(
    net: &DisplacementNet,
    sets: &PointSets,
    mat: &MaterialModel,
    cfg: &TrainConfig,
    area: Option<f64>,
) -> Result<LossProblem, TrainError> {
    cfg.validate()?;
    if sets.collocation.is_empty() {
        return Err(TrainError::Config("collocation set is empty".into()));
    }
    if sets.fixed.is_empty() && sets.forced.is_empty() {
        return Err(TrainError::Config("boundary loss needs fixed or forced points".into()));
    }
    if cfg.assimilation_enabled && sets.assimilation.is_empty() {
        return Err(TrainError::Config("assimilation enabled but no marker displacements given".into()));
    }
    if cfg.area_scaling && area.is_none() {
        return Err(TrainError::Config("area_scaling needs the material area".into()));
    }
    let area = if cfg.area_scaling { area } else { None };
    let mut p = LossProblem::new(net, sets, mat, cfg.weights, cfg.assimilation_enabled, cfg.chunk_size, area)?;
    p.deterministic = cfg.deterministic;
    p.engine = cfg.engine;
    Ok(p)
}

/// Full-batch Adam; one step per epoch. Records epoch 1, every `log_every`-th
/// epoch and the final epoch, each evaluated before that epoch's step. With
/// `keep_best` the network ends at the start-of-epoch parameters with the
/// lowest total loss.
pub fn train(
    net: &mut DisplacementNet,
    sets: &PointSets,
    mat: &MaterialModel,
    cfg: &TrainConfig,
    area: Option<f64>,
    mut on_log: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>, TrainError> {
    let problem = prepare(net, sets, mat, cfg, area)?;
    let mut params = net.flatten().into_values();
    let mut state = AdamState::new(params.len());
    let mut history = Vec::new();
    let mut last_finite = 0;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for epoch in 1..=cfg.epochs {
        let (rec, grad) = match problem.loss_and_grad(net, Terms::ALL, epoch) {
            Ok(r) => r,
            Err(e @ (TrainError::Autodiff(_) | TrainError::Network(_))) => {
                return Err(diverged(epoch, last_finite, e.to_string(), history));
            }
            Err(e) => return Err(e),
        };
        if !rec.l_total.is_finite() {
            return Err(diverged(epoch, last_finite, format!("loss is {}", rec.l_total), history));
        }
        last_finite = epoch;
        if cfg.keep_best && best.as_ref().is_none_or(|(l, _)| rec.l_total < *l) {
            best = Some((rec.l_total, params.clone()));
        }
        if epoch == 1 || epoch % cfg.log_every == 0 || epoch == cfg.epochs {
            on_log(&rec);
            history.push(rec);
        }
        if let Err(e) = adam_step(&mut params, grad.as_slice(), &mut state, cfg.learning_rate, &cfg.adam) {
            return Err(diverged(epoch, last_finite, e.to_string(), history));
        }
        net.set_flat_values(&params)?;
    }
    if let Some((_, p)) = best {
        net.set_flat_values(&p)?;
    }
    Ok(history)
}

fn diverged(epoch: usize, last_finite: usize, reason: String, history: Vec<LossRecord>) -> TrainError {
    TrainError::Diverged { epoch, last_finite, reason, history }
}

pub fn write_history_csv(path: &Path, history: &[LossRecord]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    write_history(&mut w, history)?;
    w.flush()?;
    Ok(())
}

pub fn write_history<W: io::Write>(w: &mut csv::Writer<W>, history: &[LossRecord]) -> Result<(), TrainError> {
    w.write_record(LOSS_CSV_HEADER)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            format!("{:?}", r.l_pde),
            format!("{:?}", r.l_bc),
            format!("{:?}", r.l_asm),
            format!("{:?}", r.l_total),
        ])?;
    }
    Ok(())
}

pub fn read_history_csv(path: &Path) -> Result<Vec<LossRecord>, TrainError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != LOSS_CSV_HEADER {
        return Err(TrainError::Config(format!("unexpected loss CSV header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(TrainError::from)).collect()
}

/// One grid-search cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub learning_rate: f64,
    /// Applied to both `lambda_bc` and `lambda_asm`.
    pub weight: f64,
    pub terminal: Option<LossRecord>,
    /// Mean absolute marker error `|du| + |dv|` when markers are present.
    pub mae_disp: Option<f64>,
    pub error: Option<String>,
}

/// Trains one fresh network per `(10^lr_exp, 10^w_exp)` cell and returns the
/// cells sorted by terminal total loss; failed cells sort last.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    base: &TrainConfig,
    net_config: &NetworkConfig,
    normalizer: Normalizer,
    sets: &PointSets,
    mat: &MaterialModel,
    lr_exponents: &[i32],
    weight_exponents: &[i32],
    area: Option<f64>,
) -> Result<Vec<GridCell>, TrainError> {
    if lr_exponents.is_empty() || weight_exponents.is_empty() {
        return Err(TrainError::Config("grid search needs non-empty exponent lists".into()));
    }
    let mut cells = Vec::with_capacity(lr_exponents.len() * weight_exponents.len());
    for &le in lr_exponents {
        for &we in weight_exponents {
            let lr = 10f64.powi(le);
            let w = 10f64.powi(we);
            let cfg =
                TrainConfig { learning_rate: lr, weights: LossWeights { lambda_bc: w, lambda_asm: w }, ..base.clone() };
            let mut net = DisplacementNet::init(net_config, normalizer)?;
            let cell = match train(&mut net, sets, mat, &cfg, area, |_| {}) {
                Ok(h) => GridCell {
                    learning_rate: lr,
                    weight: w,
                    terminal: h.last().copied(),
                    mae_disp: marker_mae(&net, &sets.assimilation),
                    error: None,
                },
                Err(e) => GridCell {
                    learning_rate: lr,
                    weight: w,
                    terminal: None,
                    mae_disp: None,
                    error: Some(e.to_string()),
                },
            };
            cells.push(cell);
        }
    }
    cells.sort_by(|a, b| match (&a.terminal, &b.terminal) {
        (Some(x), Some(y)) => x.l_total.total_cmp(&y.l_total),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(cells)
}

fn marker_mae(net: &DisplacementNet, markers: &[TargetPoint]) -> Option<f64> {
    if markers.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for m in markers {
        let (u, v) = net.displacement(m.x, m.y).ok()?;
        sum += (u - m.u).abs() + (v - m.v).abs();
    }
    Some(sum / markers.len() as f64)
}

#[cfg(test)]
mod tests;
