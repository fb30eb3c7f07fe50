use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;

use super::{AutodiffError, ParamVector, Tape, Var};

/// Parameter blocks registered as tape leaves, looked up by name.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    /// Registers every block of `params` as a leaf on `tape`.
    pub fn register(tape: &mut Tape, params: &ParamVector) -> Self {
        let vars = params.to_blocks().into_iter().map(|(name, m)| (name, tape.leaf(m))).collect();
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var, AutodiffError> {
        self.vars.get(name).copied().ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))
    }

    /// View restricted to names starting with `prefix`, with the prefix stripped.
    pub fn scoped(&self, prefix: &str) -> Self {
        let vars = self.vars.iter().filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), *v))).collect();
        Self { vars }
    }
}

fn gather(tape: &Tape, loss: Var, params: &ParamVector, vars: &ParamVars) -> Result<(f64, ParamVector), AutodiffError> {
    if tape.shape(loss) != (1, 1) {
        return Err(AutodiffError::NonScalarLoss(tape.shape(loss)));
    }
    let value = tape.scalar_value(loss);
    let grads = tape.backward(loss);
    let mut grad = ParamVector::zeros(params.layout().clone());
    for block in params.layout().blocks() {
        let var = vars.get(&block.name)?;
        if let Some(adj) = grads.wrt(var) {
            let dst = &mut grad.as_mut_slice()[block.range()];
            for (d, s) in dst.iter_mut().zip(adj.iter()) {
                *d = *s;
            }
        }
    }
    Ok((value, grad))
}

fn check_finite(grad: &ParamVector) -> Result<(), AutodiffError> {
    match grad.first_non_finite() {
        Some((parameter, index, value)) => Err(AutodiffError::NonFiniteGradient { parameter, index, value }),
        None => Ok(()),
    }
}

/// Value and parameter gradient of a scalar loss built on a fresh tape.
pub fn grad_params<F>(params: &ParamVector, loss_fn: F) -> Result<(f64, ParamVector), AutodiffError>
where
    F: FnOnce(&mut Tape, &ParamVars) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let loss = loss_fn(&mut tape, &vars)?;
    let (value, grad) = gather(&tape, loss, params, &vars)?;
    check_finite(&grad)?;
    Ok((value, grad))
}

/// Result of [`grad_params_chunked`].
#[derive(Debug, Clone)]
pub struct ChunkedGradient<A> {
    pub loss: f64,
    pub grad: ParamVector,
    /// Per-chunk auxiliary outputs, in chunk order.
    pub aux: Vec<A>,
}

/// Sums losses and gradients of independent per-chunk tapes.
///
/// Each chunk gets its own tape. With `deterministic` set the reduction runs
/// in chunk order, so results are bit-identical regardless of thread count.
pub fn grad_params_chunked<C, A, F>(
    params: &ParamVector,
    chunks: &[C],
    deterministic: bool,
    loss_fn: F,
) -> Result<ChunkedGradient<A>, AutodiffError>
where
    C: Sync,
    A: Send,
    F: Fn(&mut Tape, &ParamVars, &C) -> Result<(Var, A), AutodiffError> + Sync,
{
    let run = |chunk: &C| -> Result<(f64, ParamVector, A), AutodiffError> {
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, params);
        let (loss, aux) = loss_fn(&mut tape, &vars, chunk)?;
        let (value, grad) = gather(&tape, loss, params, &vars)?;
        Ok((value, grad, aux))
    };

    let mut results: Vec<(f64, ParamVector, A)> = chunks.par_iter().map(run).collect::<Result<_, _>>()?;

    let mut loss = 0.0;
    let mut grad = ParamVector::zeros(params.layout().clone());
    let mut aux = Vec::with_capacity(results.len());
    if deterministic {
        for (l, g, a) in results.drain(..) {
            loss += l;
            add_assign(grad.as_mut_slice(), g.as_slice());
            aux.push(a);
        }
    } else {
        let parts: Vec<(f64, Vec<f64>)> = results
            .drain(..)
            .map(|(l, g, a)| {
                aux.push(a);
                (l, g.into_values())
            })
            .collect();
        let (l, g) = parts
            .into_par_iter()
            .reduce_with(|(l1, mut g1), (l2, g2)| {
                add_assign(&mut g1, &g2);
                (l1 + l2, g1)
            })
            .unwrap_or((0.0, vec![0.0; params.len()]));
        loss = l;
        grad.as_mut_slice().copy_from_slice(&g);
    }
    check_finite(&grad)?;
    Ok(ChunkedGradient { loss, grad, aux })
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

/// Column vector `n x 1` from a slice.
pub fn column(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("n x 1 shape")
}
