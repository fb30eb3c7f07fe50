//! Hand-derived batched forward and reverse passes for [`GatedNet`].
//!
//! Values and the two spatial tangents are stacked row-wise into one
//! `(1 + nt) n x width` matrix per layer (`nt` is 0 or 2), so each dense layer
//! is a single matrix product. The reverse pass takes an upstream adjoint for
//! every stacked output row and accumulates parameter gradients.
//!
//! The tape route in [`GatedNet::tape_forward`] computes the same quantities
//! generically and serves as the reference in tests.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};

use super::{BatchInput, GatedNet, NetworkError};

/// Cached activations of one batched evaluation.
#[derive(Debug, Clone)]
pub struct FusedPass {
    n: usize,
    nt: usize,
    width: usize,
    coords: Vec<f64>,
    seeds: [[f64; 2]; 2],
    lift_a: Array2<f64>,
    lift_b: Array2<f64>,
    /// `B - A`, stacked like the lifts.
    gap: Array2<f64>,
    /// `H_1 .. H_{L+1}`.
    hidden: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>,
    output: Vec<f64>,
}

impl FusedPass {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn has_derivs(&self) -> bool {
        self.nt > 0
    }

    /// Rows of the stacked output: values, then `d/dx` and `d/dy` when present.
    pub fn stacked_rows(&self) -> usize {
        self.n * (1 + self.nt)
    }

    pub fn value(&self) -> &[f64] {
        &self.output[..self.n]
    }

    pub fn d_dx(&self) -> Option<&[f64]> {
        (self.nt > 0).then(|| &self.output[self.n..2 * self.n])
    }

    pub fn d_dy(&self) -> Option<&[f64]> {
        (self.nt > 0).then(|| &self.output[2 * self.n..3 * self.n])
    }
}

fn block_range(net: &GatedNet, name: &str) -> std::ops::Range<usize> {
    net.params.layout().block(name).expect("layout fixed by config").range()
}

fn grad_view<'a>(grad: &'a mut [f64], net: &GatedNet, name: &str, shape: (usize, usize)) -> ArrayViewMut2<'a, f64> {
    ArrayViewMut2::from_shape(shape, &mut grad[block_range(net, name)]).expect("block shape")
}

/// `a * b` in standard layout.
fn product(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Array2<f64> {
    let mut c = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(1.0, a, b, 0.0, &mut c);
    c
}

/// Sums the first `n` rows of a row-major `? x w` slice into `acc`.
fn add_column_sums(acc: &mut [f64], rows: &[f64], n: usize) {
    let w = acc.len();
    for row in rows[..n * w].chunks_exact(w) {
        for (a, r) in acc.iter_mut().zip(row) {
            *a += r;
        }
    }
}

impl GatedNet {
    fn lift_forward(&self, name: &str, coords: &[f64], seeds: &[[f64; 2]; 2], nt: usize) -> Array2<f64> {
        let n = coords.len() / 2;
        let w = self.width;
        let wt = self.block(&format!("{name}.weight"));
        let b = self.block(&format!("{name}.bias"));
        let mut out = Array2::zeros((n * (1 + nt), w));
        let s = out.as_slice_mut().expect("standard layout");
        let (val, tan) = s.split_at_mut(n * w);
        for (i, row) in val.chunks_exact_mut(w).enumerate() {
            let (x0, x1) = (coords[2 * i], coords[2 * i + 1]);
            for (j, o) in row.iter_mut().enumerate() {
                *o = (x0 * wt[[0, j]] + x1 * wt[[1, j]] + b[[0, j]]).tanh();
            }
        }
        for t in 0..nt {
            let r: Vec<f64> = (0..w).map(|j| seeds[t][0] * wt[[0, j]] + seeds[t][1] * wt[[1, j]]).collect();
            let block = &mut tan[t * n * w..(t + 1) * n * w];
            for (trow, vrow) in block.chunks_exact_mut(w).zip(val.chunks_exact(w)) {
                for j in 0..w {
                    trow[j] = (1.0 - vrow[j] * vrow[j]) * r[j];
                }
            }
        }
        out
    }

    /// Batched forward pass, with spatial tangents when `with_derivs`.
    pub fn fused_forward(&self, input: &BatchInput, with_derivs: bool) -> Result<FusedPass, NetworkError> {
        let n = input.len();
        let nt = if with_derivs { 2 } else { 0 };
        let w = self.width;
        let nw = n * w;
        let coords: Vec<f64> = input.coords.iter().copied().collect();
        let seed = |t: usize| [input.seeds[t][[0, 0]], input.seeds[t][[0, 1]]];
        let seeds = [seed(0), seed(1)];

        let lift_a = self.lift_forward("lift_a", &coords, &seeds, nt);
        let lift_b = self.lift_forward("lift_b", &coords, &seeds, nt);
        let mut hidden = vec![self.lift_forward("lift_h", &coords, &seeds, nt)];
        let gap = &lift_b - &lift_a;

        let mut pre = Vec::with_capacity(self.layers);
        let mut gates = Vec::with_capacity(self.layers);
        for k in 1..=self.layers {
            let g = self.block(&format!("gate{k}.weight"));
            let c = self.block(&format!("gate{k}.bias"));
            let h = hidden.last().expect("seeded with H_1");
            let mut p = product(&h.view(), &g);
            let mut z = Array2::zeros(p.dim());
            {
                let ps = p.as_slice_mut().expect("standard layout");
                let zs = z.as_slice_mut().expect("standard layout");
                for (prow, zrow) in ps[..nw].chunks_exact_mut(w).zip(zs[..nw].chunks_exact_mut(w)) {
                    for j in 0..w {
                        prow[j] += c[[0, j]];
                        zrow[j] = prow[j].tanh();
                    }
                }
                let (zv, zt) = zs.split_at_mut(nw);
                for t in 0..nt {
                    let o = (t + 1) * nw;
                    for q in 0..nw {
                        zt[t * nw + q] = (1.0 - zv[q] * zv[q]) * ps[o + q];
                    }
                }
            }
            let mut next = Array2::zeros(p.dim());
            {
                let hs = next.as_slice_mut().expect("standard layout");
                let a = lift_a.as_slice().expect("standard layout");
                let d = gap.as_slice().expect("standard layout");
                let zs = z.as_slice().expect("standard layout");
                for q in 0..nw {
                    hs[q] = a[q] + zs[q] * d[q];
                }
                for t in 1..=nt {
                    let o = t * nw;
                    for q in 0..nw {
                        hs[o + q] = a[o + q] + zs[o + q] * d[q] + zs[q] * d[o + q];
                    }
                }
            }
            pre.push(p);
            gates.push(z);
            hidden.push(next);
        }

        let wo = self.block("out.weight");
        let bo = self.block("out.bias")[[0, 0]];
        let last = hidden.last().expect("non-empty");
        let mut output = product(&last.view(), &wo).into_raw_vec_and_offset().0;
        for o in &mut output[..n] {
            *o += bo;
        }
        if let Some(i) = output.iter().position(|v| !v.is_finite()) {
            let i = i % n.max(1);
            let [x, y] = [coords[2 * i], coords[2 * i + 1]];
            return Err(NetworkError::NonFinite { layer: "out".into(), x, y });
        }
        Ok(FusedPass { n, nt, width: w, coords, seeds, lift_a, lift_b, gap, hidden, pre, gates, output })
    }

    fn lift_backward(&self, name: &str, pass: &FusedPass, s: &Array2<f64>, mut sbar: Array2<f64>, grad: &mut [f64]) {
        let (n, w, nt) = (pass.n, pass.width, pass.nt);
        let nw = n * w;
        let wt = self.block(&format!("{name}.weight"));
        let sv = s.as_slice().expect("standard layout");
        let sb = sbar.as_slice_mut().expect("standard layout");
        let mut rbar = vec![[0.0; 2]; w];
        for t in 0..nt {
            let r: Vec<f64> = (0..w).map(|j| pass.seeds[t][0] * wt[[0, j]] + pass.seeds[t][1] * wt[[1, j]]).collect();
            let o = (t + 1) * nw;
            for q in 0..nw {
                let j = q % w;
                let tb = sb[o + q];
                rbar[j][t] += tb * (1.0 - sv[q] * sv[q]);
                sb[q] -= 2.0 * tb * r[j] * sv[q];
            }
        }
        for q in 0..nw {
            sb[q] *= 1.0 - sv[q] * sv[q];
        }
        let pbar = ArrayView2::from_shape((n, w), &sb[..nw]).expect("value rows");
        let xi = ArrayView2::from_shape((n, 2), &pass.coords).expect("n x 2");
        let mut gw = grad_view(grad, self, &format!("{name}.weight"), (2, w));
        general_mat_mul(1.0, &xi.t(), &pbar, 1.0, &mut gw);
        for t in 0..nt {
            for r in 0..2 {
                for j in 0..w {
                    gw[[r, j]] += pass.seeds[t][r] * rbar[j][t];
                }
            }
        }
        add_column_sums(&mut grad[block_range(self, &format!("{name}.bias"))], sb, n);
    }

    /// Accumulates into `grad` (this half's flat layout) the gradient of
    /// `sum(upstream * stacked_output)`.
    pub fn fused_backward(&self, pass: &FusedPass, upstream: &[f64], grad: &mut [f64]) -> Result<(), NetworkError> {
        let (n, w, nt) = (pass.n, pass.width, pass.nt);
        let m = pass.stacked_rows();
        let nw = n * w;
        if upstream.len() != m || grad.len() != self.params.len() {
            return Err(NetworkError::Config(format!(
                "fused backward expects {m} upstream rows and {} gradient entries, got {} and {}",
                self.params.len(),
                upstream.len(),
                grad.len()
            )));
        }
        let up = ArrayView2::from_shape((m, 1), upstream).expect("m x 1");
        let last = pass.hidden.last().expect("non-empty");
        {
            let mut gw = grad_view(grad, self, "out.weight", (w, 1));
            general_mat_mul(1.0, &last.t(), &up, 1.0, &mut gw);
        }
        grad[block_range(self, "out.bias").start] += upstream[..n].iter().sum::<f64>();
        let mut hbar = product(&up, &self.block("out.weight").t());

        let mut abar = Array2::<f64>::zeros((m, w));
        let mut dbar = Array2::<f64>::zeros((m, w));
        let d = pass.gap.as_slice().expect("standard layout");
        for k in (0..self.layers).rev() {
            let z = pass.gates[k].as_slice().expect("standard layout");
            let p = pass.pre[k].as_slice().expect("standard layout");
            let hb = hbar.as_slice().expect("standard layout");
            let ab = abar.as_slice_mut().expect("standard layout");
            let db = dbar.as_slice_mut().expect("standard layout");
            let mut pbar = Array2::<f64>::zeros((m, w));
            let pb = pbar.as_slice_mut().expect("standard layout");
            for q in 0..nw {
                let zv = z[q];
                let slope = 1.0 - zv * zv;
                let mut zbar = hb[q] * d[q];
                ab[q] += hb[q];
                db[q] += hb[q] * zv;
                for t in 1..=nt {
                    let i = t * nw + q;
                    let h = hb[i];
                    ab[i] += h;
                    db[q] += h * z[i];
                    db[i] += h * zv;
                    zbar += h * d[i];
                    let zt_bar = h * d[q];
                    pb[i] = zt_bar * slope;
                    zbar -= 2.0 * zt_bar * p[i] * zv;
                }
                pb[q] = zbar * slope;
            }
            let name = format!("gate{}", k + 1);
            {
                let mut gg = grad_view(grad, self, &format!("{name}.weight"), (w, w));
                general_mat_mul(1.0, &pass.hidden[k].t(), &pbar, 1.0, &mut gg);
            }
            add_column_sums(
                &mut grad[block_range(self, &format!("{name}.bias"))],
                pbar.as_slice().expect("standard layout"),
                n,
            );
            hbar = product(&pbar.view(), &self.block(&format!("{name}.weight")).t());
        }

        self.lift_backward("lift_h", pass, &pass.hidden[0], hbar, grad);
        abar -= &dbar;
        self.lift_backward("lift_a", pass, &pass.lift_a, abar, grad);
        self.lift_backward("lift_b", pass, &pass.lift_b, dbar, grad);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_params, ParamVars};
    use crate::geometry::Point2;
    use crate::network::{NetworkConfig, Normalizer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(layers: usize, width: usize, seed: u64) -> (GatedNet, BatchInput) {
        let cfg = NetworkConfig::new(layers, width, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = GatedNet::init(&cfg, &mut rng).unwrap();
        for v in net.params_mut().as_mut_slice() {
            *v += rng.random_range(-0.3..0.3);
        }
        let pts: Vec<Point2> =
            (0..7).map(|_| Point2::new(rng.random_range(0.0..4.0), rng.random_range(-1.0..2.0))).collect();
        let norm = Normalizer::from_bounds(Point2::new(0.0, -1.0), Point2::new(4.0, 2.0));
        (net, BatchInput::new(&norm, &pts))
    }

    #[test]
    fn forward_matches_tape() {
        for (layers, width) in [(1, 3), (3, 5)] {
            let (net, input) = setup(layers, width, 4);
            let pass = net.fused_forward(&input, true).unwrap();
            let mut tape = crate::autodiff::Tape::new();
            let vars = ParamVars::register(&mut tape, net.params());
            let out = GatedNet::tape_forward(layers, &mut tape, &vars, &input, true).unwrap();
            let (dx, dy) = out.derivs.unwrap();
            for (fused, var) in [(pass.value(), out.value), (pass.d_dx().unwrap(), dx), (pass.d_dy().unwrap(), dy)] {
                for (a, b) in fused.iter().zip(tape.value(var).iter()) {
                    assert!((a - b).abs() <= 1e-13 * (1.0 + b.abs()), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn backward_matches_tape() {
        for (layers, width, derivs) in [(1, 3, true), (2, 4, false), (3, 5, true)] {
            let (net, input) = setup(layers, width, 9);
            let pass = net.fused_forward(&input, derivs).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let up: Vec<f64> = (0..pass.stacked_rows()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut fused = vec![0.0; net.params().len()];
            net.fused_backward(&pass, &up, &mut fused).unwrap();

            let n = input.len();
            let (_, reference) = grad_params(net.params(), |tape, vars| {
                let out = GatedNet::tape_forward(layers, tape, vars, &input, derivs)?;
                let mut parts = vec![out.value];
                if let Some((dx, dy)) = out.derivs {
                    parts.extend([dx, dy]);
                }
                let mut total = None;
                for (t, var) in parts.into_iter().enumerate() {
                    let weights = tape.constant(crate::autodiff::column(&up[t * n..(t + 1) * n]));
                    let prod = tape.mul(var, weights)?;
                    let s = tape.sum(prod);
                    total = Some(match total {
                        None => s,
                        Some(acc) => tape.add(acc, s)?,
                    });
                }
                Ok(total.unwrap())
            })
            .unwrap();
            for (i, (a, b)) in fused.iter().zip(reference.as_slice()).enumerate() {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "L{layers} w{width} index {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_wrong_upstream_length() {
        let (net, input) = setup(1, 2, 0);
        let pass = net.fused_forward(&input, false).unwrap();
        let mut g = vec![0.0; net.params().len()];
        assert!(net.fused_backward(&pass, &[0.0; 3], &mut g).is_err());
    }
}
