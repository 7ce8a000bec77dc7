//! Gated recurrent units, reset-before form:
//!
//! ```text
//! z  = σ(x·Wz + h·Uz + bz)
//! r  = σ(x·Wr + h·Ur + br)
//! h̃  = tanh(x·Wh + (r ⊙ h)·Uh + bh)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ```
//!
//! Weights are packed gate-major: `W` is `I × 3H` and `U` is `H × 3H` with
//! column blocks `[z | r | h̃]`, `b` is `3H`.

use super::kernels::{gemm_nn, gemm_nt, gemm_tn, sigmoid};
use super::{GradBuffers, Graph, Operation, Real, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruWeights {
    pub input: Var,
    pub recurrent: Var,
    pub bias: Var,
}

struct StepCache<T> {
    z: Vec<T>,
    r: Vec<T>,
    hc: Vec<T>,
}

/// One step for a `bsz × H` state; rows with `active[b] == false` carry
/// `h_prev` through unchanged.
fn step_forward<T: Real>(
    xp: &[T],
    h_prev: &[T],
    u: &[T],
    bsz: usize,
    h: usize,
    active: &[bool],
) -> (Vec<T>, StepCache<T>) {
    let h3 = 3 * h;
    let mut a = xp.to_vec();
    gemm_nn(bsz, 2 * h, h, h_prev, h, u, h3, &mut a, h3);
    let mut z = vec![T::zero(); bsz * h];
    let mut r = vec![T::zero(); bsz * h];
    for b in 0..bsz {
        for j in 0..h {
            z[b * h + j] = sigmoid(a[b * h3 + j]);
            r[b * h + j] = sigmoid(a[b * h3 + h + j]);
        }
    }
    let rh: Vec<T> = r.iter().zip(h_prev).map(|(&r, &hp)| r * hp).collect();
    gemm_nn(bsz, h, h, &rh, h, &u[2 * h..], h3, &mut a[2 * h..], h3);
    let mut hc = vec![T::zero(); bsz * h];
    let mut out = vec![T::zero(); bsz * h];
    for b in 0..bsz {
        for j in 0..h {
            let i = b * h + j;
            hc[i] = a[b * h3 + 2 * h + j].tanh();
            out[i] = if active[b] {
                (T::one() - z[i]) * h_prev[i] + z[i] * hc[i]
            } else {
                h_prev[i]
            };
        }
    }
    (out, StepCache { z, r, hc })
}

/// Backward through one step. Writes gate pre-activation gradients into
/// `da` (`bsz × 3H`, overwritten), accumulates into `du` and `dh_prev`.
#[allow(clippy::too_many_arguments)]
fn step_backward<T: Real>(
    dh: &[T],
    h_prev: &[T],
    cache: &StepCache<T>,
    u: &[T],
    bsz: usize,
    h: usize,
    active: &[bool],
    da: &mut [T],
    du: &mut [T],
    dh_prev: &mut [T],
) {
    let h3 = 3 * h;
    da.fill(T::zero());
    for b in 0..bsz {
        for j in 0..h {
            let i = b * h + j;
            if !active[b] {
                dh_prev[i] += dh[i];
                continue;
            }
            let (z, hc, hp) = (cache.z[i], cache.hc[i], h_prev[i]);
            let dz = dh[i] * (hc - hp);
            let dhc = dh[i] * z;
            dh_prev[i] += dh[i] * (T::one() - z);
            da[b * h3 + 2 * h + j] = dhc * (T::one() - hc * hc);
            da[b * h3 + j] = dz * z * (T::one() - z);
        }
    }
    let mut drh = vec![T::zero(); bsz * h];
    gemm_nt(bsz, h, h, &da[2 * h..], h3, &u[2 * h..], h3, &mut drh, h);
    let rh: Vec<T> = cache.r.iter().zip(h_prev).map(|(&r, &hp)| r * hp).collect();
    gemm_tn(h, h, bsz, &rh, h, &da[2 * h..], h3, &mut du[2 * h..], h3);
    for b in 0..bsz {
        if !active[b] {
            continue;
        }
        for j in 0..h {
            let i = b * h + j;
            let r = cache.r[i];
            dh_prev[i] += drh[i] * r;
            da[b * h3 + h + j] = drh[i] * h_prev[i] * r * (T::one() - r);
        }
    }
    gemm_nt(bsz, h, 2 * h, da, h3, u, h3, dh_prev, h);
    gemm_tn(h, 2 * h, bsz, h_prev, h, da, h3, du, h3);
}

impl<'p, T: Real> Graph<'p, T> {
    fn gru_dims(&self, w: GruWeights, inputs: usize) -> Result<usize> {
        let ws = self.shape(w.input).to_vec();
        let us = self.shape(w.recurrent).to_vec();
        let bs = self.shape(w.bias).to_vec();
        let h = match us[..] {
            [h, h3] if h3 == 3 * h => h,
            _ => return Err(Error::Shape(format!("GRU recurrent weight must be H×3H, got {us:?}"))),
        };
        if ws != [inputs, 3 * h] {
            return Err(Error::Shape(format!(
                "GRU input weight must be {inputs}×{}, got {ws:?}",
                3 * h
            )));
        }
        if bs != [3 * h] {
            return Err(Error::Shape(format!("GRU bias must be {}, got {bs:?}", 3 * h)));
        }
        Ok(h)
    }

    /// Input projections `x·W + b` for `rows` input vectors.
    fn gru_project(&self, x: &[T], rows: usize, inputs: usize, w: GruWeights, h: usize) -> Vec<T> {
        let h3 = 3 * h;
        let bias = self.value(w.bias).data();
        let mut xp = Vec::with_capacity(rows * h3);
        for _ in 0..rows {
            xp.extend_from_slice(bias);
        }
        gemm_nn(rows, h3, inputs, x, inputs, self.value(w.input).data(), h3, &mut xp, h3);
        xp
    }

    /// A single GRU update: `x` is `B × I`, `h_prev` is `B × H`.
    pub fn gru_cell(&mut self, x: Var, h_prev: Var, weights: GruWeights) -> Result<Var> {
        let (bsz, inputs) = match *self.shape(x) {
            [b, i] => (b, i),
            ref s => return Err(Error::Shape(format!("gru_cell input must be B×I, got {s:?}"))),
        };
        let h = self.gru_dims(weights, inputs)?;
        if self.shape(h_prev) != [bsz, h] {
            return Err(Error::Shape(format!(
                "gru_cell state must be {bsz}×{h}, got {:?}",
                self.shape(h_prev)
            )));
        }
        let xp = self.gru_project(self.value(x).data(), bsz, inputs, weights, h);
        let active = vec![true; bsz];
        let (out, cache) = step_forward(
            &xp,
            self.value(h_prev).data(),
            self.value(weights.recurrent).data(),
            bsz,
            h,
            &active,
        );
        let value = Tensor::new(vec![bsz, h], out)?;
        Ok(self.push(
            value,
            GruCellOp {
                x,
                h_prev,
                weights,
                cache,
            },
        ))
    }

    /// Bidirectional GRU over `B × L × I` with a `B × L` mask. Masked steps
    /// leave the state unchanged. Output is `B × L × 2H`, forward stream
    /// first. Both directions start from a zero state.
    pub fn bigru(&mut self, x: Var, mask: &[u8], forward: GruWeights, backward: GruWeights) -> Result<Var> {
        let (bsz, len, inputs) = match *self.shape(x) {
            [b, l, i] => (b, l, i),
            ref s => return Err(Error::Shape(format!("bigru input must be B×L×I, got {s:?}"))),
        };
        super::layers::check_mask(mask, bsz, len)?;
        let h = self.gru_dims(forward, inputs)?;
        if self.gru_dims(backward, inputs)? != h {
            return Err(Error::Shape("bigru directions differ in hidden size".into()));
        }
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); bsz * len * 2 * h];
        let mut scans = Vec::with_capacity(2);
        for (dir, w) in [forward, backward].into_iter().enumerate() {
            let xp = self.gru_project(xv, bsz * len, inputs, w, h);
            let order: Vec<usize> = if dir == 0 {
                (0..len).collect()
            } else {
                (0..len).rev().collect()
            };
            let u = self.value(w.recurrent).data();
            let h3 = 3 * h;
            let mut state = vec![T::zero(); bsz * h];
            let mut states = Vec::with_capacity(len);
            let mut caches = Vec::with_capacity(len);
            let mut xp_t = vec![T::zero(); bsz * h3];
            for &t in &order {
                for b in 0..bsz {
                    let row = (b * len + t) * h3;
                    xp_t[b * h3..(b + 1) * h3].copy_from_slice(&xp[row..row + h3]);
                }
                let active: Vec<bool> = (0..bsz).map(|b| mask[b * len + t] != 0).collect();
                let (next, cache) = step_forward(&xp_t, &state, u, bsz, h, &active);
                for b in 0..bsz {
                    let dst = (b * len + t) * 2 * h + dir * h;
                    out[dst..dst + h].copy_from_slice(&next[b * h..(b + 1) * h]);
                }
                states.push(std::mem::replace(&mut state, next));
                caches.push(cache);
            }
            scans.push(Scan {
                weights: w,
                order,
                h_prev: states,
                caches,
            });
        }
        let value = Tensor::new(vec![bsz, len, 2 * h], out)?;
        Ok(self.push(
            value,
            BiGruOp {
                x,
                mask: mask.to_vec(),
                scans,
                dims: (bsz, len, inputs, h),
            },
        ))
    }
}

struct GruCellOp<T> {
    x: Var,
    h_prev: Var,
    weights: GruWeights,
    cache: StepCache<T>,
}

impl<T: Real> Operation<T> for GruCellOp<T> {
    fn backward(&self, graph: &Graph<'_, T>, _: &[T], upstream: &[T], grads: &mut GradBuffers<T>) {
        let [bsz, inputs] = graph.shape(self.x)[..] else {
            unreachable!()
        };
        let h = upstream.len() / bsz;
        let h3 = 3 * h;
        let hp = graph.value(self.h_prev).data();
        let u = graph.value(self.weights.recurrent).data();
        let active = vec![true; bsz];
        let mut da = vec![T::zero(); bsz * h3];
        let mut dh_prev = vec![T::zero(); bsz * h];
        step_backward(
            upstream,
            hp,
            &self.cache,
            u,
            bsz,
            h,
            &active,
            &mut da,
            grads.slot(self.weights.recurrent),
            &mut dh_prev,
        );
        grads
            .slot(self.h_prev)
            .iter_mut()
            .zip(&dh_prev)
            .for_each(|(d, &g)| *d += g);
        input_side_backward(graph, self.x, self.weights, &da, bsz, inputs, h, grads);
    }
}

/// Gradients of `x·W + b` given gate pre-activation gradients `da`.
#[allow(clippy::too_many_arguments)]
fn input_side_backward<T: Real>(
    graph: &Graph<'_, T>,
    x: Var,
    w: GruWeights,
    da: &[T],
    rows: usize,
    inputs: usize,
    h: usize,
    grads: &mut GradBuffers<T>,
) {
    let h3 = 3 * h;
    {
        let db = grads.slot(w.bias);
        for row in da.chunks_exact(h3) {
            db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
        }
    }
    gemm_tn(inputs, h3, rows, graph.value(x).data(), inputs, da, h3, grads.slot(w.input), h3);
    let wv = graph.value(w.input).data();
    gemm_nt(rows, inputs, h3, da, h3, wv, h3, grads.slot(x), inputs);
}

struct Scan<T> {
    weights: GruWeights,
    order: Vec<usize>,
    h_prev: Vec<Vec<T>>,
    caches: Vec<StepCache<T>>,
}

struct BiGruOp<T> {
    x: Var,
    mask: Vec<u8>,
    scans: Vec<Scan<T>>,
    dims: (usize, usize, usize, usize),
}

impl<T: Real> Operation<T> for BiGruOp<T> {
    fn backward(&self, graph: &Graph<'_, T>, _: &[T], upstream: &[T], grads: &mut GradBuffers<T>) {
        let (bsz, len, inputs, h) = self.dims;
        let h3 = 3 * h;
        for (dir, scan) in self.scans.iter().enumerate() {
            let u = graph.value(scan.weights.recurrent).data();
            let mut da_all = vec![T::zero(); bsz * len * h3];
            let mut carry = vec![T::zero(); bsz * h];
            let mut da = vec![T::zero(); bsz * h3];
            for step in (0..len).rev() {
                let t = scan.order[step];
                let mut dh = carry;
                for b in 0..bsz {
                    let src = (b * len + t) * 2 * h + dir * h;
                    dh[b * h..(b + 1) * h]
                        .iter_mut()
                        .zip(&upstream[src..src + h])
                        .for_each(|(d, &g)| *d += g);
                }
                let active: Vec<bool> = (0..bsz).map(|b| self.mask[b * len + t] != 0).collect();
                let mut dh_prev = vec![T::zero(); bsz * h];
                step_backward(
                    &dh,
                    &scan.h_prev[step],
                    &scan.caches[step],
                    u,
                    bsz,
                    h,
                    &active,
                    &mut da,
                    grads.slot(scan.weights.recurrent),
                    &mut dh_prev,
                );
                for b in 0..bsz {
                    let row = (b * len + t) * h3;
                    da_all[row..row + h3].copy_from_slice(&da[b * h3..(b + 1) * h3]);
                }
                carry = dh_prev;
            }
            input_side_backward(graph, self.x, scan.weights, &da_all, bsz * len, inputs, h, grads);
        }
    }
}
