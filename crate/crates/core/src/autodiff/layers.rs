use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{gemm_nn, gemm_nt, gemm_tn, sigmoid};
use super::{GradBuffers, Graph, Operation, Real, Tensor, Var};
use crate::error::{Error, Result};

pub const BATCH_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

/// Per-channel statistics of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    /// Unbiased (n - 1) variance, the form folded into the running estimate.
    pub var: Vec<T>,
}

/// Exponential moving averages used by batch norm in eval mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: f64,
    pub initialized: bool,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize, momentum: f64) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            momentum,
            initialized: false,
        }
    }

    pub fn update(&mut self, batch: &BatchMoments<T>) {
        let m = T::from_f64(self.momentum);
        let keep = T::one() - m;
        for c in 0..self.mean.len() {
            self.mean[c] = keep * self.mean[c] + m * batch.mean[c];
            self.var[c] = keep * self.var[c] + m * batch.var[c];
        }
        self.initialized = true;
    }

    pub fn cast<U: Real>(&self) -> RunningStats<U> {
        RunningStats {
            mean: self.mean.iter().map(|v| U::from_f64(Real::to_f64(*v))).collect(),
            var: self.var.iter().map(|v| U::from_f64(Real::to_f64(*v))).collect(),
            momentum: self.momentum,
            initialized: self.initialized,
        }
    }
}

impl<'p, T: Real> Graph<'p, T> {
    fn dims3(&self, x: Var, what: &str) -> Result<(usize, usize, usize)> {
        match *self.shape(x) {
            [b, l, c] => Ok((b, l, c)),
            ref s => Err(Error::Shape(format!("{what} expects a rank-3 input, got {s:?}"))),
        }
    }

    fn dims2(&self, x: Var, what: &str) -> Result<(usize, usize)> {
        match *self.shape(x) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::Shape(format!("{what} expects a rank-2 input, got {s:?}"))),
        }
    }

    fn expect_shape(&self, x: Var, want: &[usize], what: &str) -> Result<()> {
        if self.shape(x) != want {
            return Err(Error::Shape(format!(
                "{what}: expected shape {want:?}, got {:?}",
                self.shape(x)
            )));
        }
        Ok(())
    }

    /// Gathers rows of `table` (`rows × E`) for a `batch × len` index matrix.
    pub fn embedding(&mut self, table: Var, indices: &[usize], batch: usize, len: usize) -> Result<Var> {
        let (rows, e) = self.dims2(table, "embedding table")?;
        if indices.len() != batch * len {
            return Err(Error::Shape(format!(
                "embedding: {} indices for a {batch}×{len} batch",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape(format!(
                "embedding index {bad} outside table of {rows} rows"
            )));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * e);
        for &i in indices {
            out.extend_from_slice(&tv[i * e..(i + 1) * e]);
        }
        let value = Tensor::new(vec![batch, len, e], out)?;
        Ok(self.push(
            value,
            EmbeddingOp {
                table,
                indices: indices.to_vec(),
                width: e,
            },
        ))
    }

    /// Zeroes positions whose `batch × len` mask entry is 0.
    pub fn mask_positions(&mut self, x: Var, mask: &[u8]) -> Result<Var> {
        let (b, l, c) = self.dims3(x, "mask_positions")?;
        check_mask(mask, b, l)?;
        let mut out = self.value(x).data().to_vec();
        for (pos, &m) in mask.iter().enumerate() {
            if m == 0 {
                out[pos * c..(pos + 1) * c].fill(T::zero());
            }
        }
        let value = Tensor::new(vec![b, l, c], out)?;
        Ok(self.push(
            value,
            MaskOp {
                x,
                mask: mask.to_vec(),
                channels: c,
            },
        ))
    }

    /// Length-preserving 1-D cross-correlation, zero padded by `(K-1)/2` on
    /// each side. `weight` is `K × Cin × Cout`.
    pub fn conv1d_same(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (b, l, cin) = self.dims3(x, "conv1d_same")?;
        let (k, wcin, cout) = self.dims3(weight, "conv1d_same weight")?;
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv kernel size must be odd, got {k}")));
        }
        if wcin != cin {
            return Err(Error::Shape(format!(
                "conv1d_same: weight expects {wcin} input channels, input has {cin}"
            )));
        }
        self.expect_shape(bias, &[cout], "conv1d_same bias")?;
        let pad = (k - 1) / 2;
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        let bv = self.value(bias).data();
        let mut out = vec![T::zero(); b * l * cout];
        for bi in 0..b {
            for t in 0..l {
                let row = &mut out[(bi * l + t) * cout..(bi * l + t + 1) * cout];
                row.copy_from_slice(bv);
                for kk in 0..k {
                    let Some(src) = (t + kk).checked_sub(pad).filter(|&s| s < l) else {
                        continue;
                    };
                    let x_row = &xv[(bi * l + src) * cin..(bi * l + src + 1) * cin];
                    let w_k = &wv[kk * cin * cout..(kk + 1) * cin * cout];
                    gemm_nn(1, cout, cin, x_row, cin, w_k, cout, row, cout);
                }
            }
        }
        let value = Tensor::new(vec![b, l, cout], out)?;
        Ok(self.push(value, ConvOp { x, weight, bias }))
    }

    /// Concatenates rank-3 tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat of zero tensors".into()));
        };
        let (b, l, _) = self.dims3(first, "concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pb, pl, pc) = self.dims3(p, "concat")?;
            if (pb, pl) != (b, l) {
                return Err(Error::Shape(format!(
                    "concat: {pb}×{pl} part does not match {b}×{l}"
                )));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(b * l * total);
        for pos in 0..b * l {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[pos * w..(pos + 1) * w]);
            }
        }
        let value = Tensor::new(vec![b, l, total], out)?;
        Ok(self.push(
            value,
            ConcatOp {
                parts: parts.to_vec(),
                widths,
            },
        ))
    }

    /// Per-channel normalisation over the batch and length axes.
    ///
    /// In training mode batch statistics are used and returned so the caller
    /// can fold them into `stats`; in eval mode `stats` is used directly.
    /// With a `B × L` mask, training statistics cover unmasked positions only;
    /// masked positions are still normalised with them.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &RunningStats<T>,
        train: bool,
        mask: Option<&[u8]>,
    ) -> Result<(Var, Option<BatchMoments<T>>)> {
        let (b, l, c) = self.dims3(x, "batch_norm")?;
        if let Some(m) = mask {
            check_mask(m, b, l)?;
        }
        let keep = |pos: usize| mask.is_none_or(|m| m[pos] != 0);
        self.expect_shape(gamma, &[c], "batch_norm gamma")?;
        self.expect_shape(beta, &[c], "batch_norm beta")?;
        if stats.mean.len() != c {
            return Err(Error::Shape(format!(
                "batch_norm running stats have {} channels, input has {c}",
                stats.mean.len()
            )));
        }
        let n = (0..b * l).filter(|&p| keep(p)).count();
        let xv = self.value(x).data();
        let eps = T::from_f64(BATCH_NORM_EPS);
        let (mean, var, moments) = if train {
            if n < 2 {
                return Err(Error::Shape(
                    "batch_norm in training mode needs more than one element per channel".into(),
                ));
            }
            let nf = T::from_f64(n as f64);
            let mut mean = vec![T::zero(); c];
            for row in xv.chunks_exact(c).enumerate().filter(|(p, _)| keep(*p)).map(|(_, r)| r) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nf);
            let mut var = vec![T::zero(); c];
            for row in xv.chunks_exact(c).enumerate().filter(|(p, _)| keep(*p)).map(|(_, r)| r) {
                for ch in 0..c {
                    let d = row[ch] - mean[ch];
                    var[ch] += d * d;
                }
            }
            let unbiased = var
                .iter()
                .map(|&s| s / T::from_f64((n - 1) as f64))
                .collect();
            var.iter_mut().for_each(|v| *v /= nf);
            let moments = BatchMoments {
                mean: mean.clone(),
                var: unbiased,
            };
            (mean, var, Some(moments))
        } else {
            if !stats.initialized {
                return Err(Error::Config(
                    "batch_norm eval mode requires running statistics from at least one training step"
                        .into(),
                ));
            }
            (stats.mean.clone(), stats.var.clone(), None)
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks_exact(c) {
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(gv[ch] * h + bv[ch]);
            }
        }
        let value = Tensor::new(vec![b, l, c], out)?;
        let var_out = self.push(
            value,
            BatchNormOp {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
                mask: mask.map(<[u8]>::to_vec),
            },
        );
        Ok((var_out, moments))
    }

    /// Mean over the positions where `mask` is 1, per sample.
    pub fn masked_mean_pool(&mut self, x: Var, mask: &[u8]) -> Result<Var> {
        let (b, l, c) = self.dims3(x, "masked_mean_pool")?;
        check_mask(mask, b, l)?;
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); b * c];
        let mut counts = Vec::with_capacity(b);
        for bi in 0..b {
            let count = mask[bi * l..(bi + 1) * l].iter().filter(|&&m| m != 0).count();
            if count == 0 {
                return Err(Error::Shape(format!("sample {bi} has an all-zero mask")));
            }
            counts.push(count);
            let acc = &mut out[bi * c..(bi + 1) * c];
            for t in 0..l {
                if mask[bi * l + t] != 0 {
                    let row = &xv[(bi * l + t) * c..(bi * l + t + 1) * c];
                    acc.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                }
            }
            let inv = T::one() / T::from_f64(count as f64);
            acc.iter_mut().for_each(|a| *a *= inv);
        }
        let value = Tensor::new(vec![b, c], out)?;
        Ok(self.push(
            value,
            PoolOp {
                x,
                mask: mask.to_vec(),
                counts,
            },
        ))
    }

    /// `activation(x · W + b)` with `W` stored `F × O`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var, activation: Activation) -> Result<Var> {
        let (rows, f) = self.dims2(x, "dense")?;
        let (wf, o) = self.dims2(weight, "dense weight")?;
        if wf != f {
            return Err(Error::Shape(format!(
                "dense: weight expects {wf} features, input has {f}"
            )));
        }
        self.expect_shape(bias, &[o], "dense bias")?;
        let bv = self.value(bias).data();
        let mut out = Vec::with_capacity(rows * o);
        for _ in 0..rows {
            out.extend_from_slice(bv);
        }
        gemm_nn(rows, o, f, self.value(x).data(), f, self.value(weight).data(), o, &mut out, o);
        match activation {
            Activation::None => {}
            Activation::Relu => out.iter_mut().for_each(|v| *v = v.max(T::zero())),
            Activation::Sigmoid => out.iter_mut().for_each(|v| *v = sigmoid(*v)),
        }
        let value = Tensor::new(vec![rows, o], out)?;
        Ok(self.push(
            value,
            DenseOp {
                x,
                weight,
                bias,
                activation,
            },
        ))
    }

    /// Inverted dropout. Returns `x` itself in eval mode or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let scale = T::from_f64(1.0 / (1.0 - rate));
        let keep: Vec<T> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    scale
                }
            })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| v * k)
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(value, DropoutOp { x, keep }))
    }
}

pub(crate) fn check_mask(mask: &[u8], b: usize, l: usize) -> Result<()> {
    if mask.len() != b * l {
        return Err(Error::Shape(format!(
            "mask has {} entries for a {b}×{l} batch",
            mask.len()
        )));
    }
    Ok(())
}

struct EmbeddingOp {
    table: Var,
    indices: Vec<usize>,
    width: usize,
}

impl<T: Real> Operation<T> for EmbeddingOp {
    fn backward(&self, _: &Graph<'_, T>, _: &[T], upstream: &[T], grads: &mut GradBuffers<T>) {
        let e = self.width;
        let dt = grads.slot(self.table);
        for (pos, &i) in self.indices.iter().enumerate() {
            let src = &upstream[pos * e..(pos + 1) * e];
            dt[i * e..(i + 1) * e]
                .iter_mut()
                .zip(src)
                .for_each(|(d, &g)| *d += g);
        }
    }
}

struct MaskOp {
    x: Var,
    mask: Vec<u8>,
    channels: usize,
}

impl<T: Real> Operation<T> for MaskOp {
    fn backward(&self, _: &Graph<'_, T>, _: &[T], upstream: &[T], grads: &mut GradBuffers<T>) {
        let c = self.channels;
        let dx = grads.slot(self.x);
        for (pos, &m) in self.mask.iter().enumerate() {
            if m != 0 {
                dx[pos * c..(pos + 1) * c]
                    .iter_mut()
                    .zip(&upstream[pos * c..(pos + 1) * c])
                    .for_each(|(d, &g)| *d += g);
            }
        }
    }
}

struct ConvOp {
    x: Var,
    weight: Var,
    bias: Var,
}

impl<T: Real> Operation<T> for ConvOp {
    fn backward(&self, graph: &Graph<'_, T>, _: &[T], upstream: &[T], grads: &mut GradBuffers<T>) {
        let (b, l, cin) = graph.dims3(self.x, "").expect("checked in forward");
        let (k, _, cout) = graph.dims3(self.weight, "").expect("checked in forward");
        let pad = (k - 1) / 2;
        let xv = graph.value(self.x).data();
        let wv = graph.value(self.weight).data();

        {
            let db = grads.slot(self.bias);
            for row in upstream.chunks_exact(cout) {
                db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
            }
        }
        {
            let dw = grads.slot(self.weight);
            for bi in 0..b {
                for t in 0..l {
                    let dy = &upstream[(bi * l + t) * cout..(bi * l + t + 1) * cout];
                    for kk in 0..k {
                        let Some(src) = (t + kk).checked_sub(pad).filter(|&s| s < l) else {
                            continue;
                        };
                        let x_row = &xv[(bi * l + src) * cin..(bi * l + src + 1) * cin];
                        let dw_k = &mut dw[kk * cin * cout..(kk + 1) * cin * cout];
                        // outer product x_rowᵀ · dy
                        gemm_tn(cin, cout, 1, x_row, cin, dy, cout, dw_k, cout);
                    }
                }
            }
        }
        let dx = grads.slot(self.x);
        for bi in 0..b {
            for t in 0..l {
                let dy = &upstream[(bi * l + t) * cout..(bi * l + t + 1) * cout];
                for kk in 0..k {
                    let Some(src) = (t + kk).checked_sub(pad).filter(|&s| s < l) else {
                        continue;
                    };
                    let dx_row = &mut dx[(bi * l + src) * cin..(bi * l + src + 1) * cin];
                    let w_k = &wv[kk * cin * cout..(kk + 1) * cin * cout];
                    gemm_nt(1, cin, cout, dy, cout, w_k, cout, dx_row, cin);
                }
            }
        }
    }
}

struct ConcatOp {
    parts: Vec<Var>,
    widths: Vec<usize>,
}

impl<T: Real> Operation<T> for ConcatOp {
    fn backward(&self, _: &Graph<'_, T>, _: &[T], upstream: &[T], grads: &mut GradBuffers<T>) {
        let total: usize = self.widths.iter().sum();
        let positions = upstream.len() / total;
        let mut offset = 0;
        for (&p, &w) in self.parts.iter().zip(&self.widths) {
            let dp = grads.slot(p);
            for pos in 0..positions {
                let src = &upstream[pos * total + offset..pos * total + offset + w];
                dp[pos * w..(pos + 1) * w]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, &g)| *d += g);
            }
            offset += w;
        }
    }
}

struct BatchNormOp<T> {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
    mask: Option<Vec<u8>>,
}

impl<T: Real> Operation<T> for BatchNormOp<T> {
    fn backward(&self, graph: &Graph<'_, T>, _: &[T], upstream: &[T], grads: &mut GradBuffers<T>) {
        let c = self.inv_std.len();
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for (dy, xh) in upstream.chunks_exact(c).zip(self.xhat.chunks_exact(c)) {
            for ch in 0..c {
                sum_dy[ch] += dy[ch];
                sum_dy_xhat[ch] += dy[ch] * xh[ch];
            }
        }
        grads
            .slot(self.gamma)
            .iter_mut()
            .zip(&sum_dy_xhat)
            .for_each(|(d, &g)| *d += g);
        grads
            .slot(self.beta)
            .iter_mut()
            .zip(&sum_dy)
            .for_each(|(d, &g)| *d += g);

        let gv = graph.value(self.gamma).data();
        let dx = grads.slot(self.x);
        if self.train {
            // only positions that fed the statistics see the mean/variance terms
            let in_stats = |pos: usize| self.mask.as_ref().is_none_or(|m| m[pos] != 0);
            let n = (0..upstream.len() / c).filter(|&p| in_stats(p)).count();
            let nf = T::from_f64(n as f64);
            for (pos, (dy, xh)) in upstream
                .chunks_exact(c)
                .zip(self.xhat.chunks_exact(c))
                .enumerate()
            {
                let counted = in_stats(pos);
                for ch in 0..c {
                    let mut g = dy[ch];
                    if counted {
                        g -= (sum_dy[ch] + xh[ch] * sum_dy_xhat[ch]) / nf;
                    }
                    dx[pos * c + ch] += gv[ch] * self.inv_std[ch] * g;
                }
            }
        } else {
            for (pos, dy) in upstream.chunks_exact(c).enumerate() {
                for ch in 0..c {
                    dx[pos * c + ch] += dy[ch] * gv[ch] * self.inv_std[ch];
                }
            }
        }
    }
}

struct PoolOp {
    x: Var,
    mask: Vec<u8>,
    counts: Vec<usize>,
}

impl<T: Real> Operation<T> for PoolOp {
    fn backward(&self, _: &Graph<'_, T>, _: &[T], upstream: &[T], grads: &mut GradBuffers<T>) {
        let b = self.counts.len();
        let c = upstream.len() / b;
        let l = self.mask.len() / b;
        let dx = grads.slot(self.x);
        for bi in 0..b {
            let inv = T::one() / T::from_f64(self.counts[bi] as f64);
            let g = &upstream[bi * c..(bi + 1) * c];
            for t in 0..l {
                if self.mask[bi * l + t] != 0 {
                    dx[(bi * l + t) * c..(bi * l + t + 1) * c]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, &gv)| *d += gv * inv);
                }
            }
        }
    }
}

struct DenseOp {
    x: Var,
    weight: Var,
    bias: Var,
    activation: Activation,
}

impl<T: Real> Operation<T> for DenseOp {
    fn backward(&self, graph: &Graph<'_, T>, output: &[T], upstream: &[T], grads: &mut GradBuffers<T>) {
        let (rows, f) = graph.dims2(self.x, "").expect("checked in forward");
        let o = upstream.len() / rows;
        let xv = graph.value(self.x).data();
        let wv = graph.value(self.weight).data();
        let dpre: Vec<T> = output
            .iter()
            .zip(upstream)
            .map(|(&y, &g)| match self.activation {
                Activation::None => g,
                Activation::Relu if y > T::zero() => g,
                Activation::Relu => T::zero(),
                Activation::Sigmoid => g * y * (T::one() - y),
            })
            .collect();
        {
            let db = grads.slot(self.bias);
            for row in dpre.chunks_exact(o) {
                db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
            }
        }
        gemm_tn(f, o, rows, xv, f, &dpre, o, grads.slot(self.weight), o);
        gemm_nt(rows, f, o, &dpre, o, wv, o, grads.slot(self.x), f);
    }
}

struct DropoutOp<T> {
    x: Var,
    keep: Vec<T>,
}

impl<T: Real> Operation<T> for DropoutOp<T> {
    fn backward(&self, _: &Graph<'_, T>, _: &[T], upstream: &[T], grads: &mut GradBuffers<T>) {
        grads
            .slot(self.x)
            .iter_mut()
            .zip(upstream.iter().zip(&self.keep))
            .for_each(|(d, (&g, &k))| *d += g * k);
    }
}
