use super::{GradBuffers, Graph, Operation, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

impl<'p, T: Real> Graph<'p, T> {
    /// Multi-label binary cross-entropy, summed over labels and averaged over
    /// the batch only:
    ///
    /// `-(1/m) Σ_i Σ_j [y log ŷ + (1 - y) log(1 - ŷ)]`
    pub fn bce_loss(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let m = match *self.shape(pred) {
            [m, _] => m,
            ref s => return Err(Error::Shape(format!("bce_loss expects B×K predictions, got {s:?}"))),
        };
        let pv = self.value(pred).data();
        if target.len() != pv.len() {
            return Err(Error::Shape(format!(
                "bce_loss: {} targets for {} predictions",
                target.len(),
                pv.len()
            )));
        }
        let lo = T::from_f64(BCE_CLAMP);
        let hi = T::one() - lo;
        let mut total = T::zero();
        for (&p, &y) in pv.iter().zip(target) {
            let p = p.max(lo).min(hi);
            total += y * p.ln() + (T::one() - y) * (T::one() - p).ln();
        }
        let loss = -total / T::from_f64(m as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            BceOp {
                pred,
                target: target.to_vec(),
                batch: m,
            },
        ))
    }
}

struct BceOp<T> {
    pred: Var,
    target: Vec<T>,
    batch: usize,
}

impl<T: Real> Operation<T> for BceOp<T> {
    fn backward(&self, graph: &Graph<'_, T>, _: &[T], upstream: &[T], grads: &mut GradBuffers<T>) {
        let lo = T::from_f64(BCE_CLAMP);
        let hi = T::one() - lo;
        let scale = upstream[0] / T::from_f64(self.batch as f64);
        let pv = graph.value(self.pred).data();
        let dp = grads.slot(self.pred);
        for i in 0..pv.len() {
            let (p, y) = (pv[i], self.target[i]);
            if p < lo || p > hi {
                // clamp is flat here
                continue;
            }
            dp[i] += -scale * (y / p - (T::one() - y) / (T::one() - p));
        }
    }
}
