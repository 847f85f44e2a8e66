use std::sync::Arc;

use crate::error::{shape_err, GastError, Result};
use crate::tensor::tape::Adjoint;
use crate::tensor::{Real, Tape, Tensor, Var};

struct SoftmaxAdjoint<F> {
    y: Arc<Tensor<F>>,
    width: usize,
}

impl<F: Real> Adjoint<F> for SoftmaxAdjoint<F> {
    fn backward(&self, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let n = self.width;
        let mut dx = vec![F::zero(); g.numel()];
        for ((dx, y), g) in dx.chunks_mut(n).zip(self.y.data().chunks(n)).zip(g.data().chunks(n)) {
            let dot: F = y.iter().zip(g).map(|(&y, &g)| y * g).sum();
            for ((d, &y), &g) in dx.iter_mut().zip(y).zip(g) {
                *d = y * (g - dot);
            }
        }
        vec![Some(Tensor::new(self.y.shape(), dx).unwrap())]
    }
}

/// Row softmax over the last axis restricted to entries where `mask != 0`.
/// `mask`'s shape must be a suffix of the logits' shape and is broadcast over
/// the leading axes.
pub(crate) fn masked_softmax_values<F: Real>(logits: &Tensor<F>, mask: &Tensor<F>) -> Result<Tensor<F>> {
    let ls = logits.shape();
    let ms = mask.shape();
    if ms.is_empty() || ms.len() > ls.len() || ls[ls.len() - ms.len()..] != *ms {
        return shape_err(format!("masked_softmax: mask {ms:?} is not a suffix of {ls:?}"));
    }
    let n = *ls.last().unwrap();
    let mask_rows = mask.numel() / n.max(1);
    for (r, row) in mask.data().chunks(n).enumerate() {
        if row.iter().all(|&m| m == F::zero()) {
            return Err(GastError::EmptyMaskRow(r));
        }
    }
    let mut out = vec![F::zero(); logits.numel()];
    for (r, (o, x)) in out.chunks_mut(n).zip(logits.data().chunks(n)).enumerate() {
        let m = &mask.data()[(r % mask_rows) * n..][..n];
        let mut max = F::neg_infinity();
        for (&x, &m) in x.iter().zip(m) {
            if m != F::zero() && x > max {
                max = x;
            }
        }
        let mut total = F::zero();
        for ((o, &x), &m) in o.iter_mut().zip(x).zip(m) {
            if m != F::zero() {
                *o = (x - max).exp();
                total += *o;
            }
        }
        for v in o.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(ls, out)
}

impl<F: Real> Tape<F> {
    /// Softmax over the last axis; mask-zero positions act as `-inf` and come
    /// out exactly 0.
    pub fn masked_softmax(&mut self, logits: &Var<F>, mask: &Tensor<F>) -> Result<Var<F>> {
        let y = Arc::new(masked_softmax_values(logits.value(), mask)?);
        let width = *logits.shape().last().unwrap();
        let keep = y.clone();
        self.push_lazy("masked_softmax", y, &[logits], || SoftmaxAdjoint { y: keep, width })
    }
}
