//! Amsgrad over the trainable entries of a parameter store.

use crate::tensor::{ParamId, ParamStore, Real, Tensor};

#[derive(Clone, Debug)]
struct Moments<F> {
    m: Vec<F>,
    v: Vec<F>,
    v_hat: Vec<F>,
}

#[derive(Clone, Debug)]
pub struct Amsgrad<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    state: Vec<Option<Moments<F>>>,
}

impl<F: Real> Default for Amsgrad<F> {
    fn default() -> Self {
        Amsgrad::new(0.9, 0.999, 1e-8)
    }
}

impl<F: Real> Amsgrad<F> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Amsgrad { beta1, beta2, eps, step: 0, state: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Running maximum of the second moment for `id`, if it has been updated.
    pub fn v_hat(&self, id: ParamId) -> Option<&[F]> {
        self.state.get(id.index())?.as_ref().map(|s| s.v_hat.as_slice())
    }

    /// One update: `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
    /// `v̂ ← max(v̂, v)`, `p ← p − lr·m̂ / (√v̂ + ε)` with `m̂ = m / (1 − β1^t)`.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[(ParamId, &Tensor<F>)], lr: f64) {
        self.step += 1;
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let (c1, c2) = (F::one() - b1, F::one() - b2);
        let correction = F::of(1.0 - self.beta1.powi(self.step.min(i32::MAX as u64) as i32));
        let (lr, eps) = (F::of(lr), F::of(self.eps));
        if self.state.len() < store.len() {
            self.state.resize_with(store.len(), || None);
        }
        for &(id, g) in grads {
            let p = store.get_mut(id);
            let n = p.numel();
            let st = self.state[id.index()].get_or_insert_with(|| Moments {
                m: vec![F::zero(); n],
                v: vec![F::zero(); n],
                v_hat: vec![F::zero(); n],
            });
            for (i, (pi, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                st.m[i] = b1 * st.m[i] + c1 * gi;
                st.v[i] = b2 * st.v[i] + c2 * gi * gi;
                if st.v[i] > st.v_hat[i] {
                    st.v_hat[i] = st.v[i];
                }
                let m_hat = st.m[i] / correction;
                *pi -= lr * m_hat / (st.v_hat[i].sqrt() + eps);
            }
        }
    }
}
