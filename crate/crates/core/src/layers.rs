//! Parameter-holding building blocks shared by the graph and temporal layers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Conv2dSpec, ParamId, ParamKind, ParamStore, Real, StatUpdate, Tape, Tensor, Var};

/// Batchnorm ε.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Registers parameters under a dotted prefix with seeded initialization.
pub struct Init<'a, F> {
    pub store: &'a mut ParamStore<F>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<F: Real> Init<'_, F> {
    pub fn uniform(&mut self, name: String, shape: &[usize], limit: f64) -> ParamId {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| F::of(rng.gen_range(-limit..=limit)));
        self.store.register(name, ParamKind::Trainable, t)
    }

    /// Glorot-uniform for a `(C_out, C_in, k_t, k_n)` convolution weight.
    pub fn conv(&mut self, name: String, c_out: usize, c_in: usize, kt: usize, kn: usize) -> ParamId {
        let rf = (kt * kn) as f64;
        let limit = (6.0 / ((c_in as f64 + c_out as f64) * rf)).sqrt();
        self.uniform(name, &[c_out, c_in, kt, kn], limit)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.store.register(name, ParamKind::Trainable, Tensor::full(shape, F::of(value)))
    }

    pub fn buffer(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.store.register(name, ParamKind::Buffer, Tensor::full(shape, F::of(value)))
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new<F: Real>(init: &mut Init<'_, F>, prefix: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: init.constant(format!("{prefix}.gamma"), &[channels], 1.0),
            beta: init.constant(format!("{prefix}.beta"), &[channels], 0.0),
            running_mean: init.buffer(format!("{prefix}.running_mean"), &[channels], 0.0),
            running_var: init.buffer(format!("{prefix}.running_var"), &[channels], 1.0),
        }
    }

    pub fn forward<F: Real>(&self, ps: &ParamStore<F>, tape: &mut Tape<F>, x: &Var<F>) -> Result<Var<F>> {
        let g = tape.param(ps, self.gamma);
        let b = tape.param(ps, self.beta);
        tape.batchnorm2d(
            x,
            &g,
            &b,
            ps.get(self.running_mean),
            ps.get(self.running_var),
            BN_EPS,
            Some((self.running_mean, self.running_var)),
        )
    }

    /// Batchnorm followed by ReLU.
    pub fn forward_relu<F: Real>(&self, ps: &ParamStore<F>, tape: &mut Tape<F>, x: &Var<F>) -> Result<Var<F>> {
        let y = self.forward(ps, tape, x)?;
        tape.relu(&y)
    }
}

/// Convolution weight without bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
}

impl Conv {
    pub fn new<F: Real>(init: &mut Init<'_, F>, name: String, c_out: usize, c_in: usize, kt: usize) -> Self {
        Conv { weight: init.conv(name, c_out, c_in, kt, 1) }
    }

    pub fn forward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        tape: &mut Tape<F>,
        x: &Var<F>,
        spec: Conv2dSpec,
    ) -> Result<Var<F>> {
        let w = tape.param(ps, self.weight);
        tape.conv2d(x, &w, spec)
    }
}

/// Folds queued batch statistics into the running buffers:
/// `running ← (1 − momentum)·running + momentum·batch`.
pub fn apply_stat_updates<F: Real>(store: &mut ParamStore<F>, updates: Vec<StatUpdate<F>>, momentum: f64) {
    let m = F::of(momentum);
    let keep = F::one() - m;
    for u in updates {
        for (id, batch) in [(u.running_mean, &u.batch_mean), (u.running_var, &u.batch_var)] {
            for (r, &b) in store.get_mut(id).data_mut().iter_mut().zip(batch.data()) {
                *r = keep * *r + m * b;
            }
        }
    }
}
