use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamKind, ParamStore, Real, Tensor};
use crate::error::{GastError, Result};

/// Vector-Jacobian product of one recorded operator.
pub(crate) trait Adjoint<F: Real> {
    /// Gradients for each input in recording order. Entries whose `needs`
    /// flag is false may be `None`.
    fn backward(&self, grad: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>>;
}

/// Handle to a value produced on a [`Tape`].
#[derive(Clone)]
pub struct Var<F> {
    id: usize,
    value: Arc<Tensor<F>>,
    tracked: bool,
}

impl<F: Real> Var<F> {
    pub fn value(&self) -> &Tensor<F> {
        &self.value
    }

    pub fn arc(&self) -> &Arc<Tensor<F>> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    /// Whether gradients flow back through this value.
    pub fn requires_grad(&self) -> bool {
        self.tracked
    }

    pub fn id(&self) -> usize {
        self.id
    }
}

impl<F: Real> std::fmt::Debug for Var<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed by a training-mode batchnorm, applied to the
/// running buffers by the trainer after the step.
#[derive(Clone, Debug)]
pub struct StatUpdate<F> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Tensor<F>,
    /// Unbiased variance.
    pub batch_var: Tensor<F>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackwardStats {
    pub ops_visited: usize,
    pub leaves_updated: usize,
}

struct Record<F> {
    output: usize,
    inputs: Vec<Option<usize>>,
    adjoint: Box<dyn Adjoint<F>>,
    name: &'static str,
}

/// Ordered record of executed operators. Single-threaded; create one per
/// worker.
pub struct Tape<F> {
    next_id: usize,
    recording: bool,
    mode: Mode,
    rng: ChaCha8Rng,
    records: Vec<Record<F>>,
    leaves: Vec<usize>,
    leaf_grads: HashMap<usize, Tensor<F>>,
    params: HashMap<ParamId, Var<F>>,
    param_leaves: Vec<(ParamId, usize)>,
    stat_updates: Vec<StatUpdate<F>>,
}

impl<F: Real> Tape<F> {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Tape {
            next_id: 0,
            recording: true,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            records: Vec::new(),
            leaves: Vec::new(),
            leaf_grads: HashMap::new(),
            params: HashMap::new(),
            param_leaves: Vec::new(),
            stat_updates: Vec::new(),
        }
    }

    /// Eval-mode tape that records nothing; intermediates are freed as soon
    /// as their handles drop.
    pub fn inference() -> Self {
        let mut t = Self::new(Mode::Eval, 0);
        t.recording = false;
        t
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Names of the recorded operators in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.records.iter().map(|r| r.name).collect()
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn fresh_id(&mut self) -> usize {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var<F> {
        self.leaf_arc(Arc::new(value), requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var<F> {
        self.leaf(value, false)
    }

    fn leaf_arc(&mut self, value: Arc<Tensor<F>>, requires_grad: bool) -> Var<F> {
        let id = self.fresh_id();
        let tracked = requires_grad && self.recording;
        if tracked {
            self.leaves.push(id);
        }
        Var { id, value, tracked }
    }

    /// Leaf for a stored parameter; the same handle is returned on every call
    /// while the stored value is unchanged, so shared parameters accumulate
    /// into one gradient.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var<F> {
        let entry = store.entry(id);
        if let Some(v) = self.params.get(&id) {
            if Arc::ptr_eq(&v.value, &entry.value) {
                return v.clone();
            }
        }
        let v = self.leaf_arc(entry.value.clone(), entry.kind == ParamKind::Trainable);
        if v.tracked {
            self.param_leaves.push((id, v.id));
        }
        self.params.insert(id, v.clone());
        v
    }

    pub(crate) fn push(
        &mut self,
        name: &'static str,
        value: Arc<Tensor<F>>,
        inputs: &[&Var<F>],
        adjoint: impl Adjoint<F> + 'static,
    ) -> Result<Var<F>> {
        if !value.all_finite() {
            return Err(GastError::NonFinite(name));
        }
        let id = self.fresh_id();
        let tracked = self.recording && inputs.iter().any(|v| v.tracked);
        if tracked {
            self.records.push(Record {
                output: id,
                inputs: inputs.iter().map(|v| v.tracked.then_some(v.id)).collect(),
                adjoint: Box::new(adjoint),
                name,
            });
        }
        Ok(Var { id, value, tracked })
    }

    /// Like [`push`](Self::push) for operators whose adjoint is only worth
    /// building when something downstream will consume it.
    pub(crate) fn push_lazy<A: Adjoint<F> + 'static>(
        &mut self,
        name: &'static str,
        value: Arc<Tensor<F>>,
        inputs: &[&Var<F>],
        adjoint: impl FnOnce() -> A,
    ) -> Result<Var<F>> {
        if self.recording && inputs.iter().any(|v| v.tracked) {
            self.push(name, value, inputs, adjoint())
        } else {
            self.push(name, value, inputs, NoAdjoint)
        }
    }

    pub(crate) fn record_stats(&mut self, update: StatUpdate<F>) {
        if self.mode == Mode::Train {
            self.stat_updates.push(update);
        }
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate<F>> {
        std::mem::take(&mut self.stat_updates)
    }

    /// Reverse sweep from a scalar `loss`; leaf gradients accumulate across
    /// calls until [`zero_grad`](Self::zero_grad).
    pub fn backward(&mut self, loss: &Var<F>) -> Result<BackwardStats> {
        if !loss.value.is_scalar() {
            return Err(GastError::Backward(format!(
                "loss must be scalar, got shape {:?}",
                loss.shape()
            )));
        }
        if self.records.is_empty() {
            return Err(GastError::Backward("tape is empty".into()));
        }
        if !loss.tracked {
            return Err(GastError::Backward("loss is not connected to any tracked leaf".into()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.next_id];
        grads[loss.id] = Some(Tensor::full(loss.shape(), F::one()));
        let mut visited = 0;
        for rec in self.records.iter().rev() {
            let Some(g) = grads[rec.output].take() else { continue };
            visited += 1;
            let needs: Vec<bool> = rec.inputs.iter().map(Option::is_some).collect();
            let in_grads = rec.adjoint.backward(&g, &needs);
            debug_assert_eq!(in_grads.len(), rec.inputs.len(), "{} adjoint arity", rec.name);
            for (slot, ig) in rec.inputs.iter().zip(in_grads) {
                if let (Some(id), Some(ig)) = (slot, ig) {
                    match &mut grads[*id] {
                        Some(acc) => acc.add_assign(&ig),
                        empty => *empty = Some(ig),
                    }
                }
            }
        }
        let mut leaves_updated = 0;
        for &leaf in &self.leaves {
            if let Some(g) = grads[leaf].take() {
                leaves_updated += 1;
                match self.leaf_grads.get_mut(&leaf) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        self.leaf_grads.insert(leaf, g);
                    }
                }
            }
        }
        Ok(BackwardStats { ops_visited: visited, leaves_updated })
    }

    pub fn grad(&self, v: &Var<F>) -> Option<&Tensor<F>> {
        self.leaf_grads.get(&v.id)
    }

    pub fn param_grad(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.params.get(&id).and_then(|v| self.leaf_grads.get(&v.id))
    }

    /// Gradients of every tracked parameter touched by this tape.
    pub fn param_grads(&self) -> Vec<(ParamId, &Tensor<F>)> {
        self.param_leaves
            .iter()
            .filter_map(|&(pid, vid)| self.leaf_grads.get(&vid).map(|g| (pid, g)))
            .collect()
    }

    /// Consumes the tape, releasing its references to parameter values so
    /// the store can be updated in place.
    pub fn into_param_grads(mut self) -> Vec<(ParamId, Tensor<F>)> {
        let pairs = std::mem::take(&mut self.param_leaves);
        pairs.into_iter().filter_map(|(pid, vid)| self.leaf_grads.remove(&vid).map(|g| (pid, g))).collect()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }
}

struct NoAdjoint;

impl<F: Real> Adjoint<F> for NoAdjoint {
    fn backward(&self, _grad: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        vec![None; needs.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient() {
        let mut tape = Tape::<f64>::new(Mode::Train, 0);
        let x = tape.leaf(Tensor::from_vec(vec![3.0]), true);
        let sq = tape.mul(&x, &x).unwrap();
        let loss = tape.sum(&sq).unwrap();
        let stats = tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&x).unwrap().data(), &[6.0]);
        assert_eq!(stats.ops_visited, tape.len());
        assert_eq!(stats.leaves_updated, 1);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::<f64>::new(Mode::Train, 0);
        let x = tape.leaf(Tensor::from_vec(vec![3.0]), true);
        let sq = tape.mul(&x, &x).unwrap();
        let loss = tape.sum(&sq).unwrap();
        tape.backward(&loss).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&x).unwrap().data(), &[12.0]);
        tape.zero_grad();
        assert!(tape.grad(&x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_and_empty() {
        let mut tape = Tape::<f64>::new(Mode::Train, 0);
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
        assert!(matches!(tape.backward(&x), Err(GastError::Backward(_))));
        let s = tape.leaf(Tensor::scalar(1.0), true);
        assert!(matches!(tape.backward(&s), Err(GastError::Backward(_))));
        let y = tape.relu(&x).unwrap();
        assert!(matches!(tape.backward(&y), Err(GastError::Backward(_))));
    }

    #[test]
    fn inference_tape_records_nothing() {
        let mut tape = Tape::<f32>::inference();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, -2.0]), true);
        let y = tape.relu(&x).unwrap();
        assert!(tape.is_empty());
        assert!(!y.requires_grad());
        assert_eq!(y.value().data(), &[1.0, 0.0]);
    }

    #[test]
    fn every_tracked_leaf_gets_a_gradient() {
        let mut tape = Tape::<f64>::new(Mode::Train, 0);
        let a = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
        let b = tape.leaf(Tensor::from_vec(vec![0.5, -1.0]), true);
        let c = tape.leaf(Tensor::from_vec(vec![4.0, 4.0]), false);
        let ab = tape.mul(&a, &b).unwrap();
        let abc = tape.add(&ab, &c).unwrap();
        let loss = tape.sum(&abc).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&a).unwrap().data(), &[0.5, -1.0]);
        assert_eq!(tape.grad(&b).unwrap().data(), &[1.0, 2.0]);
        assert!(tape.grad(&c).is_none());
    }
}
