//! Window-level training with Amsgrad and exponential learning-rate decay,
//! plus dataset evaluation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{flip_2d, flip_3d, normalize, pad_for_receptive_field, Dataset, Sequence};
use crate::error::{GastError, Result};
use crate::layers::{apply_stat_updates, BN_MOMENTUM};
use crate::metrics::{mpjpe_frames, p_mpjpe_frames};
use crate::model::{GastNet, InferMode, OUTPUT_TO_MM};
use crate::optim::Amsgrad;
use crate::temporal::TemporalMode;
use crate::tensor::{Mode, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub dropout: f64,
    pub seed: u64,
    pub flip_augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 128, epochs: 80, lr0: 0.001, lr_decay: 0.95, dropout: 0.05, seed: 0, flip_augment: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(GastError::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(GastError::Config(format!("lr_decay {} outside (0, 1]", self.lr_decay)));
        }
        if !(self.lr0 >= 0.0) {
            return Err(GastError::Config(format!("learning rate {} is negative", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GastError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

pub fn lr_at_epoch(e: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.lr_decay.powi(e as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's batches, in mm.
    pub train_mpjpe_mm: f64,
    pub eval_mpjpe_mm: Option<f64>,
    pub eval_pmpjpe_mm: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        let mut out = String::from("epoch,lr,train_mpjpe_mm,eval_mpjpe_mm,eval_pmpjpe_mm\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.9},{:.6},{},{}\n",
                e.epoch,
                e.lr,
                e.train_mpjpe_mm,
                opt(e.eval_mpjpe_mm),
                opt(e.eval_pmpjpe_mm)
            ));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub id: String,
    pub frames: usize,
    pub mpjpe_mm: f64,
    pub p_mpjpe_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sequences: Vec<SequenceScore>,
    /// Frame-weighted means over sequences.
    pub mpjpe_mm: f64,
    pub p_mpjpe_mm: f64,
}

/// Layer-by-layer inference on every sequence, scored against its target.
pub fn evaluate(model: &GastNet<f32>, data: &Dataset, flip: bool) -> Result<EvalReport> {
    if !data.has_targets() {
        return Err(GastError::Data("evaluation needs 3D targets for every sequence".into()));
    }
    let mut sequences = Vec::with_capacity(data.samples.len());
    for s in &data.samples {
        let pred = model.infer(&s.input, InferMode::LayerByLayer, flip)?;
        let gt = &s.target.as_ref().expect("checked above").frames;
        sequences.push(SequenceScore {
            id: s.input.id.clone(),
            frames: gt.len(),
            mpjpe_mm: mpjpe_frames(&pred.frames, gt)?,
            p_mpjpe_mm: p_mpjpe_frames(&pred.frames, gt)?,
        });
    }
    let total: usize = sequences.iter().map(|s| s.frames).sum();
    let weighted = |f: fn(&SequenceScore) -> f64| sequences.iter().map(|s| f(s) * s.frames as f64).sum::<f64>() / total as f64;
    Ok(EvalReport { mpjpe_mm: weighted(|s| s.mpjpe_mm), p_mpjpe_mm: weighted(|s| s.p_mpjpe_mm), sequences })
}

/// Padded, normalized inputs `(T + RF − 1, N, 2)` and targets in model units
/// `(T, N, 3)`, both flattened.
struct Prepared {
    inputs: Vec<Vec<f32>>,
    targets: Vec<Vec<f32>>,
    lens: Vec<usize>,
}

fn prepare(model: &GastNet<f32>, data: &Dataset, flipped: bool) -> Result<Prepared> {
    let fm = model.skeleton.flip_map();
    let rf = model.receptive_field();
    let mut p = Prepared { inputs: Vec::new(), targets: Vec::new(), lens: Vec::new() };
    for s in &data.samples {
        let target = s.target.as_ref().ok_or_else(|| GastError::Data(format!("sequence {:?} has no 3D target", s.input.id)))?;
        if s.input.skeleton != model.skeleton.name || s.input.n_joints() != model.skeleton.n_joints {
            return Err(GastError::Config(format!("sequence {:?} does not match the model skeleton", s.input.id)));
        }
        let mut input = normalize(&s.input)?;
        let mut target = target.clone();
        if flipped {
            input = flip_2d(&input, &fm);
            target = flip_3d(&target, &fm);
        }
        let padded = pad_for_receptive_field(&input, rf, model.cfg.causal)?;
        p.inputs.push(padded.frames.iter().flatten().flatten().map(|&v| v as f32).collect());
        p.targets.push(target.frames.iter().flatten().flatten().map(|&v| (v / OUTPUT_TO_MM) as f32).collect());
        p.lens.push(target.frames.len());
    }
    Ok(p)
}

/// Trains `model` in place on every frame of `data`, one strided window per
/// frame; `eval` is scored after each epoch when given.
pub fn train(model: &mut GastNet<f32>, data: &Dataset, eval: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainLog> {
    train_with(model, data, eval, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    model: &mut GastNet<f32>,
    data: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainLog> {
    cfg.validate()?;
    if !data.has_targets() {
        return Err(GastError::Data("training needs 3D targets for every sequence".into()));
    }
    model.set_dropout(cfg.dropout)?;
    let plain = prepare(model, data, false)?;
    let mirrored = if cfg.flip_augment { Some(prepare(model, data, true)?) } else { None };
    let (rf, n) = (model.receptive_field(), model.skeleton.n_joints);
    let windows: Vec<(usize, usize)> =
        plain.lens.iter().enumerate().flat_map(|(s, &len)| (0..len).map(move |t| (s, t))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Amsgrad::<f32>::default();
    let mut log = TrainLog::default();
    let mut order = windows.clone();
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(epoch, cfg);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut count) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len();
            let mut x = vec![0f32; b * 2 * rf * n];
            let mut y = vec![0f32; b * 3 * n];
            for (i, &(s, t)) in batch.iter().enumerate() {
                let src = match &mirrored {
                    Some(m) if rng.gen_bool(0.5) => m,
                    _ => &plain,
                };
                let input = &src.inputs[s][t * n * 2..(t + rf) * n * 2];
                for (k, p) in input.chunks_exact(2).enumerate() {
                    let (tt, j) = (k / n, k % n);
                    x[((i * 2) * rf + tt) * n + j] = p[0];
                    x[((i * 2 + 1) * rf + tt) * n + j] = p[1];
                }
                let target = &src.targets[s][t * n * 3..(t + 1) * n * 3];
                for (j, p) in target.chunks_exact(3).enumerate() {
                    for c in 0..3 {
                        y[(i * 3 + c) * n + j] = p[c];
                    }
                }
            }
            let x = Tensor::new(&[b, 2, rf, n], x)?;
            let y = Tensor::new(&[b, 3, 1, n], y)?;
            let mut tape = Tape::new(Mode::Train, rng.gen());
            let xv = tape.constant(x);
            let pred = model.forward(&mut tape, &xv, TemporalMode::Strided)?;
            let loss = tape.mean_joint_distance(&pred, &y)?;
            drop(pred);
            tape.backward(&loss)?;
            loss_sum += loss.value().item() as f64 * b as f64;
            count += b;
            drop(loss);
            drop(xv);
            let stats = tape.take_stat_updates();
            let grads = tape.into_param_grads();
            let refs: Vec<_> = grads.iter().map(|(id, g)| (*id, g)).collect();
            opt.step(&mut model.params, &refs, lr);
            apply_stat_updates(&mut model.params, stats, BN_MOMENTUM);
        }
        let (eval_mpjpe_mm, eval_pmpjpe_mm) = match eval {
            Some(d) => {
                let r = evaluate(model, d, cfg.flip_augment)?;
                (Some(r.mpjpe_mm), Some(r.p_mpjpe_mm))
            }
            None => (None, None),
        };
        let entry = EpochLog {
            epoch: epoch + 1,
            lr,
            train_mpjpe_mm: loss_sum / count.max(1) as f64 * OUTPUT_TO_MM,
            eval_mpjpe_mm,
            eval_pmpjpe_mm,
        };
        on_epoch(&entry);
        log.epochs.push(entry);
    }
    Ok(log)
}
