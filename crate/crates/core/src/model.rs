//! The assembled network: input layer, interleaved graph attention and
//! temporal blocks, output head. Also the inference entry points.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{flip_2d, normalize, pad_for_receptive_field, permute, Pose2DSequence, Pose3DSequence, Sequence};
use crate::error::{GastError, Result};
use crate::graph::{AttentionSink, BlockOptions, GraphAttentionBlock, StreamKind};
use crate::layers::{BatchNorm2d, Conv, Init};
use crate::skeleton::{build_skeleton, SkeletonGraph};
use crate::temporal::{addressing, crop_start, TemporalBlock, TemporalMode};
use crate::tensor::{Conv2dSpec, ParamId, ParamKind, ParamStore, Real, Tape, Tensor, Var};

/// Uniform init bound for the output head.
pub const HEAD_INIT_LIMIT: f64 = 0.01;

pub const RECEPTIVE_FIELDS: [usize; 4] = [9, 27, 81, 243];

/// Network outputs are meters; poses are reported in millimeters.
pub const OUTPUT_TO_MM: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub use_kinematic: bool,
    pub use_symmetric: bool,
    pub use_bk: bool,
    pub use_ck: bool,
    pub residual_gab: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation { use_kinematic: true, use_symmetric: true, use_bk: true, use_ck: true, residual_gab: true }
    }
}

impl Ablation {
    /// A single first-order SemGConv stream per block.
    pub fn baseline() -> Self {
        Ablation { use_kinematic: false, use_symmetric: false, use_bk: false, use_ck: false, residual_gab: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GastNetConfig {
    pub skeleton: String,
    pub receptive_field: usize,
    pub kernel: usize,
    pub channels: usize,
    pub heads: usize,
    pub causal: bool,
    pub ablation: Ablation,
    pub dropout: f64,
}

impl GastNetConfig {
    pub fn new(skeleton: &str, receptive_field: usize) -> Self {
        GastNetConfig {
            skeleton: skeleton.to_string(),
            receptive_field,
            kernel: 3,
            channels: Self::default_channels(receptive_field),
            heads: 4,
            causal: false,
            ablation: Ablation::default(),
            dropout: 0.05,
        }
    }

    pub fn default_channels(receptive_field: usize) -> usize {
        match receptive_field {
            81 => 64,
            243 => 32,
            _ => 128,
        }
    }

    /// Number of temporal blocks `B` with `k^(B+1) = receptive_field`.
    pub fn num_blocks(&self) -> Result<usize> {
        let k = self.kernel;
        if k < 3 || k % 2 == 0 {
            return Err(GastError::Config(format!("temporal kernel must be odd and >= 3, got {k}")));
        }
        let mut rf = k;
        let mut blocks = 0;
        while rf < self.receptive_field {
            rf *= k;
            blocks += 1;
        }
        if rf != self.receptive_field || blocks < 1 {
            return Err(GastError::Config(format!(
                "receptive field {} is not {k}^(B+1) for any B >= 1",
                self.receptive_field
            )));
        }
        Ok(blocks)
    }

    pub fn validate(&self) -> Result<()> {
        if !RECEPTIVE_FIELDS.contains(&self.receptive_field) {
            return Err(GastError::Config(format!(
                "receptive field {} is not one of {RECEPTIVE_FIELDS:?}",
                self.receptive_field
            )));
        }
        self.num_blocks()?;
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return Err(GastError::Config(format!(
                "{} channels not divisible by {} heads",
                self.channels, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GastError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        build_skeleton(&self.skeleton)?;
        Ok(())
    }

    pub fn streams(&self) -> Vec<StreamKind> {
        let a = &self.ablation;
        let mut s = vec![if a.use_kinematic { StreamKind::Kinematic } else { StreamKind::FirstOrder }];
        if a.use_symmetric {
            s.push(StreamKind::Symmetric);
        }
        if a.use_bk || a.use_ck {
            s.push(StreamKind::Global);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InferMode {
    /// One dilated pass over the padded sequence.
    #[serde(rename = "layer")]
    LayerByLayer,
    /// One strided pass per output frame.
    #[serde(rename = "frame")]
    SingleFrame,
}

impl InferMode {
    pub fn temporal(self) -> TemporalMode {
        match self {
            InferMode::LayerByLayer => TemporalMode::Dilated,
            InferMode::SingleFrame => TemporalMode::Strided,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GastNet<F> {
    pub cfg: GastNetConfig,
    pub skeleton: SkeletonGraph,
    pub params: ParamStore<F>,
    input_bn: BatchNorm2d,
    input_conv: Conv,
    input_conv_bn: BatchNorm2d,
    gabs: Vec<GraphAttentionBlock>,
    tcbs: Vec<TemporalBlock>,
    head: Conv,
    head_bias: ParamId,
}

impl<F: Real> GastNet<F> {
    /// Seeded construction; equal seeds give bit-identical parameters.
    pub fn build(cfg: GastNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let skeleton = build_skeleton(&cfg.skeleton)?;
        let nb = cfg.num_blocks()?;
        let (c, k) = (cfg.channels, cfg.kernel);
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { store: &mut params, rng: &mut rng };
        let opts = BlockOptions {
            streams: cfg.streams(),
            heads: cfg.heads,
            use_bk: cfg.ablation.use_bk,
            use_ck: cfg.ablation.use_ck,
            residual: cfg.ablation.residual_gab,
        };
        let input_bn = BatchNorm2d::new(&mut init, "input_bn", 2);
        let input_conv = Conv::new(&mut init, "input_conv.weight".into(), c, 2, k);
        let input_conv_bn = BatchNorm2d::new(&mut init, "input_conv.bn", c);
        let mut gabs = vec![GraphAttentionBlock::new(&mut init, "block0", c, &skeleton, &opts)?];
        let mut tcbs = Vec::with_capacity(nb);
        for b in 1..=nb {
            let d = k.pow(b as u32);
            tcbs.push(TemporalBlock::new(&mut init, &format!("temporal{b}"), c, k, d, cfg.dropout, cfg.causal));
            gabs.push(GraphAttentionBlock::new(&mut init, &format!("block{b}"), c, &skeleton, &opts)?);
        }
        // near-zero start keeps early predictions at the root
        let head = Conv { weight: init.uniform("head.weight".into(), &[3, c, 1, 1], HEAD_INIT_LIMIT) };
        let head_bias = init.constant("head.bias".into(), &[3], 0.0);
        Ok(GastNet { cfg, skeleton, params, input_bn, input_conv, input_conv_bn, gabs, tcbs, head, head_bias })
    }

    /// Dropout rate of every temporal block.
    pub fn set_dropout(&mut self, p: f64) -> Result<()> {
        if !(0.0..1.0).contains(&p) {
            return Err(GastError::Config(format!("dropout {p} outside [0, 1)")));
        }
        self.cfg.dropout = p;
        self.tcbs.iter_mut().for_each(|t| t.dropout = p);
        Ok(())
    }

    pub fn receptive_field(&self) -> usize {
        self.cfg.receptive_field
    }

    pub fn graph_blocks(&self) -> &[GraphAttentionBlock] {
        &self.gabs
    }

    pub fn temporal_blocks(&self) -> &[TemporalBlock] {
        &self.tcbs
    }

    /// Same architecture and values at another precision.
    pub fn cast<G: Real>(&self) -> GastNet<G> {
        GastNet {
            cfg: self.cfg.clone(),
            skeleton: self.skeleton.clone(),
            params: self.params.cast(),
            input_bn: self.input_bn.clone(),
            input_conv: self.input_conv.clone(),
            input_conv_bn: self.input_conv_bn.clone(),
            gabs: self.gabs.clone(),
            tcbs: self.tcbs.clone(),
            head: self.head.clone(),
            head_bias: self.head_bias,
        }
    }

    /// `(B, 2, T, N)` normalized keypoints to `(B, 3, T', N)` meters, where
    /// `T' = T − RF + 1` (dilated) or `T / RF` (strided, `T` a multiple of RF).
    pub fn forward(&self, tape: &mut Tape<F>, x: &Var<F>, mode: TemporalMode) -> Result<Var<F>> {
        self.forward_traced(tape, x, mode, None)
    }

    pub fn forward_traced(
        &self,
        tape: &mut Tape<F>,
        x: &Var<F>,
        mode: TemporalMode,
        mut sink: Option<&mut AttentionSink<F>>,
    ) -> Result<Var<F>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 2 || s[3] != self.skeleton.n_joints {
            return Err(GastError::Shape(format!(
                "model expects (B, 2, T, {}), got {s:?}",
                self.skeleton.n_joints
            )));
        }
        if s[2] < self.receptive_field() {
            return Err(GastError::TooShort { needed: self.receptive_field(), got: s[2] });
        }
        let ps = &self.params;
        let h = self.input_bn.forward(ps, tape, x)?;
        let (spec, _) = addressing(mode, self.cfg.kernel, 1);
        let h = self.input_conv.forward(ps, tape, &h, spec)?;
        let h = self.input_conv_bn.forward_relu(ps, tape, &h)?;
        let mut h = self.gabs[0].forward_traced(ps, tape, &h, sink.as_deref_mut())?;
        for (tcb, gab) in self.tcbs.iter().zip(&self.gabs[1..]) {
            h = tcb.forward(ps, tape, &h, mode)?;
            h = gab.forward_traced(ps, tape, &h, sink.as_deref_mut())?;
        }
        let y = self.head.forward(ps, tape, &h, Conv2dSpec::UNIT)?;
        let bias = tape.param(ps, self.head_bias);
        tape.bias_channels(&y, &bias)
    }

    /// Eval-mode forward without recording.
    pub fn predict(&self, x: Tensor<F>, mode: TemporalMode) -> Result<Tensor<F>> {
        let mut tape = Tape::inference();
        let xv = tape.constant(x);
        let y = self.forward(&mut tape, &xv, mode)?;
        Ok(Tensor::clone(y.value()))
    }

    fn check_sequence(&self, seq: &Pose2DSequence) -> Result<Pose2DSequence> {
        if seq.skeleton != self.skeleton.name {
            return Err(GastError::Config(format!(
                "sequence skeleton {:?} does not match model skeleton {:?}",
                seq.skeleton, self.skeleton.name
            )));
        }
        if seq.is_empty() {
            return Err(GastError::Data(format!("sequence {:?} is empty", seq.id)));
        }
        if seq.frames.iter().any(|f| f.len() != self.skeleton.n_joints) {
            return Err(GastError::Data(format!(
                "sequence {:?} does not have {} joints per frame",
                seq.id, self.skeleton.n_joints
            )));
        }
        normalize(seq)
    }

    /// Root-relative 3D poses in mm, one per input frame.
    pub fn infer_sequence(&self, seq: &Pose2DSequence, mode: InferMode) -> Result<Pose3DSequence> {
        let seq = self.check_sequence(seq)?;
        let padded = pad_for_receptive_field(&seq, self.receptive_field(), self.cfg.causal)?;
        let frames = match mode {
            InferMode::LayerByLayer => {
                let y = self.predict(frames_to_input(&padded.frames), TemporalMode::Dilated)?;
                output_to_frames(&y)
            }
            InferMode::SingleFrame => {
                let rf = self.receptive_field();
                let mut out = Vec::with_capacity(seq.len());
                for t in 0..seq.len() {
                    let y = self.predict(frames_to_input(&padded.frames[t..t + rf]), TemporalMode::Strided)?;
                    out.extend(output_to_frames(&y));
                }
                out
            }
        };
        Ok(Pose3DSequence { id: seq.id.clone(), skeleton: seq.skeleton.clone(), fps: seq.fps, frames })
    }

    /// Average of the direct prediction and the mirrored-back prediction of
    /// the mirrored input.
    pub fn infer_flip(&self, seq: &Pose2DSequence, mode: InferMode) -> Result<Pose3DSequence> {
        let seq = self.check_sequence(seq)?;
        let fm = self.skeleton.flip_map();
        let direct = self.infer_sequence(&seq, mode)?;
        let mirrored = self.infer_sequence(&flip_2d(&seq, &fm), mode)?;
        let mut out = direct;
        for (f, m) in out.frames.iter_mut().zip(&mirrored.frames) {
            let back = permute(m, &fm);
            for (p, q) in f.iter_mut().zip(&back) {
                *p = [0.5 * (p[0] - q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2])];
            }
        }
        Ok(out)
    }

    pub fn infer(&self, seq: &Pose2DSequence, mode: InferMode, flip: bool) -> Result<Pose3DSequence> {
        if flip {
            self.infer_flip(seq, mode)
        } else {
            self.infer_sequence(seq, mode)
        }
    }

    /// Head-averaged `B_k` per graph attention block, each `(T, N, N)` and
    /// aligned to the input frames. Empty when the model has no `B_k` path.
    pub fn attention_maps(&self, seq: &Pose2DSequence) -> Result<Vec<Tensor<F>>> {
        let seq = self.check_sequence(seq)?;
        let padded = pad_for_receptive_field(&seq, self.receptive_field(), self.cfg.causal)?;
        let mut tape = Tape::inference();
        let x = tape.constant(frames_to_input(&padded.frames));
        let mut sink = Vec::new();
        self.forward_traced(&mut tape, &x, TemporalMode::Dilated, Some(&mut sink))?;
        let (t, n) = (seq.len(), self.skeleton.n_joints);
        let mut out = Vec::with_capacity(sink.len());
        for (b, att) in sink.iter().enumerate() {
            let offset: usize = self.tcbs[b..].iter().map(|tcb| crop_start(tcb.extent() - 1, self.cfg.causal)).sum();
            let frame = n * n;
            let data = att.data()[offset * frame..(offset + t) * frame].to_vec();
            out.push(Tensor::new(&[t, n, n], data)?);
        }
        Ok(out)
    }

    /// Sum of trainable element counts.
    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// Trainable counts grouped by the first segment of the parameter name,
    /// in construction order.
    pub fn param_count_by_module(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for e in self.params.entries().iter().filter(|e| e.kind == ParamKind::Trainable) {
            let module = e.name.split('.').next().unwrap_or(&e.name);
            match out.last_mut() {
                Some((m, n)) if m == module => *n += e.value.numel(),
                _ => out.push((module.to_string(), e.value.numel())),
            }
        }
        out
    }

    /// Frame-by-frame causal inference with a ring buffer of the last RF frames.
    pub fn stream(&self) -> Result<CausalStream<'_, F>> {
        if !self.cfg.causal {
            return Err(GastError::Config("streaming inference needs a causal model".into()));
        }
        Ok(CausalStream { model: self, window: VecDeque::with_capacity(self.receptive_field()) })
    }
}

/// `[t][j] = [x, y]` frames to a `(1, 2, T, N)` input.
pub fn frames_to_input<F: Real>(frames: &[Vec<[f64; 2]>]) -> Tensor<F> {
    let (t, n) = (frames.len(), frames.first().map_or(0, Vec::len));
    Tensor::from_fn(&[1, 2, t, n], |i| {
        let (c, rest) = (i / (t * n), i % (t * n));
        F::of(frames[rest / n][rest % n][c])
    })
}

/// `(B, 3, T, N)` meters to `B·T` frames in mm. The root is whatever the
/// head predicts; training pulls it toward the origin.
pub fn output_to_frames<F: Real>(y: &Tensor<F>) -> Vec<Vec<[f64; 3]>> {
    let s = y.shape();
    let (b, t, n) = (s[0], s[2], s[3]);
    let mut out = Vec::with_capacity(b * t);
    for bi in 0..b {
        for ti in 0..t {
            out.push(
                (0..n)
                    .map(|j| {
                        let at = |c: usize| y.data()[((bi * 3 + c) * t + ti) * n + j].as_f64() * OUTPUT_TO_MM;
                        [at(0), at(1), at(2)]
                    })
                    .collect(),
            );
        }
    }
    out
}

pub struct CausalStream<'a, F> {
    model: &'a GastNet<F>,
    window: VecDeque<Vec<[f64; 2]>>,
}

impl<F: Real> CausalStream<'_, F> {
    /// Feeds one normalized frame and returns its pose in mm. Before the
    /// window fills, the first frame stands in for the missing past.
    pub fn push(&mut self, frame: &[[f64; 2]]) -> Result<Vec<[f64; 3]>> {
        let m = self.model;
        if frame.len() != m.skeleton.n_joints {
            return Err(GastError::Data(format!("frame has {} joints, model expects {}", frame.len(), m.skeleton.n_joints)));
        }
        let rf = m.receptive_field();
        if self.window.is_empty() {
            self.window.extend(std::iter::repeat(frame.to_vec()).take(rf - 1));
        } else {
            self.window.pop_front();
        }
        self.window.push_back(frame.to_vec());
        let frames: Vec<Vec<[f64; 2]>> = self.window.iter().cloned().collect();
        let y = m.predict(frames_to_input(&frames), TemporalMode::Strided)?;
        Ok(output_to_frames(&y).remove(0))
    }

    pub fn reset(&mut self) {
        self.window.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;
    use rand::Rng;

    fn small(rf: usize) -> GastNetConfig {
        GastNetConfig { channels: 8, heads: 2, ..GastNetConfig::new("h36m17", rf) }
    }

    #[test]
    fn block_counts_and_output_shape() {
        let m = GastNet::<f32>::build(small(27), 0).unwrap();
        assert_eq!(m.temporal_blocks().len(), 2);
        assert_eq!(m.graph_blocks().len(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_fn(&[4, 2, 27, 17], |_| rng.gen_range(-1.0f32..1.0));
        assert_eq!(m.predict(x, TemporalMode::Strided).unwrap().shape(), &[4, 3, 1, 17]);
        let m243 = GastNet::<f32>::build(small(243), 0).unwrap();
        assert_eq!(m243.temporal_blocks().len(), 4);
    }

    #[test]
    fn config_validation() {
        for rf in [28, 3, 729, 10] {
            assert!(GastNet::<f32>::build(small(rf), 0).is_err(), "rf {rf}");
        }
        let mut c = small(27);
        c.heads = 3;
        assert!(matches!(GastNet::<f32>::build(c, 0), Err(GastError::Config(_))));
        let mut c = small(81);
        c.kernel = 9;
        assert_eq!(GastNet::<f32>::build(c, 0).unwrap().temporal_blocks().len(), 1);
        assert_eq!(GastNetConfig::new("h36m17", 81).channels, 64);
        assert_eq!(GastNetConfig::new("h36m17", 243).channels, 32);
        assert_eq!(GastNetConfig::new("h36m17", 9).channels, 128);
    }

    #[test]
    fn equal_seeds_give_equal_parameters() {
        let a = GastNet::<f32>::build(small(27), 42).unwrap();
        let b = GastNet::<f32>::build(small(27), 42).unwrap();
        let c = GastNet::<f32>::build(small(27), 43).unwrap();
        let vals = |m: &GastNet<f32>| m.params.entries().iter().flat_map(|e| e.value.data().to_vec()).collect::<Vec<_>>();
        assert_eq!(vals(&a).iter().map(|v| v.to_bits()).collect::<Vec<_>>(), vals(&b).iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_ne!(vals(&a), vals(&c));
    }

    #[test]
    fn baseline_is_one_first_order_stream() {
        let mut c = small(9);
        c.ablation = Ablation::baseline();
        let m = GastNet::<f32>::build(c, 0).unwrap();
        for g in m.graph_blocks() {
            assert_eq!(g.streams.len(), 1);
            assert_eq!(g.streams[0].kind, StreamKind::FirstOrder);
        }
        assert!(m.params.id_of("block0.local_first.M").is_some());
    }

    #[test]
    fn param_counts() {
        let m = GastNet::<f32>::build(GastNetConfig::new("h36m17", 27), 0).unwrap();
        let total: usize = m.params.entries().iter().filter(|e| e.kind == ParamKind::Trainable).map(|e| e.value.numel()).sum();
        assert_eq!(m.param_count(), total);
        assert_eq!(m.param_count_by_module().iter().map(|(_, n)| n).sum::<usize>(), total);
        let m243 = GastNet::<f32>::build(GastNetConfig::new("h36m17", 243), 0).unwrap();
        assert!(m.param_count() > m243.param_count());
        let wide = GastNet::<f32>::build(GastNetConfig { channels: 16, ..small(27) }, 0).unwrap();
        assert!(wide.param_count() > GastNet::<f32>::build(small(27), 0).unwrap().param_count());
    }

    fn seq_of(t: usize, seed: u64) -> Pose2DSequence {
        synth_dataset(seed, 1, t).samples.remove(0).input
    }

    #[test]
    fn modes_agree() {
        let m = GastNet::<f32>::build(small(27), 3).unwrap();
        let seq = seq_of(12, 0);
        let a = m.infer_sequence(&seq, InferMode::LayerByLayer).unwrap();
        let b = m.infer_sequence(&seq, InferMode::SingleFrame).unwrap();
        assert_eq!(a.frames.len(), 12);
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            for (p, q) in fa.iter().zip(fb) {
                for k in 0..3 {
                    assert!((p[k] - q[k]).abs() < 1e-2, "{p:?} {q:?}");
                }
            }
        }
    }

    #[test]
    fn constant_input_constant_output() {
        let m = GastNet::<f64>::build(small(9), 5).unwrap();
        let mut seq = seq_of(1, 1);
        seq.frames = vec![seq.frames[0].clone(); 20];
        let out = m.infer_sequence(&seq, InferMode::LayerByLayer).unwrap();
        for f in &out.frames {
            assert_eq!(f, &out.frames[0]);
        }
    }

    #[test]
    fn one_frame_sequence() {
        let m = GastNet::<f32>::build(small(27), 3).unwrap();
        let out = m.infer_sequence(&seq_of(1, 2), InferMode::LayerByLayer).unwrap();
        assert_eq!(out.frames.len(), 1);
        let mut empty = seq_of(1, 2);
        empty.frames.clear();
        assert!(m.infer_sequence(&empty, InferMode::LayerByLayer).is_err());
        let mut other = seq_of(1, 2);
        other.skeleton = "humaneva15".into();
        assert!(matches!(m.infer_sequence(&other, InferMode::LayerByLayer), Err(GastError::Config(_))));
    }

    #[test]
    fn attention_maps_per_block() {
        let m = GastNet::<f64>::build(small(27), 3).unwrap();
        let maps = m.attention_maps(&seq_of(5, 3)).unwrap();
        assert_eq!(maps.len(), 3);
        for a in &maps {
            assert_eq!(a.shape(), &[5, 17, 17]);
            for row in a.data().chunks(17) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let mut c = small(27);
        c.ablation.use_bk = false;
        assert!(GastNet::<f64>::build(c, 0).unwrap().attention_maps(&seq_of(5, 3)).unwrap().is_empty());
    }

    #[test]
    fn stream_matches_causal_batch() {
        let mut c = small(9);
        c.causal = true;
        let m = GastNet::<f64>::build(c, 8).unwrap();
        let seq = normalize(&seq_of(15, 4)).unwrap();
        let batch = m.infer_sequence(&seq, InferMode::LayerByLayer).unwrap();
        let mut s = m.stream().unwrap();
        for (t, f) in seq.frames.iter().enumerate() {
            let p = s.push(f).unwrap();
            for (a, b) in p.iter().zip(&batch.frames[t]) {
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() < 1e-9);
                }
            }
        }
        assert!(GastNet::<f64>::build(small(9), 0).unwrap().stream().is_err());
    }
}
