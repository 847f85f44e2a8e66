//! Spatial layers: the semantic graph convolution over a fixed kernel, the
//! multi-head global attention layer, and the three-stream graph attention
//! block that fuses them.

use serde::{Deserialize, Serialize};

use crate::error::{GastError, Result};
use crate::layers::{BatchNorm2d, Conv, Init};
use crate::skeleton::{AdjacencyMatrix, SkeletonGraph};
use crate::tensor::{Conv2dSpec, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// LeakyReLU slope applied to the attention scores.
pub const ATTENTION_SLOPE: f64 = 0.2;

/// Semantic graph convolution: for every output channel `c`,
/// `y_c = softmax_mask(M_c, kernel) · X · w_c`.
#[derive(Clone, Debug)]
pub struct SemGConv {
    /// `(C_out, C_in, 1, 1)`, i.e. `Wᵀ`.
    pub weight: ParamId,
    /// `(C_out, N, N)` per-channel mask logits.
    pub mask: ParamId,
    pub kernel: AdjacencyMatrix,
}

impl SemGConv {
    pub fn new<F: Real>(init: &mut Init<'_, F>, prefix: &str, c_in: usize, c_out: usize, kernel: AdjacencyMatrix) -> Self {
        let n = kernel.size();
        let limit = (6.0 / (c_in + c_out) as f64).sqrt();
        SemGConv {
            weight: init.uniform(format!("{prefix}.W"), &[c_out, c_in, 1, 1], limit),
            mask: init.constant(format!("{prefix}.M"), &[c_out, n, n], 1.0),
            kernel,
        }
    }

    /// Row-normalized per-channel adjacency `(C_out, N, N)`.
    pub fn adjacency<F: Real>(&self, ps: &ParamStore<F>, tape: &mut Tape<F>) -> Result<Var<F>> {
        let m = tape.param(ps, self.mask);
        tape.masked_softmax(&m, &self.kernel.to_tensor())
    }

    pub fn forward<F: Real>(&self, ps: &ParamStore<F>, tape: &mut Tape<F>, x: &Var<F>) -> Result<Var<F>> {
        let n = self.kernel.size();
        if x.shape().len() != 4 || x.shape()[3] != n {
            return Err(GastError::Shape(format!("SemGConv over {n} joints got {:?}", x.shape())));
        }
        let w = tape.param(ps, self.weight);
        let xw = tape.conv2d(x, &w, Conv2dSpec::UNIT)?;
        let adj = self.adjacency(ps, tape)?;
        tape.graph_mix(&xw, &adj)
    }
}

/// Multi-head global attention: heads `k = 1..K` each compute
/// `(B_k + C_k) · X · W_k` on `C/K` channels and are concatenated.
#[derive(Clone, Debug)]
pub struct GlobalAttention {
    pub heads: usize,
    pub channels: usize,
    /// `θ` for all heads stacked, `(C, C, 1, 1)`; head `k` owns output rows `k·C/K..`.
    pub theta: Option<ParamId>,
    pub phi: Option<ParamId>,
    /// `(K, 2·C/K)` scoring vectors.
    pub score: Option<ParamId>,
    /// `(K, N, N)`, zero-initialized.
    pub global_adj: Option<ParamId>,
    /// `W_k` for all heads stacked, `(C, C, 1, 1)`.
    pub weight: ParamId,
    pub n_joints: usize,
}

impl GlobalAttention {
    pub fn new<F: Real>(
        init: &mut Init<'_, F>,
        prefix: &str,
        channels: usize,
        heads: usize,
        n_joints: usize,
        use_bk: bool,
        use_ck: bool,
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(GastError::Config(format!("{channels} channels not divisible by {heads} heads")));
        }
        if !use_bk && !use_ck {
            return Err(GastError::Config("global attention needs B_k or C_k".into()));
        }
        let d = channels / heads;
        let (theta, phi, score) = if use_bk {
            let t = init.conv(format!("{prefix}.theta"), channels, channels, 1, 1);
            let p = init.conv(format!("{prefix}.phi"), channels, channels, 1, 1);
            let s = init.uniform(format!("{prefix}.wf"), &[heads, 2 * d], (6.0 / (2 * d) as f64).sqrt());
            (Some(t), Some(p), Some(s))
        } else {
            (None, None, None)
        };
        let global_adj = use_ck.then(|| init.constant(format!("{prefix}.C"), &[heads, n_joints, n_joints], 0.0));
        let limit = (6.0 / (channels + d) as f64).sqrt();
        let weight = init.uniform(format!("{prefix}.W"), &[channels, channels, 1, 1], limit);
        Ok(GlobalAttention { heads, channels, theta, phi, score, global_adj, weight, n_joints })
    }

    pub fn uses_bk(&self) -> bool {
        self.score.is_some()
    }

    pub fn uses_ck(&self) -> bool {
        self.global_adj.is_some()
    }

    /// Data-dependent adjacency `B` of shape `(B, K, T, N, N)`; every row sums
    /// to one. `None` when the `B_k` path is disabled.
    pub fn coefficients<F: Real>(&self, ps: &ParamStore<F>, tape: &mut Tape<F>, x: &Var<F>) -> Result<Option<Var<F>>> {
        let (Some(theta), Some(phi), Some(score)) = (self.theta, self.phi, self.score) else {
            return Ok(None);
        };
        self.check(x)?;
        let wt = tape.param(ps, theta);
        let wp = tape.param(ps, phi);
        let wf = tape.param(ps, score);
        let th = tape.conv2d(x, &wt, Conv2dSpec::UNIT)?;
        let ph = tape.conv2d(x, &wp, Conv2dSpec::UNIT)?;
        let e = tape.attention_logits(&th, &ph, &wf)?;
        let e = tape.leaky_relu(&e, ATTENTION_SLOPE)?;
        let all = Tensor::ones(&[self.n_joints, self.n_joints]);
        Ok(Some(tape.masked_softmax(&e, &all)?))
    }

    fn check<F: Real>(&self, x: &Var<F>) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels || s[3] != self.n_joints {
            return Err(GastError::Shape(format!(
                "global attention expects (B, {}, T, {}), got {s:?}",
                self.channels, self.n_joints
            )));
        }
        Ok(())
    }

    /// Pre-normalization output `‖_k (B_k + C_k) X W_k`. Also returns `B` when
    /// that path is active.
    pub fn mix<F: Real>(
        &self,
        ps: &ParamStore<F>,
        tape: &mut Tape<F>,
        x: &Var<F>,
    ) -> Result<(Var<F>, Option<Var<F>>)> {
        self.check(x)?;
        let w = tape.param(ps, self.weight);
        let xw = tape.conv2d(x, &w, Conv2dSpec::UNIT)?;
        let att = self.coefficients(ps, tape, x)?;
        let from_b = match &att {
            Some(b) => Some(tape.attention_mix(&xw, b)?),
            None => None,
        };
        let from_c = match self.global_adj {
            Some(c) => {
                let c = tape.param(ps, c);
                Some(tape.graph_mix(&xw, &c)?)
            }
            None => None,
        };
        let y = match (from_b, from_c) {
            (Some(b), Some(c)) => tape.add(&b, &c)?,
            (Some(v), None) | (None, Some(v)) => v,
            (None, None) => unreachable!("constructor requires one path"),
        };
        Ok((y, att))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    /// SemGConv over `Ã`.
    FirstOrder,
    /// SemGConv over `Ã_s`.
    Symmetric,
    /// SemGConv over `Ã_c`.
    Kinematic,
    Global,
}

impl StreamKind {
    pub fn label(self) -> &'static str {
        match self {
            StreamKind::FirstOrder => "local_first",
            StreamKind::Symmetric => "local_sym",
            StreamKind::Kinematic => "local_kin",
            StreamKind::Global => "global",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockOptions {
    pub streams: Vec<StreamKind>,
    pub heads: usize,
    pub use_bk: bool,
    pub use_ck: bool,
    pub residual: bool,
}

#[derive(Clone, Debug)]
enum StreamLayer {
    Local(SemGConv),
    Global(GlobalAttention),
}

#[derive(Clone, Debug)]
pub struct Stream {
    pub kind: StreamKind,
    layer: StreamLayer,
    bn: BatchNorm2d,
}

/// Enabled streams (each `C → C` with batchnorm + ReLU), channel concat,
/// `1×1` fuse back to `C`, optional residual.
#[derive(Clone, Debug)]
pub struct GraphAttentionBlock {
    pub streams: Vec<Stream>,
    pub fuse: Conv,
    pub channels: usize,
    pub residual: bool,
}

/// Head-averaged attention rows captured during a forward pass.
pub type AttentionSink<F> = Vec<Tensor<F>>;

impl GraphAttentionBlock {
    pub fn new<F: Real>(
        init: &mut Init<'_, F>,
        prefix: &str,
        channels: usize,
        skeleton: &SkeletonGraph,
        opts: &BlockOptions,
    ) -> Result<Self> {
        if opts.streams.is_empty() {
            return Err(GastError::Config("graph attention block with no streams".into()));
        }
        let mut streams = Vec::with_capacity(opts.streams.len());
        for &kind in &opts.streams {
            let p = format!("{prefix}.{}", kind.label());
            let layer = match kind {
                StreamKind::FirstOrder => StreamLayer::Local(SemGConv::new(init, &p, channels, channels, skeleton.adjacency.clone())),
                StreamKind::Symmetric => {
                    StreamLayer::Local(SemGConv::new(init, &p, channels, channels, skeleton.symmetric_kernel.clone()))
                }
                StreamKind::Kinematic => {
                    StreamLayer::Local(SemGConv::new(init, &p, channels, channels, skeleton.kinematic_kernel.clone()))
                }
                StreamKind::Global => StreamLayer::Global(GlobalAttention::new(
                    init,
                    &p,
                    channels,
                    opts.heads,
                    skeleton.n_joints,
                    opts.use_bk,
                    opts.use_ck,
                )?),
            };
            let bn = BatchNorm2d::new(init, &format!("{p}.bn"), channels);
            streams.push(Stream { kind, layer, bn });
        }
        let fuse = Conv::new(init, format!("{prefix}.fuse.weight"), channels, channels * streams.len(), 1);
        Ok(GraphAttentionBlock { streams, fuse, channels, residual: opts.residual })
    }

    pub fn fuse_width(&self) -> usize {
        self.channels * self.streams.len()
    }

    pub fn global(&self) -> Option<&GlobalAttention> {
        self.streams.iter().find_map(|s| match &s.layer {
            StreamLayer::Global(g) => Some(g),
            StreamLayer::Local(_) => None,
        })
    }

    pub fn forward<F: Real>(&self, ps: &ParamStore<F>, tape: &mut Tape<F>, x: &Var<F>) -> Result<Var<F>> {
        self.forward_traced(ps, tape, x, None)
    }

    /// Forward pass that also pushes the head-averaged `B_k`, shaped
    /// `(B, T, N, N)`, into `sink` when a global stream with `B_k` exists.
    pub fn forward_traced<F: Real>(
        &self,
        ps: &ParamStore<F>,
        tape: &mut Tape<F>,
        x: &Var<F>,
        mut sink: Option<&mut AttentionSink<F>>,
    ) -> Result<Var<F>> {
        if self.streams.is_empty() {
            return Err(GastError::Config("graph attention block with no streams".into()));
        }
        let mut outs = Vec::with_capacity(self.streams.len());
        for s in &self.streams {
            let pre = match &s.layer {
                StreamLayer::Local(conv) => conv.forward(ps, tape, x)?,
                StreamLayer::Global(g) => {
                    let (y, att) = g.mix(ps, tape, x)?;
                    if let (Some(sink), Some(att)) = (sink.as_deref_mut(), att) {
                        sink.push(head_average(att.value()));
                    }
                    y
                }
            };
            outs.push(s.bn.forward_relu(ps, tape, &pre)?);
        }
        let refs: Vec<&Var<F>> = outs.iter().collect();
        let cat = if refs.len() == 1 { outs[0].clone() } else { tape.concat_channels(&refs)? };
        let fused = self.fuse.forward(ps, tape, &cat, Conv2dSpec::UNIT)?;
        if self.residual {
            tape.add(&fused, x)
        } else {
            Ok(fused)
        }
    }
}

/// `(B, K, T, N, N) → (B, T, N, N)` mean over heads.
pub fn head_average<F: Real>(att: &Tensor<F>) -> Tensor<F> {
    let s = att.shape();
    let (b, k, rest) = (s[0], s[1], s[2] * s[3] * s[4]);
    let mut out = vec![F::zero(); b * rest];
    let inv = F::one() / F::of(k as f64);
    for bi in 0..b {
        for ki in 0..k {
            let src = &att.data()[(bi * k + ki) * rest..][..rest];
            for (o, &v) in out[bi * rest..(bi + 1) * rest].iter_mut().zip(src) {
                *o += v * inv;
            }
        }
    }
    Tensor::new(&[b, s[2], s[3], s[4]], out).expect("head average shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::build_skeleton;
    use crate::tensor::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_and_rng() -> (ParamStore<f64>, ChaCha8Rng) {
        (ParamStore::new(), ChaCha8Rng::seed_from_u64(3))
    }

    fn noise(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rand::Rng::gen_range(&mut rng, -1.0..1.0))
    }

    #[test]
    fn identity_kernel_keeps_nodes_independent() {
        let (mut ps, mut rng) = store_and_rng();
        let conv = SemGConv::new(&mut Init { store: &mut ps, rng: &mut rng }, "s", 3, 2, AdjacencyMatrix::identity(4));
        ps.set(conv.mask, noise(&[2, 4, 4], 1)).unwrap();
        let x = noise(&[1, 3, 2, 4], 2);
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let base = conv.forward(&ps, &mut tape, &xv).unwrap().value().clone();
        let mut x2 = x.clone();
        x2.set(&[0, 1, 0, 2], 9.0);
        let xv2 = tape.constant(x2);
        let moved = conv.forward(&ps, &mut tape, &xv2).unwrap().value().clone();
        for c in 0..2 {
            for j in 0..4 {
                let changed = base.at(&[0, c, 0, j]) != moved.at(&[0, c, 0, j]);
                assert_eq!(changed, j == 2, "channel {c} joint {j}");
                assert_eq!(base.at(&[0, c, 1, j]), moved.at(&[0, c, 1, j]));
            }
        }
    }

    #[test]
    fn two_node_average() {
        let (mut ps, mut rng) = store_and_rng();
        let mut kernel = AdjacencyMatrix::identity(2);
        kernel.link(0, 1);
        let conv = SemGConv::new(&mut Init { store: &mut ps, rng: &mut rng }, "s", 1, 1, kernel);
        ps.set(conv.weight, Tensor::ones(&[1, 1, 1, 1])).unwrap();
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::new(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap());
        let y = conv.forward(&ps, &mut tape, &x).unwrap();
        assert_eq!(y.value().data(), &[2.0, 2.0]);
    }

    #[test]
    fn zero_input_zero_output() {
        let (mut ps, mut rng) = store_and_rng();
        let g = build_skeleton("h36m17").unwrap();
        let conv = SemGConv::new(&mut Init { store: &mut ps, rng: &mut rng }, "s", 4, 4, g.kinematic_kernel.clone());
        ps.set(conv.mask, noise(&[4, 17, 17], 5)).unwrap();
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::zeros(&[2, 4, 3, 17]));
        assert!(conv.forward(&ps, &mut tape, &x).unwrap().value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_row_shift_invariance() {
        let (mut ps, mut rng) = store_and_rng();
        let g = build_skeleton("h36m17").unwrap();
        let conv = SemGConv::new(&mut Init { store: &mut ps, rng: &mut rng }, "s", 3, 3, g.adjacency.clone());
        let m = noise(&[3, 17, 17], 8);
        ps.set(conv.mask, m.clone()).unwrap();
        let x = noise(&[1, 3, 2, 17], 9);
        let mut tape = Tape::inference();
        let xv = tape.constant(x);
        let a = conv.forward(&ps, &mut tape, &xv).unwrap().value().clone();
        let shifted = Tensor::from_fn(&[3, 17, 17], |i| m.data()[i] + 0.37 * ((i / 17) as f64));
        ps.set(conv.mask, shifted).unwrap();
        let b = conv.forward(&ps, &mut tape, &xv).unwrap().value().clone();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    fn global(use_bk: bool, use_ck: bool, c: usize, k: usize, n: usize) -> (ParamStore<f64>, GlobalAttention) {
        let (mut ps, mut rng) = store_and_rng();
        let g = GlobalAttention::new(&mut Init { store: &mut ps, rng: &mut rng }, "g", c, k, n, use_bk, use_ck).unwrap();
        (ps, g)
    }

    #[test]
    fn identical_nodes_give_uniform_attention() {
        let (ps, g) = global(true, true, 8, 4, 5);
        let mut x = Tensor::zeros(&[2, 8, 3, 5]);
        let col = noise(&[2 * 8 * 3], 4);
        for i in 0..x.numel() {
            x.data_mut()[i] = col.data()[i / 5];
        }
        let mut tape = Tape::inference();
        let xv = tape.constant(x);
        let att = g.coefficients(&ps, &mut tape, &xv).unwrap().unwrap();
        assert_eq!(att.shape(), &[2, 4, 3, 5, 5]);
        for &v in att.value().data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let (ps, g) = global(true, false, 6, 3, 7);
        let mut tape = Tape::inference();
        let xv = tape.constant(noise(&[2, 6, 4, 7], 12).map(|v| 5.0 * v));
        let att = g.coefficients(&ps, &mut tape, &xv).unwrap().unwrap();
        for row in att.value().data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_attention_hand_oracle() {
        // θ = φ = identity, w_f = [1, 0], node features [0], [1]
        let (mut ps, g) = global(true, false, 1, 1, 2);
        ps.set(g.theta.unwrap(), Tensor::ones(&[1, 1, 1, 1])).unwrap();
        ps.set(g.phi.unwrap(), Tensor::ones(&[1, 1, 1, 1])).unwrap();
        ps.set(g.score.unwrap(), Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap()).unwrap();
        let mut tape = Tape::inference();
        let xv = tape.constant(Tensor::new(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap());
        let att = g.coefficients(&ps, &mut tape, &xv).unwrap().unwrap();
        assert_eq!(att.value().data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn zero_ck_leaves_only_bk_path() {
        let (ps, g) = global(true, true, 8, 4, 5);
        let (ps_b, g_b) = global(true, false, 8, 4, 5);
        // same seed and registration order up to C, so θ, φ, w_f agree; copy W over
        let mut ps_b = ps_b;
        ps_b.set(g_b.weight, ps.get(g.weight).as_ref().clone()).unwrap();
        let x = noise(&[1, 8, 2, 5], 21);
        let mut tape = Tape::inference();
        let xv = tape.constant(x);
        let (a, _) = g.mix(&ps, &mut tape, &xv).unwrap();
        let mut tape_b = Tape::inference();
        let xv = tape_b.constant(xv.value().clone());
        let (b, _) = g_b.mix(&ps_b, &mut tape_b, &xv).unwrap();
        assert!(a.value().max_abs_diff(b.value()) < 1e-15);
    }

    #[test]
    fn ck_identity_reduces_to_scaled_projection() {
        let n = 5;
        let (mut ps, g) = global(false, true, 8, 4, n);
        let mut c = Tensor::zeros(&[4, n, n]);
        for k in 0..4 {
            for i in 0..n {
                c.set(&[k, i, i], n as f64);
            }
        }
        ps.set(g.global_adj.unwrap(), c).unwrap();
        let x = noise(&[2, 8, 3, n], 30);
        let mut tape = Tape::inference();
        let xv = tape.constant(x);
        let (y, att) = g.mix(&ps, &mut tape, &xv).unwrap();
        assert!(att.is_none());
        let w = tape.param(&ps, g.weight);
        let xw = tape.conv2d(&xv, &w, Conv2dSpec::UNIT).unwrap();
        let want = xw.value().map(|v| v * n as f64);
        assert!(y.value().max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn ck_receives_gradient() {
        let (ps, g) = global(true, true, 4, 2, 5);
        let mut tape = Tape::new(Mode::Train, 0);
        let xv = tape.constant(noise(&[1, 4, 2, 5], 40));
        let (y, _) = g.mix(&ps, &mut tape, &xv).unwrap();
        let r = tape.constant(noise(&[1, 4, 2, 5], 41));
        let p = tape.mul(&y, &r).unwrap();
        let loss = tape.sum(&p).unwrap();
        tape.backward(&loss).unwrap();
        let grad = tape.param_grad(g.global_adj.unwrap()).unwrap();
        assert!(grad.data().iter().any(|&v| v.abs() > 1e-6));
    }

    #[test]
    fn heads_must_divide_channels() {
        let (mut ps, mut rng) = store_and_rng();
        let r = GlobalAttention::new(&mut Init { store: &mut ps, rng: &mut rng }, "g", 6, 4, 5, true, true);
        assert!(matches!(r, Err(GastError::Config(_))));
    }

    fn block(streams: Vec<StreamKind>) -> Result<(ParamStore<f64>, GraphAttentionBlock)> {
        let (mut ps, mut rng) = store_and_rng();
        let g = build_skeleton("h36m17").unwrap();
        let opts = BlockOptions { streams, heads: 2, use_bk: true, use_ck: true, residual: true };
        let b = GraphAttentionBlock::new(&mut Init { store: &mut ps, rng: &mut rng }, "block0", 4, &g, &opts)?;
        Ok((ps, b))
    }

    #[test]
    fn three_streams_fuse_three_widths() {
        let (ps, b) = block(vec![StreamKind::Kinematic, StreamKind::Symmetric, StreamKind::Global]).unwrap();
        assert_eq!(b.fuse_width(), 12);
        assert_eq!(ps.get(b.fuse.weight).shape(), &[4, 12, 1, 1]);
        assert!(ps.id_of("block0.local_kin.M").is_some());
        assert!(ps.id_of("block0.global.C").is_some());
    }

    #[test]
    fn zero_fuse_is_residual_only() {
        let (mut ps, b) = block(vec![StreamKind::Kinematic, StreamKind::Symmetric, StreamKind::Global]).unwrap();
        ps.set(b.fuse.weight, Tensor::zeros(&[4, 12, 1, 1])).unwrap();
        let x = noise(&[2, 4, 3, 17], 50);
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        assert_eq!(b.forward(&ps, &mut tape, &xv).unwrap().value(), &x);
    }

    #[test]
    fn baseline_has_one_stream_and_empty_is_rejected() {
        let (_, b) = block(vec![StreamKind::FirstOrder]).unwrap();
        assert_eq!(b.streams.len(), 1);
        assert_eq!(b.fuse_width(), 4);
        assert!(matches!(block(vec![]), Err(GastError::Config(_))));
    }

    #[test]
    fn flip_automorphism_commutes_with_local_streams() {
        let g = build_skeleton("h36m17").unwrap();
        let perm = g.flip_map();
        let (mut ps, b) = block(vec![StreamKind::Kinematic, StreamKind::Symmetric]).unwrap();
        // masks must respect the automorphism: M'[c, i, j] = M[c, π(i), π(j)]
        for s in &b.streams {
            let StreamLayer::Local(conv) = &s.layer else { unreachable!() };
            let m = noise(&[4, 17, 17], 60);
            let sym = Tensor::from_fn(&[4, 17, 17], |idx| {
                let (c, i, j) = (idx / 289, (idx / 17) % 17, idx % 17);
                0.5 * (m.at(&[c, i, j]) + m.at(&[c, perm[i], perm[j]]))
            });
            ps.set(conv.mask, sym).unwrap();
        }
        let x = noise(&[1, 4, 2, 17], 61);
        let xf = Tensor::from_fn(x.shape(), |idx| {
            let (rest, j) = (idx / 17, idx % 17);
            x.data()[rest * 17 + perm[j]]
        });
        let mut tape = Tape::inference();
        let xv = tape.constant(x);
        let xfv = tape.constant(xf);
        let y = b.forward(&ps, &mut tape, &xv).unwrap().value().clone();
        let yf = b.forward(&ps, &mut tape, &xfv).unwrap().value().clone();
        for idx in 0..y.numel() {
            let (rest, j) = (idx / 17, idx % 17);
            assert!((yf.data()[idx] - y.data()[rest * 17 + perm[j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn traced_forward_exports_head_average() {
        let (ps, b) = block(vec![StreamKind::Kinematic, StreamKind::Global]).unwrap();
        let mut tape = Tape::inference();
        let xv = tape.constant(noise(&[1, 4, 3, 17], 70));
        let mut sink = Vec::new();
        b.forward_traced(&ps, &mut tape, &xv, Some(&mut sink)).unwrap();
        assert_eq!(sink.len(), 1);
        assert_eq!(sink[0].shape(), &[1, 3, 17, 17]);
        for row in sink[0].data().chunks(17) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
