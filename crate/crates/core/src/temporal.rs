//! Temporal convolution blocks and receptive-field accounting.

use serde::{Deserialize, Serialize};

use crate::error::{GastError, Result};
use crate::layers::{BatchNorm2d, Conv, Init};
use crate::tensor::{Conv2dSpec, ParamStore, Real, Tape, Var};

/// How a temporal convolution addresses frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    /// Dilated convolution over the whole sequence, one output per valid frame.
    Dilated,
    /// Kernel `k` with stride `k`; a full receptive-field window yields one frame.
    Strided,
}

/// `k^(num_blocks+1)`: the input layer (dilation 1) plus blocks with dilation `k^b`.
pub fn receptive_field(k: usize, num_blocks: usize) -> usize {
    k.pow(num_blocks as u32 + 1)
}

/// Input-frame offset of an output frame's residual source. `extent` is
/// `(k-1)·d` in dilated mode and `k-1` in strided mode.
pub(crate) fn crop_start(extent: usize, causal: bool) -> usize {
    if causal {
        extent
    } else {
        extent / 2
    }
}

/// Convolution spec and residual slice for a temporal layer with kernel `k`
/// and dilation `d`.
pub(crate) fn addressing(mode: TemporalMode, k: usize, d: usize) -> (Conv2dSpec, usize) {
    match mode {
        TemporalMode::Dilated => (Conv2dSpec::dilated(d), 1),
        TemporalMode::Strided => (Conv2dSpec::strided(k), k),
    }
}

/// `conv(k, d) → BN → ReLU → conv(1) → BN → ReLU → dropout`, plus the
/// cropped residual.
#[derive(Clone, Debug)]
pub struct TemporalBlock {
    pub conv1: Conv,
    pub bn1: BatchNorm2d,
    pub conv2: Conv,
    pub bn2: BatchNorm2d,
    pub kernel: usize,
    pub dilation: usize,
    pub dropout: f64,
    pub causal: bool,
}

impl TemporalBlock {
    pub fn new<F: Real>(
        init: &mut Init<'_, F>,
        prefix: &str,
        channels: usize,
        kernel: usize,
        dilation: usize,
        dropout: f64,
        causal: bool,
    ) -> Self {
        TemporalBlock {
            conv1: Conv::new(init, format!("{prefix}.conv1.weight"), channels, channels, kernel),
            bn1: BatchNorm2d::new(init, &format!("{prefix}.bn1"), channels),
            conv2: Conv::new(init, format!("{prefix}.conv2.weight"), channels, channels, 1),
            bn2: BatchNorm2d::new(init, &format!("{prefix}.bn2"), channels),
            kernel,
            dilation,
            dropout,
            causal,
        }
    }

    /// Frames consumed by one output in dilated mode.
    pub fn extent(&self) -> usize {
        (self.kernel - 1) * self.dilation + 1
    }

    pub fn forward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        tape: &mut Tape<F>,
        x: &Var<F>,
        mode: TemporalMode,
    ) -> Result<Var<F>> {
        let t = x.shape().get(2).copied().unwrap_or(0);
        let needed = match mode {
            TemporalMode::Dilated => self.extent(),
            TemporalMode::Strided => self.kernel,
        };
        if t < needed {
            return Err(GastError::TooShort { needed, got: t });
        }
        let (spec, step) = addressing(mode, self.kernel, self.dilation);
        let h = self.conv1.forward(ps, tape, x, spec)?;
        let h = self.bn1.forward_relu(ps, tape, &h)?;
        let h = self.conv2.forward(ps, tape, &h, Conv2dSpec::UNIT)?;
        let h = self.bn2.forward_relu(ps, tape, &h)?;
        let h = tape.dropout(&h, self.dropout)?;
        let extent = match mode {
            TemporalMode::Dilated => needed - 1,
            TemporalMode::Strided => self.kernel - 1,
        };
        let res = tape.time_slice(x, crop_start(extent, self.causal), step, h.shape()[2])?;
        tape.add(&h, &res)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Mode, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block(ps: &mut ParamStore<f64>, d: usize, causal: bool) -> TemporalBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        TemporalBlock::new(&mut Init { store: ps, rng: &mut rng }, "temporal1", 4, 3, d, 0.0, causal)
    }

    fn noise(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn run(b: &TemporalBlock, ps: &ParamStore<f64>, x: Tensor<f64>, mode: TemporalMode) -> Result<Tensor<f64>> {
        let mut tape = Tape::inference();
        let xv = tape.constant(x);
        Ok(b.forward(ps, &mut tape, &xv, mode)?.value().clone())
    }

    #[test]
    fn receptive_field_values() {
        assert_eq!(receptive_field(3, 2), 27);
        assert_eq!(receptive_field(3, 4), 243);
        assert_eq!(receptive_field(3, 0), 3);
        assert_eq!(receptive_field(3, 1), 9);
    }

    #[test]
    fn output_length() {
        let mut ps = ParamStore::new();
        let b = block(&mut ps, 3, false);
        let y = run(&b, &ps, noise(&[2, 4, 27, 5], 0), TemporalMode::Dilated).unwrap();
        assert_eq!(y.shape(), &[2, 4, 21, 5]);
        let err = run(&b, &ps, noise(&[1, 4, 6, 5], 0), TemporalMode::Dilated);
        assert!(matches!(err, Err(GastError::TooShort { needed: 7, got: 6 })));
    }

    #[test]
    fn zero_weights_give_center_crop() {
        for causal in [false, true] {
            let mut ps = ParamStore::new();
            let b = block(&mut ps, 3, causal);
            ps.set(b.conv1.weight, Tensor::zeros(&[4, 4, 3, 1])).unwrap();
            let x = noise(&[1, 4, 27, 5], 2);
            let y = run(&b, &ps, x.clone(), TemporalMode::Dilated).unwrap();
            let start = if causal { 6 } else { 3 };
            for idx in 0..y.numel() {
                let (c, t, j) = ((idx / 5) / 21, (idx / 5) % 21, idx % 5);
                assert_eq!(y.data()[idx], x.at(&[0, c, t + start, j]));
            }
        }
    }

    #[test]
    fn causal_ignores_future_frames() {
        let mut ps = ParamStore::new();
        let b = block(&mut ps, 3, true);
        let x = noise(&[1, 4, 20, 5], 3);
        let base = run(&b, &ps, x.clone(), TemporalMode::Dilated).unwrap();
        let mut x2 = x;
        x2.set(&[0, 2, 15, 1], 7.0);
        let moved = run(&b, &ps, x2, TemporalMode::Dilated).unwrap();
        // output t reads inputs t, t+3, t+6; t+6 is the current frame
        for t in 0..14 {
            let changed = (0..4).any(|c| base.at(&[0, c, t, 1]) != moved.at(&[0, c, t, 1]));
            assert_eq!(changed, t == 9 || t == 12, "frame {t}");
            for c in 0..4 {
                for j in [0, 2, 3, 4] {
                    assert_eq!(base.at(&[0, c, t, j]), moved.at(&[0, c, t, j]));
                }
            }
        }
    }

    #[test]
    fn strided_matches_dilated_center() {
        for causal in [false, true] {
            let mut ps = ParamStore::new();
            let b = block(&mut ps, 1, causal);
            let x = noise(&[2, 4, 9, 5], 4);
            let dil = run(&b, &ps, x.clone(), TemporalMode::Dilated).unwrap();
            let str_ = run(&b, &ps, x, TemporalMode::Strided).unwrap();
            assert_eq!(str_.shape(), &[2, 4, 3, 5]);
            for bi in 0..2 {
                for c in 0..4 {
                    for i in 0..3 {
                        for j in 0..5 {
                            let a = dil.at(&[bi, c, 3 * i, j]);
                            assert!((a - str_.at(&[bi, c, i, j])).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dropout_is_active_only_in_training() {
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = TemporalBlock::new(&mut Init { store: &mut ps, rng: &mut rng }, "t", 4, 3, 1, 0.5, false);
        let x = noise(&[2, 4, 9, 5], 5);
        let eval = run(&b, &ps, x.clone(), TemporalMode::Dilated).unwrap();
        let eval2 = run(&b, &ps, x.clone(), TemporalMode::Dilated).unwrap();
        assert_eq!(eval, eval2);
        let mut tape = Tape::new(Mode::Train, 9);
        let xv = tape.constant(x);
        let train = b.forward(&ps, &mut tape, &xv, TemporalMode::Dilated).unwrap();
        assert_eq!(train.shape(), eval.shape());
    }
}
