//! Central finite-difference checks of the reverse-mode gradients at f64.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{GlobalAttention, SemGConv};
use crate::layers::{BatchNorm2d, Init};
use crate::model::{GastNet, GastNetConfig};
use crate::skeleton::build_skeleton;
use crate::temporal::{TemporalBlock, TemporalMode};
use crate::tensor::{Conv2dSpec, Mode, ParamId, ParamKind, ParamStore, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub entries: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of `Σ r ⊙ f(ps)` (fixed random `r`) against
/// central differences for up to `per_tensor` entries of every trainable
/// tensor in `ps`.
pub fn check<Fw>(name: &str, ps: &ParamStore<f64>, mode: Mode, per_tensor: usize, seed: u64, f: Fw) -> Result<GradCheck>
where
    Fw: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tape_seed = rng.gen();
    let probe = f(ps, &mut Tape::new(mode, tape_seed))?;
    let r = Tensor::from_fn(probe.shape(), |_| rng.gen_range(-1.0..1.0));
    let loss = |ps: &ParamStore<f64>| -> Result<(f64, Tape<f64>, Var<f64>)> {
        let mut tape = Tape::new(mode, tape_seed);
        let y = f(ps, &mut tape)?;
        let rv = tape.constant(r.clone());
        let p = tape.mul(&y, &rv)?;
        let l = tape.sum(&p)?;
        Ok((l.value().item(), tape, l))
    };
    let (_, mut tape, l) = loss(ps)?;
    tape.backward(&l)?;
    let ids: Vec<ParamId> = ps.trainable_ids().collect();
    let analytic: Vec<Option<Tensor<f64>>> = ids.iter().map(|&id| tape.param_grad(id).cloned()).collect();
    drop(tape);
    let mut work = ps.clone();
    let (mut worst, mut entries) = (0.0f64, 0);
    for (&id, grad) in ids.iter().zip(&analytic) {
        let n = ps.get(id).numel();
        let picks: Vec<usize> = if n <= per_tensor { (0..n).collect() } else { sample(&mut rng, n, per_tensor).into_vec() };
        for i in picks {
            let x0 = ps.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = x0 + FD_STEP;
            let up = loss(&work)?.0;
            work.get_mut(id).data_mut()[i] = x0 - FD_STEP;
            let down = loss(&work)?.0;
            work.get_mut(id).data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grad.as_ref().map_or(0.0, |g| g.data()[i]);
            worst = worst.max(rel_err(a, numeric));
            entries += 1;
        }
    }
    Ok(GradCheck { name: name.to_string(), max_rel_err: worst, entries })
}

fn noise(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| scale * rng.gen_range(-1.0..1.0))
}

fn store_with(rng: &mut ChaCha8Rng, shapes: &[(&str, &[usize])]) -> (ParamStore<f64>, Vec<ParamId>) {
    let mut ps = ParamStore::new();
    let ids = shapes.iter().map(|(name, s)| ps.register(*name, ParamKind::Trainable, noise(rng, s, 1.0))).collect();
    (ps, ids)
}

/// Every operator and layer type, then the whole model in both temporal modes.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let all = usize::MAX;

    for (name, spec, t) in [("conv2d_dilated", Conv2dSpec::dilated(2), 7), ("conv2d_strided", Conv2dSpec::strided(3), 9)] {
        let (ps, ids) = store_with(&mut rng, &[("x", &[2, 3, t, 4]), ("w", &[5, 3, 3, 1])]);
        out.push(check(name, &ps, Mode::Train, all, seed, |ps, tape| {
            let (x, w) = (tape.param(ps, ids[0]), tape.param(ps, ids[1]));
            tape.conv2d(&x, &w, spec)
        })?);
    }
    let (ps, ids) = store_with(&mut rng, &[("x", &[2, 3, 4, 5]), ("w", &[4, 3, 1, 5])]);
    out.push(check("conv2d_joint_kernel", &ps, Mode::Train, all, seed, |ps, tape| {
        let (x, w) = (tape.param(ps, ids[0]), tape.param(ps, ids[1]));
        tape.conv2d(&x, &w, Conv2dSpec::UNIT)
    })?);

    for (name, mode) in [("batchnorm_train", Mode::Train), ("batchnorm_eval", Mode::Eval)] {
        let mut ps = ParamStore::new();
        let bn = BatchNorm2d::new(&mut Init { store: &mut ps, rng: &mut rng }, "bn", 3);
        ps.set(bn.gamma, noise(&mut rng, &[3], 1.0)).unwrap();
        ps.set(bn.beta, noise(&mut rng, &[3], 1.0)).unwrap();
        ps.set(bn.running_mean, noise(&mut rng, &[3], 0.5)).unwrap();
        ps.set(bn.running_var, Tensor::from_vec(vec![0.5, 1.5, 2.0])).unwrap();
        let x = ps.register("x", ParamKind::Trainable, noise(&mut rng, &[2, 3, 3, 4], 2.0));
        out.push(check(name, &ps, mode, all, seed, |ps, tape| {
            let xv = tape.param(ps, x);
            bn.forward(ps, tape, &xv)
        })?);
    }

    for (name, mode) in [("dropout_eval", Mode::Eval), ("dropout_train", Mode::Train)] {
        let (ps, ids) = store_with(&mut rng, &[("x", &[2, 3, 4, 5])]);
        out.push(check(name, &ps, mode, all, seed, |ps, tape| {
            let x = tape.param(ps, ids[0]);
            tape.dropout(&x, 0.3)
        })?);
    }

    let (ps, ids) = store_with(&mut rng, &[("x", &[2, 3, 4, 5])]);
    out.push(check("relu_leaky_relu", &ps, Mode::Train, all, seed, |ps, tape| {
        let x = tape.param(ps, ids[0]);
        let a = tape.relu(&x)?;
        let b = tape.leaky_relu(&x, 0.2)?;
        tape.concat_channels(&[&a, &b])
    })?);

    let (ps, ids) = store_with(&mut rng, &[("a", &[2, 3, 9, 5]), ("b", &[2, 3, 9, 5]), ("bias", &[3])]);
    out.push(check("add_mul_scale_bias_slice", &ps, Mode::Train, all, seed, |ps, tape| {
        let (a, b, bias) = (tape.param(ps, ids[0]), tape.param(ps, ids[1]), tape.param(ps, ids[2]));
        let s = tape.add(&a, &b)?;
        let p = tape.mul(&s, &a)?;
        let p = tape.scale(&p, 0.7)?;
        let p = tape.bias_channels(&p, &bias)?;
        tape.time_slice(&p, 1, 3, 3)
    })?);

    let (ps, ids) = store_with(&mut rng, &[("a", &[2, 4, 3]), ("b", &[3, 5])]);
    out.push(check("matmul", &ps, Mode::Train, all, seed, |ps, tape| {
        let (a, b) = (tape.param(ps, ids[0]), tape.param(ps, ids[1]));
        tape.matmul(&a, &b)
    })?);

    let g = build_skeleton("h36m17")?;
    let (ps, ids) = store_with(&mut rng, &[("logits", &[3, 17, 17])]);
    let kernel = g.kinematic_kernel.to_tensor();
    out.push(check("masked_softmax", &ps, Mode::Train, all, seed, |ps, tape| {
        let l = tape.param(ps, ids[0]);
        tape.masked_softmax(&l, &kernel)
    })?);

    let (ps, ids) = store_with(&mut rng, &[("x", &[2, 4, 3, 6]), ("adj", &[2, 6, 6]), ("att", &[2, 2, 3, 6, 6])]);
    out.push(check("graph_and_attention_mix", &ps, Mode::Train, all, seed, |ps, tape| {
        let (x, adj, att) = (tape.param(ps, ids[0]), tape.param(ps, ids[1]), tape.param(ps, ids[2]));
        let a = tape.graph_mix(&x, &adj)?;
        let b = tape.attention_mix(&x, &att)?;
        tape.add(&a, &b)
    })?);

    let (ps, ids) = store_with(&mut rng, &[("theta", &[2, 4, 3, 6]), ("phi", &[2, 4, 3, 6]), ("wf", &[2, 4])]);
    out.push(check("attention_logits", &ps, Mode::Train, all, seed, |ps, tape| {
        let (t, p, w) = (tape.param(ps, ids[0]), tape.param(ps, ids[1]), tape.param(ps, ids[2]));
        tape.attention_logits(&t, &p, &w)
    })?);

    let (ps, ids) = store_with(&mut rng, &[("x", &[2, 3, 4, 5])]);
    let target = noise(&mut rng, &[2, 3, 4, 5], 1.0);
    out.push(check("mean_joint_distance", &ps, Mode::Train, all, seed, |ps, tape| {
        let x = tape.param(ps, ids[0]);
        let l = tape.mean_joint_distance(&x, &target)?;
        tape.scale(&l, 1.0)
    })?);

    let mut ps = ParamStore::new();
    let sem = SemGConv::new(&mut Init { store: &mut ps, rng: &mut rng }, "sem", 4, 5, g.kinematic_kernel.clone());
    ps.set(sem.mask, noise(&mut rng, &[5, 17, 17], 1.0)).unwrap();
    let x = ps.register("x", ParamKind::Trainable, noise(&mut rng, &[2, 4, 3, 17], 1.0));
    out.push(check("semgconv", &ps, Mode::Train, 40, seed, |ps, tape| {
        let xv = tape.param(ps, x);
        sem.forward(ps, tape, &xv)
    })?);

    for (name, bk, ck) in [("global_attention_bk", true, false), ("global_attention_ck", false, true), ("global_attention", true, true)] {
        let mut ps = ParamStore::new();
        let ga = GlobalAttention::new(&mut Init { store: &mut ps, rng: &mut rng }, "ga", 6, 2, 17, bk, ck)?;
        if let Some(c) = ga.global_adj {
            ps.set(c, noise(&mut rng, &[2, 17, 17], 0.3)).unwrap();
        }
        let x = ps.register("x", ParamKind::Trainable, noise(&mut rng, &[2, 6, 3, 17], 1.0));
        out.push(check(name, &ps, Mode::Train, 40, seed, |ps, tape| {
            let xv = tape.param(ps, x);
            Ok(ga.mix(ps, tape, &xv)?.0)
        })?);
    }

    for mode in [TemporalMode::Dilated, TemporalMode::Strided] {
        let mut ps = ParamStore::new();
        let tcb = TemporalBlock::new(&mut Init { store: &mut ps, rng: &mut rng }, "tcb", 4, 3, 3, 0.2, false);
        let t = if mode == TemporalMode::Dilated { 9 } else { 6 };
        let x = ps.register("x", ParamKind::Trainable, noise(&mut rng, &[2, 4, t, 5], 1.0));
        let name = if mode == TemporalMode::Dilated { "temporal_block_dilated" } else { "temporal_block_strided" };
        out.push(check(name, &ps, Mode::Train, 40, seed, |ps, tape| {
            let xv = tape.param(ps, x);
            tcb.forward(ps, tape, &xv, mode)
        })?);
    }

    let cfg = GastNetConfig { channels: 4, heads: 2, dropout: 0.1, ..GastNetConfig::new("h36m17", 9) };
    let model = GastNet::<f64>::build(cfg, seed)?;
    let mut ps = model.params.clone();
    for id in ps.trainable_ids().collect::<Vec<_>>() {
        let name = ps.name(id).to_string();
        if name.ends_with(".C") || name.ends_with(".M") {
            let shape = ps.get(id).shape().to_vec();
            ps.set(id, noise(&mut rng, &shape, 0.5)).unwrap();
        }
    }
    for (name, mode, t) in [("model_dilated", TemporalMode::Dilated, 11), ("model_strided", TemporalMode::Strided, 9)] {
        let x = noise(&mut rng, &[2, 2, t, 17], 1.0);
        out.push(check(name, &ps, Mode::Train, 6, seed, |ps, tape| {
            let mut m = model.clone();
            m.params = ps.clone();
            let xv = tape.constant(x.clone());
            m.forward(tape, &xv, mode)
        })?);
    }
    Ok(out)
}
