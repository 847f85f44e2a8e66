use std::fs;
use std::path::Path;
use std::time::Instant;

use gastnet::checkpoint::{read_manifest, save_checkpoint};
use gastnet::data::{synth_dataset_for, Dataset, Pose3DSequence, Sample};
use gastnet::gradcheck::{run_suite, TOLERANCE};
use gastnet::train::{evaluate, train_with};
use gastnet::{GastError, GastNet, InferMode, Result};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{model_config, read_file, train_config};
use crate::manifest::{blob_hash, now, RunManifest};
use crate::{AttentionArgs, EvalArgs, GradcheckArgs, InferArgs, ModeArg, ParamCountArgs, SynthArgs, TrainArgs};

/// Caps rayon's pool at `GAST_THREADS` when set.
pub fn init_threads() {
    if let Some(n) = std::env::var("GAST_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn out_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p)?;
    Ok(())
}

fn mode_of(m: ModeArg) -> InferMode {
    match m {
        ModeArg::Layer => InferMode::LayerByLayer,
        ModeArg::Frame => InferMode::SingleFrame,
    }
}

fn load_model(path: &Path) -> Result<(GastNet<f32>, String)> {
    let bytes = fs::read(path)?;
    let hash = blob_hash(&bytes);
    Ok((gastnet::checkpoint::from_bytes(&bytes)?, hash))
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let ds = synth_dataset_for(&a.skeleton, a.seed, a.sequences, a.frames)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        out_dir(dir)?;
    }
    ds.save(&a.out)?;
    println!("wrote {} sequences x {} frames to {}", a.sequences, a.frames, a.out.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let started = now();
    let file = read_file(a.model.config.as_deref())?;
    let mcfg = model_config(&a.model, &file.model)?;
    let tcfg = train_config(&a, &file.train, mcfg.dropout)?;
    let data = Dataset::load(&a.data)?;
    let eval = a.eval.as_ref().map(Dataset::load).transpose()?;
    let mut model = GastNet::<f32>::build(mcfg.clone(), tcfg.seed)?;
    out_dir(&a.out)?;
    let log = train_with(&mut model, &data, eval.as_ref(), &tcfg, |e| {
        let ev = match (e.eval_mpjpe_mm, e.eval_pmpjpe_mm) {
            (Some(m), Some(p)) => format!("  eval {m:.2} mm  p-mpjpe {p:.2} mm"),
            _ => String::new(),
        };
        println!("epoch {:>3}  lr {:.6}  train {:.2} mm{ev}", e.epoch, e.lr, e.train_mpjpe_mm);
    })?;
    let ckpt = a.out.join("checkpoint.gast");
    save_checkpoint(&model, &ckpt)?;
    fs::write(a.out.join("loss.csv"), log.to_csv())?;
    let last = log.epochs.last();
    RunManifest {
        command: "train".into(),
        config: json!({ "model": mcfg, "train": tcfg }),
        seed: Some(tcfg.seed),
        started_at: started,
        finished_at: now(),
        checkpoint: Some("checkpoint.gast".into()),
        checkpoint_sha256: Some(blob_hash(&fs::read(&ckpt)?)),
        metrics: json!({
            "param_count": model.param_count(),
            "train_mpjpe_mm": last.map(|e| e.train_mpjpe_mm),
            "eval_mpjpe_mm": last.and_then(|e| e.eval_mpjpe_mm),
            "eval_pmpjpe_mm": last.and_then(|e| e.eval_pmpjpe_mm),
        }),
    }
    .write(&a.out)
}

fn infer_all(model: &GastNet<f32>, data: &Dataset, mode: InferMode, flip: bool) -> Result<Vec<Pose3DSequence>> {
    data.samples.par_iter().map(|s| model.infer(&s.input, mode, flip)).collect()
}

/// Frames per second after one warm-up pass.
fn throughput(model: &GastNet<f32>, data: &Dataset, mode: InferMode) -> Result<f64> {
    infer_all(model, data, mode, false)?;
    let t0 = Instant::now();
    infer_all(model, data, mode, false)?;
    Ok(data.total_frames() as f64 / t0.elapsed().as_secs_f64())
}

pub fn infer(a: InferArgs) -> Result<()> {
    let started = now();
    let (model, hash) = load_model(&a.checkpoint)?;
    let data = Dataset::load(&a.data)?;
    let mode = mode_of(a.mode);
    let preds = infer_all(&model, &data, mode, !a.no_flip)?;
    out_dir(&a.out)?;
    let out = Dataset {
        samples: data
            .samples
            .iter()
            .zip(preds)
            .map(|(s, p)| Sample { input: s.input.clone(), target: Some(p) })
            .collect(),
        ..data.clone()
    };
    out.save(a.out.join("predictions.json"))?;
    let mut metrics = json!({ "frames": data.total_frames() });
    if a.timing {
        let layer = throughput(&model, &data, InferMode::LayerByLayer)?;
        let frame = throughput(&model, &data, InferMode::SingleFrame)?;
        println!("layer-by-layer: {layer:.1} frames/s");
        println!("single-frame:   {frame:.1} frames/s");
        metrics["layer_fps"] = json!(layer);
        metrics["frame_fps"] = json!(frame);
    }
    println!("wrote {} sequences to {}", out.samples.len(), a.out.join("predictions.json").display());
    RunManifest {
        command: "infer".into(),
        config: json!({ "model": model.cfg, "mode": format!("{mode:?}"), "flip": !a.no_flip }),
        seed: None,
        started_at: started,
        finished_at: now(),
        checkpoint: Some(a.checkpoint.display().to_string()),
        checkpoint_sha256: Some(hash),
        metrics,
    }
    .write(&a.out)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let started = now();
    let (model, hash) = load_model(&a.checkpoint)?;
    let data = Dataset::load(&a.data)?;
    let report = evaluate(&model, &data, !a.no_flip)?;
    println!("{:<24} {:>7} {:>10} {:>10}", "sequence", "frames", "mpjpe_mm", "pmpjpe_mm");
    for s in &report.sequences {
        println!("{:<24} {:>7} {:>10.3} {:>10.3}", s.id, s.frames, s.mpjpe_mm, s.p_mpjpe_mm);
    }
    let frames: usize = report.sequences.iter().map(|s| s.frames).sum();
    println!("{:<24} {:>7} {:>10.3} {:>10.3}", "all", frames, report.mpjpe_mm, report.p_mpjpe_mm);
    out_dir(&a.out)?;
    fs::write(a.out.join("metrics.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    RunManifest {
        command: "eval".into(),
        config: json!({ "model": model.cfg, "flip": !a.no_flip }),
        seed: None,
        started_at: started,
        finished_at: now(),
        checkpoint: Some(a.checkpoint.display().to_string()),
        checkpoint_sha256: Some(hash),
        metrics: json!({ "mpjpe_mm": report.mpjpe_mm, "p_mpjpe_mm": report.p_mpjpe_mm }),
    }
    .write(&a.out)
}

pub fn export_attention(a: AttentionArgs) -> Result<()> {
    let started = now();
    let (model, hash) = load_model(&a.checkpoint)?;
    let n = model.skeleton.n_joints;
    if a.joint >= n {
        return Err(GastError::Config(format!("joint {} out of range for {} joints", a.joint, n)));
    }
    if !model.cfg.ablation.use_bk {
        return Err(GastError::Config("checkpoint has no B_k attention path".into()));
    }
    let data = Dataset::load(&a.data)?;
    out_dir(&a.out)?;
    let mut files = Vec::new();
    for s in &data.samples {
        let maps = model.attention_maps(&s.input)?;
        let mut csv = format!("block,frame,{}\n", model.skeleton.joint_names.join(","));
        for (b, m) in maps.iter().enumerate() {
            for t in 0..m.shape()[0] {
                let row = &m.data()[(t * n + a.joint) * n..][..n];
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.8}")).collect();
                csv.push_str(&format!("{b},{t},{}\n", cells.join(",")));
            }
        }
        let name = format!("attention_{}_joint{}.csv", s.input.id, a.joint);
        fs::write(a.out.join(&name), csv)?;
        files.push(name);
    }
    println!("wrote {} files to {}", files.len(), a.out.display());
    RunManifest {
        command: "export-attention".into(),
        config: json!({ "model": model.cfg, "joint": a.joint }),
        seed: None,
        started_at: started,
        finished_at: now(),
        checkpoint: Some(a.checkpoint.display().to_string()),
        checkpoint_sha256: Some(hash),
        metrics: json!({ "files": files }),
    }
    .write(&a.out)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let t0 = Instant::now();
    let results = run_suite(a.seed)?;
    let mut failed = Vec::new();
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<28} max rel err {:.3e}  ({} entries)  {verdict}", r.name, r.max_rel_err, r.entries);
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    let worst = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    println!("max rel err {worst:.3e} (tolerance {TOLERANCE:e}) in {:.2}s", t0.elapsed().as_secs_f64());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(GastError::Backward(format!("gradient check failed for: {}", failed.join(", "))))
    }
}

pub fn param_count(a: ParamCountArgs) -> Result<()> {
    if let Some(path) = &a.checkpoint {
        let bytes = fs::read(path)?;
        let (manifest, _) = read_manifest(&bytes)?;
        println!("total {}", manifest.trainable_count());
        return Ok(());
    }
    let file = read_file(a.model.config.as_deref())?;
    let cfg = model_config(&a.model, &file.model)?;
    let model = GastNet::<f32>::build(cfg, 0)?;
    for (module, n) in model.param_count_by_module() {
        println!("{module:<16} {n}");
    }
    println!("total {}", model.param_count());
    Ok(())
}

