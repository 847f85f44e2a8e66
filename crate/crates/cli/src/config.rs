//! Layered configuration: flags over config file over defaults.

use std::fs;
use std::path::Path;

use gastnet::train::TrainConfig;
use gastnet::{GastNetConfig, GastError, Result};
use serde::Deserialize;

use crate::{ModelArgs, TrainArgs};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileModel {
    pub skeleton: Option<String>,
    pub receptive_field: Option<usize>,
    pub kernel: Option<usize>,
    pub channels: Option<usize>,
    pub heads: Option<usize>,
    pub causal: Option<bool>,
    pub dropout: Option<f64>,
    pub use_kinematic: Option<bool>,
    pub use_symmetric: Option<bool>,
    pub use_bk: Option<bool>,
    pub use_ck: Option<bool>,
    pub residual_gab: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileTrain {
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub lr0: Option<f64>,
    pub lr_decay: Option<f64>,
    pub seed: Option<u64>,
    pub flip_augment: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub model: FileModel,
    #[serde(default)]
    pub train: FileTrain,
}

pub fn read_file(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| GastError::Config(format!("{}: {e}", p.display())))
        }
        None => Ok(ConfigFile::default()),
    }
}

/// A set flag wins; otherwise the file value; otherwise the default.
fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Boolean switches only ever move away from the default when given.
fn switch(flag_set: bool, flag_value: bool, file: Option<bool>, default: bool) -> bool {
    if flag_set {
        flag_value
    } else {
        file.unwrap_or(default)
    }
}

pub fn model_config(args: &ModelArgs, file: &FileModel) -> Result<GastNetConfig> {
    let skeleton = pick(args.skeleton.clone(), file.skeleton.clone(), "h36m17".to_string());
    let rf = pick(args.rf, file.receptive_field, 27);
    let base = GastNetConfig::new(&skeleton, rf);
    let mut cfg = GastNetConfig {
        kernel: file.kernel.unwrap_or(base.kernel),
        channels: pick(args.channels, file.channels, base.channels),
        heads: pick(args.heads, file.heads, base.heads),
        causal: switch(args.causal, true, file.causal, false),
        dropout: pick(args.dropout, file.dropout, base.dropout),
        ..base
    };
    let a = &mut cfg.ablation;
    a.use_kinematic = switch(args.no_kinematic, false, file.use_kinematic, true);
    a.use_symmetric = switch(args.no_symmetric, false, file.use_symmetric, true);
    a.use_bk = switch(args.no_bk, false, file.use_bk, true);
    a.use_ck = switch(args.no_ck, false, file.use_ck, true);
    a.residual_gab = file.residual_gab.unwrap_or(true);
    cfg.validate()?;
    Ok(cfg)
}

pub fn train_config(args: &TrainArgs, file: &FileTrain, dropout: f64) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        batch_size: pick(args.batch, file.batch_size, d.batch_size),
        epochs: pick(args.epochs, file.epochs, d.epochs),
        lr0: pick(args.lr, file.lr0, d.lr0),
        lr_decay: pick(args.lr_decay, file.lr_decay, d.lr_decay),
        dropout,
        seed: pick(args.seed, file.seed, d.seed),
        flip_augment: switch(args.no_flip, false, file.flip_augment, true),
    };
    cfg.validate()?;
    Ok(cfg)
}
