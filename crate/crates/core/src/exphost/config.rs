//! `key = value` configuration files. Keys mirror [`TrainConfig`] fields,
//! with the optimizer and dataset fields flattened; `#` starts a comment.

use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::optim::Rule;

pub const KEYS: [&str; 22] = [
    "optimizer",
    "eta",
    "lambda",
    "rho",
    "rho1",
    "rho2",
    "eps",
    "head_eta",
    "epochs",
    "batch_size",
    "input_dim",
    "hidden",
    "n_train",
    "n_val",
    "n_test",
    "separation",
    "clusters",
    "cluster_spread",
    "label_noise",
    "data_seed",
    "normalize_weights",
    "init_scale",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("invalid value {value:?} for {key}"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("invalid value {value:?} for {key}")),
    }
}

/// Sets one field. Returns a message on unknown keys and unparsable values.
pub fn set(cfg: &mut TrainConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    match key {
        "optimizer" => cfg.opt.rule = value.parse::<Rule>().map_err(|e| e.to_string())?,
        "eta" => cfg.opt.eta = parse_num(key, value)?,
        "lambda" => cfg.opt.lambda = parse_num(key, value)?,
        "rho" => cfg.opt.rho = parse_num(key, value)?,
        "rho1" => cfg.opt.rho1 = parse_num(key, value)?,
        "rho2" => cfg.opt.rho2 = parse_num(key, value)?,
        "eps" => cfg.opt.eps = parse_num(key, value)?,
        "head_eta" => cfg.head_eta = parse_num(key, value)?,
        "epochs" => cfg.epochs = parse_num(key, value)?,
        "batch_size" => cfg.batch_size = parse_num(key, value)?,
        "input_dim" => {
            cfg.net.input_dim = parse_num(key, value)?;
            cfg.data.dim = cfg.net.input_dim;
        }
        "hidden" => cfg.net.hidden = parse_num(key, value)?,
        "n_train" => cfg.data.n_train = parse_num(key, value)?,
        "n_val" => cfg.data.n_val = parse_num(key, value)?,
        "n_test" => cfg.data.n_test = parse_num(key, value)?,
        "separation" => cfg.data.separation = parse_num(key, value)?,
        "clusters" => cfg.data.clusters = parse_num(key, value)?,
        "cluster_spread" => cfg.data.cluster_spread = parse_num(key, value)?,
        "label_noise" => cfg.data.label_noise = parse_num(key, value)?,
        "data_seed" => cfg.data_seed = parse_num(key, value)?,
        "normalize_weights" => cfg.normalize_weights = parse_bool(key, value)?,
        "init_scale" => cfg.init_scale = parse_num(key, value)?,
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

/// Applies every assignment in `text` on top of `cfg`; later lines win.
pub fn apply(cfg: &mut TrainConfig, text: &str) -> Result<()> {
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: n + 1, msg };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected `key = value`, got {line:?}")))?;
        set(cfg, key.trim(), value.trim()).map_err(parse_err)?;
    }
    Ok(())
}

pub fn parse(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    apply(&mut cfg, text)?;
    Ok(cfg)
}

/// Canonical rendering, one line per key in [`KEYS`] order. Floats use the
/// shortest representation that parses back exactly.
pub fn render(cfg: &TrainConfig) -> String {
    let values: [String; 22] = [
        cfg.opt.rule.name().to_string(),
        format!("{:?}", cfg.opt.eta),
        format!("{:?}", cfg.opt.lambda),
        format!("{:?}", cfg.opt.rho),
        format!("{:?}", cfg.opt.rho1),
        format!("{:?}", cfg.opt.rho2),
        format!("{:?}", cfg.opt.eps),
        format!("{:?}", cfg.head_eta),
        cfg.epochs.to_string(),
        cfg.batch_size.to_string(),
        cfg.net.input_dim.to_string(),
        cfg.net.hidden.to_string(),
        cfg.data.n_train.to_string(),
        cfg.data.n_val.to_string(),
        cfg.data.n_test.to_string(),
        format!("{:?}", cfg.data.separation),
        cfg.data.clusters.to_string(),
        format!("{:?}", cfg.data.cluster_spread),
        format!("{:?}", cfg.data.label_noise),
        cfg.data_seed.to_string(),
        cfg.normalize_weights.to_string(),
        format!("{:?}", cfg.init_scale),
    ];
    KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
}
