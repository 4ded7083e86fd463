//! `key=value` run configuration files.
//!
//! Keys mirror [`GenerationConfig`]. Lines starting with `#` and blank lines
//! are ignored; unknown or repeated keys are errors. Command-line flags are
//! applied after the file through the same [`apply_setting`] entry point.

use std::path::{Path, PathBuf};

use crate::denoiser::ConditionId;
use crate::error::{Error, Result};
use crate::pipeline::GenerationConfig;

pub const CONFIG_KEYS: [&str; 23] = [
    "N",
    "f",
    "s",
    "steps",
    "train_steps",
    "beta_start",
    "beta_end",
    "rope_mode",
    "rope_base",
    "denoiser",
    "checkpoint",
    "condition",
    "seed",
    "mode",
    "decode",
    "latent_dim",
    "frame_dim",
    "temporal_rate",
    "prepend",
    "codec_seed",
    "prior_variance",
    "prior_length_scale",
    "prior_nugget",
];

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
}

/// Sets one configuration field from its textual form.
pub fn apply_setting(cfg: &mut GenerationConfig, key: &str, value: &str) -> Result<()> {
    let v = value.trim();
    match key {
        "N" => cfg.n = parse(key, v)?,
        "f" => cfg.f = parse(key, v)?,
        "s" => cfg.s = parse(key, v)?,
        "steps" => cfg.steps = parse(key, v)?,
        "train_steps" => cfg.train_steps = parse(key, v)?,
        "beta_start" => cfg.beta_start = parse(key, v)?,
        "beta_end" => cfg.beta_end = parse(key, v)?,
        "rope_mode" => cfg.rope_mode = v.parse()?,
        "rope_base" => cfg.rope_base = parse(key, v)?,
        "denoiser" => cfg.denoiser = v.parse()?,
        "checkpoint" => cfg.checkpoint = Some(PathBuf::from(v)),
        "condition" => cfg.condition = ConditionId(parse(key, v)?),
        "seed" => cfg.seed = parse(key, v)?,
        "mode" => cfg.mode = v.parse()?,
        "decode" => cfg.decode = Some(v.parse()?),
        "latent_dim" => cfg.latent_dim = parse(key, v)?,
        "frame_dim" => cfg.frame_dim = parse(key, v)?,
        "temporal_rate" => cfg.temporal_rate = parse(key, v)?,
        "prepend" => cfg.prepend = parse(key, v)?,
        "codec_seed" => cfg.codec_seed = parse(key, v)?,
        "prior_variance" => cfg.prior_variance = parse(key, v)?,
        "prior_length_scale" => cfg.prior_length_scale = parse(key, v)?,
        "prior_nugget" => cfg.prior_nugget = parse(key, v)?,
        other => return Err(Error::config(format!("unknown configuration key `{other}`"))),
    }
    Ok(())
}

/// Parsed configuration file, entries in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfigFile {
    pub entries: Vec<(String, String)>,
}

impl RunConfigFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        parse_run_config(&text)
    }

    pub fn apply(&self, cfg: &mut GenerationConfig) -> Result<()> {
        self.entries
            .iter()
            .try_for_each(|(k, v)| apply_setting(cfg, k, v))
    }
}

pub fn parse_run_config(text: &str) -> Result<RunConfigFile> {
    let mut entries: Vec<(String, String)> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("config line {}: expected key=value", no + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !CONFIG_KEYS.contains(&k) {
            return Err(Error::config(format!(
                "config line {}: unknown key `{k}`",
                no + 1
            )));
        }
        if entries.iter().any(|(e, _)| e == k) {
            return Err(Error::config(format!("config line {}: repeated key `{k}`", no + 1)));
        }
        entries.push((k.to_string(), v.to_string()));
    }
    Ok(RunConfigFile { entries })
}
