use std::path::PathBuf;

use clap::Args;
use loopgen::io::{apply_setting, RunConfigFile};
use loopgen::{Error, GenerationConfig, Result};

/// Generation settings: an optional config file, then flags on top.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// `key=value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of latents in the sequence.
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// Denoiser context length.
    #[arg(long)]
    pub f: Option<usize>,
    /// Window shift per denoising step.
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// DDIM steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// `oracle` or `toy`.
    #[arg(long)]
    pub denoiser: Option<String>,
    /// Toy model checkpoint (required with `--denoiser toy`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// `fixed` or `shifted`.
    #[arg(long = "rope-mode")]
    pub rope_mode: Option<String>,
    /// `loop` or `long`.
    #[arg(long)]
    pub mode: Option<String>,
    /// `direct` or `frame-invariant`.
    #[arg(long)]
    pub decode: Option<String>,
    #[arg(long)]
    pub condition: Option<usize>,
    /// Any configuration key, as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<GenerationConfig> {
        let mut cfg = GenerationConfig::default();
        if let Some(path) = &self.config {
            RunConfigFile::read(path)?.apply(&mut cfg)?;
        }
        let flags: [(&str, Option<String>); 11] = [
            ("N", self.n.map(|v| v.to_string())),
            ("f", self.f.map(|v| v.to_string())),
            ("s", self.s.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("steps", self.steps.map(|v| v.to_string())),
            ("denoiser", self.denoiser.clone()),
            ("checkpoint", self.checkpoint.as_ref().map(|p| p.display().to_string())),
            ("rope_mode", self.rope_mode.clone()),
            ("mode", self.mode.clone()),
            ("decode", self.decode.clone()),
            ("condition", self.condition.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                apply_setting(&mut cfg, key, &v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            apply_setting(&mut cfg, k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
