//! Plain-text `key=value` training configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected by
//! name. Precedence is flags > file > defaults: the file is applied onto the
//! defaults first and any command-line overrides afterwards.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use fctl_core::degrade::{DegradeKind, DegradeSpec};
use fctl_core::train::TrainConfig;

/// A training run plus where its artifacts go.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { train: TrainConfig::default(), out_dir: "out".into() }
    }
}

pub fn parse_kind(s: &str) -> Result<DegradeKind> {
    match s {
        "rain" => Ok(DegradeKind::Rain),
        "fog" => Ok(DegradeKind::Fog),
        "dark" => Ok(DegradeKind::Dark),
        "bayer" => Ok(DegradeKind::Bayer),
        other => bail!("unknown degradation kind {other:?} (expected rain, fog, dark, or bayer)"),
    }
}

impl RunConfig {
    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| anyhow!("invalid value {value:?} for key {key:?}"))
        }
        let t = &mut self.train;
        match key {
            "epochs" => t.epochs = num(key, value)?,
            "lr" => t.lr = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "lambda_fs" => t.lambda_fs = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "dataset_size" => t.dataset_size = num(key, value)?,
            "scene_size" => t.scene_size = num(key, value)?,
            "eval_fraction" => t.eval_fraction = num(key, value)?,
            "degrade_kind" => t.degrade = DegradeSpec { kind: parse_kind(value)?, ..t.degrade },
            "degrade_intensity" => t.degrade.intensity = num(key, value)?,
            "degrade_seed" => t.degrade.seed = num(key, value)?,
            "alpha" => t.eansdl.alpha = num(key, value)?,
            "beta" => t.eansdl.beta = num(key, value)?,
            "lambda_consistency" => t.eansdl.lambda_consistency = num(key, value)?,
            "r0" => t.eansdl.r0 = num(key, value)?,
            "out_dir" => self.out_dir = value.to_string(),
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value, got {line:?}", n + 1))?;
            self.set(key.trim(), value.trim()).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        self.apply_text(&text).with_context(|| path.display().to_string())
    }
}
