//! TOML config files with the exact field names of the core config structs.
//! Unknown keys are a hard error.

use std::path::Path;

use anyhow::{Context, Result};
use betadpo_core::synth::GenConfig;
use betadpo_core::trainer::TrainConfig;

pub fn load_gen_config(path: impl AsRef<Path>) -> Result<GenConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading generator config {}", path.display()))?;
    let cfg: GenConfig = toml::from_str(&text)
        .with_context(|| format!("parsing generator config {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_train_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading training config {}", path.display()))?;
    let cfg: TrainConfig = toml::from_str(&text)
        .with_context(|| format!("parsing training config {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_toml<T: serde::Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let text = toml::to_string_pretty(value).context("serializing config")?;
    std::fs::write(path.as_ref(), text)
        .with_context(|| format!("writing {}", path.as_ref().display()))?;
    Ok(())
}
