//! TOML configuration: an optional preset, then `[experiment]`, `[solver]`,
//! `[kernel]`, `[data]` and `[output]` sections. Command-line flags override
//! file values.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use smkl::{ExperimentConfig, KernelSpec, LambdaConvention};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    pub experiment: Option<toml::Table>,
    #[serde(default)]
    pub solver: SolverSection,
    pub kernel: Option<KernelSpec>,
    pub data: Option<DataSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub max_iters: Option<usize>,
    pub stop_tol: Option<f64>,
    pub tau_factor: Option<f64>,
    pub trace_stride: Option<usize>,
    pub eps_rel: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// CSV without header: one row per sample, features then the response.
    pub path: PathBuf,
    pub lambda: Option<f64>,
    #[serde(default)]
    pub lambda_convention: LambdaConvention,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub traces: bool,
    pub trace_sizes: Option<Vec<usize>>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg: FileConfig = toml::from_str(&text).map_err(|e| {
        anyhow::anyhow!(Invalid(format!(
            "config {}: {}",
            path.display(),
            e.to_string().trim_end()
        )))
    })?;
    // relative data paths are taken from the config's directory
    if let (Some(data), Some(dir)) = (cfg.data.as_mut(), path.parent()) {
        if data.path.is_relative() {
            data.path = dir.join(&data.path);
        }
    }
    Ok(cfg)
}

/// Marker for validation failures (exit code 1).
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "group-lasso-paper" => Ok(ExperimentConfig::group_lasso_paper()),
        "gaussian-kernel-paper" => Ok(ExperimentConfig::gaussian_kernel_paper()),
        other => Err(invalid(format!(
            "unknown preset `{other}` (expected group-lasso-paper or gaussian-kernel-paper)"
        ))),
    }
}

/// Preset (flag first, then file) overlaid with the file's `[experiment]`
/// table. Without a preset the table must be complete.
pub fn experiment(
    file: &FileConfig,
    preset_flag: Option<&str>,
) -> Result<Option<ExperimentConfig>> {
    let base = match preset_flag.or(file.preset.as_deref()) {
        Some(name) => Some(preset(name)?),
        None => None,
    };
    let Some(table) = &file.experiment else {
        return Ok(base);
    };
    let mut merged = match &base {
        Some(b) => toml::Table::try_from(b).context("encoding preset")?,
        None => toml::Table::new(),
    };
    for (k, v) in table {
        merged.insert(k.clone(), v.clone());
    }
    let cfg: ExperimentConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e| invalid(format!("[experiment]: {}", e.to_string().trim_end())))?;
    Ok(Some(cfg))
}

pub fn check_positive(name: &str, v: Option<usize>) -> Result<()> {
    if v == Some(0) {
        bail!(Invalid(format!("--{name} must be >= 1")));
    }
    Ok(())
}
