use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Per-command sections mirror the command-line flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub inconsistency: InconsistencyConfig,
    pub lir: LirConfig,
    pub synth: SynthConfig,
    pub verify: VerifyConfig,
    pub gfn_train: GfnTrainConfig,
    pub gfn_eval: GfnEvalConfig,
    pub gfn_modes: GfnModesConfig,
    pub gen: GenConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InconsistencyConfig {
    pub pdg: Option<PathBuf>,
    pub gamma: Option<f64>,
    pub beta_override: Vec<String>,
    pub precise: Option<bool>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LirConfig {
    pub pdg: Option<PathBuf>,
    pub strategy: Option<String>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub trace: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub spec: Option<String>,
    pub strategies: Option<String>,
    pub seeds: Option<u64>,
    pub steps: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub kind: Option<String>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GfnTrainConfig {
    pub env: Option<String>,
    pub d: Option<usize>,
    pub height: Option<usize>,
    pub loss: Option<String>,
    pub iters: Option<usize>,
    pub batch: Option<usize>,
    pub rate: Option<f64>,
    pub log_z_multiplier: Option<f64>,
    pub epsilon: Option<f64>,
    pub eval_every: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub eval_csv: Option<PathBuf>,
    pub save: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GfnEvalConfig {
    pub model: Option<PathBuf>,
    pub env: Option<String>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GfnModesConfig {
    pub env: Option<String>,
    pub d: Option<usize>,
    pub height: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub spec: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        if text.trim().is_empty() {
            return Ok(RunConfig::default());
        }
        serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    /// Command-specific seed, then global seed, then 0.
    pub fn seed(&self, specific: Option<u64>) -> u64 {
        specific.or(self.seed).unwrap_or(0)
    }
}

/// Flag value if given, else the config value.
pub fn pick<T: Clone>(flag: Option<T>, cfg: &Option<T>) -> Option<T> {
    flag.or_else(|| cfg.clone())
}
