use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use shiftlab::experiment::Regime;
use shiftlab::{BenchmarkSpec, ShiftSpec, TrainConfig};

/// Optional JSON config shared by all commands. Each command reads the
/// sections it needs; command-line flags win over anything set here.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub train: Option<TrainConfig>,
    pub benchmark: Option<BenchmarkSpec>,
    pub shift: Option<ShiftSpec>,
    pub regimes: Option<Vec<Regime>>,
    pub jobs: Option<usize>,
    pub supervised_fraction: Option<f64>,
    pub gap_cap: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| crate::UsageError(format!("config {}: {e}", path.display())).into())
    }

    /// Flag, then config, then the section's own value.
    pub fn seed(&self, flag: Option<u64>, fallback: u64) -> u64 {
        flag.or(self.seed).unwrap_or(fallback)
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub lambda_fd: Option<f64>,
}

impl TrainArgs {
    pub fn resolve(&self, file: &FileConfig, seed: Option<u64>) -> TrainConfig {
        let mut cfg = file.train.clone().unwrap_or_default();
        cfg.seed = file.seed(seed, cfg.seed);
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            cfg.momentum = v;
        }
        if let Some(v) = self.lambda_fd {
            cfg.lambda_fd = v;
        }
        cfg
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: Vec<String>,
    seed: Option<u64>,
    config: &'a Value,
}

/// `dir/manifest.json` for directory outputs, `file.manifest.json` otherwise.
pub fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.json")
    } else {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

pub fn write_manifest(out: &Path, seed: Option<u64>, config: &impl Serialize) -> Result<PathBuf> {
    let config = serde_json::to_value(config)?;
    let m = Manifest {
        tool: "shiftlab",
        version: env!("CARGO_PKG_VERSION"),
        command: std::env::args().collect(),
        seed,
        config: &config,
    };
    let path = manifest_path(out);
    fs::write(&path, serde_json::to_vec_pretty(&m)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
