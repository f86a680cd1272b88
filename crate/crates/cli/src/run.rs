//! Run directory layout.
//!
//! | file               | content                                          |
//! |--------------------|--------------------------------------------------|
//! | `config.json`      | [`RunInfo`]: flags, seed, config hash, taxonomy  |
//! | `manifest.tsv`     | the training manifest after noise injection      |
//! | `flip-mask.tsv`    | per-sample original and corrupted labels         |
//! | `checkpoint.json`  | final model state                                |
//! | `metrics.jsonl`    | one [`MetricsRow`] per epoch                     |
//! | `audit.jsonl`      | applied (and degenerate) relabel decisions       |
//! | `au-adjacency.txt` | raw AU adjacency, only when the AU branch is on  |

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mtac::{EdgeMode, EpochMetrics, TrainConfig};
use serde::{Deserialize, Serialize};

pub const RUN_FORMAT: &str = "mtac-run-v1";
pub const CONFIG: &str = "config.json";
pub const MANIFEST: &str = "manifest.tsv";
pub const FLIP_MASK: &str = "flip-mask.tsv";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const METRICS: &str = "metrics.jsonl";
pub const AUDIT: &str = "audit.jsonl";
pub const ADJACENCY: &str = "au-adjacency.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub format: String,
    pub seed: u64,
    pub config_hash: String,
    pub noise: f64,
    pub branches: String,
    pub edges: EdgeMode,
    pub source_manifest: String,
    pub taxonomy: Vec<String>,
    pub config: TrainConfig,
}

/// An epoch's metrics tagged with the run identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub config_hash: String,
    #[serde(flatten)]
    pub metrics: EpochMetrics,
}

pub fn read_info(dir: &Path) -> Result<RunInfo> {
    let path = dir.join(CONFIG);
    let text = fs::read_to_string(&path).with_context(|| format!("run {}: missing {CONFIG}", dir.display()))?;
    serde_json::from_str(&text).with_context(|| format!("run {}: malformed {CONFIG}", dir.display()))
}

pub fn read_metrics(dir: &Path) -> Result<Vec<MetricsRow>> {
    let path = dir.join(METRICS);
    let text = fs::read_to_string(&path).with_context(|| format!("run {}: missing {METRICS}", dir.display()))?;
    let rows: Vec<MetricsRow> =
        mtac::metrics::parse_jsonl(&text).with_context(|| format!("run {}: malformed {METRICS}", dir.display()))?;
    anyhow::ensure!(!rows.is_empty(), "run {}: {METRICS} has no epochs", dir.display());
    Ok(rows)
}

/// `--out` if given, otherwise a descriptive name under `$MTAC_OUT_ROOT`.
/// The serialized name, e.g. `data-driven`.
pub fn edge_name(mode: EdgeMode) -> String {
    serde_json::to_value(mode)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn resolve_out(out: Option<&Path>, default_name: &str) -> Option<PathBuf> {
    out.map(Path::to_path_buf).or_else(|| {
        std::env::var_os(crate::OUT_ROOT_ENV)
            .filter(|v| !v.is_empty())
            .map(|root| PathBuf::from(root).join(default_name))
    })
}
