//! Evaluation metrics, the per-epoch metrics log and relabel auditing.
//!
//! `metrics.jsonl` holds one [`EpochMetrics`] object per line, in epoch
//! order. `audit.jsonl` holds one [`AuditRecord`] per line for every applied
//! relabel decision and every decision flagged as degenerate.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::memory::{GateReason, RelabelDecision};
use crate::synth::FlipMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub ccc_valence: Option<f64>,
    pub ccc_arousal: Option<f64>,
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        m[t][p] += 1;
    }
    m
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub loss_total: f64,
    pub loss_wce: f64,
    pub loss_w3c: f64,
    pub loss_wau: f64,
    /// Agreement with the (possibly corrected) training labels.
    pub train_accuracy: f64,
    /// Fraction of training labels that differ from the generator's truth.
    pub train_label_noise: Option<f64>,
    pub test: Option<EvalReport>,
    pub au_f1: Vec<f64>,
    pub relabels_applied: usize,
    /// Cumulative precision of applied relabels against the flip mask.
    pub relabel_precision: Option<f64>,
    pub relabel_recall: Option<f64>,
    /// Mean share of the AU-branch gradient norm in the whole update.
    pub au_grad_share: Option<f64>,
    pub template_drift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub epochs: Vec<EpochMetrics>,
}

impl MetricsReport {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.last().and_then(|e| e.test.as_ref()).map(|t| t.accuracy)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        to_jsonl(&self.epochs)
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        Ok(Self {
            epochs: parse_jsonl(text)?,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()?).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse_jsonl(&fs::read_to_string(path).map_err(io_err(path))?)
    }
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub epoch: usize,
    pub batch: u64,
    pub id: String,
    pub original: usize,
    pub new: usize,
    pub alpha: f64,
    pub distances: Vec<Option<f64>>,
    pub applied: bool,
    pub reason: GateReason,
}

impl AuditRecord {
    pub fn from_decision(epoch: usize, batch: u64, d: &RelabelDecision) -> Self {
        Self {
            epoch,
            batch,
            id: d.id.clone(),
            original: d.original,
            new: d.new,
            alpha: d.alpha,
            distances: d.distances.clone(),
            applied: d.applied,
            reason: d.reason,
        }
    }
}

pub fn write_audit(records: &[AuditRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(records)?).map_err(io_err(path))
}

pub fn load_audit(path: impl AsRef<Path>) -> Result<Vec<AuditRecord>> {
    let path = path.as_ref();
    parse_jsonl(&fs::read_to_string(path).map_err(io_err(path))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecovery {
    pub class: usize,
    pub flipped: usize,
    pub recovered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub applied: usize,
    pub applied_to_truth: usize,
    pub flipped: usize,
    pub recovered: usize,
    /// `None` when no relabel was applied.
    pub precision: Option<f64>,
    pub recall: f64,
    pub per_class: Vec<ClassRecovery>,
}

/// Scores applied relabels against the flip mask.
///
/// Precision counts applied decisions whose new label is the sample's true
/// class; recall counts flipped samples that received at least one such
/// decision.
pub fn relabel_audit(records: &[AuditRecord], mask: &FlipMask) -> Result<AuditSummary> {
    let truth = mask.by_id();
    let mut applied = 0;
    let mut applied_to_truth = 0;
    let mut recovered_ids: HashSet<&str> = HashSet::new();
    for r in records {
        let entry = truth
            .get(r.id.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("audit id {:?} not in flip mask", r.id)))?;
        if !r.applied {
            continue;
        }
        applied += 1;
        if r.new == entry.original {
            applied_to_truth += 1;
            if entry.flipped() {
                recovered_ids.insert(entry.id.as_str());
            }
        }
    }
    let mut per_class: BTreeMap<usize, ClassRecovery> = BTreeMap::new();
    for e in mask.entries.iter().filter(|e| e.flipped()) {
        let row = per_class.entry(e.original).or_insert(ClassRecovery {
            class: e.original,
            flipped: 0,
            recovered: 0,
        });
        row.flipped += 1;
        if recovered_ids.contains(e.id.as_str()) {
            row.recovered += 1;
        }
    }
    let flipped = mask.flipped_count();
    Ok(AuditSummary {
        applied,
        applied_to_truth,
        flipped,
        recovered: recovered_ids.len(),
        precision: (applied > 0).then(|| applied_to_truth as f64 / applied as f64),
        recall: if flipped > 0 {
            recovered_ids.len() as f64 / flipped as f64
        } else {
            0.0
        },
        per_class: per_class.into_values().collect(),
    })
}
