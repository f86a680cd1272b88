//! Per-class semantic centers, the decaying memory template and the
//! similarity-constrained relabeling rule.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::argmax;

/// Confidence-weighted class centers of one batch, `M x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchCenters {
    pub u: Array2<f64>,
    pub counts: Vec<usize>,
}

impl BatchCenters {
    pub fn is_missing(&self, class: usize) -> bool {
        self.counts[class] == 0
    }
}

/// `U_j = (1 / N_j) * sum over class-j samples of alpha_i * s_i`.
///
/// The normalizer is the class count, not the sum of confidences.
pub fn batch_centers(s: ArrayView2<f64>, alphas: ArrayView1<f64>, labels: &[usize], classes: usize) -> Result<BatchCenters> {
    let (n, m) = s.dim();
    if n == 0 || alphas.len() != n || labels.len() != n {
        return Err(Error::Contract("batch centers need matching, non-empty inputs".into()));
    }
    let mut u = Array2::zeros((m, classes));
    let mut counts = vec![0; classes];
    for i in 0..n {
        let y = labels[i];
        if y >= classes {
            return Err(Error::Contract(format!("label {y} out of range for {classes} classes")));
        }
        counts[y] += 1;
        u.column_mut(y).scaled_add(alphas[i], &s.row(i));
    }
    for (j, &c) in counts.iter().enumerate() {
        if c > 0 {
            u.column_mut(j).mapv_inplace(|v| v / c as f64);
        }
    }
    Ok(BatchCenters { u, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryTemplate {
    /// `M x C`, column `j` is the semantic center of class `j`.
    pub t: Array2<f64>,
    pub initialized: Vec<bool>,
    /// Batches consumed since the last counter reset.
    pub h: u64,
    pub tau: f64,
}

impl MemoryTemplate {
    /// All columns start uninitialized; the first observed center is copied in.
    pub fn new(au_count: usize, classes: usize, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(Self {
            t: Array2::zeros((au_count, classes)),
            initialized: vec![false; classes],
            h: 0,
            tau,
        })
    }

    /// Template whose columns are all set to `t`.
    pub fn with_values(t: Array2<f64>, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        let classes = t.ncols();
        Ok(Self {
            t,
            initialized: vec![true; classes],
            h: 0,
            tau,
        })
    }

    pub fn classes(&self) -> usize {
        self.t.ncols()
    }

    pub fn column(&self, class: usize) -> Option<ArrayView1<'_, f64>> {
        self.initialized[class].then(|| self.t.column(class))
    }

    /// Mixing coefficient `exp(-tau * h)` for batch counter `h`.
    pub fn coefficient(&self, h: u64) -> f64 {
        (-self.tau * h as f64).exp()
    }

    pub fn reset_counter(&mut self) {
        self.h = 0;
    }

    /// Advances the counter and blends in the batch centers. Missing classes
    /// are left untouched. Returns the Frobenius norm of the change.
    pub fn update(&mut self, centers: &BatchCenters) -> Result<f64> {
        if centers.u.dim() != self.t.dim() {
            return Err(Error::Contract("batch centers and template differ in shape".into()));
        }
        self.h += 1;
        let coef = self.coefficient(self.h);
        let mut drift = 0.0;
        for j in 0..self.classes() {
            if centers.is_missing(j) {
                continue;
            }
            let target = centers.u.column(j);
            let mut col = self.t.column_mut(j);
            if !self.initialized[j] {
                drift += col.iter().zip(target).map(|(a, b)| (b - a).powi(2)).sum::<f64>();
                col.assign(&target);
                self.initialized[j] = true;
                continue;
            }
            for (t, &u) in col.iter_mut().zip(target) {
                let new = (1.0 - coef) * *t + coef * u;
                drift += (new - *t).powi(2);
                *t = new;
            }
        }
        Ok(drift.sqrt())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("tau {tau} outside (0, 1]")))
    }
}

/// `1 - cos(s, t)`. A zero vector has no direction; its distance is 1.
pub fn cosine_distance(s: ArrayView1<f64>, t: ArrayView1<f64>) -> f64 {
    let ns = s.dot(&s).sqrt();
    let nt = t.dot(&t).sqrt();
    if ns == 0.0 || nt == 0.0 {
        return 1.0;
    }
    (1.0 - t.dot(&s) / (nt * ns)).clamp(0.0, 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelabelGate {
    /// Only the lowest-confidence fraction `quantile` of a batch is eligible.
    pub quantile: f64,
}

impl Default for RelabelGate {
    fn default() -> Self {
        Self { quantile: 0.2 }
    }
}

impl RelabelGate {
    /// Eligibility mask: the `ceil(q * N)` lowest-confidence samples, ties
    /// broken by batch position.
    pub fn eligible(&self, alphas: ArrayView1<f64>) -> Vec<bool> {
        let n = alphas.len();
        let k = ((self.quantile * n as f64).ceil() as usize).min(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| alphas[a].total_cmp(&alphas[b]).then(a.cmp(&b)));
        let mut mask = vec![false; n];
        for &i in &order[..k] {
            mask[i] = true;
        }
        mask
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateReason {
    Applied,
    /// Confidence above the batch quantile.
    ConfidentSample,
    /// The original class is already the nearest template.
    OriginalNearest,
    /// The original class has no template column yet.
    OriginalUninitialized,
    /// No other class has a template column yet.
    NoAlternative,
    /// The semantic vector is zero; distances carry no information.
    DegenerateSemantic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelDecision {
    pub id: String,
    pub original: usize,
    pub new: usize,
    /// Distance to each template column; `None` for uninitialized columns.
    pub distances: Vec<Option<f64>>,
    pub alpha: f64,
    pub applied: bool,
    pub reason: GateReason,
}

/// Decision for one sample given its distances to the template columns.
pub fn decide(distances: &[Option<f64>], original: usize) -> (usize, GateReason) {
    let Some(d_org) = distances[original] else {
        return (original, GateReason::OriginalUninitialized);
    };
    let best = distances
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != original)
        .filter_map(|(j, d)| d.map(|d| (j, d)))
        .fold(None, |acc: Option<(usize, f64)>, (j, d)| match acc {
            Some((_, bd)) if bd <= d => acc,
            _ => Some((j, d)),
        });
    match best {
        None => (original, GateReason::NoAlternative),
        Some((j, d)) if d_org > d => (j, GateReason::Applied),
        Some(_) => (original, GateReason::OriginalNearest),
    }
}

/// Relabels gated samples whose original class is not their nearest template.
pub fn relabel(
    s: ArrayView2<f64>,
    alphas: ArrayView1<f64>,
    labels: &[usize],
    ids: &[&str],
    template: &MemoryTemplate,
    gate: &RelabelGate,
) -> Result<Vec<RelabelDecision>> {
    let n = s.nrows();
    if alphas.len() != n || labels.len() != n || ids.len() != n {
        return Err(Error::Contract("relabel inputs differ in length".into()));
    }
    if s.ncols() != template.t.nrows() {
        return Err(Error::Contract("semantic width differs from template height".into()));
    }
    let eligible = gate.eligible(alphas);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = s.row(i);
        let distances: Vec<Option<f64>> = (0..template.classes())
            .map(|j| template.column(j).map(|t| cosine_distance(row, t)))
            .collect();
        let original = labels[i];
        let (new, reason) = if !eligible[i] {
            (original, GateReason::ConfidentSample)
        } else if row.iter().all(|&x| x == 0.0) {
            (original, GateReason::DegenerateSemantic)
        } else {
            decide(&distances, original)
        };
        out.push(RelabelDecision {
            id: ids[i].to_string(),
            original,
            new,
            distances,
            alpha: alphas[i],
            applied: reason == GateReason::Applied,
            reason,
        });
    }
    Ok(out)
}

/// Same gate, but the new label is the classifier's argmax prediction.
/// Used as the no-template baseline for relabel precision.
pub fn relabel_by_prediction(
    logits: ArrayView2<f64>,
    alphas: ArrayView1<f64>,
    labels: &[usize],
    ids: &[&str],
    gate: &RelabelGate,
) -> Vec<RelabelDecision> {
    let eligible = gate.eligible(alphas);
    (0..labels.len())
        .map(|i| {
            let pred = argmax(logits.row(i));
            let original = labels[i];
            let (new, reason) = if !eligible[i] {
                (original, GateReason::ConfidentSample)
            } else if pred != original {
                (pred, GateReason::Applied)
            } else {
                (original, GateReason::OriginalNearest)
            };
            RelabelDecision {
                id: ids[i].to_string(),
                original,
                new,
                distances: Vec::new(),
                alpha: alphas[i],
                applied: reason == GateReason::Applied,
                reason,
            }
        })
        .collect()
}

/// Frobenius distance between two template snapshots.
pub fn template_drift(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff: Array2<f64> = a - b;
    diff.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn column_norms(t: &Array2<f64>) -> Array1<f64> {
    t.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect()
}
