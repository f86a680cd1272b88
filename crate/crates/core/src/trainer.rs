//! End-to-end training of the three-branch framework.
//!
//! Per batch: backbone features, confidence scores, classifier logits; the
//! AU branch runs on detached features; gated relabeling rewrites the batch
//! labels before the classification loss is taken; the ramp-weighted total
//! is back-propagated and two Adam optimizers step (backbone and target/VA
//! heads, and the AU branch with its own learning rate).

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augraph::{adjacency_for_mode, per_au_f1, AuAdjacency, EdgeMode, DEFAULT_NODE_DIM};
use crate::checkpoint::Checkpoint;
use crate::data::{BatchStream, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::losses::{
    ccc, class_weights, confidence_weighted_ce, ramp_weights, weighted_au_bce, weighted_ccc_loss, ClassWeights,
};
use crate::memory::{batch_centers, relabel, relabel_by_prediction, GateReason, MemoryTemplate, RelabelGate};
use crate::metrics::{accuracy, confusion_matrix, relabel_audit, AuditRecord, EpochMetrics, EvalReport, MetricsReport};
use crate::model::{predict, stack_rows, DEFAULT_FEATURE_DIM, DEFAULT_HIDDEN};
use crate::network::{grad_norm, MtacNetwork, NetworkShape};
use crate::nn::Adam;
use crate::synth::FlipMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branches {
    /// Confidence scores weight the classification loss (target branch).
    pub confidence: bool,
    pub va: bool,
    pub au: bool,
    pub relabel: bool,
}

/// The branch combinations of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BranchPreset {
    /// Plain softmax cross-entropy, no branch active.
    None,
    Target,
    TargetVa,
    /// Target plus AU branch with template relabeling.
    TargetAu,
    Full,
}

impl BranchPreset {
    pub const ALL: [BranchPreset; 5] = [Self::None, Self::Target, Self::TargetVa, Self::TargetAu, Self::Full];

    pub fn branches(self) -> Branches {
        let (confidence, va, au) = match self {
            Self::None => (false, false, false),
            Self::Target => (true, false, false),
            Self::TargetVa => (true, true, false),
            Self::TargetAu => (true, false, true),
            Self::Full => (true, true, true),
        };
        Branches {
            confidence,
            va,
            au,
            relabel: au,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Target => "t",
            Self::TargetVa => "t+va",
            Self::TargetAu => "t+au",
            Self::Full => "full",
        }
    }
}

impl fmt::Display for BranchPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BranchPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown branch set {s:?} (expected none, t, t+va, t+au or full)")))
    }
}

impl FromStr for EdgeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "data" | "data-driven" => Ok(EdgeMode::DataDriven),
            "random" => Ok(EdgeMode::Random),
            "fixed" => Ok(EdgeMode::Fixed),
            other => Err(Error::Config(format!("unknown edge mode {other:?}"))),
        }
    }
}

/// Where the class-imbalance weights apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaPlacement {
    /// Weighted CCC loss of the VA branch.
    Va,
    /// Per-sample weights on the classification loss.
    Ce,
    Off,
}

/// How the template's batch counter evolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CounterMode {
    /// One counter for the whole run.
    Global,
    /// Counter restarts at every epoch.
    PerEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelabelRule {
    /// Nearest memory-template column under cosine distance.
    Template,
    /// Classifier argmax, the no-template baseline.
    Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.initial * self.factor.powi(drops as i32)
    }
}

/// Missing fields take their defaults when deserializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub branches: Branches,
    pub ramp_horizon: usize,
    pub tau: f64,
    pub relabel_start_epoch: usize,
    pub gate: RelabelGate,
    pub gamma_placement: GammaPlacement,
    pub lr: LrSchedule,
    /// Initial learning rate of the AU branch; it follows the same drops.
    pub au_lr: f64,
    pub edge_mode: EdgeMode,
    pub counter_mode: CounterMode,
    pub relabel_rule: RelabelRule,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub node_dim: usize,
    pub confidence_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            seed: 0,
            branches: BranchPreset::Full.branches(),
            ramp_horizon: 5,
            tau: 0.9,
            relabel_start_epoch: 10,
            gate: RelabelGate::default(),
            gamma_placement: GammaPlacement::Va,
            lr: LrSchedule {
                initial: 0.01,
                milestones: vec![10, 20],
                factor: 0.1,
            },
            au_lr: 0.005,
            edge_mode: EdgeMode::DataDriven,
            counter_mode: CounterMode::PerEpoch,
            relabel_rule: RelabelRule::Template,
            hidden_dim: DEFAULT_HIDDEN,
            feature_dim: DEFAULT_FEATURE_DIM,
            node_dim: DEFAULT_NODE_DIM,
            confidence_bias: true,
        }
    }
}

impl TrainConfig {
    pub fn with_preset(mut self, preset: BranchPreset) -> Self {
        self.branches = preset.branches();
        if preset == BranchPreset::None {
            self.gamma_placement = GammaPlacement::Off;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.branches;
        if b.relabel && !b.au {
            return Err(Error::Config("relabeling requires the AU branch".into()));
        }
        if self.ramp_horizon == 0 {
            return Err(Error::Config("ramp horizon H must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau {} outside (0, 1]", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.gate.quantile) {
            return Err(Error::Config(format!("gate quantile {} outside [0, 1]", self.gate.quantile)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr.initial > 0.0 && self.au_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Multipliers of the target/VA group and the AU loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossScale {
    pub target: f64,
    pub au: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub loss_total: f64,
    pub loss_wce: f64,
    pub loss_w3c: f64,
    pub loss_wau: f64,
    pub correct: usize,
    pub samples: usize,
    pub au_pred: Option<Array2<u8>>,
    pub main_grad_norm: f64,
    pub au_grad_norm: f64,
    pub template_drift: f64,
    pub relabels_applied: usize,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: MetricsReport,
    pub audit: Vec<AuditRecord>,
    pub adjacency: Option<AuAdjacency>,
    /// Training labels after all corrections, in training-record order.
    pub labels: Vec<usize>,
    pub flip_mask: FlipMask,
}

/// Mutable training state for one run.
pub struct Trainer {
    pub config: TrainConfig,
    pub shape: NetworkShape,
    pub network: MtacNetwork,
    pub train: DatasetManifest,
    pub test: Option<DatasetManifest>,
    pub adjacency: Option<AuAdjacency>,
    pub template: Option<MemoryTemplate>,
    pub labels: Vec<usize>,
    pub audit: Vec<AuditRecord>,
    flip_mask: FlipMask,
    inputs: Array2<f64>,
    va_targets: Option<Array2<f64>>,
    au_targets: Option<Array2<u8>>,
    opt_main: Adam,
    opt_au: Adam,
    stream: BatchStream,
    batch_counter: u64,
    epochs_done: usize,
}

impl Trainer {
    /// `manifest` may contain both splits; test records are only scored.
    pub fn new(config: TrainConfig, manifest: &DatasetManifest) -> Result<Self> {
        config.validate()?;
        let train = manifest.subset(Split::Train);
        if train.is_empty() {
            return Err(Error::InvalidInput("manifest has no training records".into()));
        }
        let test = Some(manifest.subset(Split::Test)).filter(|t| !t.is_empty());
        let b = config.branches;
        if b.va && !train.va_available() {
            return Err(Error::Config("VA branch enabled but the manifest has no VA labels".into()));
        }
        if b.au && !train.au_available() {
            return Err(Error::Config("AU branch enabled but the manifest has no AU labels".into()));
        }
        if b.au && train.au_count == 0 {
            return Err(Error::Config("AU branch enabled but M = 0".into()));
        }

        let shape = NetworkShape {
            mode: train.mode,
            input_dim: train.feature_dim,
            hidden_dim: config.hidden_dim,
            feature_dim: config.feature_dim,
            classes: train.num_classes(),
            au_count: train.au_count,
            node_dim: config.node_dim,
            with_au: b.au,
            confidence_bias: config.confidence_bias,
        };
        let network = MtacNetwork::new(&shape, config.seed);
        let inputs = stack_rows(train.records.iter().map(|s| s.features.as_slice()), train.feature_dim);
        let va_targets = b.va.then(|| {
            Array2::from_shape_fn((train.len(), 2), |(i, k)| train.records[i].va.expect("checked above")[k])
        });
        let au_targets = b.au.then(|| {
            Array2::from_shape_fn((train.len(), train.au_count), |(i, k)| {
                train.records[i].au.as_ref().expect("checked above")[k]
            })
        });
        let adjacency = match &au_targets {
            Some(z) => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xED6E_5000);
                Some(adjacency_for_mode(config.edge_mode, z.view(), &mut rng))
            }
            None => None,
        };
        let template = if b.au {
            Some(MemoryTemplate::new(train.au_count, train.num_classes(), config.tau)?)
        } else {
            None
        };
        let stream = BatchStream::new(train.len(), config.batch_size.min(train.len()), config.seed)?;
        let labels = train.records.iter().map(|s| s.emotion).collect();
        let flip_mask = FlipMask::identity(&train);
        Ok(Self {
            config,
            shape,
            network,
            train,
            test,
            adjacency,
            template,
            labels,
            audit: Vec::new(),
            flip_mask,
            inputs,
            va_targets,
            au_targets,
            opt_main: Adam::default(),
            opt_au: Adam::default(),
            stream,
            batch_counter: 0,
            epochs_done: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.stream.batches_per_epoch()
    }

    /// Class weights over the current training labels.
    pub fn class_weights(&self) -> Result<ClassWeights> {
        let mut counts = vec![0; self.shape.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        class_weights(&counts)
    }

    /// Forward and backward pass for one batch; gradients are left in the
    /// parameters. Relabeling (when active for `epoch`) updates the stored
    /// training labels before the loss is taken.
    pub fn compute_gradients(&mut self, indices: &[usize], epoch: usize, batch_index: u64, scale: LossScale, gamma: &ClassWeights) -> Result<StepStats> {
        let cfg = &self.config;
        let b = cfg.branches;
        let n = indices.len();
        self.network.zero_grad();

        let x = self.inputs.select(Axis(0), indices);
        let (f, backbone_cache) = self.network.backbone.forward(x.view())?;
        let alphas = if b.confidence {
            self.network.confidence.forward(f.view())
        } else {
            Array1::ones(n)
        };
        let logits = self.network.classifier.forward(f.view());
        let finite = |a: &Array2<f64>| a.iter().all(|v| v.is_finite());
        if !(finite(&f) && finite(&logits) && alphas.iter().all(|a| a.is_finite())) {
            return Err(Error::NonFinite {
                epoch,
                batch: batch_index,
                detail: format!(
                    "forward pass: features finite {}, logits finite {}, first id {}",
                    finite(&f),
                    finite(&logits),
                    self.train.records[indices[0]].id
                ),
            });
        }

        let semantic = match (&self.network.au, &self.adjacency) {
            (Some(stack), Some(adj)) => Some(stack.forward(f.view(), adj)?),
            _ => None,
        };

        let mut batch_labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        let mut applied = 0;
        if b.relabel && epoch >= cfg.relabel_start_epoch {
            let ids: Vec<&str> = indices.iter().map(|&i| self.train.records[i].id.as_str()).collect();
            let decisions = match cfg.relabel_rule {
                RelabelRule::Template => {
                    let s = semantic.as_ref().expect("relabel implies AU branch");
                    let template = self.template.as_ref().expect("relabel implies template");
                    relabel(s.logits.view(), alphas.view(), &batch_labels, &ids, template, &cfg.gate)?
                }
                RelabelRule::Prediction => relabel_by_prediction(logits.view(), alphas.view(), &batch_labels, &ids, &cfg.gate),
            };
            for (k, d) in decisions.iter().enumerate() {
                if d.applied {
                    applied += 1;
                    batch_labels[k] = d.new;
                    self.labels[indices[k]] = d.new;
                }
                if d.applied || d.reason == GateReason::DegenerateSemantic {
                    self.audit.push(AuditRecord::from_decision(epoch, batch_index, d));
                }
            }
        }

        let ce_weights = (cfg.gamma_placement == GammaPlacement::Ce).then_some(gamma.gamma.as_slice());
        let ce = confidence_weighted_ce(logits.view(), &batch_labels, alphas.view(), ce_weights)?;

        let va = match &self.va_targets {
            Some(targets) => {
                let pred = self.network.va.forward(f.view());
                let y = targets.select(Axis(0), indices);
                let uniform;
                let weights = if cfg.gamma_placement == GammaPlacement::Va {
                    gamma
                } else {
                    uniform = ClassWeights::uniform(self.shape.classes);
                    &uniform
                };
                let loss = weighted_ccc_loss(pred.view(), y.view(), &batch_labels, weights)?;
                Some((pred, loss))
            }
            None => None,
        };

        let mut au_loss = None;
        let mut drift = 0.0;
        if let (Some(sem), Some(targets)) = (&semantic, &self.au_targets) {
            let z = targets.select(Axis(0), indices);
            let bce = weighted_au_bce(sem.probs.view(), z.view(), alphas.view())?;
            let centers = batch_centers(sem.logits.view(), alphas.view(), &batch_labels, self.shape.classes)?;
            if let Some(template) = self.template.as_mut() {
                drift = template.update(&centers)?;
            }
            au_loss = Some(bce);
        }

        let loss_w3c = va.as_ref().map_or(0.0, |(_, l)| l.loss);
        let loss_wau = au_loss.as_ref().map_or(0.0, |l| l.loss);
        let loss_total = scale.target * (ce.loss + loss_w3c) + scale.au * loss_wau;
        if !loss_total.is_finite() {
            let (lo, hi) = alphas
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
            return Err(Error::NonFinite {
                epoch,
                batch: batch_index,
                detail: format!(
                    "wce={} w3c={} wau={} alpha in [{lo}, {hi}] first id {}",
                    ce.loss, loss_w3c, loss_wau, self.train.records[indices[0]].id
                ),
            });
        }

        // Target and VA gradients reach the backbone; the AU branch does not.
        let d_logits = &ce.d_logits * scale.target;
        let mut d_f = self.network.classifier.backward(f.view(), &d_logits);
        if b.confidence {
            let d_alpha = &ce.d_alphas * scale.target;
            d_f += &self.network.confidence.backward(f.view(), alphas.view(), d_alpha.view());
        }
        if let Some((pred, loss)) = &va {
            let d_pred = &loss.d_pred * scale.target;
            d_f += &self.network.va.backward(f.view(), pred, &d_pred);
        }
        self.network.backbone.backward(&backbone_cache, &d_f);

        let mut au_pred = None;
        if let (Some(sem), Some(bce), Some(stack), Some(adj)) =
            (&semantic, &au_loss, self.network.au.as_mut(), &self.adjacency)
        {
            let d_s = ndarray::Zip::from(&bce.d_pred)
                .and(&sem.probs)
                .map_collect(|&d, &p| scale.au * d * p * (1.0 - p));
            stack.backward(&sem.cache, adj, &d_s);
            au_pred = Some(sem.probs.mapv(|p| u8::from(p >= 0.5)));
        }

        let preds = predict(logits.view());
        let correct = preds.iter().zip(&batch_labels).filter(|(p, y)| p == y).count();
        let au_grad_norm = self.network.au.as_ref().map_or(0.0, |s| grad_norm(s.params()));
        let main_grad_norm = {
            let all = grad_norm(self.network.params());
            (all * all - au_grad_norm * au_grad_norm).max(0.0).sqrt()
        };
        Ok(StepStats {
            loss_total,
            loss_wce: ce.loss,
            loss_w3c,
            loss_wau,
            correct,
            samples: n,
            au_pred,
            main_grad_norm,
            au_grad_norm,
            template_drift: drift,
            relabels_applied: applied,
        })
    }

    /// Applies one optimizer step with the learning rates of `epoch`.
    pub fn apply_update(&mut self, epoch: usize) {
        let lr = self.config.lr.at(epoch);
        let au_lr = self.config.au_lr * lr / self.config.lr.initial;
        self.opt_main.step(self.network.main_params_mut(), lr);
        if self.network.au.is_some() {
            self.opt_au.step(self.network.au_params_mut(), au_lr);
        }
    }

    /// Runs one epoch and returns its metrics.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.epochs_done;
        let (lambda1, lambda2) = ramp_weights(epoch as f64, self.config.ramp_horizon)?;
        let scale = LossScale {
            target: lambda1,
            au: lambda2,
        };
        if self.config.counter_mode == CounterMode::PerEpoch {
            if let Some(t) = self.template.as_mut() {
                t.reset_counter();
            }
        }
        let gamma = self.class_weights()?;
        let batches = self.stream.next_epoch();

        let mut sums = [0.0f64; 4];
        let mut correct = 0;
        let mut seen = 0;
        let mut applied = 0;
        let mut drift = 0.0;
        let mut share_sum = 0.0;
        let mut au_preds: Vec<(Vec<usize>, Array2<u8>)> = Vec::new();
        for batch in &batches {
            self.batch_counter = batch.index;
            let stats = self.compute_gradients(&batch.indices, epoch, batch.index, scale, &gamma)?;
            self.apply_update(epoch);
            let w = stats.samples as f64;
            sums[0] += stats.loss_total * w;
            sums[1] += stats.loss_wce * w;
            sums[2] += stats.loss_w3c * w;
            sums[3] += stats.loss_wau * w;
            correct += stats.correct;
            seen += stats.samples;
            applied += stats.relabels_applied;
            drift += stats.template_drift;
            let total_norm = stats.main_grad_norm + stats.au_grad_norm;
            if total_norm > 0.0 {
                share_sum += stats.au_grad_norm / total_norm;
            }
            if let Some(p) = stats.au_pred {
                au_preds.push((batch.indices.clone(), p));
            }
        }
        self.epochs_done += 1;

        let au_enabled = self.config.branches.au;
        let au_f1 = match (&self.au_targets, au_preds.is_empty()) {
            (Some(targets), false) => {
                let mut pred = Array2::zeros(targets.dim());
                for (idx, p) in &au_preds {
                    for (k, &i) in idx.iter().enumerate() {
                        pred.row_mut(i).assign(&p.row(k));
                    }
                }
                per_au_f1(pred.view(), targets.view()).to_vec()
            }
            _ => Vec::new(),
        };
        let summary = relabel_audit(&self.audit, &self.flip_mask)?;
        let wrong = self
            .labels
            .iter()
            .zip(&self.flip_mask.entries)
            .filter(|(y, e)| **y != e.original)
            .count();
        let test = match &self.test {
            Some(t) => Some(evaluate_network(&self.network, self.config.branches.va, t)?),
            None => None,
        };
        let seen_f = seen as f64;
        Ok(EpochMetrics {
            epoch,
            learning_rate: self.config.lr.at(epoch),
            lambda1,
            lambda2,
            loss_total: sums[0] / seen_f,
            loss_wce: sums[1] / seen_f,
            loss_w3c: sums[2] / seen_f,
            loss_wau: sums[3] / seen_f,
            train_accuracy: correct as f64 / seen_f,
            train_label_noise: Some(wrong as f64 / self.labels.len() as f64),
            test,
            au_f1,
            relabels_applied: applied,
            relabel_precision: summary.precision,
            relabel_recall: (summary.flipped > 0).then_some(summary.recall),
            au_grad_share: au_enabled.then(|| share_sum / batches.len() as f64),
            template_drift: au_enabled.then_some(drift),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            &self.network,
            &self.shape,
            &self.config,
            &self.train.taxonomy,
            self.epochs_done,
            self.batch_counter,
            self.template.as_ref(),
            self.adjacency.as_ref().map(|a| &a.a),
        )
    }

    pub fn flip_mask(&self) -> &FlipMask {
        &self.flip_mask
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        let mut report = MetricsReport::default();
        for _ in 0..self.config.epochs {
            report.epochs.push(self.run_epoch()?);
        }
        Ok(TrainOutcome {
            checkpoint: self.checkpoint(),
            report,
            audit: self.audit,
            adjacency: self.adjacency,
            labels: self.labels,
            flip_mask: self.flip_mask,
        })
    }
}

/// Trains on the manifest's training split; test records, if any, are
/// scored after every epoch.
pub fn train(config: TrainConfig, manifest: &DatasetManifest) -> Result<TrainOutcome> {
    Trainer::new(config, manifest)?.run()
}

fn evaluate_network(network: &MtacNetwork, with_va: bool, data: &DatasetManifest) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::InvalidInput("evaluation split is empty".into()));
    }
    let inputs = stack_rows(data.records.iter().map(|s| s.features.as_slice()), data.feature_dim);
    let out = network.infer(inputs.view())?;
    let pred = predict(out.logits.view());
    let truth: Vec<usize> = data.records.iter().map(|s| s.emotion).collect();
    let classes = data.num_classes();
    let (ccc_valence, ccc_arousal) = if with_va && data.len() >= 2 && data.records.iter().all(|s| s.va.is_some()) {
        let labels = Array2::from_shape_fn((data.len(), 2), |(i, k)| data.records[i].va.expect("checked")[k]);
        (
            Some(ccc(labels.column(0), out.va.column(0))?),
            Some(ccc(labels.column(1), out.va.column(1))?),
        )
    } else {
        (None, None)
    };
    Ok(EvalReport {
        samples: data.len(),
        accuracy: accuracy(&truth, &pred),
        confusion: confusion_matrix(&truth, &pred, classes),
        ccc_valence,
        ccc_arousal,
    })
}

/// Scores a checkpoint on one split of a manifest. Only the backbone,
/// classifier and (if trained) VA head run.
pub fn evaluate(checkpoint: &Checkpoint, manifest: &DatasetManifest, split: Split) -> Result<EvalReport> {
    if checkpoint.taxonomy.len() != manifest.num_classes() {
        return Err(Error::InvalidInput(format!(
            "taxonomy mismatch: checkpoint has {} classes, manifest {}",
            checkpoint.taxonomy.len(),
            manifest.num_classes()
        )));
    }
    if checkpoint.shape.input_dim != manifest.feature_dim || checkpoint.shape.mode != manifest.mode {
        return Err(Error::InvalidInput("input layout differs from the checkpoint".into()));
    }
    let network = checkpoint.restore()?;
    evaluate_network(&network, checkpoint.config.branches.va, &manifest.subset(split))
}

/// Predicted class per record of a split, for inertness checks.
pub fn predictions(checkpoint: &Checkpoint, manifest: &DatasetManifest, split: Split) -> Result<Vec<usize>> {
    let data = manifest.subset(split);
    let network = checkpoint.restore()?;
    let inputs = stack_rows(data.records.iter().map(|s| s.features.as_slice()), data.feature_dim);
    Ok(predict(network.infer(inputs.view())?.logits.view()))
}
