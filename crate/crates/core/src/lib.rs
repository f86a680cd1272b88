//! Noise-robust multi-task emotion classification.
//!
//! A shared backbone feeds three branches: a confidence-weighted target
//! classifier, a valence/arousal regressor trained with a class-weighted
//! concordance loss, and an action-unit graph network whose per-class
//! memory templates drive label correction.

pub mod augraph;
pub mod checkpoint;
pub mod conv;
pub mod data;
pub mod error;
pub mod losses;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod network;
pub mod nn;
pub mod synth;
pub mod trainer;

pub use augraph::{AuAdjacency, CoOccurrenceCounts, EdgeMode, GcnStack, SemanticOutput};
pub use checkpoint::Checkpoint;
pub use data::{Batch, DatasetManifest, EmotionTaxonomy, InputMode, LabelProvenance, Sample, Split};
pub use error::{Error, Result};
pub use losses::{ClassWeights, RampSchedule};
pub use memory::{BatchCenters, GateReason, MemoryTemplate, RelabelDecision, RelabelGate};
pub use metrics::{AuditRecord, AuditSummary, EpochMetrics, EvalReport, MetricsReport};
pub use network::{MtacNetwork, NetworkShape};
pub use synth::{FlipMask, GeneratorConfig};
pub use trainer::{
    evaluate, train, BranchPreset, Branches, CounterMode, GammaPlacement, LrSchedule, RelabelRule, TrainConfig,
    TrainOutcome, Trainer,
};
