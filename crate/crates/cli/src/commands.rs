use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use mtac::checkpoint::config_hash;
use mtac::data::{load_manifest, write_manifest};
use mtac::metrics::{load_audit, relabel_audit, to_jsonl, write_audit};
use mtac::synth::{circumplex_anchors, generate_corpus, inject_label_noise, overlapping_profiles};
use mtac::{BranchPreset, Checkpoint, EdgeMode, FlipMask, GeneratorConfig, Split, TrainConfig, Trainer};
use serde::{Deserialize, Serialize};

use crate::run::{self, MetricsRow, RunInfo};
use crate::{AuditArgs, CliError, EvaluateArgs, SynthArgs, TrainArgs};

type CliResult = Result<(), CliError>;

/// Noise ratios accepted without `--any-noise`.
pub const NOISE_GRID: [f64; 4] = [0.0, 0.1, 0.2, 0.3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum PerClass {
    Same(usize),
    Each(Vec<usize>),
}

impl PerClass {
    fn expand(&self, classes: usize) -> Vec<usize> {
        match self {
            PerClass::Same(n) => vec![*n; classes],
            PerClass::Each(v) => v.clone(),
        }
    }
}

/// Generator settings file; unset fields fall back to the standard corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthSettings {
    classes: usize,
    au_count: usize,
    feature_dim: usize,
    train_per_class: PerClass,
    test_per_class: PerClass,
    seed: u64,
    cluster_separation: Option<f64>,
    feature_noise: Option<f64>,
    va_noise: Option<f64>,
    au_noise: Option<f64>,
    va_anchors: Option<Vec<[f64; 2]>>,
    au_profiles: Option<Vec<Vec<f64>>>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            classes: 7,
            au_count: 8,
            feature_dim: 32,
            train_per_class: PerClass::Same(700),
            test_per_class: PerClass::Same(100),
            seed: 0,
            cluster_separation: None,
            feature_noise: None,
            va_noise: None,
            au_noise: None,
            va_anchors: None,
            au_profiles: None,
        }
    }
}

impl SynthSettings {
    fn resolve(self) -> GeneratorConfig {
        let mut g = GeneratorConfig::standard(self.classes, self.au_count, self.feature_dim, self.seed);
        g.train_per_class = self.train_per_class.expand(self.classes);
        g.test_per_class = self.test_per_class.expand(self.classes);
        if let Some(v) = self.cluster_separation {
            g.cluster_separation = v;
        }
        if let Some(v) = self.feature_noise {
            g.feature_noise = v;
        }
        if let Some(v) = self.va_noise {
            g.va_noise = v;
        }
        if let Some(v) = self.au_noise {
            g.au_noise = v;
        }
        g.va_anchors = self.va_anchors.unwrap_or_else(|| circumplex_anchors(self.classes, 0.7));
        g.au_profiles = self
            .au_profiles
            .unwrap_or_else(|| overlapping_profiles(self.classes, self.au_count, 0.85, 0.05));
        g
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn pretty<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn synth(args: &SynthArgs) -> CliResult {
    let mut settings: SynthSettings = match &args.config {
        Some(p) => read_json(p)?,
        None => SynthSettings::default(),
    };
    if let Some(seed) = args.seed {
        settings.seed = seed;
    }
    let config = settings.resolve();
    let corpus = generate_corpus(&config)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_manifest(&corpus, args.out.join(run::MANIFEST))?;
    FlipMask::identity(&corpus).write(args.out.join(run::FLIP_MASK))?;
    write_text(&args.out.join("synth-config.json"), &pretty(&config)?)?;
    let summary = corpus.summary();
    println!(
        "wrote {} records ({} classes, M={}, D={}) to {}",
        corpus.len(),
        summary.per_class.len(),
        corpus.au_count,
        corpus.feature_dim,
        args.out.display()
    );
    Ok(())
}

fn check_noise(noise: f64, any: bool) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&noise) {
        return Err(CliError::Usage(format!("--noise {noise} outside [0, 1)")));
    }
    if !any && !NOISE_GRID.iter().any(|g| (g - noise).abs() < 1e-12) {
        return Err(CliError::Usage(format!(
            "--noise {noise} is not in the grid {{0, 0.1, 0.2, 0.3}}; pass --any-noise to override"
        )));
    }
    Ok(())
}

fn preset_name(config: &TrainConfig) -> String {
    BranchPreset::ALL
        .into_iter()
        .find(|p| p.branches() == config.branches)
        .map_or_else(|| "custom".to_string(), |p| p.to_string())
}

pub fn train(args: &TrainArgs) -> CliResult {
    check_noise(args.noise, args.any_noise)?;
    let mut config: TrainConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(b) = &args.branches {
        config = config.with_preset(b.parse::<BranchPreset>()?);
    }
    if let Some(e) = &args.edges {
        config.edge_mode = e.parse::<EdgeMode>()?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    config.validate()?;

    let branches = preset_name(&config);
    let default_name = format!(
        "{branches}-noise{:.2}-{}-seed{}",
        args.noise,
        run::edge_name(config.edge_mode),
        config.seed
    );
    let out = run::resolve_out(args.out.as_deref(), &default_name).ok_or_else(|| {
        CliError::Usage(format!("no --out given and {} is not set", crate::OUT_ROOT_ENV))
    })?;

    let clean = load_manifest(&args.manifest)?;
    let (noisy, mask) = inject_label_noise(&clean, args.noise, config.seed)?;
    let hash = config_hash(&config);
    let info = RunInfo {
        format: run::RUN_FORMAT.to_string(),
        seed: config.seed,
        config_hash: hash.clone(),
        noise: args.noise,
        branches,
        edges: config.edge_mode,
        source_manifest: args.manifest.display().to_string(),
        taxonomy: clean.taxonomy.names().to_vec(),
        config: config.clone(),
    };

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_text(&out.join(run::CONFIG), &pretty(&info)?)?;
    write_manifest(&noisy, out.join(run::MANIFEST))?;
    mask.write(out.join(run::FLIP_MASK))?;

    let trainer = Trainer::new(config, &noisy)?;
    let epochs = trainer.config.epochs;
    let outcome = trainer.run()?;
    outcome.checkpoint.save(out.join(run::CHECKPOINT))?;
    let rows: Vec<MetricsRow> = outcome
        .report
        .epochs
        .iter()
        .map(|m| MetricsRow {
            seed: info.seed,
            config_hash: hash.clone(),
            metrics: m.clone(),
        })
        .collect();
    write_text(&out.join(run::METRICS), &to_jsonl(&rows)?)?;
    write_audit(&outcome.audit, out.join(run::AUDIT))?;
    if let Some(adj) = &outcome.adjacency {
        adj.write(out.join(run::ADJACENCY))?;
    }

    let last = outcome.report.last().expect("at least one epoch");
    let acc = last.test.as_ref().map(|t| format!("{:.4}", t.accuracy));
    println!(
        "{} epochs, test accuracy {}, relabels applied {}, run {}",
        epochs,
        acc.as_deref().unwrap_or("n/a"),
        outcome.audit.iter().filter(|a| a.applied).count(),
        out.display()
    );
    Ok(())
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(CliError::Usage(format!("--split must be train or test, got {other:?}"))),
    }
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult {
    let split = parse_split(&args.split)?;
    let path: PathBuf = if args.checkpoint.is_dir() {
        args.checkpoint.join(run::CHECKPOINT)
    } else {
        args.checkpoint.clone()
    };
    let checkpoint = Checkpoint::load(&path)?;
    let manifest = load_manifest(&args.manifest)?;
    let report = mtac::evaluate(&checkpoint, &manifest, split)?;
    println!("samples {} accuracy {:.4}", report.samples, report.accuracy);
    if let (Some(v), Some(a)) = (report.ccc_valence, report.ccc_arousal) {
        println!("ccc valence {v:.4} arousal {a:.4}");
    }
    let names = checkpoint.taxonomy.names();
    let header: Vec<String> = (0..names.len()).map(|c| format!("{c:>5}")).collect();
    println!("{:>12} {}", "truth\\pred", header.join(""));
    for (c, row) in report.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|n| format!("{n:5}")).collect();
        println!("{:>12} {}", format!("{c} {}", names[c]), cells.join(""));
    }
    if let Some(out) = &args.out {
        write_text(out, &pretty(&report)?)?;
    }
    Ok(())
}

pub fn audit(args: &AuditArgs) -> CliResult {
    let records = load_audit(args.run.join(run::AUDIT))?;
    let mask = FlipMask::load(args.run.join(run::FLIP_MASK))?;
    let summary = relabel_audit(&records, &mask)?;
    let precision = summary.precision.map_or_else(|| "n/a".to_string(), |p| format!("{p:.4}"));
    println!(
        "applied {} (to truth {}), precision {precision}, recall {:.4} ({} of {} flips recovered)",
        summary.applied, summary.applied_to_truth, summary.recall, summary.recovered, summary.flipped
    );
    for c in &summary.per_class {
        println!("  class {:>3}: {:>5} flipped, {:>5} recovered", c.class, c.flipped, c.recovered);
    }
    if let Some(out) = &args.out {
        write_text(out, &pretty(&summary)?)?;
    }
    Ok(())
}
