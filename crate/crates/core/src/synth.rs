//! Synthetic corpus generator with known ground truth, and the uniform
//! label-flip injector used for the noisy-label experiments.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, EmotionTaxonomy, InputMode, LabelProvenance, Sample, Split};
use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub classes: usize,
    pub au_count: usize,
    pub feature_dim: usize,
    /// Distance between any two class means (exact when `classes <= feature_dim`).
    pub cluster_separation: f64,
    pub va_anchors: Vec<[f64; 2]>,
    /// `classes x au_count` activation probabilities.
    pub au_profiles: Vec<Vec<f64>>,
    pub feature_noise: f64,
    /// Scale of the within-class VA jitter, which is tied to the feature noise.
    pub va_noise: f64,
    /// Probability of flipping each drawn AU bit.
    pub au_noise: f64,
    pub seed: u64,
    pub train_per_class: Vec<usize>,
    pub test_per_class: Vec<usize>,
}

impl GeneratorConfig {
    /// Circumplex VA anchors and overlapping multi-hot AU profiles.
    pub fn standard(classes: usize, au_count: usize, feature_dim: usize, seed: u64) -> Self {
        Self {
            classes,
            au_count,
            feature_dim,
            cluster_separation: 6.0,
            va_anchors: circumplex_anchors(classes, 0.7),
            au_profiles: overlapping_profiles(classes, au_count, 0.85, 0.05),
            feature_noise: 1.0,
            va_noise: 0.15,
            au_noise: 0.0,
            seed,
            train_per_class: vec![700; classes],
            test_per_class: vec![100; classes],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive".into());
        }
        if !(self.cluster_separation >= 0.0 && self.cluster_separation.is_finite()) {
            return fail(format!("cluster_separation {} must be finite and >= 0", self.cluster_separation));
        }
        if self.va_anchors.len() != self.classes {
            return fail(format!("{} VA anchors for {} classes", self.va_anchors.len(), self.classes));
        }
        if self.va_anchors.iter().flatten().any(|x| !(-1.0..=1.0).contains(x)) {
            return fail("VA anchors must lie in the unit square".into());
        }
        if self.au_profiles.len() != self.classes || self.au_profiles.iter().any(|p| p.len() != self.au_count) {
            return fail(format!("AU profiles must be {} x {}", self.classes, self.au_count));
        }
        if self.au_profiles.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return fail("AU probabilities must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.au_noise) {
            return fail("au_noise must lie in [0, 1]".into());
        }
        if self.feature_noise < 0.0 || self.va_noise < 0.0 {
            return fail("noise scales must be non-negative".into());
        }
        for (name, counts) in [("train", &self.train_per_class), ("test", &self.test_per_class)] {
            if counts.len() != self.classes {
                return fail(format!("{name}_per_class has {} entries for {} classes", counts.len(), self.classes));
            }
        }
        Ok(())
    }

    /// Probability that AU `k` is observed active for a class-`c` sample.
    pub fn effective_au_probability(&self, c: usize, k: usize) -> f64 {
        let p = self.au_profiles[c][k];
        p * (1.0 - self.au_noise) + (1.0 - p) * self.au_noise
    }
}

/// Anchors evenly spaced on a circle of the given radius.
pub fn circumplex_anchors(classes: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..classes)
        .map(|c| {
            let angle = 2.0 * PI * c as f64 / classes as f64;
            [radius * angle.cos(), radius * angle.sin()]
        })
        .collect()
}

/// Class `c` activates AUs `c` and `c+1` (mod M) with probability `high`, so
/// neighbouring classes share one AU; even classes add AU `c + M/2`.
pub fn overlapping_profiles(classes: usize, au_count: usize, high: f64, low: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            let mut row = vec![low; au_count];
            if au_count == 0 {
                return row;
            }
            row[c % au_count] = high;
            row[(c + 1) % au_count] = high;
            if c % 2 == 0 && au_count >= 4 {
                row[(c + au_count / 2) % au_count] = high;
            }
            row
        })
        .collect()
}

/// Class means with pairwise distance `separation`: scaled orthonormal
/// directions when `classes <= dim`, random unit directions otherwise.
pub fn class_means(config: &GeneratorConfig) -> Array2<f64> {
    let (c, d) = (config.classes, config.feature_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0F_C1A55);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(c);
    while basis.len() < c {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        if basis.len() < d {
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue;
        }
        basis.push(v.into_iter().map(|x| x / norm).collect());
    }
    let scale = config.cluster_separation / 2f64.sqrt();
    Array2::from_shape_fn((c, d), |(i, k)| scale * basis[i][k])
}

fn sample_rng(seed: u64, split: Split, class: usize, index: usize) -> ChaCha8Rng {
    let split_tag = match split {
        Split::Train => 0x7A1Du64,
        Split::Test => 0x7E57u64,
    };
    let key = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(split_tag << 48)
        .wrapping_add((class as u64) << 32)
        .wrapping_add(index as u64);
    ChaCha8Rng::seed_from_u64(key)
}

fn draw_sample(config: &GeneratorConfig, means: &Array2<f64>, split: Split, class: usize, index: usize) -> Sample {
    let mut rng = sample_rng(config.seed, split, class, index);
    let z: Vec<f64> = (0..config.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let features = z
        .iter()
        .enumerate()
        .map(|(k, &z)| means[[class, k]] + config.feature_noise * z)
        .collect();
    // Within-class VA variation follows the last two noise coordinates, so it
    // is predictable from the features.
    let d = config.feature_dim;
    let [v, a] = config.va_anchors[class];
    let va = [
        (v + config.va_noise * z[d - 1]).clamp(-1.0, 1.0),
        (a + config.va_noise * z[d.saturating_sub(2)]).clamp(-1.0, 1.0),
    ];
    let au = (0..config.au_count)
        .map(|k| u8::from(rng.random::<f64>() < config.effective_au_probability(class, k)))
        .collect();
    let prefix = match split {
        Split::Train => "tr",
        Split::Test => "te",
    };
    Sample {
        id: format!("{prefix}-c{class}-{index:05}"),
        split,
        features,
        image_path: None,
        emotion: class,
        va: Some(va),
        au: Some(au),
        label_provenance: LabelProvenance::Original,
        flip_truth: None,
    }
}

/// Draws `n_per_class[c]` samples of each class into the given split.
pub fn generate_split(config: &GeneratorConfig, n_per_class: &[usize], split: Split) -> Result<DatasetManifest> {
    config.validate()?;
    if n_per_class.len() != config.classes {
        return Err(Error::Config(format!("{} class counts for {} classes", n_per_class.len(), config.classes)));
    }
    if n_per_class.iter().sum::<usize>() == 0 {
        return Err(Error::InvalidInput("zero total samples requested".into()));
    }
    let means = class_means(config);
    let records = n_per_class
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| (0..n).map(move |i| (c, i)))
        .map(|(c, i)| draw_sample(config, &means, split, c, i))
        .collect();
    Ok(DatasetManifest {
        records,
        taxonomy: EmotionTaxonomy::numbered(config.classes)?,
        au_count: config.au_count,
        feature_dim: config.feature_dim,
        mode: InputMode::Features,
    })
}

/// Training records drawn per `n_per_class`.
pub fn generate(config: &GeneratorConfig, n_per_class: &[usize]) -> Result<DatasetManifest> {
    generate_split(config, n_per_class, Split::Train)
}

/// Train and test splits in one manifest, sized by the config.
pub fn generate_corpus(config: &GeneratorConfig) -> Result<DatasetManifest> {
    let mut corpus = generate_split(config, &config.train_per_class, Split::Train)?;
    if config.test_per_class.iter().sum::<usize>() > 0 {
        corpus
            .records
            .extend(generate_split(config, &config.test_per_class, Split::Test)?.records);
    }
    Ok(corpus)
}

/// Expected `P(AU_p | AU_q)` under the generator for the given class sizes.
pub fn expected_conditional(config: &GeneratorConfig, n_per_class: &[usize]) -> Array2<f64> {
    let m = config.au_count;
    let total: usize = n_per_class.iter().sum();
    let prior: Vec<f64> = n_per_class.iter().map(|&n| n as f64 / total as f64).collect();
    Array2::from_shape_fn((m, m), |(p, q)| {
        let mut joint = 0.0;
        let mut marginal = 0.0;
        for (c, &w) in prior.iter().enumerate() {
            let pq = config.effective_au_probability(c, q);
            let pp = if p == q { 1.0 } else { config.effective_au_probability(c, p) };
            joint += w * pp * pq;
            marginal += w * pq;
        }
        if marginal > 0.0 {
            joint / marginal
        } else if p == q {
            1.0
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipEntry {
    pub id: String,
    pub original: usize,
    pub corrupted: usize,
}

impl FlipEntry {
    pub fn flipped(&self) -> bool {
        self.original != self.corrupted
    }
}

/// One entry per training record; unflipped records have equal classes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlipMask {
    pub entries: Vec<FlipEntry>,
}

pub const FLIP_MASK_HEADER: &str = "#flip-mask-v1";

impl FlipMask {
    pub fn flipped_count(&self) -> usize {
        self.entries.iter().filter(|e| e.flipped()).count()
    }

    pub fn by_id(&self) -> HashMap<&str, &FlipEntry> {
        self.entries.iter().map(|e| (e.id.as_str(), e)).collect()
    }

    /// Mask that records the manifest's training labels unchanged.
    pub fn identity(manifest: &DatasetManifest) -> Self {
        Self {
            entries: manifest
                .records
                .iter()
                .filter(|s| s.split == Split::Train)
                .map(|s| FlipEntry {
                    id: s.id.clone(),
                    original: s.flip_truth.unwrap_or(s.emotion),
                    corrupted: s.emotion,
                })
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(FLIP_MASK_HEADER);
        out.push('\n');
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", e.id, e.original, e.corrupted);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            if cols.len() != 3 {
                return Err(err(format!("expected 3 columns, found {}", cols.len())));
            }
            let class = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad class {s:?}")));
            entries.push(FlipEntry {
                id: cols[0].to_string(),
                original: class(cols[1])?,
                corrupted: class(cols[2])?,
            });
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// Flips exactly `floor(ratio * N)` uniformly chosen training labels, each to
/// a uniformly chosen different class. VA, AU and features are untouched.
///
/// For a fixed seed the flips are nested: every sample flipped at a lower
/// ratio is flipped at a higher one too, to the same wrong class.
pub fn inject_label_noise(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<(DatasetManifest, FlipMask)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidInput(format!("noise ratio {ratio} outside [0, 1)")));
    }
    let classes = manifest.num_classes();
    let mut train: Vec<usize> = (0..manifest.len())
        .filter(|&i| manifest.records[i].split == Split::Train)
        .collect();
    let flips = (ratio * train.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF11B_0000_0000);
    train.shuffle(&mut rng);

    let mut out = manifest.clone();
    for &i in &train[..flips] {
        let sample = &mut out.records[i];
        let original = sample.emotion;
        let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0xC1A5_5000_0000 ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let r = pick.random_range(0..classes - 1);
        sample.emotion = if r >= original { r + 1 } else { r };
        sample.flip_truth = Some(original);
        sample.label_provenance = LabelProvenance::InjectedFlip;
    }
    let mask = FlipMask::identity(&out);
    Ok((out, mask))
}
