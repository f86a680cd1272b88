//! Shared domain types, manifest ingestion and deterministic batch iteration.
//!
//! A manifest is a UTF-8, tab-separated file with one sample per line:
//!
//! ```text
//! #schema=mtac-manifest-v1 C=7 M=8 D=32
//! id  split  emotion  valence  arousal  au-bits  features...
//! ```
//!
//! Features are whitespace-separated inside the last column. Absent VA is
//! written as `nan` in both VA columns, absent AU as a run of `-`. In image
//! mode (`mode=image` in the header) the last column is a path, relative to
//! the manifest, to a 32x32 grayscale image.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

pub const SCHEMA_TAG: &str = "#schema=mtac-manifest-v1";
pub const IMAGE_SIDE: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionTaxonomy {
    class_names: Vec<String>,
}

impl EmotionTaxonomy {
    pub fn new(class_names: Vec<String>) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "taxonomy needs at least 2 classes, got {}",
                class_names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &class_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate class name {name:?}")));
            }
        }
        Ok(Self { class_names })
    }

    /// Classes named `c0..c{n-1}`, used when a manifest header only gives C.
    pub fn numbered(count: usize) -> Result<Self> {
        Self::new((0..count).map(|i| format!("c{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.class_names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelProvenance {
    Original,
    InjectedFlip,
    Relabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Features,
    Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub split: Split,
    /// Feature vector, or the flattened image pixels in image mode.
    pub features: Vec<f64>,
    /// Source path of the image, relative to the manifest (image mode only).
    pub image_path: Option<String>,
    pub emotion: usize,
    /// Valence and arousal, `None` when the record marks them absent.
    pub va: Option<[f64; 2]>,
    pub au: Option<Vec<u8>>,
    pub label_provenance: LabelProvenance,
    pub flip_truth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Positions of the batch's samples in the manifest's record list.
    pub indices: Vec<usize>,
    pub epoch: usize,
    /// Global batch counter, starting at 1.
    pub index: u64,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn samples<'a>(&'a self, manifest: &'a DatasetManifest) -> impl Iterator<Item = &'a Sample> + 'a {
        self.indices.iter().map(move |&i| &manifest.records[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<Sample>,
    pub taxonomy: EmotionTaxonomy,
    pub au_count: usize,
    pub feature_dim: usize,
    pub mode: InputMode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestSummary {
    pub per_class: Vec<usize>,
    pub per_au: Vec<usize>,
    pub va_available: bool,
    pub au_available: bool,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.taxonomy.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records restricted to one split.
    pub fn subset(&self, split: Split) -> DatasetManifest {
        DatasetManifest {
            records: self.records.iter().filter(|s| s.split == split).cloned().collect(),
            taxonomy: self.taxonomy.clone(),
            au_count: self.au_count,
            feature_dim: self.feature_dim,
            mode: self.mode,
        }
    }

    /// VA labels present on every training record.
    pub fn va_available(&self) -> bool {
        let mut train = self.records.iter().filter(|s| s.split == Split::Train).peekable();
        train.peek().is_some() && train.all(|s| s.va.is_some())
    }

    /// AU labels present on every training record.
    pub fn au_available(&self) -> bool {
        let mut train = self.records.iter().filter(|s| s.split == Split::Train).peekable();
        train.peek().is_some() && train.all(|s| s.au.is_some())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.records {
            counts[s.emotion] += 1;
        }
        counts
    }

    pub fn summary(&self) -> ManifestSummary {
        let mut per_au = vec![0; self.au_count];
        for s in &self.records {
            if let Some(au) = &s.au {
                for (count, &bit) in per_au.iter_mut().zip(au) {
                    *count += bit as usize;
                }
            }
        }
        ManifestSummary {
            per_class: self.class_counts(),
            per_au,
            va_available: self.va_available(),
            au_available: self.au_available(),
        }
    }

    pub fn header_line(&self) -> String {
        let mut line = format!(
            "{SCHEMA_TAG} C={} M={} D={}",
            self.num_classes(),
            self.au_count,
            self.feature_dim
        );
        if self.mode == InputMode::Image {
            line.push_str(" mode=image");
        }
        line
    }

    /// Serializes the manifest in the line-delimited schema.
    pub fn to_manifest_string(&self) -> String {
        let mut out = self.header_line();
        out.push('\n');
        for s in &self.records {
            write_record(&mut out, s, self.au_count);
            out.push('\n');
        }
        out
    }
}

fn write_record(out: &mut String, s: &Sample, au_count: usize) {
    let _ = write!(out, "{}\t{}\t{}\t", s.id, s.split, s.emotion);
    match s.va {
        Some([v, a]) => {
            let _ = write!(out, "{v}\t{a}\t");
        }
        None => out.push_str("nan\tnan\t"),
    }
    match &s.au {
        Some(bits) => bits.iter().for_each(|&b| out.push(if b == 1 { '1' } else { '0' })),
        None => (0..au_count).for_each(|_| out.push('-')),
    }
    out.push('\t');
    match &s.image_path {
        Some(path) => out.push_str(path),
        None => {
            for (k, x) in s.features.iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{x}");
            }
        }
    }
}

struct Header {
    classes: usize,
    au_count: usize,
    feature_dim: usize,
    mode: InputMode,
}

fn parse_header(line: &str) -> Result<Header> {
    let rest = line
        .strip_prefix(SCHEMA_TAG)
        .ok_or_else(|| Error::Schema(format!("header must start with {SCHEMA_TAG}")))?;
    let (mut c, mut m, mut d, mut mode) = (None, None, None, InputMode::Features);
    for tok in rest.split_whitespace() {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| Error::Schema(format!("malformed header token {tok:?}")))?;
        let parse = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Schema(format!("header field {key} is not an integer: {v:?}")))
        };
        match key {
            "C" => c = Some(parse(value)?),
            "M" => m = Some(parse(value)?),
            "D" => d = Some(parse(value)?),
            "mode" => {
                mode = match value {
                    "features" => InputMode::Features,
                    "image" => InputMode::Image,
                    other => return Err(Error::Schema(format!("unknown mode {other:?}"))),
                }
            }
            other => return Err(Error::Schema(format!("unknown header field {other:?}"))),
        }
    }
    let missing = |k: &str| Error::Schema(format!("header missing {k}="));
    Ok(Header {
        classes: c.ok_or_else(|| missing("C"))?,
        au_count: m.ok_or_else(|| missing("M"))?,
        feature_dim: d.ok_or_else(|| missing("D"))?,
        mode,
    })
}

fn parse_unit(field: &str, what: &str, line: usize) -> Result<f64> {
    let x: f64 = field.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{what} is not a number: {field:?}"),
    })?;
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Validation {
            line,
            msg: format!("{what} {x} outside [-1, 1]"),
        });
    }
    Ok(x)
}

fn parse_record(raw: &str, line: usize, header: &Header, base_dir: &Path) -> Result<Sample> {
    let cols: Vec<&str> = raw.split('\t').collect();
    if cols.len() != 7 {
        return Err(Error::Schema(format!(
            "line {line}: expected 7 tab-separated columns, found {}",
            cols.len()
        )));
    }
    let id = cols[0].to_string();
    if id.is_empty() {
        return Err(Error::Parse { line, msg: "empty id".into() });
    }
    let split = match cols[1] {
        "train" => Split::Train,
        "test" => Split::Test,
        other => {
            return Err(Error::Parse {
                line,
                msg: format!("unknown split {other:?}"),
            })
        }
    };
    let emotion: usize = cols[2].parse().map_err(|_| Error::Parse {
        line,
        msg: format!("emotion index is not an integer: {:?}", cols[2]),
    })?;
    if emotion >= header.classes {
        return Err(Error::Validation {
            line,
            msg: format!("emotion index {emotion} out of range for C={}", header.classes),
        });
    }

    let va = match (cols[3], cols[4]) {
        ("nan", "nan") => None,
        ("nan", _) | (_, "nan") => {
            return Err(Error::Validation {
                line,
                msg: "valence and arousal must both be present or both be nan".into(),
            })
        }
        (v, a) => Some([parse_unit(v, "valence", line)?, parse_unit(a, "arousal", line)?]),
    };

    let au_field = cols[5];
    if au_field.chars().count() != header.au_count {
        return Err(Error::Validation {
            line,
            msg: format!("AU field has {} characters, expected M={}", au_field.len(), header.au_count),
        });
    }
    let au = if au_field.chars().all(|ch| ch == '-') && header.au_count > 0 {
        None
    } else {
        let bits = au_field
            .chars()
            .map(|ch| match ch {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                other => Err(Error::Validation {
                    line,
                    msg: format!("AU bit {other:?} is not 0 or 1"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        Some(bits)
    };

    let (features, image_path) = match header.mode {
        InputMode::Features => {
            let feats = cols[6]
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        msg: format!("feature is not a number: {tok:?}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if feats.len() != header.feature_dim {
                return Err(Error::Validation {
                    line,
                    msg: format!("{} features, expected D={}", feats.len(), header.feature_dim),
                });
            }
            if let Some(bad) = feats.iter().find(|x| !x.is_finite()) {
                return Err(Error::Validation {
                    line,
                    msg: format!("non-finite feature {bad}"),
                });
            }
            (feats, None)
        }
        InputMode::Image => {
            let rel = cols[6].trim().to_string();
            let pixels = load_image(&base_dir.join(&rel))?;
            (pixels, Some(rel))
        }
    };

    Ok(Sample {
        id,
        split,
        features,
        image_path,
        emotion,
        va,
        au,
        label_provenance: LabelProvenance::Original,
        flip_truth: None,
    })
}

/// Loads a 32x32 grayscale image as pixels scaled to [0, 1], row-major.
pub fn load_image(path: &Path) -> Result<Vec<f64>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let gray = img.to_luma8();
    if gray.width() as usize != IMAGE_SIDE || gray.height() as usize != IMAGE_SIDE {
        return Err(Error::Image {
            path: path.to_path_buf(),
            msg: format!("expected {IMAGE_SIDE}x{IMAGE_SIDE}, got {}x{}", gray.width(), gray.height()),
        });
    }
    Ok(gray.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect())
}

/// Parses a manifest from text. `base_dir` resolves image paths.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<DatasetManifest> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break parse_header(l.trim_end())?,
            None => return Err(Error::Schema("empty manifest: missing header".into())),
        }
    };
    if header.mode == InputMode::Image && header.feature_dim != IMAGE_SIDE * IMAGE_SIDE {
        return Err(Error::Schema(format!(
            "image mode requires D={}, header says D={}",
            IMAGE_SIDE * IMAGE_SIDE,
            header.feature_dim
        )));
    }
    let taxonomy = EmotionTaxonomy::numbered(header.classes)?;
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, raw) in lines {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let sample = parse_record(raw, line, &header, base_dir)?;
        if !ids.insert(sample.id.clone()) {
            return Err(Error::Validation {
                line,
                msg: format!("duplicate id {:?}", sample.id),
            });
        }
        records.push(sample);
    }
    Ok(DatasetManifest {
        records,
        taxonomy,
        au_count: header.au_count,
        feature_dim: header.feature_dim,
        mode: header.mode,
    })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    parse_manifest(&text, &base)
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_manifest_string()).map_err(io_err(path))
}

/// Endless, deterministic stream of batches over a fixed number of records.
///
/// Each epoch is an independent shuffle seeded from `(seed, epoch)`, so any
/// epoch's order can be reproduced without replaying earlier ones.
#[derive(Debug, Clone)]
pub struct BatchStream {
    len: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    order: Vec<usize>,
    cursor: usize,
    next_index: u64,
}

impl BatchStream {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidInput("cannot iterate an empty manifest".into()));
        }
        if batch_size == 0 || batch_size > len {
            return Err(Error::InvalidInput(format!(
                "batch size {batch_size} must be in 1..={len}"
            )));
        }
        let mut stream = Self {
            len,
            batch_size,
            seed,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
            next_index: 1,
        };
        stream.order = stream.epoch_order(0);
        Ok(stream)
    }

    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len).collect();
        let mixed = self.seed ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mixed));
        order
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len.div_ceil(self.batch_size)
    }

    /// Batches of the current epoch that have not been emitted yet.
    pub fn next_epoch(&mut self) -> Vec<Batch> {
        let epoch = self.epoch;
        let mut out = Vec::with_capacity(self.batches_per_epoch());
        while self.epoch == epoch {
            out.extend(self.next());
        }
        out
    }
}

impl Iterator for BatchStream {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let end = (self.cursor + self.batch_size).min(self.len);
        let batch = Batch {
            indices: self.order[self.cursor..end].to_vec(),
            epoch: self.epoch,
            index: self.next_index,
        };
        self.next_index += 1;
        self.cursor = end;
        if self.cursor == self.len {
            self.epoch += 1;
            self.cursor = 0;
            self.order = self.epoch_order(self.epoch);
        }
        Some(batch)
    }
}

pub fn iterate_batches(manifest: &DatasetManifest, batch_size: usize, seed: u64) -> Result<BatchStream> {
    BatchStream::new(manifest.len(), batch_size, seed)
}
