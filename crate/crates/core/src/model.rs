//! Shared backbone and the target-branch heads.
//!
//! The backbone maps each input row to a feature vector `f`. Three heads read
//! `f`: a sigmoid confidence score, a linear emotion classifier and a
//! tanh-squashed valence/arousal regressor. Each component caches what its
//! backward pass needs and accumulates gradients into its own parameters.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::conv::{ConvBackbone, ConvCache};
use crate::data::{Batch, DatasetManifest};
use crate::error::{Error, Result};
use crate::nn::{affine, affine_backward, leaky_relu, leaky_relu_backward, sigmoid, Param};

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_FEATURE_DIM: usize = 64;

/// Two-layer perceptron `D_in -> hidden -> D`, leaky-rectified.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpBackbone {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Array2<f64>,
    pre1: Array2<f64>,
    act1: Array2<f64>,
    pre2: Array2<f64>,
}

impl MlpBackbone {
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            w1: Param::glorot("backbone.w1", input_dim, hidden, rng),
            b1: Param::zeros("backbone.b1", 1, hidden),
            w2: Param::glorot("backbone.w2", hidden, out_dim, rng),
            b2: Param::zeros("backbone.b2", 1, out_dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let pre1 = affine(x, &self.w1, &self.b1);
        let act1 = leaky_relu(&pre1);
        let pre2 = affine(act1.view(), &self.w2, &self.b2);
        let out = leaky_relu(&pre2);
        (
            out,
            MlpCache {
                input: x.to_owned(),
                pre1,
                act1,
                pre2,
            },
        )
    }

    pub fn backward(&mut self, cache: &MlpCache, d_out: &Array2<f64>) {
        let mut d = d_out.clone();
        leaky_relu_backward(&mut d, &cache.pre2);
        let mut d_act1 = affine_backward(cache.act1.view(), &d, &mut self.w2, &mut self.b2);
        leaky_relu_backward(&mut d_act1, &cache.pre1);
        affine_backward(cache.input.view(), &d_act1, &mut self.w1, &mut self.b1);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    Mlp(MlpBackbone),
    Conv(ConvBackbone),
}

#[derive(Debug, Clone)]
pub enum BackboneCache {
    Mlp(MlpCache),
    Conv(ConvCache),
}

impl Backbone {
    pub fn input_dim(&self) -> usize {
        match self {
            Backbone::Mlp(m) => m.w1.value.nrows(),
            Backbone::Conv(_) => crate::data::IMAGE_SIDE * crate::data::IMAGE_SIDE,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Backbone::Mlp(m) => m.w2.value.ncols(),
            Backbone::Conv(c) => c.output_dim(),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, BackboneCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "backbone expects {} input columns, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(match self {
            Backbone::Mlp(m) => {
                let (f, c) = m.forward(x);
                (f, BackboneCache::Mlp(c))
            }
            Backbone::Conv(m) => {
                let (f, c) = m.forward(x);
                (f, BackboneCache::Conv(c))
            }
        })
    }

    pub fn backward(&mut self, cache: &BackboneCache, d_out: &Array2<f64>) {
        match (self, cache) {
            (Backbone::Mlp(m), BackboneCache::Mlp(c)) => m.backward(c, d_out),
            (Backbone::Conv(m), BackboneCache::Conv(c)) => m.backward(c, d_out),
            _ => unreachable!("cache produced by a different backbone"),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Backbone::Mlp(m) => vec![&m.w1, &m.b1, &m.w2, &m.b2],
            Backbone::Conv(c) => c.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Backbone::Mlp(m) => vec![&mut m.w1, &mut m.b1, &mut m.w2, &mut m.b2],
            Backbone::Conv(c) => c.params_mut(),
        }
    }
}

/// Stacks the inputs of a batch into an `N x D_in` matrix.
pub fn batch_inputs(batch: &Batch, manifest: &DatasetManifest) -> Array2<f64> {
    stack_rows(batch.samples(manifest).map(|s| s.features.as_slice()), manifest.feature_dim)
}

pub fn stack_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Array2<f64> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        data.extend_from_slice(r);
        n += 1;
    }
    Array2::from_shape_vec((n, dim), data).expect("rows of equal length")
}

pub fn extract_features(batch: &Batch, manifest: &DatasetManifest, backbone: &Backbone) -> Result<(Array2<f64>, BackboneCache)> {
    backbone.forward(batch_inputs(batch, manifest).view())
}

/// Bounds that keep the score strictly inside (0, 1): the smallest normal
/// f64 and the largest f64 below one.
pub const ALPHA_MIN: f64 = f64::MIN_POSITIVE;
pub const ALPHA_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Sigmoid confidence score per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceHead {
    pub w: Param,
    pub b: Param,
    pub use_bias: bool,
}

impl ConfidenceHead {
    pub fn new<R: Rng>(dim: usize, use_bias: bool, rng: &mut R) -> Self {
        Self {
            w: Param::glorot("confidence.w", dim, 1, rng),
            b: Param::zeros("confidence.b", 1, 1),
            use_bias,
        }
    }

    pub fn pre_activation(&self, f: ArrayView2<f64>) -> Array1<f64> {
        let bias = if self.use_bias { self.b.value[[0, 0]] } else { 0.0 };
        f.dot(&self.w.value.column(0)) + bias
    }

    /// An f64 sigmoid rounds to exactly 1 past x of about 37 (and to 0 far
    /// below), so the result is clamped back into the open interval.
    pub fn forward(&self, f: ArrayView2<f64>) -> Array1<f64> {
        self.pre_activation(f).mapv(|x| sigmoid(x).clamp(ALPHA_MIN, ALPHA_MAX))
    }

    /// Accumulates parameter gradients and returns the feature gradient.
    pub fn backward(&mut self, f: ArrayView2<f64>, alphas: ArrayView1<f64>, d_alphas: ArrayView1<f64>) -> Array2<f64> {
        let d_pre: Array1<f64> = ndarray::Zip::from(&alphas)
            .and(&d_alphas)
            .map_collect(|&a, &d| d * a * (1.0 - a));
        let mut grad_w = self.w.grad.column_mut(0);
        grad_w += &f.t().dot(&d_pre);
        if self.use_bias {
            self.b.grad[[0, 0]] += d_pre.sum();
        }
        let w = self.w.value.column(0);
        let mut d_f = Array2::zeros(f.dim());
        for (mut row, &d) in d_f.axis_iter_mut(Axis(0)).zip(d_pre.iter()) {
            row.scaled_add(d, &w);
        }
        d_f
    }
}

pub fn confidence_scores(f: ArrayView2<f64>, head: &ConfidenceHead) -> Array1<f64> {
    head.forward(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub w: Param,
    pub b: Param,
}

impl ClassifierHead {
    pub fn new<R: Rng>(dim: usize, classes: usize, rng: &mut R) -> Self {
        Self {
            w: Param::glorot("classifier.w", dim, classes, rng),
            b: Param::zeros("classifier.b", 1, classes),
        }
    }

    pub fn forward(&self, f: ArrayView2<f64>) -> Array2<f64> {
        affine(f, &self.w, &self.b)
    }

    pub fn backward(&mut self, f: ArrayView2<f64>, d_logits: &Array2<f64>) -> Array2<f64> {
        affine_backward(f, d_logits, &mut self.w, &mut self.b)
    }
}

pub fn classify(f: ArrayView2<f64>, head: &ClassifierHead) -> Array2<f64> {
    head.forward(f)
}

/// Index of the largest entry, ties resolved toward the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = j;
        }
    }
    best
}

pub fn predict(logits: ArrayView2<f64>) -> Vec<usize> {
    logits.outer_iter().map(argmax).collect()
}

/// Valence/arousal regressor squashed to `[-1, 1]` by tanh.
#[derive(Debug, Clone, PartialEq)]
pub struct VaHead {
    pub w: Param,
    pub b: Param,
}

impl VaHead {
    pub fn new<R: Rng>(dim: usize, rng: &mut R) -> Self {
        Self {
            w: Param::glorot("va.w", dim, 2, rng),
            b: Param::zeros("va.b", 1, 2),
        }
    }

    pub fn forward(&self, f: ArrayView2<f64>) -> Array2<f64> {
        affine(f, &self.w, &self.b).mapv(f64::tanh)
    }

    /// `out` is the forward output; returns the feature gradient.
    pub fn backward(&mut self, f: ArrayView2<f64>, out: &Array2<f64>, d_out: &Array2<f64>) -> Array2<f64> {
        let d_pre = d_out * &out.mapv(|v| 1.0 - v * v);
        affine_backward(f, &d_pre, &mut self.w, &mut self.b)
    }
}

pub fn predict_va(f: ArrayView2<f64>, head: &VaHead) -> Array2<f64> {
    head.forward(f)
}
