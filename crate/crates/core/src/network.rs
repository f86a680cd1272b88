//! The full three-branch network: backbone, target heads and AU stack.

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augraph::GcnStack;
use crate::conv::ConvBackbone;
use crate::data::InputMode;
use crate::model::{Backbone, ClassifierHead, ConfidenceHead, MlpBackbone, VaHead};
use crate::nn::Param;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkShape {
    pub mode: InputMode,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub au_count: usize,
    pub node_dim: usize,
    pub with_au: bool,
    pub confidence_bias: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtacNetwork {
    pub backbone: Backbone,
    pub confidence: ConfidenceHead,
    pub classifier: ClassifierHead,
    pub va: VaHead,
    pub au: Option<GcnStack>,
}

/// Test-time outputs: the AU branch and confidence weighting are not run.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub logits: Array2<f64>,
    pub va: Array2<f64>,
}

impl MtacNetwork {
    pub fn new(shape: &NetworkShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1417_0000_0000_0001);
        let backbone = match shape.mode {
            InputMode::Features => Backbone::Mlp(MlpBackbone::new(shape.input_dim, shape.hidden_dim, shape.feature_dim, &mut rng)),
            InputMode::Image => Backbone::Conv(ConvBackbone::new(shape.feature_dim, &mut rng)),
        };
        let confidence = ConfidenceHead::new(shape.feature_dim, shape.confidence_bias, &mut rng);
        let classifier = ClassifierHead::new(shape.feature_dim, shape.classes, &mut rng);
        let va = VaHead::new(shape.feature_dim, &mut rng);
        let au = shape
            .with_au
            .then(|| GcnStack::new(shape.feature_dim, shape.au_count, shape.node_dim, &mut rng));
        Self {
            backbone,
            confidence,
            classifier,
            va,
            au,
        }
    }

    /// Backbone and target/VA heads; everything the main optimizer updates.
    pub fn main_params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.backbone.params_mut();
        out.extend([
            &mut self.confidence.w,
            &mut self.confidence.b,
            &mut self.classifier.w,
            &mut self.classifier.b,
            &mut self.va.w,
            &mut self.va.b,
        ]);
        out
    }

    pub fn au_params_mut(&mut self) -> Vec<&mut Param> {
        self.au.as_mut().map(GcnStack::params_mut).unwrap_or_default()
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.backbone.params();
        out.extend([
            &self.confidence.w,
            &self.confidence.b,
            &self.classifier.w,
            &self.classifier.b,
            &self.va.w,
            &self.va.b,
        ]);
        if let Some(au) = &self.au {
            out.extend(au.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let Self {
            backbone,
            confidence,
            classifier,
            va,
            au,
        } = self;
        let mut out = backbone.params_mut();
        out.extend([&mut confidence.w, &mut confidence.b, &mut classifier.w, &mut classifier.b, &mut va.w, &mut va.b]);
        if let Some(au) = au.as_mut() {
            out.extend(au.params_mut());
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn infer(&self, inputs: ArrayView2<f64>) -> crate::Result<Inference> {
        let (f, _) = self.backbone.forward(inputs)?;
        Ok(Inference {
            logits: self.classifier.forward(f.view()),
            va: self.va.forward(f.view()),
        })
    }

    pub fn confidence_of(&self, inputs: ArrayView2<f64>) -> crate::Result<Array1<f64>> {
        let (f, _) = self.backbone.forward(inputs)?;
        Ok(self.confidence.forward(f.view()))
    }
}

pub fn grad_norm<'a>(params: impl IntoIterator<Item = &'a Param>) -> f64 {
    params
        .into_iter()
        .map(|p| p.grad.iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}
