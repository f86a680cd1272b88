//! Versioned checkpoint container.
//!
//! A checkpoint is a single JSON document:
//!
//! | field           | content                                              |
//! |-----------------|------------------------------------------------------|
//! | `format`        | always `mtac-checkpoint-v1`                          |
//! | `config`        | the training configuration snapshot                  |
//! | `config_hash`   | first 16 hex digits of SHA-256 over the config JSON  |
//! | `shape`         | input mode and layer dimensions                      |
//! | `epoch`         | epochs completed                                     |
//! | `batch_counter` | global batches consumed                              |
//! | `params`        | map of parameter name to `{rows, cols, data}`        |
//! | `template`      | memory template state, absent without the AU branch  |
//! | `adjacency`     | raw AU adjacency rows, absent without the AU branch  |
//!
//! Floats are written with shortest round-trip formatting, so saving a
//! loaded checkpoint reproduces the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{EmotionTaxonomy, InputMode};
use crate::error::{io_err, Error, Result};
use crate::memory::MemoryTemplate;
use crate::network::{MtacNetwork, NetworkShape};
use crate::trainer::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "mtac-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredArray {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl StoredArray {
    pub fn from_array(a: &Array2<f64>) -> Self {
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| Error::Checkpoint(format!("bad array shape: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredShape {
    pub mode: InputMode,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub au_count: usize,
    pub node_dim: usize,
    pub confidence_bias: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: TrainConfig,
    pub config_hash: String,
    pub taxonomy: EmotionTaxonomy,
    pub shape: StoredShape,
    pub epoch: usize,
    pub batch_counter: u64,
    pub params: BTreeMap<String, StoredArray>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<MemoryTemplate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<StoredArray>,
}

pub fn config_hash(config: &TrainConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn capture(
        network: &MtacNetwork,
        shape: &NetworkShape,
        config: &TrainConfig,
        taxonomy: &EmotionTaxonomy,
        epoch: usize,
        batch_counter: u64,
        template: Option<&MemoryTemplate>,
        adjacency: Option<&Array2<f64>>,
    ) -> Self {
        let params = network
            .params()
            .into_iter()
            .map(|p| (p.name.clone(), StoredArray::from_array(&p.value)))
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            config: config.clone(),
            config_hash: config_hash(config),
            taxonomy: taxonomy.clone(),
            shape: StoredShape {
                mode: shape.mode,
                input_dim: shape.input_dim,
                hidden_dim: shape.hidden_dim,
                feature_dim: shape.feature_dim,
                classes: shape.classes,
                au_count: shape.au_count,
                node_dim: shape.node_dim,
                confidence_bias: shape.confidence_bias,
            },
            epoch,
            batch_counter,
            params,
            template: template.cloned(),
            adjacency: adjacency.map(StoredArray::from_array),
        }
    }

    pub fn has_au(&self) -> bool {
        self.params.keys().any(|k| k.starts_with("au."))
    }

    /// Drops the AU branch and its template and adjacency.
    pub fn without_au(&self) -> Self {
        let mut out = self.clone();
        out.params.retain(|k, _| !k.starts_with("au."));
        out.template = None;
        out.adjacency = None;
        out
    }

    pub fn network_shape(&self) -> NetworkShape {
        let s = &self.shape;
        NetworkShape {
            mode: s.mode,
            input_dim: s.input_dim,
            hidden_dim: s.hidden_dim,
            feature_dim: s.feature_dim,
            classes: s.classes,
            au_count: s.au_count,
            node_dim: s.node_dim,
            with_au: self.has_au(),
            confidence_bias: s.confidence_bias,
        }
    }

    /// Rebuilds the network, requiring every parameter it declares.
    pub fn restore(&self) -> Result<MtacNetwork> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format {:?}", self.format)));
        }
        let mut net = MtacNetwork::new(&self.network_shape(), 0);
        for p in net.params_mut() {
            let stored = self
                .params
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", p.name)))?;
            let value = stored.to_array()?;
            if value.dim() != p.value.dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    value.dim(),
                    p.value.dim()
                )));
            }
            p.value = value;
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format {:?}", ck.format)));
        }
        Ok(ck)
    }
}
