use std::path::Path;

use serde_json::json;

use super::PipelineError;
use crate::features::NormStats;
use crate::net::{NetConfig, NetParams};
use crate::numcore::checkpoint::FORMAT_VERSION;
use crate::numcore::{Checkpoint, CheckpointHeader, ParamStore, Tensor};

const NORM_MEAN: &str = "norm.mean";
const NORM_STD: &str = "norm.std";

/// Trained weights plus the normalisation they expect.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: NetParams,
    pub norm: NormStats,
    /// Resolved configuration and training summary.
    pub meta: serde_json::Value,
}

impl TrainedModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.params.config;
        let mut tensors: Vec<(String, Tensor)> = self.params.store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        let row = |v: &[f64]| Tensor::matrix(1, v.len(), v.to_vec()).expect("row shape");
        tensors.push((NORM_MEAN.into(), row(&self.norm.mean)));
        tensors.push((NORM_STD.into(), row(&self.norm.std)));
        Checkpoint {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                layers: c.layers,
                cross_iterations: c.cross_iterations,
                d_intra: c.d_intra,
                d_cross: c.d_cross,
                input_dim: self.params.input_dim,
                meta: json!({ "net": c, "run": self.meta }),
            },
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, PipelineError> {
        let h = &ckpt.header;
        let config: NetConfig = serde_json::from_value(h.meta.get("net").cloned().unwrap_or_default())
            .map_err(|e| PipelineError::Contract(format!("checkpoint network config unreadable: {e}")))?;
        if (config.layers, config.cross_iterations, config.d_intra, config.d_cross) != (h.layers, h.cross_iterations, h.d_intra, h.d_cross) {
            return Err(PipelineError::Contract("checkpoint header disagrees with its stored network config".into()));
        }
        let meta = h.meta.get("run").cloned().unwrap_or_default();
        let input_dim = h.input_dim;
        let mut mean = None;
        let mut std = None;
        let mut params = Vec::new();
        for (name, t) in ckpt.tensors {
            match name.as_str() {
                NORM_MEAN => mean = Some(t.into_values()),
                NORM_STD => std = Some(t.into_values()),
                _ => params.push((name, t)),
            }
        }
        let (Some(mean), Some(std)) = (mean, std) else {
            return Err(PipelineError::Contract("checkpoint lacks normalisation statistics".into()));
        };
        if mean.len() != input_dim || std.len() != input_dim {
            return Err(PipelineError::Contract("normalisation statistics do not match the input width".into()));
        }
        Ok(Self {
            params: NetParams::from_store(&config, input_dim, ParamStore::from_entries(params))?,
            norm: NormStats { mean, std },
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}
