//! Training, template-matching evaluation, feature ablations and sweeps.

mod evaluate;
mod importance;
mod metrics;
mod model;
mod protocol;
mod sampling;
mod sweep;
mod train;
mod vote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureError;
use crate::graphio::GraphError;
use crate::net::{NetConfig, NetError};
use crate::numcore::{AdamConfig, NumError};
use crate::synthgen::SynthError;

pub use evaluate::evaluate;
pub use importance::{feature_importance, importance_csv, topk_csv, topk_eval, zero_slots, ImportanceRow, TopKRow};
pub use metrics::{Confusion, EvalReport, MetricSummary, Metrics, ProtocolSummary};
pub use model::TrainedModel;
pub use protocol::{compare_edge_builders, builder_csv, prepare, run_once, run_protocol, BuilderRow, PreparedData, ProtocolResult, RunOutput};
pub use sampling::{pair_label, sample_pair_batch, LabelledPair};
pub use sweep::{sweep, sweep_csv, SweepGrid, SweepRow};
pub use train::{loss_csv, train, TrainOutcome, CHUNK_PAIRS};
pub use vote::{vote, TemplateMatch, VoteOutcome, VoteTrace};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite loss at step {step} (last finite loss: {})", last_finite.map_or("none".to_string(), |l| l.to_string()))]
    NonFiniteLoss { step: usize, last_finite: Option<f64> },
}

impl PipelineError {
    /// Numeric failures (as opposed to bad data or configuration).
    pub fn is_numeric(&self) -> bool {
        matches!(self, PipelineError::NonFiniteLoss { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Acceptance threshold for evaluation.
    pub theta_test: f64,
    /// Acceptance threshold for feature-importance runs.
    pub theta_explain: f64,
    pub seed: u64,
    pub repeat_count: usize,
    pub optimizer: AdamConfig,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 64,
            theta_test: 0.5,
            theta_explain: 0.8,
            seed: 0,
            repeat_count: 10,
            optimizer: AdamConfig::default(),
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.batch_size < 1 {
            return Err(PipelineError::Parameter("batch_size must be >= 1".into()));
        }
        for (name, t) in [("theta_test", self.theta_test), ("theta_explain", self.theta_explain)] {
            check_theta(name, t)?;
        }
        self.net.validate()?;
        Ok(())
    }
}

/// Stratified split fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub template_frac: f64,
    pub train_frac: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            template_frac: 0.10,
            train_frac: 0.80,
        }
    }
}

/// Everything one split-train-evaluate run needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub split: SplitConfig,
    pub train: TrainConfig,
}

pub(crate) fn check_theta(name: &str, theta: f64) -> Result<(), PipelineError> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(PipelineError::Parameter(format!("{name} = {theta} outside [0, 1]")))
    }
}

/// Render CSV records to a string.
pub(crate) fn to_csv<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| x.to_string())
}

#[cfg(test)]
mod tests;
