//! Run configuration: defaults, a TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use icgm_core::features::DEFAULT_LEVELS;
use icgm_core::graphio::{BuildMethod, EdgeSpec, LabelVocabulary, UnknownLabelPolicy, FEMUR_ROIS};
use icgm_core::pipeline::{ProtocolConfig, SplitConfig, SweepGrid, TrainConfig};
use icgm_core::synthgen::SynthSpec;
use serde::{Deserialize, Serialize};

pub const SNAPSHOT_FILE: &str = "resolved_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// The one top-level seed. It replaces the `seed` of the `train` and
    /// `synth` sections, and repeated runs derive theirs from it.
    pub seed: u64,
    /// Independent runs; replaces `train.repeat_count`.
    pub repeat: usize,
    pub out: PathBuf,
    pub paths: Paths,
    pub graphs: GraphBuildConfig,
    pub synth: SynthSpec,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub explain: ExplainConfig,
    pub sweep: SweepGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            repeat: 1,
            out: PathBuf::from("out"),
            paths: Paths::default(),
            graphs: GraphBuildConfig::default(),
            synth: SynthSpec::default(),
            split: SplitConfig::default(),
            train: TrainConfig {
                repeat_count: 1,
                ..TrainConfig::default()
            },
            explain: ExplainConfig::default(),
            sweep: SweepGrid::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory of per-subject annotation JSON files named `<subject_id>.json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subjects: Option<PathBuf>,
    /// Optional precomputed radiomics table.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    /// Dataset manifest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphBuildConfig {
    pub edge_method: BuildMethod,
    pub knn_k: usize,
    pub distance_threshold: f64,
    pub glcm_levels: usize,
    pub roi_labels: Vec<String>,
    /// Keep RoIs outside `roi_labels` (with a warning) instead of failing the subject.
    pub allow_unknown_labels: bool,
}

impl Default for GraphBuildConfig {
    fn default() -> Self {
        Self {
            edge_method: BuildMethod::Knn,
            knn_k: 2,
            distance_threshold: 40.0,
            glcm_levels: DEFAULT_LEVELS,
            roi_labels: FEMUR_ROIS.iter().map(|s| s.to_string()).collect(),
            allow_unknown_labels: false,
        }
    }
}

impl GraphBuildConfig {
    pub fn edge_spec(&self) -> EdgeSpec {
        EdgeSpec {
            method: self.edge_method,
            k: self.knn_k,
            threshold: self.distance_threshold,
        }
    }

    pub fn vocabulary(&self) -> LabelVocabulary {
        LabelVocabulary {
            labels: self.roi_labels.clone(),
            unknown: if self.allow_unknown_labels { UnknownLabelPolicy::Warn } else { UnknownLabelPolicy::Reject },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    /// Feature counts kept for the top-K evaluation.
    pub topk: Vec<usize>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            topk: vec![1, 5, 10, 20, 50, 100, 130],
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub repeat: Option<usize>,
    pub annotations: Option<PathBuf>,
    pub subjects: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub synth_spec: Option<PathBuf>,
    pub steps: Option<usize>,
    pub theta_test: Option<f64>,
    pub theta_explain: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("config {}", path.display()))
    }

    /// Defaults, then `file`, then `flags`.
    pub fn resolve(file: Option<&Path>, flags: Overrides) -> anyhow::Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(p) = &flags.synth_spec {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading synth spec {}", p.display()))?;
            cfg.synth = toml::from_str(&text).with_context(|| format!("synth spec {}", p.display()))?;
        }
        if let Some(s) = flags.seed {
            cfg.seed = s;
        }
        if let Some(o) = flags.out {
            cfg.out = o;
        }
        if let Some(r) = flags.repeat {
            cfg.repeat = r;
        }
        let paths = &mut cfg.paths;
        for (slot, flag) in [
            (&mut paths.annotations, flags.annotations),
            (&mut paths.subjects, flags.subjects),
            (&mut paths.features, flags.features),
            (&mut paths.data, flags.data),
        ] {
            if flag.is_some() {
                *slot = flag;
            }
        }
        if !flags.checkpoints.is_empty() {
            paths.checkpoints = flags.checkpoints;
        }
        if let Some(s) = flags.steps {
            cfg.train.steps = s;
        }
        if let Some(t) = flags.theta_test {
            cfg.train.theta_test = t;
        }
        if let Some(t) = flags.theta_explain {
            cfg.train.theta_explain = t;
        }
        cfg.train.seed = cfg.seed;
        cfg.train.repeat_count = cfg.repeat;
        cfg.synth.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.seed > i64::MAX as u64 {
            bail!("seed {} is too large; the config format stores integers as signed 64-bit", self.seed);
        }
        self.train.validate()?;
        if self.graphs.glcm_levels < 2 {
            bail!("graphs.glcm_levels must be at least 2");
        }
        Ok(())
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            split: self.split,
            train: self.train.clone(),
        }
    }

    /// Write the resolved configuration into the output directory.
    pub fn write_snapshot(&self, command: &str) -> anyhow::Result<PathBuf> {
        let body = toml::to_string(self).context("serialising the resolved config")?;
        let text = format!("# resolved configuration of `icgm {command}`\n{body}");
        let path = self.out.join(SNAPSHOT_FILE);
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        icgm_core::graphio::write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
