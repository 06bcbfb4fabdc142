use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{evaluate, fmt_opt, to_csv, train, EvalReport, PipelineError, ProtocolConfig, ProtocolSummary, SplitConfig, TrainConfig, TrainedModel};
use crate::features::NormStats;
use crate::graphio::{make_split, BuildMethod, DatasetSplit, RoiGraph};
use crate::seed::derive;
use crate::synthgen::{generate, SynthSpec};
use crate::Exec;

/// Graphs normalised with statistics fitted on their train split.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub graphs: Vec<RoiGraph>,
    pub split: DatasetSplit,
    pub norm: NormStats,
}

impl PreparedData {
    /// Fit z-scoring on the train members of `split` and apply it to all graphs.
    pub fn new(mut graphs: Vec<RoiGraph>, split: DatasetSplit) -> Result<Self, PipelineError> {
        if split.train.is_empty() {
            return Err(PipelineError::Dataset("training split is empty".into()));
        }
        if let Some(&bad) = split.train.iter().chain(&split.test).chain(&split.template).find(|&&i| i >= graphs.len()) {
            return Err(PipelineError::Dataset(format!("split refers to graph {bad}, pool has {}", graphs.len())));
        }
        let norm = NormStats::fit_graphs(split.train.iter().map(|&i| &graphs[i]));
        graphs.iter_mut().for_each(|g| norm.apply_graph(g));
        Ok(Self { graphs, split, norm })
    }

    fn refs(&self, idx: &[usize]) -> Vec<&RoiGraph> {
        idx.iter().map(|&i| &self.graphs[i]).collect()
    }

    pub fn train_graphs(&self) -> Vec<&RoiGraph> {
        self.refs(&self.split.train)
    }

    pub fn test_graphs(&self) -> Vec<&RoiGraph> {
        self.refs(&self.split.test)
    }

    pub fn template_graphs(&self) -> Vec<&RoiGraph> {
        self.refs(&self.split.template)
    }
}

/// Stratified split with `seed`, then normalisation.
pub fn prepare(graphs: &[RoiGraph], split: SplitConfig, seed: u64) -> Result<PreparedData, PipelineError> {
    let labels: Vec<_> = graphs.iter().map(|g| g.subject_label).collect();
    let s = make_split(&labels, split.template_frac, split.train_frac, seed)?;
    PreparedData::new(graphs.to_vec(), s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub model: TrainedModel,
    pub loss_curve: Vec<f64>,
    pub report: EvalReport,
}

/// Train on the prepared train split and evaluate at `config.theta_test`.
pub fn run_once(data: &PreparedData, config: &TrainConfig, exec: Exec) -> Result<RunOutput, PipelineError> {
    let outcome = train(&data.train_graphs(), config, exec, |_, _| {})?;
    let mut report = evaluate(&data.test_graphs(), &data.template_graphs(), &outcome.params, config.theta_test, exec)?;
    report.seed = config.seed;
    report.config = json!(config);
    let meta = json!({
        "train": config,
        "steps_run": outcome.loss_curve.len(),
        "final_loss": outcome.loss_curve.last(),
    });
    Ok(RunOutput {
        model: TrainedModel {
            params: outcome.params,
            norm: data.norm.clone(),
            meta,
        },
        loss_curve: outcome.loss_curve,
        report,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub reports: Vec<EvalReport>,
    pub summary: ProtocolSummary,
}

/// `repeat_count` independent split-train-evaluate runs; run `i` uses the
/// derived seed `derive(train.seed, i)` for its split, initialisation and
/// pair sampling.
pub fn run_protocol(graphs: &[RoiGraph], config: &ProtocolConfig, exec: Exec) -> Result<ProtocolResult, PipelineError> {
    let mut reports = Vec::with_capacity(config.train.repeat_count);
    for i in 0..config.train.repeat_count {
        let seed = derive(config.train.seed, i as u64);
        let data = prepare(graphs, config.split, seed)?;
        let cfg = TrainConfig { seed, ..config.train.clone() };
        let run = run_once(&data, &cfg, exec)?;
        log::info!("run {i} (seed {seed}): SN {} SP {}", fmt_opt(run.report.metrics.sn), fmt_opt(run.report.metrics.sp));
        reports.push(run.report);
    }
    Ok(ProtocolResult {
        summary: ProtocolSummary::of(&reports),
        reports,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuilderRow {
    pub method: BuildMethod,
    pub subjects: usize,
    pub connected_fraction: f64,
    pub summary: ProtocolSummary,
}

/// Generate the cohort of `spec` once per edge builder and run the protocol
/// on each.
pub fn compare_edge_builders(spec: &SynthSpec, config: &ProtocolConfig, exec: Exec) -> Result<Vec<BuilderRow>, PipelineError> {
    [BuildMethod::Knn, BuildMethod::Delaunay, BuildMethod::Distance]
        .into_iter()
        .map(|method| {
            let cohort = generate(&SynthSpec { edge_method: method, ..spec.clone() })?;
            let connected = cohort.graphs.iter().filter(|g| g.is_connected()).count();
            let result = run_protocol(&cohort.graphs, config, exec)?;
            Ok(BuilderRow {
                method,
                subjects: cohort.graphs.len(),
                connected_fraction: connected as f64 / cohort.graphs.len() as f64,
                summary: result.summary,
            })
        })
        .collect()
}

/// `method,subjects,connected_fraction,acc,f1,sn,sp` CSV of mean metrics.
pub fn builder_csv(rows: &[BuilderRow]) -> String {
    to_csv(
        &["method", "subjects", "connected_fraction", "acc", "f1", "sn", "sp"],
        rows.iter().map(|r| {
            let s = &r.summary;
            [
                r.method.to_string(),
                r.subjects.to_string(),
                r.connected_fraction.to_string(),
                fmt_opt(s.acc.mean),
                fmt_opt(s.f1.mean),
                fmt_opt(s.sn.mean),
                fmt_opt(s.sp.mean),
            ]
        }),
    )
}
