use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use icgm_core::features::{build_subject_graph, PrecomputedFeatures, SubjectTable};
use icgm_core::graphio::{make_split, parse_annotations, write_atomic, DatasetManifest, DatasetSplit, ManifestEntry, RoiGraph, SubjectLabel};
use icgm_core::pipeline::{
    evaluate, feature_importance, importance_csv, loss_csv, prepare, sweep, sweep_csv, topk_csv, topk_eval, train, EvalReport, PipelineError, PreparedData, ProtocolSummary,
    TrainConfig, TrainedModel,
};
use icgm_core::seed::derive;
use icgm_core::synthgen::{generate, write_cohort, SynthError};
use icgm_core::Exec;
use log::{info, warn};
use serde_json::json;

use crate::config::RunConfig;

/// A command failure and the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub const EXIT_PARTIAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

pub fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        error: error.into(),
    }
}

fn data(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_PARTIAL,
        error: error.into(),
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            e if e.is_numeric() => EXIT_NUMERIC,
            PipelineError::Parameter(_) | PipelineError::Contract(_) | PipelineError::Synth(SynthError::Spec(_)) => EXIT_USAGE,
            _ => EXIT_PARTIAL,
        };
        Failure { code, error: e.into() }
    }
}

/// What a command left behind when it did not fail outright.
#[derive(Debug, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// Outputs were written but some inputs or runs failed.
    Partial(String),
}

pub type CmdResult = Result<Outcome, Failure>;

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(data)?;
    }
    write_atomic(path, text.as_bytes()).map_err(data)
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path, Failure> {
    path.as_deref().ok_or_else(|| usage(anyhow!("no {what} given (use {flag} or the [paths] section)")))
}

fn load_dataset(cfg: &RunConfig) -> Result<(DatasetManifest, Vec<RoiGraph>), Failure> {
    let path = require(&cfg.paths.data, "dataset manifest", "--data")?;
    if !path.is_file() {
        return Err(usage(anyhow!("dataset manifest {} does not exist", path.display())));
    }
    let manifest = DatasetManifest::load(path).map_err(usage)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let graphs = manifest.graphs.iter().map(|e| RoiGraph::load(&base.join(&e.path))).collect::<Result<Vec<_>, _>>().map_err(data)?;
    Ok((manifest, graphs))
}

fn split_ids(graphs: &[RoiGraph], split: &DatasetSplit) -> serde_json::Value {
    let ids = |idx: &[usize]| idx.iter().map(|&i| graphs[i].graph_id.clone()).collect::<Vec<_>>();
    json!({ "train": ids(&split.train), "test": ids(&split.test), "template": ids(&split.template) })
}

/// The split a checkpoint was trained with, falling back to the manifest's.
fn split_for(model: &TrainedModel, manifest: &DatasetManifest, graphs: &[RoiGraph]) -> Result<DatasetSplit, Failure> {
    let Some(stored) = model.meta.get("split") else {
        return Ok(manifest.split());
    };
    let index: HashMap<&str, usize> = graphs.iter().enumerate().map(|(i, g)| (g.graph_id.as_str(), i)).collect();
    let pick = |role: &str| -> Result<Vec<usize>, Failure> {
        let ids = stored.get(role).and_then(|v| v.as_array()).ok_or_else(|| usage(anyhow!("checkpoint split lacks `{role}`")))?;
        ids.iter()
            .map(|id| {
                let id = id.as_str().unwrap_or_default();
                index.get(id).copied().ok_or_else(|| usage(anyhow!("checkpoint refers to graph `{id}`, which is not in the dataset")))
            })
            .collect()
    };
    Ok(DatasetSplit {
        train: pick("train")?,
        test: pick("test")?,
        template: pick("template")?,
        ..manifest.split()
    })
}

fn load_model(path: &Path) -> Result<TrainedModel, Failure> {
    if !path.is_file() {
        return Err(usage(anyhow!("checkpoint {} does not exist", path.display())));
    }
    TrainedModel::load(path).map_err(usage)
}

/// Checkpoint graphs normalised with the checkpoint's statistics.
fn model_data(model: &TrainedModel, manifest: &DatasetManifest, graphs: &[RoiGraph]) -> Result<PreparedData, Failure> {
    let split = split_for(model, manifest, graphs)?;
    let mut graphs = graphs.to_vec();
    graphs.iter_mut().for_each(|g| model.norm.apply_graph(g));
    Ok(PreparedData {
        graphs,
        split,
        norm: model.norm.clone(),
    })
}

pub fn build_graphs(cfg: &RunConfig, exec: Exec) -> CmdResult {
    let ann_dir = require(&cfg.paths.annotations, "annotation directory", "--annotations")?;
    let subjects = SubjectTable::load(require(&cfg.paths.subjects, "subject table", "--subjects")?).map_err(usage)?;
    let precomputed = cfg.paths.features.as_deref().map(PrecomputedFeatures::load).transpose().map_err(usage)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(ann_dir)
        .with_context(|| format!("reading {}", ann_dir.display()))
        .map_err(usage)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();

    let vocab = cfg.graphs.vocabulary();
    let edges = cfg.graphs.edge_spec();
    let results = exec.map(&files, |file| {
        let id = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let built = (|| -> anyhow::Result<_> {
            let record = subjects.get(&id)?;
            if record.label == SubjectLabel::Unknown {
                anyhow::bail!("label is unknown, so the subject cannot join the split");
            }
            let ann = parse_annotations(file, &vocab)?;
            Ok(build_subject_graph(&ann, record, precomputed.as_ref(), &edges, cfg.graphs.glcm_levels)?)
        })();
        (id, built)
    });

    let mut graphs = Vec::new();
    let mut provenance = serde_json::Map::new();
    let mut errors = String::new();
    for (id, r) in results {
        match r {
            Ok(b) => {
                provenance.insert(id, json!(b.provenance));
                graphs.push(b.graph);
            }
            Err(e) => {
                warn!("subject `{id}`: {e:#}");
                errors.push_str(&format!("{id}: {e:#}\n"));
            }
        }
    }
    if graphs.is_empty() {
        return Err(data(anyhow!("no subject could be built:\n{errors}")));
    }

    let labels: Vec<SubjectLabel> = graphs.iter().map(|g| g.subject_label).collect();
    let split = make_split(&labels, cfg.split.template_frac, cfg.split.train_frac, cfg.seed).map_err(data)?;
    let mut entries = Vec::with_capacity(graphs.len());
    for (i, g) in graphs.iter().enumerate() {
        let rel = format!("graphs/{}.json", g.graph_id);
        write(&cfg.out.join(&rel), &g.to_json())?;
        entries.push(ManifestEntry {
            graph_id: g.graph_id.clone(),
            path: rel,
            label: g.subject_label,
            split: split.role_of(i).expect("split covers every graph"),
        });
    }
    let manifest = DatasetManifest {
        seed: cfg.seed,
        template_frac: cfg.split.template_frac,
        train_frac: cfg.split.train_frac,
        graphs: entries,
    };
    manifest.save(&cfg.out.join("manifest.json")).map_err(data)?;
    write(&cfg.out.join("provenance.json"), &serde_json::to_string_pretty(&provenance).expect("provenance serialises"))?;

    let log_path = cfg.out.join("errors.log");
    if errors.is_empty() {
        let _ = std::fs::remove_file(&log_path);
        info!("built {} graphs", graphs.len());
        Ok(Outcome::Done)
    } else {
        write(&log_path, &errors)?;
        Ok(Outcome::Partial(format!("{} of {} subjects failed; see {}", files.len() - graphs.len(), files.len(), log_path.display())))
    }
}

pub fn synth(cfg: &RunConfig) -> CmdResult {
    let cohort = generate(&cfg.synth).map_err(|e| match e {
        SynthError::Spec(_) => usage(e),
        e => data(e),
    })?;
    write_cohort(&cohort, &cfg.out, cfg.split.template_frac, cfg.split.train_frac, cfg.seed).map_err(data)?;
    info!("wrote {} graphs to {}", cohort.graphs.len(), cfg.out.display());
    Ok(Outcome::Done)
}

pub fn train_cmd(cfg: &RunConfig, exec: Exec) -> CmdResult {
    let (manifest, graphs) = load_dataset(cfg)?;
    let repeats = cfg.train.repeat_count;
    for i in 0..repeats {
        // a single run keeps the manifest's split; repeats re-split with derived seeds
        let (seed, prepared, dir) = if repeats == 1 {
            (cfg.seed, PreparedData::new(graphs.clone(), manifest.split())?, cfg.out.clone())
        } else {
            let s = derive(cfg.seed, i as u64);
            (s, prepare(&graphs, cfg.split, s)?, cfg.out.join(format!("run_{i:02}")))
        };
        let tc = TrainConfig { seed, ..cfg.train.clone() };
        let mut curve = Vec::new();
        let result = train(&prepared.train_graphs(), &tc, exec, |step, loss| {
            if step % 100 == 0 {
                info!("run {i} step {step}: loss {loss:.6}");
            }
            curve.push(loss);
        });
        write(&dir.join("loss.csv"), &loss_csv(&curve))?;
        let outcome = match result {
            Ok(o) => o,
            Err(e) => {
                if let PipelineError::NonFiniteLoss { step, last_finite } = &e {
                    let diag = json!({ "run": i, "seed": seed, "step": step, "last_finite_loss": last_finite, "loss_curve": "loss.csv" });
                    write(&dir.join("diagnostics.json"), &serde_json::to_string_pretty(&diag).expect("json"))?;
                }
                return Err(e.into());
            }
        };
        let model = TrainedModel {
            params: outcome.params,
            norm: prepared.norm.clone(),
            meta: json!({
                "train": tc,
                "steps_run": outcome.loss_curve.len(),
                "final_loss": outcome.loss_curve.last(),
                "split": split_ids(&prepared.graphs, &prepared.split),
            }),
        };
        let ckpt = dir.join("model.ckpt");
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())).map_err(data)?;
        model.save(&ckpt)?;
        info!("saved {}", ckpt.display());
    }
    Ok(Outcome::Done)
}

pub fn eval(cfg: &RunConfig, exec: Exec) -> CmdResult {
    if cfg.paths.checkpoints.is_empty() {
        return Err(usage(anyhow!("no checkpoint given (use --checkpoint or paths.checkpoints)")));
    }
    let models = cfg.paths.checkpoints.iter().map(|p| load_model(p)).collect::<Result<Vec<_>, _>>()?;
    let (manifest, graphs) = load_dataset(cfg)?;
    let config = serde_json::to_value(cfg).expect("config serialises");
    let mut reports = Vec::with_capacity(models.len());
    for model in &models {
        let d = model_data(model, &manifest, &graphs)?;
        let mut report = evaluate(&d.test_graphs(), &d.template_graphs(), &model.params, cfg.train.theta_test, exec)?;
        report.seed = model.meta.pointer("/train/seed").and_then(|v| v.as_u64()).unwrap_or(cfg.seed);
        report.config = config.clone();
        reports.push(report);
    }
    if let [report] = reports.as_slice() {
        write(&cfg.out.join("report.json"), &report.to_json())?;
        write(&cfg.out.join("report.csv"), &report.to_csv())?;
    } else {
        for (i, r) in reports.iter().enumerate() {
            write(&cfg.out.join(format!("report_{i:02}.json")), &r.to_json())?;
        }
        write(&cfg.out.join("report.csv"), &EvalReport::many_to_csv(&reports))?;
        let summary = ProtocolSummary::of(&reports);
        write(&cfg.out.join("summary.json"), &serde_json::to_string_pretty(&summary).expect("summary serialises"))?;
    }
    Ok(Outcome::Done)
}

pub fn explain(cfg: &RunConfig, exec: Exec) -> CmdResult {
    let path = match cfg.paths.checkpoints.as_slice() {
        [] => return Err(usage(anyhow!("no checkpoint given (use --checkpoint or paths.checkpoints)"))),
        [p] => p,
        [p, ..] => {
            warn!("explaining the first of {} checkpoints", cfg.paths.checkpoints.len());
            p
        }
    };
    let model = load_model(path)?;
    let (manifest, graphs) = load_dataset(cfg)?;
    let d = model_data(&model, &manifest, &graphs)?;
    let theta = cfg.train.theta_explain;
    let (test, templates) = (d.test_graphs(), d.template_graphs());
    let rows = feature_importance(&test, &templates, &model.params, theta, exec)?;
    write(&cfg.out.join("importance.csv"), &importance_csv(&rows))?;
    write(&cfg.out.join("importance.json"), &serde_json::to_string_pretty(&rows).expect("rows serialise"))?;
    let ranking: Vec<usize> = rows.iter().map(|r| r.slot).collect();
    let topk = topk_eval(&cfg.explain.topk, &ranking, &test, &templates, &model.params, theta, exec)?;
    write(&cfg.out.join("topk.csv"), &topk_csv(&topk))?;
    Ok(Outcome::Done)
}

pub fn sweep_cmd(cfg: &RunConfig, exec: Exec) -> CmdResult {
    let (_, graphs) = load_dataset(cfg)?;
    let rows = sweep(&graphs, &cfg.sweep, &cfg.protocol(), exec)?;
    write(&cfg.out.join("sweep.csv"), &sweep_csv(&rows))?;
    write(&cfg.out.join("sweep.json"), &serde_json::to_string_pretty(&rows).expect("rows serialise"))?;
    let failed: usize = rows.iter().map(|r| r.failed_runs).sum();
    if failed > 0 {
        return Ok(Outcome::Partial(format!("{failed} sweep runs failed; see sweep.json")));
    }
    Ok(Outcome::Done)
}
