use serde::{Deserialize, Serialize};

use super::{evaluate, fmt_opt, to_csv, EvalReport, PipelineError};
use crate::features::{FeatureLayout, FEATURE_DIM};
use crate::graphio::RoiGraph;
use crate::net::NetParams;
use crate::Exec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub slot: usize,
    pub slot_name: String,
    /// Baseline sensitivity minus sensitivity with the slot zeroed.
    pub delta_sn: f64,
    /// Mean absolute change of the test-template similarities.
    pub mean_abs_score_change: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopKRow {
    pub k: usize,
    pub report: EvalReport,
}

fn slot_name(slot: usize, dim: usize) -> String {
    if dim == FEATURE_DIM {
        FeatureLayout::get().name(slot).to_string()
    } else {
        format!("slot_{slot}")
    }
}

/// Copies of `graphs` with the given slots set to zero on every node.
pub fn zero_slots(graphs: &[&RoiGraph], slots: &[usize]) -> Vec<RoiGraph> {
    graphs
        .iter()
        .map(|g| {
            let mut g = (*g).clone();
            for n in &mut g.nodes {
                for &s in slots {
                    n.features[s] = 0.0;
                }
            }
            g
        })
        .collect()
}

fn masked_eval(test: &[&RoiGraph], templates: &[&RoiGraph], params: &NetParams, theta: f64, slots: &[usize], exec: Exec) -> Result<EvalReport, PipelineError> {
    let t = zero_slots(test, slots);
    let r = zero_slots(templates, slots);
    evaluate(&t.iter().collect::<Vec<_>>(), &r.iter().collect::<Vec<_>>(), params, theta, exec)
}

fn mean_abs_change(a: &EvalReport, b: &EvalReport) -> f64 {
    let diffs: Vec<f64> = a
        .traces
        .iter()
        .zip(&b.traces)
        .flat_map(|(x, y)| x.matches.iter().zip(&y.matches).map(|(p, q)| (p.score - q.score).abs()))
        .collect();
    if diffs.is_empty() { 0.0 } else { diffs.iter().sum::<f64>() / diffs.len() as f64 }
}

/// Zero each slot in turn on every test and template graph (features are
/// expected to be normalised already, so zero is the training mean) and
/// record the drop in sensitivity. Rows are sorted by `delta_sn` descending,
/// then by mean absolute score change, then by slot.
pub fn feature_importance(test: &[&RoiGraph], templates: &[&RoiGraph], params: &NetParams, theta: f64, exec: Exec) -> Result<Vec<ImportanceRow>, PipelineError> {
    let baseline = evaluate(test, templates, params, theta, exec)?;
    let base_sn = baseline
        .metrics
        .sn
        .ok_or_else(|| PipelineError::Evaluation("sensitivity is undefined: the test split has no fractured subjects".into()))?;
    let dim = params.input_dim;
    let slots: Vec<usize> = (0..dim).collect();
    // slots run in parallel; each evaluation is sequential inside
    let inner = if exec.is_parallel() { Exec::Sequential } else { exec };
    let rows = exec.map(&slots, |&s| -> Result<ImportanceRow, PipelineError> {
        let r = masked_eval(test, templates, params, theta, &[s], inner)?;
        Ok(ImportanceRow {
            slot: s,
            slot_name: slot_name(s, dim),
            delta_sn: base_sn - r.metrics.sn.expect("same test split as the baseline"),
            mean_abs_score_change: mean_abs_change(&baseline, &r),
        })
    });
    let mut rows: Vec<ImportanceRow> = rows.into_iter().collect::<Result<_, _>>()?;
    rows.sort_by(|a, b| {
        b.delta_sn
            .total_cmp(&a.delta_sn)
            .then(b.mean_abs_score_change.total_cmp(&a.mean_abs_score_change))
            .then(a.slot.cmp(&b.slot))
    });
    Ok(rows)
}

/// `slot_name,delta_sn` CSV in ranking order.
pub fn importance_csv(rows: &[ImportanceRow]) -> String {
    to_csv(&["slot_name", "delta_sn"], rows.iter().map(|r| [r.slot_name.clone(), r.delta_sn.to_string()]))
}

/// Evaluate with every slot outside the first `k` of `ranking` zeroed, for
/// each `k` in `ks`.
pub fn topk_eval(ks: &[usize], ranking: &[usize], test: &[&RoiGraph], templates: &[&RoiGraph], params: &NetParams, theta: f64, exec: Exec) -> Result<Vec<TopKRow>, PipelineError> {
    let dim = params.input_dim;
    if let Some(k) = ks.iter().find(|&&k| k > dim) {
        return Err(PipelineError::Parameter(format!("K = {k} exceeds the {dim} feature slots")));
    }
    if ranking.len() != dim || {
        let mut r = ranking.to_vec();
        r.sort_unstable();
        r != (0..dim).collect::<Vec<_>>()
    } {
        return Err(PipelineError::Parameter(format!("ranking must list each of the {dim} slots once")));
    }
    ks.iter()
        .map(|&k| {
            let report = masked_eval(test, templates, params, theta, &ranking[k..], exec)?;
            Ok(TopKRow { k, report })
        })
        .collect()
}

/// `K,acc,f1,sn,sp` CSV.
pub fn topk_csv(rows: &[TopKRow]) -> String {
    to_csv(
        &["K", "acc", "f1", "sn", "sp"],
        rows.iter().map(|r| {
            let m = &r.report.metrics;
            [r.k.to_string(), fmt_opt(m.acc), fmt_opt(m.f1), fmt_opt(m.sn), fmt_opt(m.sp)]
        }),
    )
}
