use serde::{Deserialize, Serialize};

use super::{fmt_opt, to_csv, VoteTrace};

/// Confusion counts with fractured as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Undefined ratios (zero denominator) are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: Option<f64>,
    pub sn: Option<f64>,
    pub sp: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            acc: ratio(self.tp + self.tn, self.total()),
            sn: ratio(self.tp, self.tp + self.fn_),
            sp: ratio(self.tn, self.tn + self.fp),
            f1: ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_),
        }
    }
}

impl Metrics {
    pub fn undefined(&self) -> Vec<String> {
        [("acc", self.acc), ("sn", self.sn), ("sp", self.sp), ("f1", self.f1)]
            .into_iter()
            .filter(|(_, v)| v.is_none())
            .map(|(n, _)| n.to_string())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: Confusion,
    pub metrics: Metrics,
    /// Metrics whose denominator was zero; reported as `null` / `NaN`.
    pub undefined_metrics: Vec<String>,
    pub theta: f64,
    pub seed: u64,
    /// Test-template pairs whose pooled embeddings were zero.
    pub degenerate_pairs: usize,
    pub config: serde_json::Value,
    pub traces: Vec<VoteTrace>,
}

pub const REPORT_CSV_HEADER: [&str; 10] = ["seed", "theta", "acc", "f1", "sn", "sp", "tp", "tn", "fp", "fn"];

impl EvalReport {
    pub fn from_traces(traces: Vec<VoteTrace>, theta: f64, degenerate_pairs: usize) -> Self {
        let mut c = Confusion::default();
        for t in &traces {
            match (t.true_label.is_positive(), t.predicted.is_positive()) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
        let metrics = c.metrics();
        Self {
            confusion: c,
            undefined_metrics: metrics.undefined(),
            metrics,
            theta,
            seed: 0,
            degenerate_pairs,
            config: serde_json::Value::Null,
            traces,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    fn csv_fields(&self) -> [String; 10] {
        let m = &self.metrics;
        let c = &self.confusion;
        [
            self.seed.to_string(),
            self.theta.to_string(),
            fmt_opt(m.acc),
            fmt_opt(m.f1),
            fmt_opt(m.sn),
            fmt_opt(m.sp),
            c.tp.to_string(),
            c.tn.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
        ]
    }

    /// Header plus one metrics row.
    pub fn to_csv(&self) -> String {
        to_csv(&REPORT_CSV_HEADER, [self.csv_fields()])
    }

    /// Header plus one row per report.
    pub fn many_to_csv(reports: &[EvalReport]) -> String {
        to_csv(&REPORT_CSV_HEADER, reports.iter().map(|r| r.csv_fields()))
    }
}

/// Mean and sample standard deviation over the runs where a metric is defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub defined_runs: usize,
}

impl MetricSummary {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return Self { mean: None, std: None, defined_runs: 0 };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Self {
            mean: Some(mean),
            std: Some(std),
            defined_runs: v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub acc: MetricSummary,
    pub sn: MetricSummary,
    pub sp: MetricSummary,
    pub f1: MetricSummary,
}

impl ProtocolSummary {
    pub fn of(reports: &[EvalReport]) -> Self {
        let pick = |f: fn(&Metrics) -> Option<f64>| MetricSummary::of(reports.iter().map(|r| f(&r.metrics)));
        Self {
            runs: reports.len(),
            seeds: reports.iter().map(|r| r.seed).collect(),
            acc: pick(|m| m.acc),
            sn: pick(|m| m.sn),
            sp: pick(|m| m.sp),
            f1: pick(|m| m.f1),
        }
    }
}
