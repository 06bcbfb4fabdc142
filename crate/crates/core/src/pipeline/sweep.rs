use serde::{Deserialize, Serialize};

use super::{fmt_opt, prepare, run_once, to_csv, MetricSummary, PipelineError, PreparedData, ProtocolConfig, TrainConfig};
use crate::graphio::RoiGraph;
use crate::net::NetConfig;
use crate::seed::derive;
use crate::Exec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub cross_iterations: Vec<usize>,
    pub layers: Vec<usize>,
    pub widths: Vec<usize>,
    /// Also run every cell with cross-graph embedding disabled.
    pub include_disabled: bool,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            cross_iterations: vec![1, 2, 3, 4],
            layers: vec![2, 3, 4, 5],
            widths: vec![32, 64, 128, 256],
            include_disabled: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cross_iterations: usize,
    pub layers: usize,
    pub width: usize,
    pub cross_enabled: bool,
    pub sn: MetricSummary,
    pub failed_runs: usize,
    pub first_error: Option<String>,
}

#[derive(Clone, Copy)]
struct Cell {
    m: usize,
    l: usize,
    d: usize,
    enabled: bool,
}

/// Train and evaluate every grid cell (and its cross-disabled variant) over
/// `repeat_count` derived seeds. Repeat `r` shares one split across all cells.
/// A failed run is recorded in its row and the sweep carries on.
pub fn sweep(graphs: &[RoiGraph], grid: &SweepGrid, config: &ProtocolConfig, exec: Exec) -> Result<Vec<SweepRow>, PipelineError> {
    let mut cells = Vec::new();
    for &m in &grid.cross_iterations {
        for &l in &grid.layers {
            for &d in &grid.widths {
                cells.push(Cell { m, l, d, enabled: true });
                if grid.include_disabled {
                    cells.push(Cell { m, l, d, enabled: false });
                }
            }
        }
    }
    let repeats = config.train.repeat_count;
    let seeds: Vec<u64> = (0..repeats).map(|r| derive(config.train.seed, r as u64)).collect();
    let data: Vec<PreparedData> = seeds.iter().map(|&s| prepare(graphs, config.split, s)).collect::<Result<_, _>>()?;

    let tasks: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..repeats).map(move |r| (c, r))).collect();
    let inner = if exec.is_parallel() { Exec::Sequential } else { exec };
    let results = exec.map(&tasks, |&(c, r)| {
        let cell = cells[c];
        let cfg = TrainConfig {
            seed: seeds[r],
            net: NetConfig {
                layers: cell.l,
                cross_iterations: cell.m,
                d_intra: cell.d,
                d_cross: cell.d,
                cross_embedding_enabled: cell.enabled,
                ..config.train.net.clone()
            },
            ..config.train.clone()
        };
        run_once(&data[r], &cfg, inner).map(|o| o.report.metrics.sn)
    });

    let mut rows = Vec::with_capacity(cells.len());
    let mut it = results.into_iter();
    for cell in &cells {
        let mut sns = Vec::new();
        let mut failed = 0;
        let mut first_error = None;
        for _ in 0..repeats {
            match it.next().expect("one result per task") {
                Ok(sn) => sns.push(sn),
                Err(e) => {
                    log::warn!("sweep cell M={} L={} d={} enabled={}: {e}", cell.m, cell.l, cell.d, cell.enabled);
                    failed += 1;
                    first_error.get_or_insert(e.to_string());
                }
            }
        }
        rows.push(SweepRow {
            cross_iterations: cell.m,
            layers: cell.l,
            width: cell.d,
            cross_enabled: cell.enabled,
            sn: MetricSummary::of(sns),
            failed_runs: failed,
            first_error,
        });
    }
    Ok(rows)
}

/// `M,L,d,cross_enabled,mean_sn,std_sn,failed_runs` CSV.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    to_csv(
        &["M", "L", "d", "cross_enabled", "mean_sn", "std_sn", "failed_runs"],
        rows.iter().map(|r| {
            [
                r.cross_iterations.to_string(),
                r.layers.to_string(),
                r.width.to_string(),
                r.cross_enabled.to_string(),
                fmt_opt(r.sn.mean),
                fmt_opt(r.sn.std),
                r.failed_runs.to_string(),
            ]
        }),
    )
}
