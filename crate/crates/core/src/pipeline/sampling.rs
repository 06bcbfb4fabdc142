use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::PipelineError;
use crate::graphio::{RoiGraph, SubjectLabel};

/// Fraction of same-class pairs a batch is kept within.
pub const POSITIVE_RATE_BAND: (f64, f64) = (0.25, 0.75);

/// Target similarity of a pair: 1 for the same class, 0 otherwise.
pub fn pair_label(a: SubjectLabel, b: SubjectLabel) -> Result<f64, PipelineError> {
    if a == SubjectLabel::Unknown || b == SubjectLabel::Unknown {
        return Err(PipelineError::Contract("pair label needs two known subject labels".into()));
    }
    Ok(if a == b { 1.0 } else { 0.0 })
}

/// Indices into the graph list passed to [`sample_pair_batch`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelledPair {
    pub first: usize,
    pub second: usize,
    pub target: f64,
}

/// Draw `batch` pairs of distinct graphs with equal node counts, uniformly
/// over the pool and redrawing size mismatches. The number of same-class
/// pairs is kept within `[floor(0.25 B), ceil(0.75 B)]` by redrawing pairs of
/// a class that would make the band unreachable.
pub fn sample_pair_batch(graphs: &[&RoiGraph], batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<LabelledPair>, PipelineError> {
    let mut by_size: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, g) in graphs.iter().enumerate() {
        if g.subject_label == SubjectLabel::Unknown {
            return Err(PipelineError::Dataset(format!("training graph `{}` has no label", g.graph_id)));
        }
        by_size.entry(g.node_count()).or_default().push(i);
    }
    let mut can_same = false;
    let mut can_diff = false;
    for members in by_size.values() {
        let fx = members.iter().filter(|&&i| graphs[i].subject_label.is_positive()).count();
        let non = members.len() - fx;
        can_same |= fx >= 2 || non >= 2;
        can_diff |= fx >= 1 && non >= 1;
    }
    if !(can_same || can_diff) {
        return Err(PipelineError::Dataset("no two training graphs share a node count".into()));
    }
    let (lo, hi) = if can_same && can_diff {
        ((POSITIVE_RATE_BAND.0 * batch as f64).floor() as usize, (POSITIVE_RATE_BAND.1 * batch as f64).ceil() as usize)
    } else {
        log::warn!("training pool offers only {} pairs; class balancing disabled", if can_same { "same-class" } else { "cross-class" });
        (0, batch)
    };

    let n = graphs.len();
    let mut out = Vec::with_capacity(batch);
    let mut same = 0usize;
    let max_draws = 10_000 * batch.max(1);
    let mut draws = 0usize;
    while out.len() < batch {
        draws += 1;
        if draws > max_draws {
            return Err(PipelineError::Dataset("pair sampling did not converge; node counts too fragmented".into()));
        }
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b || graphs[a].node_count() != graphs[b].node_count() {
            continue;
        }
        let target = pair_label(graphs[a].subject_label, graphs[b].subject_label)?;
        let is_same = target == 1.0;
        let remaining_after = batch - out.len() - 1;
        if is_same && same + 1 > hi {
            continue;
        }
        if !is_same && same + remaining_after < lo {
            continue;
        }
        same += is_same as usize;
        out.push(LabelledPair { first: a, second: b, target });
    }
    Ok(out)
}
