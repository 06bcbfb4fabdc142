use log::debug;

use super::sampling::sample_pair_batch;
use super::{to_csv, PipelineError, TrainConfig};
use crate::graphio::RoiGraph;
use crate::net::{NetError, NetParams};
use crate::numcore::{adam_step, AdamState, NumError};
use crate::seed::rng_for;
use crate::Exec;

/// Pairs per gradient chunk. Each chunk is differentiated on its own tape and
/// chunk gradients are summed in chunk order, so results do not depend on how
/// chunks are scheduled.
pub const CHUNK_PAIRS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: NetParams,
    /// Mean squared error of every step's batch, before that step's update.
    pub loss_curve: Vec<f64>,
}

/// Minimise the batch mean of `(ŝ − s)²` with Adam for `config.steps` steps.
/// `on_step` sees each step index and loss.
pub fn train(graphs: &[&RoiGraph], config: &TrainConfig, exec: Exec, mut on_step: impl FnMut(usize, f64)) -> Result<TrainOutcome, PipelineError> {
    config.validate()?;
    let input_dim = graphs
        .first()
        .ok_or_else(|| PipelineError::Dataset("training split is empty".into()))?
        .feature_dim();
    if let Some(g) = graphs.iter().find(|g| g.nodes.iter().any(|n| n.features.iter().any(|v| !v.is_finite()))) {
        return Err(PipelineError::Dataset(format!("graph `{}` has non-finite features", g.graph_id)));
    }
    let mut params = NetParams::init(&config.net, input_dim, config.seed)?;
    let mut adam = AdamState::new(&params.store, config.optimizer);
    let mut rng = rng_for(config.seed, "pairs");
    let weight = 1.0 / config.batch_size as f64;
    let mut loss_curve = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let batch = sample_pair_batch(graphs, config.batch_size, &mut rng)?;
        let chunks: Vec<_> = batch.chunks(CHUNK_PAIRS).collect();
        let results = exec.map(&chunks, |chunk| {
            // local graph list in first-appearance order
            let mut local: Vec<usize> = Vec::new();
            let mut slot = |g: usize| match local.iter().position(|&x| x == g) {
                Some(p) => p,
                None => {
                    local.push(g);
                    local.len() - 1
                }
            };
            let pairs: Vec<(usize, usize)> = chunk.iter().map(|p| (slot(p.first), slot(p.second))).collect();
            let targets: Vec<f64> = chunk.iter().map(|p| p.target).collect();
            let refs: Vec<&RoiGraph> = local.iter().map(|&g| graphs[g]).collect();
            params.chunk_gradients(&refs, &pairs, &targets, weight)
        });

        let mut loss = 0.0;
        let mut grads: Vec<Vec<f64>> = params.store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        for r in results {
            let r = match r {
                Ok(r) => r,
                Err(NetError::Num(NumError::NonFinite { .. } | NumError::NonPositiveSum { .. } | NumError::NonFiniteGradient { .. })) => {
                    return Err(PipelineError::NonFiniteLoss {
                        step,
                        last_finite: loss_curve.last().copied(),
                    })
                }
                Err(e) => return Err(e.into()),
            };
            loss += r.loss;
            for (acc, g) in grads.iter_mut().zip(&r.grads) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        let non_finite = || PipelineError::NonFiniteLoss {
            step,
            last_finite: loss_curve.last().copied(),
        };
        if !loss.is_finite() {
            return Err(non_finite());
        }
        if adam_step(&mut params.store, &grads, &mut adam).is_err() {
            return Err(non_finite());
        }
        debug!("step {step}: loss {loss:.6}");
        on_step(step, loss);
        loss_curve.push(loss);
    }
    Ok(TrainOutcome { params, loss_curve })
}

/// `step,loss` CSV of a loss curve.
pub fn loss_csv(curve: &[f64]) -> String {
    to_csv(&["step", "loss"], curve.iter().enumerate().map(|(i, l)| [i.to_string(), l.to_string()]))
}
