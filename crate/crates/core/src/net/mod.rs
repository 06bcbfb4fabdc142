//! Graph-pair matching network: per-graph message passing, a learned node
//! affinity normalised to a doubly-stochastic assignment, iterated
//! cross-graph mixing, mean pooling and clamped cosine similarity.
//!
//! Everything is recorded on a [`Tape`], so the same code serves training and
//! inference. Batched entry points stack the nodes of many graphs into one
//! matrix so the per-layer MLPs run as single large matrix products.

mod sinkhorn;

use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphio::RoiGraph;
use crate::numcore::{glorot_uniform, NumError, ParamStore, Tape, Tensor, Var};
use crate::seed::rng_for;

pub use sinkhorn::{sinkhorn, sinkhorn_on_tape, SinkhornMode};

/// Logits above this are clamped before exponentiation.
pub const AFFINITY_LOGIT_CAP: f64 = 50.0;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("graphs must have equal RoI counts ({left} vs {right})")]
    UnequalNodeCounts { left: usize, right: usize },
    #[error("graph `{graph_id}` has {got}-dimensional features, network expects {expected}")]
    FeatureDim { graph_id: String, expected: usize, got: usize },
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Message-passing layers.
    pub layers: usize,
    /// Cross-graph iterations.
    pub cross_iterations: usize,
    pub d_intra: usize,
    pub d_cross: usize,
    pub sinkhorn_iters: usize,
    pub sinkhorn_epsilon: f64,
    pub cross_embedding_enabled: bool,
    pub similarity_clamp: bool,
    /// Recompute the assignment from the current embeddings before every
    /// cross iteration instead of once. Needs `d_intra == d_cross`.
    pub recompute_assignment: bool,
    /// One MLP per cross iteration for both directions; `false` gives each
    /// direction its own weights (this breaks exact swap symmetry).
    pub share_cross_weights: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            layers: 5,
            cross_iterations: 3,
            d_intra: 256,
            d_cross: 256,
            sinkhorn_iters: 10,
            sinkhorn_epsilon: 1e-6,
            cross_embedding_enabled: true,
            similarity_clamp: true,
            recompute_assignment: false,
            share_cross_weights: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::Config(m.to_string()));
        if self.layers < 1 {
            return bad("layers must be >= 1");
        }
        if self.d_intra < 1 || self.d_cross < 1 {
            return bad("widths must be >= 1");
        }
        if self.sinkhorn_iters < 1 {
            return bad("sinkhorn_iters must be >= 1");
        }
        if !(self.sinkhorn_epsilon > 0.0) {
            return bad("sinkhorn_epsilon must be positive");
        }
        if self.recompute_assignment && self.d_intra != self.d_cross {
            return bad("recompute_assignment needs d_intra == d_cross");
        }
        Ok(())
    }

    /// Cross iterations that actually run.
    fn active_cross(&self) -> usize {
        if self.cross_embedding_enabled {
            self.cross_iterations
        } else {
            0
        }
    }
}

/// A two-layer perceptron `relu(x W1 + b1) W2 + b2`, by parameter index.
#[derive(Clone, Copy, Debug)]
struct MlpIndex {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Network weights plus the config they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub config: NetConfig,
    pub input_dim: usize,
    pub store: ParamStore,
}

impl NetParams {
    /// Glorot-uniform weights, zero biases, identity affinity. Parameters are
    /// created in a fixed order (message passing, affinity, projection, cross
    /// MLPs), so everything before the cross MLPs is independent of their count.
    pub fn init(config: &NetConfig, input_dim: usize, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        let mut rng = rng_for(seed, "init");
        let mut store = ParamStore::default();
        let mlp = |store: &mut ParamStore, prefix: &str, fan_in: usize, width: usize, rng: &mut _| {
            store.push(format!("{prefix}.w1"), glorot_uniform(fan_in, width, rng).with_grad());
            store.push(format!("{prefix}.b1"), Tensor::zeros(1, width).with_grad());
            store.push(format!("{prefix}.w2"), glorot_uniform(width, width, rng).with_grad());
            store.push(format!("{prefix}.b2"), Tensor::zeros(1, width).with_grad());
        };
        let mut width = input_dim;
        for l in 0..config.layers {
            mlp(&mut store, &format!("intra.{l}"), 2 * width, config.d_intra, &mut rng);
            width = config.d_intra;
        }
        store.push("affinity", Tensor::identity(config.d_intra).with_grad());
        if config.d_intra != config.d_cross {
            store.push("projection", glorot_uniform(config.d_intra, config.d_cross, &mut rng).with_grad());
        }
        for m in 0..config.cross_iterations {
            let fan_in = 2 * if m == 0 { config.d_intra } else { config.d_cross };
            if config.share_cross_weights {
                mlp(&mut store, &format!("cross.{m}"), fan_in, config.d_cross, &mut rng);
            } else {
                mlp(&mut store, &format!("cross.{m}.first"), fan_in, config.d_cross, &mut rng);
                mlp(&mut store, &format!("cross.{m}.second"), fan_in, config.d_cross, &mut rng);
            }
        }
        Ok(Self {
            config: config.clone(),
            input_dim,
            store,
        })
    }

    /// Rebuild from stored tensors, checking every expected name and shape.
    pub fn from_store(config: &NetConfig, input_dim: usize, store: ParamStore) -> Result<Self, NetError> {
        let reference = Self::init(config, input_dim, 0)?;
        if reference.store.len() != store.len() {
            return Err(NetError::Contract(format!("expected {} parameter tensors, found {}", reference.store.len(), store.len())));
        }
        let mut entries = Vec::with_capacity(store.len());
        for (name, want) in reference.store.iter() {
            let got = store.get(name).ok_or_else(|| NetError::Contract(format!("missing parameter `{name}`")))?;
            if got.shape() != want.shape() {
                return Err(NetError::Contract(format!("parameter `{name}` has shape {:?}, expected {:?}", got.shape(), want.shape())));
            }
            entries.push((name.to_string(), got.clone().with_grad()));
        }
        Ok(Self {
            config: config.clone(),
            input_dim,
            store: ParamStore::from_entries(entries),
        })
    }

    fn mlp_index(&self, prefix: &str) -> MlpIndex {
        let ix = |s: &str| self.store.index_of(&format!("{prefix}.{s}")).expect("parameter exists by construction");
        MlpIndex {
            w1: ix("w1"),
            b1: ix("b1"),
            w2: ix("w2"),
            b2: ix("b2"),
        }
    }

    /// Record every parameter on `tape` as a borrowed leaf.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> Result<Bound, NetError> {
        let vars: Vec<Var> = (0..self.store.len()).map(|i| tape.leaf_ref(self.store.at(i))).collect();
        let c = &self.config;
        let to_vars = |m: MlpIndex| [vars[m.w1], vars[m.b1], vars[m.w2], vars[m.b2]];
        let intra = (0..c.layers).map(|l| to_vars(self.mlp_index(&format!("intra.{l}")))).collect();
        let cross = (0..c.cross_iterations)
            .map(|m| {
                if c.share_cross_weights {
                    let v = to_vars(self.mlp_index(&format!("cross.{m}")));
                    (v, v)
                } else {
                    (to_vars(self.mlp_index(&format!("cross.{m}.first"))), to_vars(self.mlp_index(&format!("cross.{m}.second"))))
                }
            })
            .collect();
        let a = vars[self.store.index_of("affinity").expect("affinity exists")];
        let at = tape.transpose(a)?;
        let sum = tape.add(a, at)?;
        let affinity = tape.scale(sum, 0.5)?;
        let projection = self.store.index_of("projection").map(|i| vars[i]);
        Ok(Bound {
            params: vars,
            intra,
            affinity,
            projection,
            cross,
        })
    }

    pub fn num_values(&self) -> usize {
        self.store.num_values()
    }
}

type MlpVars = [Var; 4];

/// Parameter handles on one tape.
pub struct Bound {
    /// Leaf per parameter, in store order (for gradient extraction).
    pub params: Vec<Var>,
    intra: Vec<MlpVars>,
    /// Symmetrised affinity `(A + Aᵀ) / 2`.
    affinity: Var,
    projection: Option<Var>,
    cross: Vec<(MlpVars, MlpVars)>,
}

fn mlp(tape: &mut Tape, x: Var, w: &MlpVars) -> Result<Var, NumError> {
    let h = tape.matmul(x, w[0])?;
    let h = tape.add_row(h, w[1])?;
    let h = tape.relu(h)?;
    let o = tape.matmul(h, w[2])?;
    tape.add_row(o, w[3])
}

/// Row range of one graph inside a stacked node matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

/// Node features and adjacency of several graphs stacked row-wise.
pub struct StackedGraphs {
    pub features: Tensor,
    pub adjacency: Arc<Vec<Vec<usize>>>,
    pub spans: Vec<Span>,
}

impl StackedGraphs {
    pub fn new(graphs: &[&RoiGraph], input_dim: usize) -> Result<Self, NetError> {
        let total: usize = graphs.iter().map(|g| g.node_count()).sum();
        let mut values = Vec::with_capacity(total * input_dim);
        let mut adjacency = Vec::with_capacity(total);
        let mut spans = Vec::with_capacity(graphs.len());
        for g in graphs {
            let start = adjacency.len();
            for n in &g.nodes {
                if n.features.len() != input_dim {
                    return Err(NetError::FeatureDim {
                        graph_id: g.graph_id.clone(),
                        expected: input_dim,
                        got: n.features.len(),
                    });
                }
                values.extend_from_slice(&n.features);
            }
            adjacency.extend(g.adjacency().into_iter().map(|nbrs| nbrs.into_iter().map(|j| j + start).collect::<Vec<_>>()));
            spans.push(Span { start, len: g.node_count() });
        }
        if total == 0 {
            return Err(NetError::Contract("no nodes to embed".into()));
        }
        Ok(Self {
            features: Tensor::matrix(total, input_dim, values)?,
            adjacency: Arc::new(adjacency),
            spans,
        })
    }
}

/// Similarity scores for a batch of pairs, plus how many were degenerate
/// (both pooled embeddings zero).
pub struct PairScores {
    pub scores: Vec<Var>,
    pub degenerate: usize,
}

impl NetParams {
    /// Message passing over stacked graphs; returns the stacked `N × d_intra` embeddings.
    pub fn intra_embed_stacked(&self, tape: &mut Tape, bound: &Bound, stacked: &StackedGraphs) -> Result<Var, NetError> {
        let mut z = tape.constant(stacked.features.clone());
        for w in &bound.intra {
            let agg = tape.neighbor_sum(z, stacked.adjacency.clone())?;
            let cat = tape.concat(agg, z)?;
            z = mlp(tape, cat, w)?;
        }
        Ok(z)
    }

    /// Per-node embeddings of one graph (`n × d_intra`).
    pub fn intra_embed(&self, graph: &RoiGraph) -> Result<Tensor, NetError> {
        let stacked = StackedGraphs::new(&[graph], self.input_dim)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let z = self.intra_embed_stacked(&mut tape, &bound, &stacked)?;
        Ok(tape.tensor(z))
    }

    /// Doubly-stochastic assignment between two embedded graphs.
    pub fn node_affinity(&self, tape: &mut Tape, bound: &Bound, z1: Var, z2: Var, mode: SinkhornMode) -> Result<Var, NetError> {
        let (n1, n2) = (tape.dims(z1).0, tape.dims(z2).0);
        if n1 != n2 {
            return Err(NetError::UnequalNodeCounts { left: n1, right: n2 });
        }
        let za = tape.matmul(z1, bound.affinity)?;
        self.assignment_from(tape, za, z2, mode)
    }

    fn assignment_from(&self, tape: &mut Tape, z1a: Var, z2: Var, mode: SinkhornMode) -> Result<Var, NetError> {
        let logits = tape.matmul_t(z1a, false, z2, true)?;
        let logits = tape.scale(logits, 1.0 / (self.config.d_intra as f64).sqrt())?;
        let logits = tape.map(logits, crate::numcore::MapKind::ClampMax(AFFINITY_LOGIT_CAP))?;
        Ok(sinkhorn_on_tape(tape, logits, self.config.sinkhorn_iters, self.config.sinkhorn_epsilon, mode)?)
    }

    /// Score pairs of graphs given their stacked intra embeddings. `pairs`
    /// index into `spans`.
    pub fn score_pairs(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        z: Var,
        spans: &[Span],
        pairs: &[(usize, usize)],
        mode: SinkhornMode,
    ) -> Result<PairScores, NetError> {
        for &(a, b) in pairs {
            if spans[a].len != spans[b].len {
                return Err(NetError::UnequalNodeCounts {
                    left: spans[a].len,
                    right: spans[b].len,
                });
            }
        }
        let cfg = &self.config;
        let rounds = cfg.active_cross();
        let project = |tape: &mut Tape, h: Var| -> Result<Var, NumError> {
            match bound.projection {
                Some(p) => tape.matmul(h, p),
                None => Ok(h),
            }
        };

        let mut pooled: Vec<(Var, Var)> = Vec::with_capacity(pairs.len());
        if rounds == 0 {
            let h = project(tape, z)?;
            let mut cache: Vec<Option<Var>> = vec![None; spans.len()];
            for &(a, b) in pairs {
                for g in [a, b] {
                    if cache[g].is_none() {
                        let rows = tape.row_slice(h, spans[g].start, spans[g].len)?;
                        cache[g] = Some(tape.mean_rows(rows)?);
                    }
                }
                pooled.push((cache[a].unwrap(), cache[b].unwrap()));
            }
        } else {
            let za = tape.matmul(z, bound.affinity)?;
            let mut h: Vec<(Var, Var)> = Vec::with_capacity(pairs.len());
            let mut assign: Vec<Var> = Vec::with_capacity(pairs.len());
            for &(a, b) in pairs {
                let (sa, sb) = (spans[a], spans[b]);
                let z1 = tape.row_slice(z, sa.start, sa.len)?;
                let z2 = tape.row_slice(z, sb.start, sb.len)?;
                let z1a = tape.row_slice(za, sa.start, sa.len)?;
                assign.push(self.assignment_from(tape, z1a, z2, mode)?);
                h.push((z1, z2));
            }
            for (m, (w_first, w_second)) in bound.cross.iter().enumerate().take(rounds) {
                if m > 0 && cfg.recompute_assignment {
                    for (k, &(h1, h2)) in h.iter().enumerate() {
                        let h1a = tape.matmul(h1, bound.affinity)?;
                        assign[k] = self.assignment_from(tape, h1a, h2, mode)?;
                    }
                }
                let mut firsts = Vec::with_capacity(h.len());
                let mut seconds = Vec::with_capacity(h.len());
                for (k, &(h1, h2)) in h.iter().enumerate() {
                    let s = assign[k];
                    let into_first = tape.matmul(s, h2)?;
                    let into_second = tape.matmul_t(s, true, h1, false)?;
                    firsts.push(tape.concat(into_first, h1)?);
                    seconds.push(tape.concat(into_second, h2)?);
                }
                let lens: Vec<usize> = h.iter().map(|&(h1, _)| tape.dims(h1).0).collect();
                if cfg.share_cross_weights {
                    let mut parts = Vec::with_capacity(2 * h.len());
                    for (f, s) in firsts.iter().zip(&seconds) {
                        parts.push(*f);
                        parts.push(*s);
                    }
                    let u = tape.vstack(&parts)?;
                    let out = mlp(tape, u, w_first)?;
                    let mut offset = 0;
                    for (k, &n) in lens.iter().enumerate() {
                        let h1 = tape.row_slice(out, offset, n)?;
                        let h2 = tape.row_slice(out, offset + n, n)?;
                        h[k] = (h1, h2);
                        offset += 2 * n;
                    }
                } else {
                    let u1 = tape.vstack(&firsts)?;
                    let u2 = tape.vstack(&seconds)?;
                    let o1 = mlp(tape, u1, w_first)?;
                    let o2 = mlp(tape, u2, w_second)?;
                    let mut offset = 0;
                    for (k, &n) in lens.iter().enumerate() {
                        h[k] = (tape.row_slice(o1, offset, n)?, tape.row_slice(o2, offset, n)?);
                        offset += n;
                    }
                }
            }
            for (h1, h2) in h {
                pooled.push((tape.mean_rows(h1)?, tape.mean_rows(h2)?));
            }
        }

        let mut degenerate = 0;
        let mut scores = Vec::with_capacity(pooled.len());
        for (p1, p2) in pooled {
            let (s, deg) = similarity(tape, p1, p2, cfg.similarity_clamp)?;
            degenerate += deg as usize;
            scores.push(s);
        }
        Ok(PairScores { scores, degenerate })
    }

    /// Similarity of two graphs with equal node counts (inference mode).
    pub fn forward_pair(&self, g1: &RoiGraph, g2: &RoiGraph) -> Result<f64, NetError> {
        if g1.node_count() != g2.node_count() {
            return Err(NetError::UnequalNodeCounts {
                left: g1.node_count(),
                right: g2.node_count(),
            });
        }
        let stacked = StackedGraphs::new(&[g1, g2], self.input_dim)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let z = self.intra_embed_stacked(&mut tape, &bound, &stacked)?;
        let out = self.score_pairs(&mut tape, &bound, z, &stacked.spans, &[(0, 1)], SinkhornMode::EarlyExit)?;
        if out.degenerate > 0 {
            warn!("`{}` vs `{}`: both pooled embeddings are zero, similarity set to 0", g1.graph_id, g2.graph_id);
        }
        Ok(tape.scalar(out.scores[0]))
    }

    /// Score one query embedding against many candidate embeddings, reusing
    /// precomputed intra embeddings (inference mode).
    pub fn score_embedded(&self, query: &Tensor, candidates: &[&Tensor]) -> Result<(Vec<f64>, usize), NetError> {
        if candidates.is_empty() {
            return Ok((Vec::new(), 0));
        }
        let d = query.cols();
        let mut values = query.values().to_vec();
        let mut spans = vec![Span { start: 0, len: query.rows() }];
        for c in candidates {
            spans.push(Span {
                start: values.len() / d,
                len: c.rows(),
            });
            values.extend_from_slice(c.values());
        }
        let rows = values.len() / d;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let z = tape.constant(Tensor::matrix(rows, d, values)?);
        let pairs: Vec<(usize, usize)> = (1..spans.len()).map(|k| (0, k)).collect();
        let out = self.score_pairs(&mut tape, &bound, z, &spans, &pairs, SinkhornMode::EarlyExit)?;
        Ok((out.scores.iter().map(|&s| tape.scalar(s)).collect(), out.degenerate))
    }
}

/// Result of one differentiable pass over a chunk of labelled pairs.
pub struct ChunkGradients {
    /// `weight · Σ (ŝ − target)²` over the chunk.
    pub loss: f64,
    pub scores: Vec<f64>,
    /// One gradient per parameter, in store order.
    pub grads: Vec<Vec<f64>>,
}

impl NetParams {
    /// Squared-error loss of a chunk of pairs and its gradient with respect to
    /// every parameter. Sinkhorn runs its full unrolled budget.
    pub fn chunk_gradients(&self, graphs: &[&RoiGraph], pairs: &[(usize, usize)], targets: &[f64], weight: f64) -> Result<ChunkGradients, NetError> {
        if pairs.len() != targets.len() {
            return Err(NetError::Contract(format!("{} pairs but {} targets", pairs.len(), targets.len())));
        }
        let stacked = StackedGraphs::new(graphs, self.input_dim)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let z = self.intra_embed_stacked(&mut tape, &bound, &stacked)?;
        let out = self.score_pairs(&mut tape, &bound, z, &stacked.spans, pairs, SinkhornMode::Unrolled)?;
        let mut terms = Vec::with_capacity(pairs.len());
        for (&s, &t) in out.scores.iter().zip(targets) {
            let shifted = tape.map(s, crate::numcore::MapKind::Shift(-t))?;
            terms.push(tape.map(shifted, crate::numcore::MapKind::Square)?);
        }
        let stacked_terms = tape.vstack(&terms)?;
        let total = tape.sum_all(stacked_terms)?;
        let loss = tape.scale(total, weight)?;
        tape.backward(loss)?;
        let grads = bound
            .params
            .iter()
            .enumerate()
            .map(|(i, &v)| tape.take_grad(v).unwrap_or_else(|| vec![0.0; self.store.at(i).numel()]))
            .collect();
        Ok(ChunkGradients {
            loss: tape.scalar(loss),
            scores: out.scores.iter().map(|&s| tape.scalar(s)).collect(),
            grads,
        })
    }
}

/// Clamped (or raw) cosine of two pooled row vectors. Returns a constant 0 and
/// a degeneracy flag when either vector is zero.
pub fn similarity(tape: &mut Tape, p1: Var, p2: Var, clamp: bool) -> Result<(Var, bool), NumError> {
    let n1 = tape.norm(p1)?;
    let n2 = tape.norm(p2)?;
    if tape.scalar(n1) == 0.0 || tape.scalar(n2) == 0.0 {
        return Ok((tape.constant(Tensor::scalar(0.0)), true));
    }
    let d = tape.dot(p1, p2)?;
    let den = tape.mul(n1, n2)?;
    let cos = tape.div(d, den)?;
    Ok((if clamp { tape.relu(cos)? } else { cos }, false))
}

/// Mean over rows of an `n × d` matrix.
pub fn pool(h: &Tensor) -> Vec<f64> {
    let (r, c) = h.dims2();
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (o, v) in out.iter_mut().zip(h.row(i)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= r as f64);
    out
}
