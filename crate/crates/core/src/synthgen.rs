//! Seeded synthetic cohorts of labelled femur-like graphs.
//!
//! Every node carries a full 130-slot feature vector. Slots not listed as
//! informative are standard normal noise. Informative slots have class means
//! `±separation/2 · (1 − coupling)`; with coupling `c > 0`, a positive
//! subject's value on node `j` is `√c · u + √(1−c) · ε_j` with one shared draw
//! `u` per subject and slot, so the class signal moves from the marginal mean
//! into the correlation between nodes while every marginal stays N(mean, 1).
//! Subject-level slots (clinical and BMD) are drawn once per subject and
//! replicated across nodes.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::features::{Family, FeatureLayout, FEATURE_DIM};
use crate::graphio::{
    build_connected, make_split, write_atomic, BuildMethod, DatasetManifest, EdgeSpec, GraphError, ManifestEntry, Node, RoiGraph, SubjectLabel,
};
use crate::seed::{derive, rng_for};

/// Canonical centroids in pixels, listed in node order. The first seven form
/// the default layout; six-node graphs drop the shaft and eight-node graphs
/// add the lesser trochanter.
pub const CANONICAL_LAYOUT: [(&str, [f64; 2]); 8] = [
    ("femoral_head", [60.0, 60.0]),
    ("subcapital", [85.0, 80.0]),
    ("superior_neck", [100.0, 70.0]),
    ("inferior_neck", [95.0, 100.0]),
    ("greater_trochanter", [140.0, 75.0]),
    ("intertrochanteric", [125.0, 115.0]),
    ("shaft", [130.0, 190.0]),
    ("lesser_trochanter", [115.0, 145.0]),
];

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// One component of the node-count mixture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeCountWeight {
    pub nodes: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub positive_count: usize,
    /// Mixture over 6, 7 or 8 nodes.
    pub node_counts: Vec<NodeCountWeight>,
    /// 0-based slot indices.
    pub informative_slots: Vec<usize>,
    /// Class-mean gap in units of the within-class standard deviation.
    pub separation: f64,
    pub structure_coupling: f64,
    /// Standard deviation of the centroid jitter, in pixels.
    pub jitter_std: f64,
    pub edge_method: BuildMethod,
    pub knn_k: usize,
    pub distance_threshold: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_subjects: 547,
            positive_count: 94,
            node_counts: vec![NodeCountWeight { nodes: 7, weight: 1.0 }],
            informative_slots: (0..10).collect(),
            separation: 4.0,
            structure_coupling: 0.0,
            jitter_std: 3.0,
            edge_method: BuildMethod::Knn,
            knn_k: 2,
            distance_threshold: 50.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.n_subjects == 0 {
            return bad("n_subjects must be at least 1".into());
        }
        if self.positive_count > self.n_subjects {
            return bad(format!("positive_count {} exceeds n_subjects {}", self.positive_count, self.n_subjects));
        }
        if self.node_counts.is_empty() {
            return bad("node_counts is empty".into());
        }
        for c in &self.node_counts {
            if !(6..=8).contains(&c.nodes) {
                return bad(format!("node count {} outside the supported 6..=8", c.nodes));
            }
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return bad(format!("node-count weight {} is not a finite non-negative number", c.weight));
            }
        }
        if self.node_counts.iter().map(|c| c.weight).sum::<f64>() <= 0.0 {
            return bad("node-count weights sum to zero".into());
        }
        if let Some(s) = self.informative_slots.iter().find(|&&s| s >= FEATURE_DIM) {
            return bad(format!("informative slot {s} outside 0..{FEATURE_DIM}"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad(format!("separation {} must be finite and >= 0", self.separation));
        }
        if !(0.0..=1.0).contains(&self.structure_coupling) {
            return bad(format!("structure_coupling {} outside [0, 1]", self.structure_coupling));
        }
        if !(self.jitter_std >= 0.0 && self.jitter_std.is_finite()) {
            return bad(format!("jitter_std {} must be finite and >= 0", self.jitter_std));
        }
        Ok(())
    }

    fn edge_spec(&self) -> EdgeSpec {
        EdgeSpec {
            method: self.edge_method,
            k: self.knn_k,
            threshold: self.distance_threshold,
        }
    }

    fn draw_node_count(&self, rng: &mut ChaCha8Rng) -> usize {
        let total: f64 = self.node_counts.iter().map(|c| c.weight).sum();
        let mut x = rng.random::<f64>() * total;
        for c in &self.node_counts {
            if x < c.weight {
                return c.nodes;
            }
            x -= c.weight;
        }
        self.node_counts.iter().rev().find(|c| c.weight > 0.0).expect("validated").nodes
    }

    fn class_mean(&self, positive: bool) -> f64 {
        let half = self.separation / 2.0 * (1.0 - self.structure_coupling);
        if positive { half } else { -half }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthMetadata {
    pub spec: SynthSpec,
    pub informative_slot_names: Vec<String>,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub graphs: Vec<RoiGraph>,
    pub metadata: SynthMetadata,
}

fn subject_graph(spec: &SynthSpec, index: usize, positive: bool, informative: &[bool; FEATURE_DIM]) -> Result<RoiGraph, SynthError> {
    let mut rng = rng_for(derive(spec.seed, index as u64), "subject");
    let n = spec.draw_node_count(&mut rng);
    let layout: Vec<(&str, [f64; 2])> = match n {
        6 => CANONICAL_LAYOUT[..6].to_vec(),
        7 => CANONICAL_LAYOUT[..7].to_vec(),
        _ => CANONICAL_LAYOUT.to_vec(),
    };
    let centroids: Vec<[f64; 2]> = layout
        .iter()
        .map(|(_, [x, y])| {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            [x + spec.jitter_std * dx, y + spec.jitter_std * dy]
        })
        .collect();
    let (edges, build_params) = build_connected(&centroids, &spec.edge_spec())?;

    let c = spec.structure_coupling;
    let mean = spec.class_mean(positive);
    let mut features = vec![vec![0.0; FEATURE_DIM]; n];
    for slot in 0..FEATURE_DIM {
        let shift = if informative[slot] { mean } else { 0.0 };
        let subject_level = Family::of_slot(slot).is_some_and(Family::is_subject_level);
        if subject_level {
            let v = shift + rng.sample::<f64, _>(StandardNormal);
            features.iter_mut().for_each(|f| f[slot] = v);
        } else if informative[slot] && positive && c > 0.0 {
            let shared: f64 = rng.sample(StandardNormal);
            for f in &mut features {
                let own: f64 = rng.sample(StandardNormal);
                f[slot] = shift + c.sqrt() * shared + (1.0 - c).sqrt() * own;
            }
        } else {
            for f in &mut features {
                f[slot] = shift + rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    Ok(RoiGraph {
        graph_id: format!("synth_{index:05}"),
        subject_label: if positive { SubjectLabel::Fractured } else { SubjectLabel::NonFractured },
        build_method: spec.edge_method,
        build_params,
        nodes: layout
            .iter()
            .zip(centroids)
            .zip(features)
            .map(|(((label, _), centroid), features)| Node {
                label: label.to_string(),
                centroid,
                features,
            })
            .collect(),
        edges: edges.into_iter().map(|(a, b)| [a, b]).collect(),
    })
}

/// Generate the cohort described by `spec`. Which subjects are positive is a
/// seeded shuffle; each subject's content comes from its own derived stream.
pub fn generate(spec: &SynthSpec) -> Result<Cohort, SynthError> {
    spec.validate()?;
    let mut positive = vec![false; spec.n_subjects];
    positive[..spec.positive_count].iter_mut().for_each(|p| *p = true);
    positive.shuffle(&mut rng_for(spec.seed, "synth-labels"));
    let mut informative = [false; FEATURE_DIM];
    spec.informative_slots.iter().for_each(|&s| informative[s] = true);

    let indices: Vec<usize> = (0..spec.n_subjects).collect();
    let graphs = crate::Exec::default()
        .map(&indices, |&i| subject_graph(spec, i, positive[i], &informative))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let layout = FeatureLayout::get();
    let mut slots = spec.informative_slots.clone();
    slots.sort_unstable();
    slots.dedup();
    Ok(Cohort {
        graphs,
        metadata: SynthMetadata {
            spec: spec.clone(),
            informative_slot_names: slots.iter().map(|&s| layout.name(s).to_string()).collect(),
            positives: spec.positive_count,
            negatives: spec.n_subjects - spec.positive_count,
        },
    })
}

/// Write `graphs/<id>.json`, `manifest.json` (with a stratified split) and
/// `metadata.json` under `dir`.
pub fn write_cohort(cohort: &Cohort, dir: &Path, template_frac: f64, train_frac: f64, split_seed: u64) -> Result<DatasetManifest, SynthError> {
    let graph_dir = dir.join("graphs");
    std::fs::create_dir_all(&graph_dir).map_err(|e| GraphError::io(&graph_dir, e))?;
    let labels: Vec<SubjectLabel> = cohort.graphs.iter().map(|g| g.subject_label).collect();
    let split = make_split(&labels, template_frac, train_frac, split_seed)?;
    let mut entries = Vec::with_capacity(cohort.graphs.len());
    for (i, g) in cohort.graphs.iter().enumerate() {
        let rel = format!("graphs/{}.json", g.graph_id);
        g.save(&dir.join(&rel))?;
        entries.push(ManifestEntry {
            graph_id: g.graph_id.clone(),
            path: rel,
            label: g.subject_label,
            split: split.role_of(i).expect("split covers the pool"),
        });
    }
    let manifest = DatasetManifest {
        seed: split_seed,
        template_frac,
        train_frac,
        graphs: entries,
    };
    manifest.save(&dir.join("manifest.json"))?;
    let meta = serde_json::to_string_pretty(&cohort.metadata).expect("metadata serialises");
    write_atomic(&dir.join("metadata.json"), meta.as_bytes())?;
    Ok(manifest)
}

/// Monte-Carlo accuracy of the Bayes classifier for the uncoupled
/// construction. Under the model the log-likelihood ratio of a subject is
/// `separation · Σ x` over its informative observations plus the log prior
/// ratio. Returns `None` when `structure_coupling > 0`.
pub fn oracle_bayes_accuracy(spec: &SynthSpec, draws: usize, seed: u64) -> Result<Option<f64>, SynthError> {
    spec.validate()?;
    if spec.structure_coupling > 0.0 {
        return Ok(None);
    }
    if spec.positive_count == 0 || spec.positive_count == spec.n_subjects {
        return Ok(Some(1.0));
    }
    let prior = spec.positive_count as f64 / spec.n_subjects as f64;
    let log_prior = (prior / (1.0 - prior)).ln();
    let mut slots = spec.informative_slots.clone();
    slots.sort_unstable();
    slots.dedup();
    let subject_level = slots.iter().filter(|&&s| Family::of_slot(s).is_some_and(Family::is_subject_level)).count();
    let node_level = slots.len() - subject_level;

    let mut rng = rng_for(seed, "bayes-oracle");
    let mut correct = 0usize;
    for _ in 0..draws {
        let positive = rng.random::<f64>() < prior;
        let mean = spec.class_mean(positive);
        let n = spec.draw_node_count(&mut rng);
        let observations = subject_level + node_level * n;
        let total: f64 = (0..observations).map(|_| mean + rng.sample::<f64, _>(StandardNormal)).sum();
        let llr = spec.separation * total + log_prior;
        // ties (separation 0, equal priors) go to the positive class
        let predicted = llr >= 0.0;
        correct += (predicted == positive) as usize;
    }
    Ok(Some(correct as f64 / draws as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            n_subjects: 40,
            positive_count: 12,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn cohort_mirroring_counts() {
        let c = generate(&SynthSpec::default()).unwrap();
        assert_eq!(c.graphs.len(), 547);
        assert_eq!(c.graphs.iter().filter(|g| g.subject_label.is_positive()).count(), 94);
        assert_eq!(c.metadata.informative_slot_names[0], "basics_Mean");
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        assert_eq!(generate(&small(3)).unwrap(), generate(&small(3)).unwrap());
        assert_ne!(generate(&small(3)).unwrap().graphs, generate(&small(4)).unwrap().graphs);
    }

    #[test]
    fn graphs_satisfy_invariants() {
        let spec = SynthSpec {
            node_counts: vec![
                NodeCountWeight { nodes: 6, weight: 1.0 },
                NodeCountWeight { nodes: 7, weight: 2.0 },
                NodeCountWeight { nodes: 8, weight: 1.0 },
            ],
            informative_slots: vec![3, 115],
            ..small(9)
        };
        for method in [BuildMethod::Knn, BuildMethod::Delaunay, BuildMethod::Distance] {
            let c = generate(&SynthSpec { edge_method: method, ..spec.clone() }).unwrap();
            let mut sizes = std::collections::BTreeSet::new();
            for g in &c.graphs {
                g.validate().unwrap();
                assert_eq!(g.build_method, method);
                sizes.insert(g.node_count());
                for n in &g.nodes[1..] {
                    assert_eq!(n.features[110..], g.nodes[0].features[110..]);
                }
            }
            assert_eq!(sizes.into_iter().collect::<Vec<_>>(), vec![6, 7, 8]);
        }
    }

    #[test]
    fn invalid_specs_are_refused() {
        let cases = [
            SynthSpec { positive_count: 41, ..small(0) },
            SynthSpec { informative_slots: vec![130], ..small(0) },
            SynthSpec { structure_coupling: 1.5, ..small(0) },
            SynthSpec { node_counts: vec![NodeCountWeight { nodes: 5, weight: 1.0 }], ..small(0) },
            SynthSpec { separation: -1.0, ..small(0) },
        ];
        for spec in cases {
            assert!(matches!(generate(&spec), Err(SynthError::Spec(_))), "{spec:?}");
        }
    }

    #[test]
    fn zero_separation_leaves_classes_indistinguishable() {
        let spec = SynthSpec {
            n_subjects: 10_000,
            positive_count: 5_000,
            separation: 0.0,
            informative_slots: vec![0],
            ..SynthSpec::default()
        };
        let c = generate(&spec).unwrap();
        let by_class = |pos: bool| -> Vec<f64> { c.graphs.iter().filter(|g| g.subject_label.is_positive() == pos).map(|g| g.nodes[0].features[0]).collect() };
        let (a, b) = (by_class(true), by_class(false));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let se = (var(&a) / a.len() as f64 + var(&b) / b.len() as f64).sqrt();
        assert!((mean(&a) - mean(&b)).abs() < 3.0 * se);
    }

    #[test]
    fn informative_slot_means_follow_separation() {
        let spec = SynthSpec {
            n_subjects: 4000,
            positive_count: 2000,
            separation: 2.0,
            informative_slots: vec![20],
            ..SynthSpec::default()
        };
        let c = generate(&spec).unwrap();
        let avg = |pos: bool| {
            let v: Vec<f64> = c.graphs.iter().filter(|g| g.subject_label.is_positive() == pos).flat_map(|g| g.nodes.iter().map(|n| n.features[20])).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!((avg(true) - 1.0).abs() < 0.05 && (avg(false) + 1.0).abs() < 0.05);
    }

    fn oracle(separation: f64, slots: Vec<usize>, positives: usize) -> f64 {
        let spec = SynthSpec {
            n_subjects: 100,
            positive_count: positives,
            separation,
            informative_slots: slots,
            ..SynthSpec::default()
        };
        oracle_bayes_accuracy(&spec, 100_000, 1).unwrap().unwrap()
    }

    #[test]
    fn bayes_oracle_examples() {
        // no signal: the best rule is the majority class
        assert!((oracle(0.0, vec![0], 30) - 0.7).abs() < 0.02);
        // one subject-level slot at separation 6: error ≈ Φ(−3) ≈ 0.00135
        assert!(oracle(6.0, vec![120], 50) > 0.99);
        let mut last = 0.0;
        for sep in [0.0, 0.25, 0.5, 1.0, 2.0] {
            let acc = oracle(sep, vec![125], 50);
            assert!(acc >= last - 0.005, "{sep}: {acc} < {last}");
            last = acc;
        }
        let coupled = SynthSpec { structure_coupling: 0.5, ..SynthSpec::default() };
        assert_eq!(oracle_bayes_accuracy(&coupled, 10, 0).unwrap(), None);
    }

    #[test]
    fn bayes_oracle_matches_gaussian_tail() {
        // a single subject-level slot with equal priors: accuracy = Φ(sep/2)
        let sep = 1.0;
        let expect = 1.0 - 0.5 * erfc(sep / 2.0 / std::f64::consts::SQRT_2);
        assert!((oracle(sep, vec![111], 50) - expect).abs() < 0.01);
    }

    /// erfc via the Abramowitz–Stegun 7.1.26 rational approximation (|err| < 1.5e-7).
    fn erfc(x: f64) -> f64 {
        let t = 1.0 / (1.0 + 0.327_591_1 * x);
        let poly = t * (0.254_829_592 + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
        poly * (-x * x).exp()
    }

    /// Two-sample Kolmogorov–Smirnov p-value (asymptotic).
    fn ks_p_value(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            let x = a[i].min(b[j]);
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
        let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
        let p: f64 = (1..200).map(|k| 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k * k) as f64 * lambda * lambda).exp()).sum();
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn full_coupling_hides_signal_from_marginals() {
        let spec = SynthSpec {
            n_subjects: 1000,
            positive_count: 500,
            structure_coupling: 1.0,
            separation: 4.0,
            ..SynthSpec::default()
        };
        let c = generate(&spec).unwrap();
        let node0 = |pos: bool, slot: usize| -> Vec<f64> { c.graphs.iter().filter(|g| g.subject_label.is_positive() == pos).map(|g| g.nodes[0].features[slot]).collect() };
        for slot in 0..FEATURE_DIM {
            let p = ks_p_value(node0(true, slot), node0(false, slot));
            assert!(p > 0.01, "slot {slot}: KS p = {p}");
        }
        // the joint differs: informative slots are identical across a positive's nodes
        let spread = |pos: bool| -> f64 {
            c.graphs
                .iter()
                .filter(|g| g.subject_label.is_positive() == pos)
                .map(|g| (g.nodes[0].features[0] - g.nodes[1].features[0]).abs())
                .sum::<f64>()
        };
        assert_eq!(spread(true), 0.0);
        assert!(spread(false) > 100.0);
    }

    #[test]
    fn written_cohort_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate(&small(5)).unwrap();
        let m = write_cohort(&c, dir.path(), 0.1, 0.8, 5).unwrap();
        assert_eq!(m.graphs.len(), 40);
        let back = RoiGraph::load(&dir.path().join(&m.graphs[7].path)).unwrap();
        assert_eq!(back, c.graphs[7]);
        let meta: SynthMetadata = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
        assert_eq!(meta, c.metadata);
    }
}
