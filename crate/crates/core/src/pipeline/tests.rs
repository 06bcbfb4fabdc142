use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graphio::{RoiGraph, SubjectLabel};
use crate::net::{NetConfig, NetParams};
use crate::seed::rng_for;
use crate::synthgen::{generate, SynthSpec};
use crate::Exec;

use SubjectLabel::{Fractured as Fx, NonFractured as Non};

fn small_net() -> NetConfig {
    NetConfig {
        layers: 2,
        cross_iterations: 1,
        d_intra: 16,
        d_cross: 16,
        ..NetConfig::default()
    }
}

fn small_train(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 16,
        net: small_net(),
        ..TrainConfig::default()
    }
}

fn cohort(n: usize, pos: usize, separation: f64, seed: u64) -> Vec<RoiGraph> {
    generate(&SynthSpec {
        n_subjects: n,
        positive_count: pos,
        separation,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
    .graphs
}

fn refs(v: &[RoiGraph]) -> Vec<&RoiGraph> {
    v.iter().collect()
}

// ---------------------------------------------------------------------------
// Pair labels and sampling

#[test]
fn pair_label_examples() {
    assert_eq!(pair_label(Fx, Fx).unwrap(), 1.0);
    assert_eq!(pair_label(Non, Non).unwrap(), 1.0);
    assert_eq!(pair_label(Fx, Non).unwrap(), 0.0);
    assert!(matches!(pair_label(Fx, SubjectLabel::Unknown), Err(PipelineError::Contract(_))));
}

fn with_sizes(sizes: &[(usize, SubjectLabel)]) -> Vec<RoiGraph> {
    let base = cohort(sizes.len(), 1, 1.0, 0);
    sizes
        .iter()
        .zip(base)
        .enumerate()
        .map(|(i, (&(n, label), mut g))| {
            g.graph_id = format!("g{i}");
            g.subject_label = label;
            g.nodes.truncate(n);
            g.edges.retain(|e| e[1] < n);
            g
        })
        .collect()
}

#[test]
fn homogeneous_sizes_always_pair() {
    let g = cohort(20, 6, 1.0, 1);
    let batch = sample_pair_batch(&refs(&g), 64, &mut rng_for(1, "t")).unwrap();
    assert_eq!(batch.len(), 64);
    assert!(batch.iter().all(|p| p.first != p.second));
}

#[test]
fn mixed_sizes_never_pair_across() {
    let g = with_sizes(&[(7, Fx), (7, Non), (6, Fx)]);
    let batch = sample_pair_batch(&refs(&g), 50, &mut rng_for(2, "t")).unwrap();
    assert!(batch.iter().all(|p| p.first != 2 && p.second != 2));
}

#[test]
fn sampling_is_seeded() {
    let g = cohort(30, 8, 1.0, 2);
    let a = sample_pair_batch(&refs(&g), 32, &mut rng_for(9, "t")).unwrap();
    let b = sample_pair_batch(&refs(&g), 32, &mut rng_for(9, "t")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sampling_needs_a_size_match() {
    let g = with_sizes(&[(7, Fx), (6, Non)]);
    assert!(matches!(sample_pair_batch(&refs(&g), 4, &mut rng_for(0, "t")), Err(PipelineError::Dataset(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn batches_stay_in_the_class_band(seed in any::<u64>(), pos in 1usize..6, batch in 1usize..80) {
        let g = cohort(40, pos, 1.0, seed % 7);
        let b = sample_pair_batch(&refs(&g), batch, &mut rng_for(seed, "t")).unwrap();
        let same = b.iter().filter(|p| p.target == 1.0).count();
        prop_assert!(same >= (0.25 * batch as f64).floor() as usize);
        prop_assert!(same <= (0.75 * batch as f64).ceil() as usize);
        for p in &b {
            prop_assert_eq!(p.target, pair_label(g[p.first].subject_label, g[p.second].subject_label).unwrap());
        }
    }
}

// ---------------------------------------------------------------------------
// Voting

#[test]
fn vote_examples() {
    let o = vote(&[(Fx, 0.9), (Fx, 0.8), (Non, 0.6)], 0.5).unwrap();
    assert_eq!((o.predicted, o.accepted_positive, o.accepted_negative, o.fallback_used), (Fx, 2, 1, false));
    let o = vote(&[(Fx, 0.3), (Non, 0.45), (Fx, 0.2)], 0.5).unwrap();
    assert_eq!((o.predicted, o.fallback_used), (Non, true));
    let o = vote(&[(Fx, 0.9), (Non, 0.9), (Fx, 0.7), (Non, 0.8)], 0.5).unwrap();
    assert_eq!((o.predicted, o.accepted_positive, o.accepted_negative), (Fx, 2, 2));
    assert!(vote(&[], 0.5).is_err());
}

/// Independent recount: counts by filtering, majority by comparison, fallback
/// by sorting a copy.
fn recount(rows: &[(SubjectLabel, f64)], theta: f64) -> SubjectLabel {
    let pos = rows.iter().filter(|(l, s)| *s > theta && *l == Fx).count();
    let neg = rows.iter().filter(|(l, s)| *s > theta && *l == Non).count();
    if pos + neg > 0 {
        return if pos >= neg { Fx } else { Non };
    }
    let mut indexed: Vec<(usize, f64)> = rows.iter().map(|r| r.1).enumerate().collect();
    indexed.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    rows[indexed[0].0].0
}

proptest! {
    #[test]
    fn vote_matches_recount_and_is_monotone(rows in prop::collection::vec((any::<bool>(), 0.0f64..1.0), 1..30), theta in 0.0f64..1.0) {
        let rows: Vec<(SubjectLabel, f64)> = rows.into_iter().map(|(p, s)| (if p { Fx } else { Non }, s)).collect();
        let o = vote(&rows, theta).unwrap();
        prop_assert_eq!(o.predicted, recount(&rows, theta));
        let higher = vote(&rows, (theta + 0.1).min(1.0)).unwrap();
        prop_assert!(higher.accepted_positive + higher.accepted_negative <= o.accepted_positive + o.accepted_negative);
    }
}

// ---------------------------------------------------------------------------
// Metrics

#[test]
fn metric_examples() {
    let m = Confusion { tp: 5, fn_: 1, tn: 10, fp: 2 }.metrics();
    for (got, want) in [(m.sn, 0.8333), (m.sp, 0.8333), (m.acc, 0.8333), (m.f1, 0.7692)] {
        assert!((got.unwrap() - want).abs() < 1e-4);
    }
    let m = Confusion { tp: 3, fn_: 0, tn: 4, fp: 0 }.metrics();
    assert_eq!((m.acc, m.sn, m.sp, m.f1), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));
    let m = Confusion { tp: 0, fn_: 0, tn: 4, fp: 1 }.metrics();
    assert_eq!(m.sn, None);
    assert_eq!(m.undefined(), vec!["sn".to_string()]);
}

#[test]
fn undefined_metrics_serialise_as_null_and_nan() {
    let trace = VoteTrace::build("t", Non, 0.5, vec![("a".into(), Non, 0.9)]).unwrap();
    let r = EvalReport::from_traces(vec![trace], 0.5, 0);
    assert!(r.to_json().contains("\"sn\": null"));
    assert!(r.to_csv().lines().nth(1).unwrap().contains("NaN"));
    assert_eq!(r.undefined_metrics, vec!["sn", "f1"]);
}

#[test]
fn summary_uses_sample_std() {
    let s = MetricSummary::of([Some(1.0), None, Some(3.0)]);
    assert_eq!((s.mean, s.std, s.defined_runs), (Some(2.0), Some(2f64.sqrt()), 2));
}

// ---------------------------------------------------------------------------
// Training

#[test]
fn zero_steps_returns_initialisation() {
    let g = cohort(30, 10, 2.0, 3);
    let cfg = small_train(0);
    let out = train(&refs(&g), &cfg, Exec::default(), |_, _| {}).unwrap();
    assert_eq!(out.params, NetParams::init(&cfg.net, 130, cfg.seed).unwrap());
    assert!(out.loss_curve.is_empty());
}

#[test]
fn training_is_identical_across_exec_modes() {
    let g = cohort(30, 10, 2.0, 4);
    let cfg = TrainConfig { batch_size: 40, ..small_train(3) };
    let a = train(&refs(&g), &cfg, Exec::Sequential, |_, _| {}).unwrap();
    let b = train(&refs(&g), &cfg, Exec::default(), |_, _| {}).unwrap();
    assert_eq!(a, b);
}

#[test]
fn non_finite_inputs_are_refused() {
    let mut g = cohort(10, 5, 2.0, 5);
    g.iter_mut().for_each(|g| g.nodes[0].features[3] = f64::NAN);
    let err = train(&refs(&g), &small_train(5), Exec::default(), |_, _| {}).unwrap_err();
    assert!(matches!(err, PipelineError::Dataset(_)), "{err}");
}

#[test]
fn diverging_loss_aborts_with_step_and_last_finite_loss() {
    let g = cohort(20, 10, 2.0, 5);
    let cfg = TrainConfig {
        optimizer: crate::numcore::AdamConfig {
            learning_rate: 1e300,
            ..Default::default()
        },
        ..small_train(20)
    };
    let err = train(&refs(&g), &cfg, Exec::default(), |_, _| {}).unwrap_err();
    match err {
        PipelineError::NonFiniteLoss { step, last_finite } => {
            assert!(step >= 1);
            assert!(last_finite.is_some_and(f64::is_finite));
        }
        other => panic!("unexpected error {other}"),
    }
}

fn tail_mean(curve: &[f64], n: usize) -> f64 {
    curve[curve.len() - n..].iter().sum::<f64>() / n as f64
}

#[test]
fn separable_cohort_drives_loss_down() {
    let g = cohort(120, 40, 6.0, 6);
    let cfg = TrainConfig {
        batch_size: 32,
        optimizer: crate::numcore::AdamConfig {
            learning_rate: 3e-3,
            ..Default::default()
        },
        ..small_train(400)
    };
    let out = train(&refs(&g), &cfg, Exec::default(), |_, _| {}).unwrap();
    let tail = tail_mean(&out.loss_curve, 100);
    assert!(tail < 0.05, "final 100-step mean loss {tail}");
}

#[test]
fn shuffled_labels_plateau_near_bernoulli_variance() {
    // pure noise and a pool too large to memorise
    let mut g = cohort(1000, 500, 0.0, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for x in &mut g {
        x.subject_label = if rng.random::<bool>() { Fx } else { Non };
    }
    let cfg = TrainConfig { batch_size: 32, ..small_train(300) };
    let out = train(&refs(&g), &cfg, Exec::default(), |_, _| {}).unwrap();
    let tail = tail_mean(&out.loss_curve, 100);
    assert!((tail - 0.25).abs() < 0.05, "plateau {tail}");
}

#[test]
fn checkpoint_round_trip() {
    let g = cohort(40, 12, 2.0, 8);
    let data = prepare(&g, SplitConfig::default(), 8).unwrap();
    let run = run_once(&data, &small_train(2), Exec::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    run.model.save(&path).unwrap();
    let back = TrainedModel::load(&path).unwrap();
    assert_eq!(back, run.model);
    assert_eq!(back.norm, data.norm);
}

// ---------------------------------------------------------------------------
// Evaluation

#[test]
fn size_incompatible_test_graph_is_named() {
    let g = with_sizes(&[(7, Fx), (7, Non), (6, Fx)]);
    let p = NetParams::init(&small_net(), 130, 0).unwrap();
    let err = evaluate(&[&g[2]], &[&g[0], &g[1]], &p, 0.5, Exec::default()).unwrap_err();
    assert!(err.to_string().contains("`g2`"), "{err}");
}

#[test]
fn report_counts_and_traces_agree() {
    let g = cohort(60, 20, 3.0, 9);
    let data = prepare(&g, SplitConfig::default(), 9).unwrap();
    let run = run_once(&data, &small_train(20), Exec::default()).unwrap();
    let r = &run.report;
    assert_eq!(r.confusion.total(), data.split.test.len());
    assert_eq!(r.confusion.metrics(), r.metrics);
    for t in &r.traces {
        let rows: Vec<_> = t.matches.iter().map(|m| (m.template_label, m.score)).collect();
        assert_eq!(t.predicted, recount(&rows, t.theta));
        assert!(t.matches.iter().all(|m| m.accepted == (m.score > t.theta)));
        assert_eq!(t.matches.len(), data.split.template.len());
    }
}

#[test]
fn protocol_run_is_reproducible() {
    let g = cohort(50, 15, 3.0, 10);
    let cfg = ProtocolConfig {
        train: TrainConfig { repeat_count: 2, ..small_train(5) },
        ..ProtocolConfig::default()
    };
    let a = run_protocol(&g, &cfg, Exec::default()).unwrap();
    let b = run_protocol(&g, &cfg, Exec::Sequential).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_ne!(a.reports[0].seed, a.reports[1].seed);
}

// ---------------------------------------------------------------------------
// Importance and top-K

fn trained_fixture() -> (PreparedData, NetParams) {
    let g = cohort(60, 20, 4.0, 11);
    let data = prepare(&g, SplitConfig::default(), 11).unwrap();
    let params = run_once(&data, &small_train(30), Exec::default()).unwrap().model.params;
    (data, params)
}

#[test]
fn importance_is_complete_sorted_and_repeatable() {
    let (data, params) = trained_fixture();
    let (test, tmpl) = (data.test_graphs(), data.template_graphs());
    let a = feature_importance(&test, &tmpl, &params, 0.8, Exec::default()).unwrap();
    let b = feature_importance(&test, &tmpl, &params, 0.8, Exec::Sequential).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 130);
    let mut slots: Vec<usize> = a.iter().map(|r| r.slot).collect();
    slots.sort_unstable();
    assert_eq!(slots, (0..130).collect::<Vec<_>>());
    assert!(a.windows(2).all(|w| w[0].delta_sn >= w[1].delta_sn));
    let csv = importance_csv(&a);
    assert_eq!(csv.lines().next().unwrap(), "slot_name,delta_sn");
    assert_eq!(csv.lines().count(), 131);
}

#[test]
fn topk_edges() {
    let (data, params) = trained_fixture();
    let (test, tmpl) = (data.test_graphs(), data.template_graphs());
    let baseline = evaluate(&test, &tmpl, &params, 0.5, Exec::default()).unwrap();
    let ranking: Vec<usize> = (0..130).rev().collect();
    let rows = topk_eval(&[130, 0], &ranking, &test, &tmpl, &params, 0.5, Exec::default()).unwrap();
    assert_eq!(rows[0].report, baseline);
    assert_eq!(rows[1].report.confusion.total(), test.len());
    assert!(matches!(topk_eval(&[131], &ranking, &test, &tmpl, &params, 0.5, Exec::default()), Err(PipelineError::Parameter(_))));
    assert_eq!(topk_csv(&rows).lines().next().unwrap(), "K,acc,f1,sn,sp");
}

#[test]
fn zeroing_twice_changes_nothing_more() {
    let g = cohort(4, 2, 1.0, 12);
    let once = zero_slots(&refs(&g), &[5]);
    let twice = zero_slots(&refs(&once), &[5]);
    assert_eq!(once, twice);
    assert!(once.iter().all(|g| g.nodes.iter().all(|n| n.features[5] == 0.0)));
}

// ---------------------------------------------------------------------------
// Sweep

#[test]
fn single_cell_sweep_has_one_row_per_variant_and_repeats_exactly() {
    let g = cohort(50, 15, 3.0, 13);
    let grid = SweepGrid {
        cross_iterations: vec![1],
        layers: vec![2],
        widths: vec![8],
        include_disabled: true,
    };
    let cfg = ProtocolConfig {
        train: TrainConfig { repeat_count: 2, ..small_train(3) },
        ..ProtocolConfig::default()
    };
    let a = sweep(&g, &grid, &cfg, Exec::default()).unwrap();
    assert_eq!(a.len(), 2);
    assert_eq!((a[0].cross_enabled, a[1].cross_enabled), (true, false));
    let b = sweep(&g, &grid, &cfg, Exec::Sequential).unwrap();
    assert_eq!(sweep_csv(&a), sweep_csv(&b));
    assert_eq!(sweep_csv(&a).lines().next().unwrap(), "M,L,d,cross_enabled,mean_sn,std_sn,failed_runs");
}

#[test]
fn failed_sweep_cells_are_recorded() {
    let g = cohort(50, 15, 3.0, 14);
    let grid = SweepGrid {
        cross_iterations: vec![1],
        layers: vec![0],
        widths: vec![8],
        include_disabled: false,
    };
    let cfg = ProtocolConfig {
        train: TrainConfig { repeat_count: 1, ..small_train(1) },
        ..ProtocolConfig::default()
    };
    let rows = sweep(&g, &grid, &cfg, Exec::default()).unwrap();
    assert_eq!(rows[0].failed_runs, 1);
    assert!(rows[0].first_error.is_some());
}
