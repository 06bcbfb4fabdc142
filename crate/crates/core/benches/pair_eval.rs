use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use icgm_core::net::{NetConfig, NetParams};
use icgm_core::pipeline::{evaluate, prepare, train, SplitConfig, TrainConfig};
use icgm_core::synthgen::{generate, SynthSpec};
use icgm_core::Exec;

fn modes() -> Vec<(&'static str, Exec)> {
    let mut m = vec![("sequential", Exec::Sequential)];
    if Exec::default().is_parallel() {
        m.push(("parallel", Exec::default()));
    }
    m
}

fn net() -> NetConfig {
    NetConfig {
        layers: 3,
        cross_iterations: 2,
        d_intra: 64,
        d_cross: 64,
        ..NetConfig::default()
    }
}

fn bench(c: &mut Criterion) {
    let cohort = generate(&SynthSpec {
        n_subjects: 120,
        positive_count: 30,
        ..SynthSpec::default()
    })
    .expect("valid spec");
    let data = prepare(&cohort.graphs, SplitConfig::default(), 0).expect("split");
    let params = NetParams::init(&net(), cohort.graphs[0].feature_dim(), 0).expect("init");
    let (test, templates) = (data.test_graphs(), data.template_graphs());

    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate(&test, &templates, &params, 0.5, exec).expect("evaluation"))
        });
    }
    group.finish();

    let config = TrainConfig {
        steps: 2,
        net: net(),
        ..TrainConfig::default()
    };
    let train_graphs = data.train_graphs();
    let mut group = c.benchmark_group("train_two_steps");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| train(&train_graphs, &config, exec, |_, _| {}).expect("training"))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
