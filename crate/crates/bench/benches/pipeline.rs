use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sourcebias::{
    evaluate_bias, gradients, init_model, mix_training_set, rank_corpus, train, Batch, Init, LossSpec, MetricSpec,
    PenaltyMode, Seed, TrainConfig,
};
use sourcebias_bench::corpus;

fn ranking(c: &mut Criterion) {
    let mut g = c.benchmark_group("ranking");
    for n in [100, 500] {
        let ds = corpus(n);
        g.bench_with_input(BenchmarkId::new("rank_corpus", n), &ds, |b, ds| {
            b.iter(|| rank_corpus(&ds.queries, &ds.items, &ds.qry_table, &ds.img_table).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("evaluate_bias", n), &ds, |b, ds| {
            b.iter(|| evaluate_bias(ds, &MetricSpec::defaults()).unwrap())
        });
    }
    g.finish();
}

fn gradient(c: &mut Criterion) {
    let ds = corpus(64);
    let pairs = mix_training_set(&ds, 100.0, Seed(1)).unwrap();
    let triples = ds.triples();
    let model = init_model(64, 64, 64, Seed(0), Init::Random, 0.05).unwrap();
    let batch = Batch {
        qry_table: &ds.qry_table,
        img_table: &ds.img_table,
        pairs: &pairs,
        triples: &triples,
    };
    let mut g = c.benchmark_group("gradients_batch64");
    g.bench_function("base", |b| b.iter(|| gradients(&model, &batch, &LossSpec::base_only()).unwrap()));
    g.bench_function("combined", |b| {
        b.iter(|| gradients(&model, &batch, &LossSpec::combined(PenaltyMode::IndicatorHinge, 0.1)).unwrap())
    });
    g.finish();
}

fn training(c: &mut Criterion) {
    let ds = corpus(500);
    let pairs = mix_training_set(&ds, 100.0, Seed(2)).unwrap();
    let triples = ds.triples();
    let cfg = TrainConfig {
        epochs: 1,
        beta: 0.5,
        ..TrainConfig::default()
    };
    let mut g = c.benchmark_group("training");
    g.sample_size(10);
    g.bench_function("epoch_500_queries", |b| b.iter(|| train(&ds, &pairs, &triples, &cfg, None).unwrap()));
    g.finish();
}

criterion_group!(benches, ranking, gradient, training);
criterion_main!(benches);
