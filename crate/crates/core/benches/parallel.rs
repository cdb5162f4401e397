//! Sequential vs data-parallel execution of the three batch-heavy stages.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use preictal_core::ais::{negative_selection_train_with, AisParams};
use preictal_core::conditioning::Conditioner;
use preictal_core::eval::{
    evaluate_recordings, self_exemplars, synthetic_corpus, train_population, CorpusSpec, DEFAULT_HORIZON_S,
};
use preictal_core::ingest::{generate_synthetic, windows, SynthSpec};
use preictal_core::par::Execution;
use preictal_core::EngineConfig;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn conditioning(c: &mut Criterion) {
    let cfg = EngineConfig::default();
    let rec = generate_synthetic(&SynthSpec { channel_count: 16, duration_s: 60.0, seed: 1, ..SynthSpec::default() })
        .unwrap();
    let ws: Vec<_> = windows(&rec, &cfg).collect();
    let mut g = c.benchmark_group("conditioning_16ch_60s");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut cond = Conditioner::new(&cfg, 250, 16).unwrap().with_execution(exec);
                for w in &ws {
                    black_box(cond.process(w).unwrap());
                }
            })
        });
    }
    g.finish();
}

fn negative_selection(c: &mut Criterion) {
    let cfg = EngineConfig::default();
    let corpus = synthetic_corpus(&CorpusSpec { test_recordings: 0, ..CorpusSpec::default() }, Execution::Parallel)
        .unwrap();
    let self_set: Vec<_> = corpus
        .train
        .iter()
        .flat_map(|r| self_exemplars(r, &cfg, DEFAULT_HORIZON_S).unwrap())
        .collect();
    let params = AisParams::default();
    let mut g = c.benchmark_group("negative_selection");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(negative_selection_train_with(&self_set, &params, 7, exec).unwrap()))
        });
    }
    g.finish();
}

fn corpus_evaluation(c: &mut Criterion) {
    let cfg = EngineConfig::default();
    let corpus = synthetic_corpus(&CorpusSpec::default(), Execution::Parallel).unwrap();
    let pop = train_population(&corpus.train, &cfg, &AisParams::default(), 1, Execution::Parallel).unwrap();
    let mut g = c.benchmark_group("corpus_evaluation");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(evaluate_recordings(&corpus.test, &cfg, &pop, DEFAULT_HORIZON_S, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, conditioning, negative_selection, corpus_evaluation);
criterion_main!(benches);
