use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use netlat::features::{self, FeatureMatrix, SvmFeatureOptions};
use netlat::markov::{self, PredictionRule};
use netlat::svm::{self, KernelKind, SvmConfig, TuneGrid};
use netlat::synth::{self, RttGenModel};
use netlat::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn svm_data(n: usize) -> FeatureMatrix {
    let s = synth::gen_rtt_dataset(&RttGenModel { seed: 1, ..Default::default() }, n).unwrap();
    features::assemble_svm_features(&s.dataset, SvmFeatureOptions { categorical: false, ..Default::default() }).unwrap()
}

fn markov_benches(c: &mut Criterion) {
    let m = synth::gpn_matrix();
    let seqs = synth::gen_state_sequences(&m, 20_000, 13, 1).unwrap();
    let (train, test) = seqs.split_at(10_000);

    let mut g = c.benchmark_group("markov");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("gen_state_sequences", name), &exec, |b, &exec| {
            b.iter(|| synth::gen_state_sequences_with(&m, 10_000, 13, 1, exec).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("estimate_transitions", name), &exec, |b, &exec| {
            b.iter(|| markov::estimate_transitions_with(black_box(train), exec).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("evaluate_spikes", name), &exec, |b, &exec| {
            b.iter(|| markov::evaluate_spikes_with(&m, black_box(test), PredictionRule::SpikeThreshold(0.5), exec))
        });
    }
    g.finish();
}

fn svm_benches(c: &mut Criterion) {
    let data = svm_data(600);
    let grid = TuneGrid {
        kernels: vec![KernelKind::Linear, KernelKind::Rbf],
        costs: vec![1.0, 16.0],
        gammas: vec![1.0 / 32.0, 1.0 / 8.0],
        degrees: vec![3],
        coef0s: vec![0.0],
    };

    let mut g = c.benchmark_group("svm");
    g.sample_size(10);
    for (name, exec) in MODES {
        let config = SvmConfig { exec, ..SvmConfig::published_best() };
        g.bench_with_input(BenchmarkId::new("train_multiclass", name), &config, |b, config| {
            b.iter(|| svm::train_multiclass(black_box(&data), config).unwrap())
        });
        let base = SvmConfig { exec, ..Default::default() };
        g.bench_with_input(BenchmarkId::new("tune", name), &base, |b, base| {
            b.iter(|| svm::tune(black_box(&data), &grid, 3, 1, base).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, markov_benches, svm_benches);
criterion_main!(benches);
