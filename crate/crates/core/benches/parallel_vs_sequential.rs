//! rayon's default pool against a single-thread pool on the data-parallel
//! hot paths: featurizing pairs and scoring a split.
//!
//! Build without default features to get the plain sequential code path;
//! the single-thread pool here approximates it without a rebuild.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use prefsynth::data::{DatasetSplit, SplitName};
use prefsynth::rm::{evaluate_accuracy, featurize_pairs, Featurizer, RmParams};
use prefsynth::sim::SimWorldConfig;
use prefsynth::strategies::{gen_sim_real, Prompt};

fn split(n: usize, world: &SimWorldConfig) -> DatasetSplit {
    let prompts = Prompt::sim_batch(n, world);
    let out = gen_sim_real(&prompts, world, 1).expect("sim labels");
    DatasetSplit::new(SplitName::RmTrain, out.examples)
}

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("sequential", single), ("rayon", all)]
}

fn bench_featurize(c: &mut Criterion) {
    let world = SimWorldConfig::reference();
    let data = split(4000, &world);
    let featurizers = [
        ("sim_aspect", Featurizer::sim(&world, 0.15, 3)),
        ("text_ngram", Featurizer::text()),
    ];
    let mut group = c.benchmark_group("featurize_pairs");
    group.sample_size(20);
    for (fname, f) in &featurizers {
        for (pname, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(*fname, pname), &data, |b, d| {
                b.iter(|| pool.install(|| black_box(featurize_pairs(d, f).unwrap())))
            });
        }
    }
    group.finish();
}

fn bench_accuracy(c: &mut Criterion) {
    let world = SimWorldConfig::reference();
    let data = split(4000, &world);
    let f = Featurizer::text();
    let params = RmParams {
        weights: (0..f.dim()).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect(),
        bias: 0.0,
    };
    let mut group = c.benchmark_group("evaluate_accuracy");
    group.sample_size(20);
    for (pname, pool) in pools() {
        group.bench_function(pname, |b| {
            b.iter(|| pool.install(|| black_box(evaluate_accuracy(&params, &data, &f).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_featurize, bench_accuracy);
criterion_main!(benches);
