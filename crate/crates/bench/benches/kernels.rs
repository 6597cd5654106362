use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use jumptree::crf::{BaseMeasure, CrfState, FranchiseLayout};
use jumptree::pmcmc::{self, McmcConfig};
use jumptree::{rng_from_seed, ParticleFilter, SmcConfig};
use jumptree_bench::two_group_instance;

fn smc(c: &mut Criterion) {
    let mut group = c.benchmark_group("smc_log_likelihood");
    group.sample_size(20);
    for leaves in [50, 100, 200] {
        let (tree, jumps) = two_group_instance(leaves, 1);
        let base = BaseMeasure::uniform(2);
        let mut filter = ParticleFilter::new(SmcConfig::with_particles(100)).unwrap();
        let mut rng = rng_from_seed(2);
        group.bench_with_input(BenchmarkId::from_parameter(leaves), &leaves, |b, _| {
            b.iter(|| filter.log_likelihood(&tree, &jumps, 0.5, &base, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn seating(c: &mut Criterion) {
    let (tree, jumps) = two_group_instance(100, 3);
    let pruned = tree.prune(&jumps).unwrap();
    let layout = FranchiseLayout::new(&pruned, 0.5, BaseMeasure::uniform(2)).unwrap();
    let stream: Vec<(usize, u32)> = pruned
        .groups
        .iter()
        .enumerate()
        .flat_map(|(g, group)| group.observations.iter().map(move |&v| (g, v)))
        .collect();
    let mut rng = rng_from_seed(4);
    c.bench_function("crf_seat_stream_100_leaves", |b| {
        b.iter(|| {
            let mut state = CrfState::new(&layout);
            for &(g, v) in &stream {
                state.seat(g, v, &mut rng).unwrap();
            }
            black_box(state.predictive(0, 1).unwrap())
        })
    });
}

fn tree_ops(c: &mut Criterion) {
    let (tree, jumps) = two_group_instance(200, 5);
    c.bench_function("rescale_200_leaves", |b| b.iter(|| black_box(tree.rescale())));
    c.bench_function("prune_200_leaves", |b| b.iter(|| black_box(tree.prune(&jumps).unwrap())));
}

fn chain(c: &mut Criterion) {
    let (tree, _) = two_group_instance(100, 6);
    let config = McmcConfig {
        iterations: 2_000,
        seed: 7,
        ..Default::default()
    };
    let mut group = c.benchmark_group("pmcmc");
    group.sample_size(10);
    group.bench_function("2k_iterations_100_leaves", |b| {
        b.iter(|| pmcmc::run_seeded(&tree, &config).unwrap().smc_calls)
    });
    group.finish();
}

criterion_group!(benches, smc, seating, tree_ops, chain);
criterion_main!(benches);
