use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lirlab_core::gflownet::{
    enumerate_modes, exact_terminal_distribution, loss_gradients, sample_trajectories, HyperGrid, LossKind, RewardSpec, RewardVariant,
    SamplingPolicy, TabularGFN,
};
use lirlab_core::seed::SeedTree;
use rand::Rng;

fn policy() -> TabularGFN {
    let mut gfn = TabularGFN::new(HyperGrid::new(2, 8).unwrap());
    let mut rng = SeedTree::new(0).rng("bench");
    gfn.logits.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    gfn
}

fn modes(c: &mut Criterion) {
    let grid = HyperGrid::new(4, 24).unwrap();
    let mut group = c.benchmark_group("enumerate_modes/d4_h24");
    for v in [RewardVariant::Original, RewardVariant::Cosine, RewardVariant::Xor, RewardVariant::Coprime] {
        let spec = RewardSpec::new(v);
        group.bench_function(format!("{v:?}").to_lowercase(), |b| b.iter(|| enumerate_modes(black_box(&spec), &grid).unwrap()));
    }
    group.finish();
}

fn sampling_and_losses(c: &mut Criterion) {
    let gfn = policy();
    let spec = RewardSpec::new(RewardVariant::Original);
    c.bench_function("sample/batch64", |b| {
        let mut rng = SeedTree::new(1).rng("sample");
        b.iter(|| sample_trajectories(&gfn, &spec, 64, &mut rng, SamplingPolicy::OnPolicy).unwrap())
    });
    let batch = sample_trajectories(&gfn, &spec, 64, &mut SeedTree::new(2).rng("sample"), SamplingPolicy::OnPolicy).unwrap();
    let mut group = c.benchmark_group("loss_gradients/batch64");
    for kind in LossKind::ALL {
        group.bench_function(kind.name(), |b| b.iter(|| loss_gradients(kind, black_box(&batch), 0.0, 100.0).unwrap()));
    }
    group.finish();
    c.bench_function("exact_terminal_distribution/d2_h8", |b| b.iter(|| exact_terminal_distribution(black_box(&gfn)).unwrap()));
}

criterion_group!(benches, modes, sampling_and_losses);
criterion_main!(benches);
