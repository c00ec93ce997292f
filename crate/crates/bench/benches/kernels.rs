use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use perturblab_bench::{image, network};
use perturblab_core::attack::{bim_attack, BimParams, Goal};
use perturblab_core::attack::{Algorithm, AttackSpec};
use perturblab_core::classifier::input_gradient;
use perturblab_core::ensemble::{generate_averaged_with, EnsembleSpec, Execution};
use perturblab_core::loss::LossSpec;
use perturblab_core::{Classifier, Result, Tensor};

const ARCHS: [&str; 3] = ["stride-cnn", "pool-cnn", "residual-cnn"];

fn forward_backward(c: &mut Criterion) {
    let x = image(&[1, 32, 32], 1);
    let mut group = c.benchmark_group("network");
    for name in ARCHS {
        let net = network(name, 1, 32, 10, 2);
        group.bench_with_input(BenchmarkId::new("forward", name), &net, |b, net| {
            b.iter(|| net.logits(black_box(&x)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("input_gradient", name), &net, |b, net| {
            b.iter(|| input_gradient(net, black_box(&x), &LossSpec::CrossEntropy { label: 3 }).unwrap())
        });
    }
    group.finish();
}

fn bim(c: &mut Criterion) {
    let net = network("stride-cnn", 1, 32, 10, 3);
    let x = image(&[1, 32, 32], 4);
    let params = BimParams { epsilon: 0.2, step: 0.008, iterations: 20 };
    c.bench_function("bim/20_iterations", |b| {
        b.iter(|| bim_attack(&net, black_box(&x), Goal::Untargeted(1), &params).unwrap())
    });
}

fn ensemble(c: &mut Criterion) {
    let nets: Vec<_> = (0..4).map(|i| network(ARCHS[i % 3], 1, 32, 10, 10 + i as u64)).collect();
    let refs: Vec<&dyn Classifier> = nets.iter().map(|n| n as &dyn Classifier).collect();
    let x = image(&[1, 32, 32], 5);
    let attack = AttackSpec::untargeted(Algorithm::Bim.default_params());
    let run = |clf: &dyn Classifier, input: &Tensor, y: usize, seed: u64| -> Result<Tensor> {
        attack.clone().with_seed(seed).run(clf, input, y)
    };
    let spec = EnsembleSpec { m: 4, n: 2, sigma: 0.2, seed: 6 };
    c.bench_function("ensemble/m4_n2_bim", |b| {
        b.iter(|| generate_averaged_with(black_box(&x), 2, &refs, &spec, 7, &run, Execution::Parallel).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = forward_backward, bim, ensemble
}
criterion_main!(benches);
