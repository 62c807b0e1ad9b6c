//! Sequential vs rayon paths on the per-example hot loops: a forward/backward
//! pass over one batch and a 10-step PGD attack.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use sslc::diffcore::{backward, forward, Arch, Dims, DropoutMode, ModelConfig, Params, Upstream};
use sslc::losses::{attack_delta, cross_entropy_grad, AttackConfig};
use sslc::{par, seed};

fn setup(rows: usize, len: usize, arch: Arch) -> (Params, Vec<Vec<u32>>, Vec<usize>) {
    let cfg = ModelConfig {
        arch,
        d: 64,
        hidden: 128,
        d_proj: 32,
        ..ModelConfig::default()
    };
    let dims = Dims::new(500, 4, &cfg);
    let params = Params::init(dims, 0.05, 1);
    let mut r = seed::rng(7, &[]);
    let batch = (0..rows)
        .map(|_| (0..len).map(|_| r.random_range(1..500)).collect())
        .collect();
    let labels = (0..rows).map(|_| r.random_range(0..4)).collect();
    (params, batch, labels)
}

fn modes() -> [(&'static str, bool); 2] {
    [("seq", false), ("par", true)]
}

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    for arch in [Arch::MeanPool, Arch::TinyAttention] {
        let (params, batch, labels) = setup(64, 48, arch);
        for (name, on) in modes() {
            par::set_parallel(on);
            group.bench_with_input(BenchmarkId::new(name, format!("{arch:?}")), &batch, |b, batch| {
                b.iter(|| {
                    let trace = forward(&params, batch, None, DropoutMode::Off).unwrap();
                    let (_, g) = cross_entropy_grad(&trace.logits(), &labels, None).unwrap();
                    black_box(backward(&params, trace, &Upstream::logits(g)).unwrap())
                })
            });
        }
    }
    par::set_parallel(true);
    group.finish();
}

fn pgd_attack(c: &mut Criterion) {
    let mut group = c.benchmark_group("pgd_attack");
    group.sample_size(20);
    let (params, batch, labels) = setup(32, 48, Arch::MeanPool);
    let cfg = AttackConfig::pgd(1e-2, 2.5e-3, 10, 0.0);
    for (name, on) in modes() {
        par::set_parallel(on);
        group.bench_function(name, |b| {
            b.iter(|| black_box(attack_delta(&params, &batch, &labels, &cfg, DropoutMode::Off, 3).unwrap()))
        });
    }
    par::set_parallel(true);
    group.finish();
}

criterion_group!(benches, forward_backward, pgd_attack);
criterion_main!(benches);
