//! End-to-end benchmarks for the hot paths: label solving, constraint
//! projection, dataset generation, and a desk-scale network forward pass.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use c3po_core::choice::ChoiceModelSpec;
use c3po_core::constraints::{clamp_redistribute, ConstraintSet};
use c3po_core::net::{Ablation, C3poConfig, C3poModel};
use c3po_core::price_opt::solve_logit_fixed_point;
use c3po_core::{build_dataset, build_dataset_with_family};
use c3po_core::datagen::Family;

fn random_mnl(rng: &mut ChaCha8Rng, k: usize) -> ChoiceModelSpec {
    ChoiceModelSpec::Mnl {
        alpha: (0..k).map(|_| rng.gen_range(-1.0..2.0)).collect(),
        beta: rng.gen_range(0.5..3.0),
    }
}

fn bench_fixed_point(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let specs: Vec<ChoiceModelSpec> = (0..32).map(|_| random_mnl(&mut rng, 4)).collect();
    c.bench_function("solve_logit_fixed_point_k4_x32", |b| {
        b.iter(|| {
            for s in &specs {
                std::hint::black_box(solve_logit_fixed_point(s).unwrap());
            }
        })
    });
}

fn bench_projection(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = 6;
    let set = ConstraintSet {
        lower: vec![0.2; k],
        upper: vec![1.8; k],
        ordering: None,
        avg_price: None,
    };
    let vectors: Vec<Vec<f64>> = (0..256)
        .map(|_| (0..k).map(|_| rng.gen_range(-1.0..3.0)).collect())
        .collect();
    c.bench_function("clamp_redistribute_k6_x256", |b| {
        b.iter(|| {
            for v in &vectors {
                std::hint::black_box(clamp_redistribute(v, &set).unwrap());
            }
        })
    });
}

fn bench_datagen(c: &mut Criterion) {
    let mut group = c.benchmark_group("datagen");
    group.sample_size(10);
    group.bench_function("build_dataset_mnl", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            std::hint::black_box(build_dataset_with_family(seed, Some(Family::Mnl)).unwrap())
        })
    });
    group.finish();
}

fn bench_forward(c: &mut Criterion) {
    let ds = build_dataset(42).unwrap();
    let model = C3poModel::new(C3poConfig::desk_scale());
    let mut group = c.benchmark_group("net");
    group.sample_size(10);
    group.bench_function("predict_desk_scale_128_rows", |b| {
        b.iter(|| {
            std::hint::black_box(
                model
                    .predict(&ds, ds.meta.elasticity_range, Ablation::standard())
                    .unwrap(),
            )
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_fixed_point,
    bench_projection,
    bench_datagen,
    bench_forward
);
criterion_main!(benches);
