use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use geoshare::aligner::geo_share;
use geoshare::curvature::EigConfig;
use geoshare::linalg::{lanczos_top_eigs, sym_eig_dense, LanczosOptions};
use geoshare::net::{hvp, Scope};
use geoshare::rng;
use geoshare_bench::{mlp, prepared, symmetric};

fn eigensolvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("top5-eigenpairs");
    for dim in [50, 100, 200] {
        let a = symmetric(dim, 0);
        group.bench_with_input(BenchmarkId::new("lanczos", dim), &a, |b, a| {
            b.iter(|| lanczos_top_eigs(a, 5, &LanczosOptions::default()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dense", dim), &a, |b, a| b.iter(|| sym_eig_dense(a).unwrap()));
    }
    group.finish();
}

fn hessian_vector_products(c: &mut Criterion) {
    let mut group = c.benchmark_group("hvp");
    for width in [4, 8, 16] {
        let (spec, params, batch) = mlp(width, 4, 64, 0);
        let layer = rng::normal_vec(&mut rng::seeded(1), spec.layer_size(1));
        let all = rng::normal_vec(&mut rng::seeded(2), spec.num_params());
        group.bench_function(BenchmarkId::new("layer", width), |b| {
            b.iter(|| hvp(&spec, &params, &batch, Scope::Layer(1), black_box(&layer)).unwrap())
        });
        group.bench_function(BenchmarkId::new("model", width), |b| {
            b.iter(|| hvp(&spec, &params, &batch, Scope::All, black_box(&all)).unwrap())
        });
    }
    group.finish();
}

fn sharing_pass(c: &mut Criterion) {
    let mut group = c.benchmark_group("geo-share");
    group.sample_size(10);
    for width in [4, 8] {
        let prep = prepared(width);
        for (name, eig) in [("dense", EigConfig::dense()), ("lanczos", EigConfig::lanczos())] {
            let mut align = prep.config.align_config();
            align.eig = eig;
            group.bench_function(BenchmarkId::new(name, width), |b| {
                b.iter(|| {
                    geo_share(&prep.spec, &prep.params, &prep.bases, &prep.data.train, &prep.data.eval, &align).unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, eigensolvers, hessian_vector_products, sharing_pass);
criterion_main!(benches);
