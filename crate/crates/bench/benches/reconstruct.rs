use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use noisemap::acoustics::{a_weight, leq, AWeightFilter, PcmFrame};
use noisemap::basis::{TransformBasis, TransformKind};
use noisemap::reconstruct::{reconstruct, Method, ReconConfig};
use noisemap::simulate::{mask_uniform, synth_profile, ProfileSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn transforms(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<f64> = (0..3600).map(|_| rng.random_range(40.0..90.0)).collect();
    for kind in [TransformKind::Dct, TransformKind::Dct2d] {
        let mut plan = TransformBasis::new(6, 600, kind).plan();
        c.bench_function(&format!("{kind:?} forward+inverse 6x600"), |b| {
            b.iter(|| {
                let v = plan.forward(&x).unwrap();
                plan.inverse(&v).unwrap()
            })
        });
    }
}

fn solvers(c: &mut Criterion) {
    let truth = synth_profile(&ProfileSpec::reference(1, 6, 600, 2)).unwrap();
    let samples = mask_uniform(&truth, 0.7, 3).unwrap();
    let cfg = ReconConfig::default();
    let mut g = c.benchmark_group("reconstruct 6x600 at 70% missing");
    g.sample_size(10);
    for m in [Method::Li, Method::Nni, Method::Gpi, Method::L1] {
        g.bench_function(m.to_string(), |b| b.iter(|| reconstruct(&samples, m, &cfg).unwrap()));
    }
    g.finish();
}

fn front_end(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let frame = PcmFrame::new((0..16_000).map(|_| rng.random_range(-0.5..0.5)).collect(), 16_000, 0.0).unwrap();
    c.bench_function("a-weight and leq, 1 s at 16 kHz", |b| {
        b.iter_batched(
            AWeightFilter::new,
            |mut f| leq(&a_weight(&frame, &mut f).unwrap(), 87.0),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, transforms, solvers, front_end);
criterion_main!(benches);
