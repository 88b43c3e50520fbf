use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fksmc_core::fixtures::{random_finite_model, two_state_model};
use fksmc_core::lab::{shifted_floor_initial, ContinuousSetup};
use fksmc_core::particles::{init_ensemble, run_sampler, smc_step};
use fksmc_core::rng::stream;
use fksmc_core::{DiscreteMeasure, FiniteModel, IncrementDistribution, LogTarget, StreamKey, TemperedFamily, TemperingSchedule};

fn gaussian_setup() -> ContinuousSetup {
    let family = TemperedFamily::new(LogTarget::gaussian(vec![0.0], 1.0).unwrap(), TemperingSchedule::linear(0.7).unwrap());
    let initial = shifted_floor_initial(&family, vec![3.0]).unwrap();
    ContinuousSetup { family, increment: IncrementDistribution::gaussian(1.0).unwrap(), initial }
}

fn smc_step_bench(c: &mut Criterion) {
    let mut group = c.benchmark_group("smc_step");
    let model = gaussian_setup().model(20).unwrap();
    for particles in [1_000usize, 10_000] {
        let ens = init_ensemble(model.initial(), particles, 20, StreamKey::new(1, 0)).unwrap();
        group.bench_with_input(BenchmarkId::new("gaussian", particles), &ens, |b, ens| b.iter(|| smc_step(ens, &model).unwrap()));
    }
    let finite = two_state_model(20, DiscreteMeasure::dirac(2, 0)).unwrap();
    let ens = init_ensemble(finite.initial(), 10_000, 20, StreamKey::new(1, 0)).unwrap();
    group.bench_function("two_state/10000", |b| b.iter(|| smc_step(&ens, &finite).unwrap()));
    group.finish();
}

fn sampler_bench(c: &mut Criterion) {
    let model = gaussian_setup().model(40).unwrap();
    c.bench_function("run_sampler/gaussian_n40_N1000", |b| b.iter(|| run_sampler(&model, 1_000, StreamKey::new(2, 0), None).unwrap()));
}

fn oracle_bench(c: &mut Criterion) {
    let mut group = c.benchmark_group("oracle");
    for m in [2usize, 5] {
        let model = random_finite_model(m, 100, &mut stream(3, 0, 0, 0)).unwrap();
        let fm = FiniteModel::from_model(&model).unwrap();
        group.bench_with_input(BenchmarkId::new("from_model", m), &model, |b, model| b.iter(|| FiniteModel::from_model(model).unwrap()));
        group.bench_with_input(BenchmarkId::new("eta_exact", m), &fm, |b, fm| b.iter(|| fm.eta_exact(100).unwrap()));
        group.bench_with_input(BenchmarkId::new("s_kernel", m), &fm, |b, fm| b.iter(|| fm.s_kernel_matrix(50).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, smc_step_bench, sampler_bench, oracle_bench);
criterion_main!(benches);
