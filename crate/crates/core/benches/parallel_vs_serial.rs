//! Criterion benches comparing the rayon data-parallel paths against the
//! sequential fallback: ensemble training iterations, field selection, and
//! the eikonal forward solve baseline.
//!
//! Run with `cargo bench -p fiberflow`. Without the `parallel` feature the
//! Rayon mode degrades to sequential, so both series still run.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fiberflow::dataset::ActivationDataset;
use fiberflow::eikonal::{fim_solve, rule_based_fibers, FiberRule};
use fiberflow::parallel::Parallelism;
use fiberflow::select::{select_field, SelectionMethod};
use fiberflow::spectral::SpectralBasis;
use fiberflow::synth;
use fiberflow::train::{EnsembleState, TrainingConfig};

struct Setup {
    mesh: fiberflow::TriangleSurfaceMesh,
    basis: SpectralBasis,
    dataset: ActivationDataset,
    config: TrainingConfig,
}

fn setup() -> Setup {
    let mesh = synth::flat_sheet(10.0, 10.0, 21, 21).expect("mesh");
    let truth = rule_based_fibers(
        &mesh,
        FiberRule::ConstantAngle {
            angle: 30.0f64.to_radians(),
        },
        0.06,
        0.03,
    )
    .expect("fibers");
    let dataset = ActivationDataset::simulate(&mesh, &truth, 3, 4.0, 0.0, 99).expect("dataset");
    let basis = SpectralBasis::compute(&mesh, 10).expect("basis");
    let mut config = TrainingConfig::spectral_defaults(99);
    config.ensemble_size = 8;
    config.batch = 64;
    Setup {
        mesh,
        basis,
        dataset,
        config,
    }
}

fn bench_training(c: &mut Criterion) {
    let s = setup();
    let mut group = c.benchmark_group("train_10_iterations");
    group.sample_size(10);
    for (label, mode) in [
        ("sequential", Parallelism::Sequential),
        ("rayon", Parallelism::Rayon),
    ] {
        group.bench_with_input(BenchmarkId::from_parameter(label), &mode, |b, &mode| {
            b.iter_batched(
                || {
                    EnsembleState::init(&s.mesh, Some(&s.basis), &s.dataset, s.config.clone())
                        .expect("init")
                },
                |mut state| {
                    state.train(10, mode, &mut |_| {}).expect("train");
                    state
                },
                criterion::BatchSize::LargeInput,
            );
        });
    }
    group.finish();
}

fn bench_selection(c: &mut Criterion) {
    let s = setup();
    let mut state = EnsembleState::init(&s.mesh, Some(&s.basis), &s.dataset, s.config.clone())
        .expect("init");
    state
        .train(20, Parallelism::default(), &mut |_| {})
        .expect("train");
    let mut group = c.benchmark_group("select_field_medoid");
    group.sample_size(10);
    for (label, mode) in [
        ("sequential", Parallelism::Sequential),
        ("rayon", Parallelism::Rayon),
    ] {
        group.bench_with_input(BenchmarkId::from_parameter(label), &mode, |b, &mode| {
            b.iter(|| select_field(&state, &s.mesh, SelectionMethod::Medoid, mode));
        });
    }
    group.finish();
}

fn bench_eikonal(c: &mut Criterion) {
    // single-threaded by contract; the baseline the data-parallel stages feed
    let mesh = synth::flat_sheet(10.0, 10.0, 51, 51).expect("mesh");
    let truth = rule_based_fibers(
        &mesh,
        FiberRule::ConstantAngle {
            angle: 30.0f64.to_radians(),
        },
        0.06,
        0.03,
    )
    .expect("fibers");
    c.bench_function("fim_solve_51x51", |b| {
        b.iter(|| fim_solve(&mesh, &truth, &[0]).expect("solve"));
    });
}

criterion_group!(benches, bench_training, bench_selection, bench_eikonal);
criterion_main!(benches);
