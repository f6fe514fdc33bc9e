//! Temporary convergence-trajectory experiment (removed before ship).
use fiberflow::harness::BenchmarkConfig;
use fiberflow::metrics::evaluate;
use fiberflow::parallel::Parallelism;

#[test]
#[ignore]
fn fe_trajectory() {
    let mut cfg = BenchmarkConfig::ci_scale(0.0, 20260809);
    cfg.training.ensemble_size = 3;
    let mesh = fiberflow::synth::flat_sheet(cfg.sheet_cm, cfg.sheet_cm, cfg.grid, cfg.grid).unwrap();
    let truth = fiberflow::eikonal::rule_based_fibers(
        &mesh,
        cfg.field.rule,
        cfg.field.v_long,
        cfg.field.v_trans,
    )
    .unwrap();
    let dataset = fiberflow::dataset::ActivationDataset::simulate(
        &mesh,
        &truth,
        cfg.n_maps,
        cfg.density,
        cfg.sigma,
        cfg.training.seed,
    )
    .unwrap();
    let basis = fiberflow::spectral::SpectralBasis::compute(&mesh, cfg.training.n_modes).unwrap();
    let mut state =
        fiberflow::train::EnsembleState::init(&mesh, Some(&basis), &dataset, cfg.training.clone())
            .unwrap();
    for stage in 0..10 {
        let hist = state
            .train(2500, Parallelism::Sequential, &mut |_| {})
            .unwrap();
        let last = hist.last().unwrap();
        let (report, _, _) = evaluate(&state, &mesh, &dataset, &truth, Parallelism::Sequential);
        println!(
            "iter {:>6}: member FEs {:?} medoid {:.2} meanT {:.2} | L_data {:.2e} L_eiko {:.2e}",
            (stage + 1) * 2500,
            report
                .member_fe_deg
                .iter()
                .map(|f| (f * 10.0).round() / 10.0)
                .collect::<Vec<_>>(),
            report.medoid_fe_deg,
            report.mean_tensor_fe_deg,
            last.losses.data,
            last.losses.eiko,
        );
    }
}
