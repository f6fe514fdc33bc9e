//! End-to-end drivers: the flat-sheet recovery benchmark, noise/density
//! sweeps with resumable cells, and the ensemble-size timing study.

use crate::dataset::{ActivationDataset, FieldSpec};
use crate::eikonal::{rule_based_fibers, FiberRule, GroundTruthField};
use crate::error::{Error, Result};
use crate::mesh::TriangleSurfaceMesh;
use crate::metrics::{evaluate, EvaluationReport};
use crate::parallel::Parallelism;
use crate::select::FiberSelectionResult;
use crate::spectral::SpectralBasis;
use crate::synth;
use crate::train::{EnsembleState, ProgressRecord, TrainingConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// The synthetic recovery benchmark: a flat 10x10 cm sheet with a constant
/// 30-degree fiber field, three farthest-point pacing maps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub sheet_cm: f64,
    /// Vertices per side.
    pub grid: usize,
    pub field: FieldSpec,
    pub n_maps: usize,
    /// Sampling density (points/cm^2).
    pub density: f64,
    /// Measurement noise (ms).
    pub sigma: f64,
    pub training: TrainingConfig,
}

impl BenchmarkConfig {
    /// Full-scale benchmark at the protocol hyperparameters.
    pub fn full_scale(sigma: f64, seed: u64) -> BenchmarkConfig {
        BenchmarkConfig {
            sheet_cm: 10.0,
            grid: 51,
            field: FieldSpec {
                rule: FiberRule::ConstantAngle {
                    angle: 30.0f64.to_radians(),
                },
                v_long: 0.06,
                v_trans: 0.03,
            },
            n_maps: 3,
            density: 16.0,
            sigma,
            training: TrainingConfig::spectral_defaults(seed),
        }
    }

    /// Reduced variant for continuous testing: 5k iterations, 8 members.
    pub fn ci_scale(sigma: f64, seed: u64) -> BenchmarkConfig {
        let mut cfg = BenchmarkConfig::full_scale(sigma, seed);
        cfg.training.iterations = 5_000;
        cfg.training.ensemble_size = 8;
        cfg
    }
}

/// Everything a benchmark run produces.
pub struct BenchmarkRun {
    pub mesh: TriangleSurfaceMesh,
    pub truth: GroundTruthField,
    pub dataset: ActivationDataset,
    pub state: EnsembleState,
    pub report: EvaluationReport,
    pub medoid: FiberSelectionResult,
    pub mean_tensor: FiberSelectionResult,
    pub train_seconds: f64,
}

/// Simulate, train and evaluate one benchmark configuration.
pub fn run_benchmark(
    cfg: &BenchmarkConfig,
    parallelism: Parallelism,
    progress: &mut dyn FnMut(&ProgressRecord),
) -> Result<BenchmarkRun> {
    let mesh = synth::flat_sheet(cfg.sheet_cm, cfg.sheet_cm, cfg.grid, cfg.grid)?;
    let truth = rule_based_fibers(&mesh, cfg.field.rule, cfg.field.v_long, cfg.field.v_trans)?;
    let dataset = ActivationDataset::simulate(
        &mesh,
        &truth,
        cfg.n_maps,
        cfg.density,
        cfg.sigma,
        cfg.training.seed,
    )?;
    let basis = match cfg.training.mode {
        crate::train::Mode::Spectral => {
            Some(SpectralBasis::compute(&mesh, cfg.training.n_modes)?)
        }
        crate::train::Mode::Cartesian => None,
    };
    let mut state = EnsembleState::init(&mesh, basis.as_ref(), &dataset, cfg.training.clone())?;
    let t0 = std::time::Instant::now();
    state.train(cfg.training.iterations, parallelism, progress)?;
    let train_seconds = t0.elapsed().as_secs_f64();
    let (report, medoid, mean_tensor) = evaluate(&state, &mesh, &dataset, &truth, parallelism);
    Ok(BenchmarkRun {
        mesh,
        truth,
        dataset,
        state,
        report,
        medoid,
        mean_tensor,
        train_seconds,
    })
}

/// One sweep cell result (or its failure).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub sigma: f64,
    pub density: f64,
    pub seed: u64,
    pub report: Option<EvaluationReport>,
    pub error: Option<String>,
}

/// Run the noise x density grid. Each cell gets a fresh seeded dataset and a
/// full training run; completed cells (JSON files in `out_dir`) are skipped
/// so interrupted sweeps resume. Returns all cells, including failures.
pub fn run_sweep(
    base: &BenchmarkConfig,
    sigmas: &[f64],
    densities: &[f64],
    out_dir: &Path,
    parallelism: Parallelism,
    progress: &mut dyn FnMut(&str),
) -> Result<Vec<SweepCell>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut cells = Vec::new();
    for (si, &sigma) in sigmas.iter().enumerate() {
        for (ri, &density) in densities.iter().enumerate() {
            let cell_path = out_dir.join(format!("cell_s{si}_r{ri}.json"));
            if cell_path.exists() {
                let text =
                    std::fs::read_to_string(&cell_path).map_err(|e| Error::io(&cell_path, e))?;
                cells.push(serde_json::from_str(&text)?);
                progress(&format!("cell s{si} r{ri}: already complete, skipping"));
                continue;
            }
            let seed =
                crate::hash::derive_seed_u64(base.training.seed, "sweep-cell", &[si as u64, ri as u64]);
            let mut cfg = base.clone();
            cfg.sigma = sigma;
            cfg.density = density;
            cfg.training.seed = seed;
            progress(&format!(
                "cell s{si} r{ri}: sigma={sigma} ms, density={density} pts/cm^2, seed={seed}"
            ));
            let cell = match run_benchmark(&cfg, parallelism, &mut |_| {}) {
                Ok(run) => SweepCell {
                    sigma,
                    density,
                    seed,
                    report: Some(run.report),
                    error: None,
                },
                Err(e) => SweepCell {
                    sigma,
                    density,
                    seed,
                    report: None,
                    error: Some(e.to_string()),
                },
            };
            std::fs::write(&cell_path, serde_json::to_string_pretty(&cell)?)
                .map_err(|e| Error::io(&cell_path, e))?;
            cells.push(cell);
        }
    }
    write_sweep_tables(out_dir, sigmas, densities, &cells)?;
    Ok(cells)
}

/// Aggregate CSV matrices (rows: sigma, columns: density) per metric.
fn write_sweep_tables(
    out_dir: &Path,
    sigmas: &[f64],
    densities: &[f64],
    cells: &[SweepCell],
) -> Result<()> {
    let metric = |name: &str, pick: &dyn Fn(&EvaluationReport) -> f64| -> Result<()> {
        let mut csv = String::from("sigma_ms");
        for d in densities {
            csv.push_str(&format!(",rho_{d}"));
        }
        csv.push('\n');
        for (si, &s) in sigmas.iter().enumerate() {
            csv.push_str(&format!("{s}"));
            for ri in 0..densities.len() {
                let cell = &cells[si * densities.len() + ri];
                match &cell.report {
                    Some(r) => csv.push_str(&format!(",{}", pick(r))),
                    None => csv.push_str(",nan"),
                }
            }
            csv.push('\n');
        }
        let p = out_dir.join(format!("{name}.csv"));
        std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))
    };
    metric("medoid_fe_deg", &|r| r.medoid_fe_deg)?;
    metric("mean_tensor_fe_deg", &|r| r.mean_tensor_fe_deg)?;
    metric("ensemble_mean_fe_deg", &|r| r.ensemble_mean_fe_deg)?;
    metric("rmse_mean_ms", &|r| {
        crate::stats::mean(&r.maps.iter().map(|m| m.rmse_mean_ms).collect::<Vec<_>>())
    })?;
    Ok(())
}

/// One row of the ensemble-size timing study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRow {
    pub ensemble_size: usize,
    /// First iteration (includes one-time setup effects).
    pub first_iteration_s: f64,
    /// The following `timed_iterations` iterations.
    pub timed_iterations_s: f64,
    /// Data and eikonal losses at iteration timed_iterations + 1.
    pub loss_data: f64,
    pub loss_eiko: f64,
}

/// Train fresh ensembles of each size on the same small problem and time the
/// first iteration and the next `timed_iterations`. Members run sequentially
/// here: the study measures how cost scales with ensemble size, so scheduler
/// noise must not mask it.
pub fn timing_study(
    sizes: &[usize],
    base: &BenchmarkConfig,
    timed_iterations: usize,
    progress: &mut dyn FnMut(&str),
) -> Result<Vec<TimingRow>> {
    let mesh = synth::flat_sheet(base.sheet_cm, base.sheet_cm, base.grid, base.grid)?;
    let truth = rule_based_fibers(&mesh, base.field.rule, base.field.v_long, base.field.v_trans)?;
    let dataset = ActivationDataset::simulate(
        &mesh,
        &truth,
        base.n_maps,
        base.density,
        base.sigma,
        base.training.seed,
    )?;
    let basis = match base.training.mode {
        crate::train::Mode::Spectral => {
            Some(SpectralBasis::compute(&mesh, base.training.n_modes)?)
        }
        crate::train::Mode::Cartesian => None,
    };

    let mut rows = Vec::with_capacity(sizes.len());
    for &s_e in sizes {
        let mut cfg = base.training.clone();
        cfg.ensemble_size = s_e;
        let mut state = EnsembleState::init(&mesh, basis.as_ref(), &dataset, cfg)?;

        let t0 = std::time::Instant::now();
        state.train(1, Parallelism::Sequential, &mut |_| {})?;
        let first_iteration_s = t0.elapsed().as_secs_f64();

        let t1 = std::time::Instant::now();
        state.train(timed_iterations, Parallelism::Sequential, &mut |_| {})?;
        let timed_iterations_s = t1.elapsed().as_secs_f64();

        let history = state.train(1, Parallelism::Sequential, &mut |_| {})?;
        let last = history.last().expect("one iteration recorded");
        rows.push(TimingRow {
            ensemble_size: s_e,
            first_iteration_s,
            timed_iterations_s,
            loss_data: last.losses.data,
            loss_eiko: last.losses.eiko,
        });
        progress(&format!(
            "S_e={s_e}: first {first_iteration_s:.3}s, {timed_iterations} iters {timed_iterations_s:.3}s"
        ));
    }
    Ok(rows)
}
