//! Implementations of the pipeline subcommands.

use crate::config::{require_artifact, MeshShape, PipelineConfig};
use crate::manifest::StageManifest;
use anyhow::{bail, Context};
use fiberflow::dataset::ActivationDataset;
use fiberflow::eikonal::rule_based_fibers;
use fiberflow::export::export_fields;
use fiberflow::harness::{run_sweep, timing_study, BenchmarkConfig};
use fiberflow::mesh::TriangleSurfaceMesh;
use fiberflow::mesh_io::{load_mesh, write_vtk, MeshFormat, PointData};
use fiberflow::metrics::evaluate;
use fiberflow::parallel::Parallelism;
use fiberflow::select::{select_field, SelectionMethod};
use fiberflow::spectral::SpectralBasis;
use fiberflow::synth;
use fiberflow::train::{EnsembleState, Mode, ProgressRecord};
use std::path::{Path, PathBuf};

fn out_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_mesh_any(path: &Path) -> anyhow::Result<TriangleSurfaceMesh> {
    let format = MeshFormat::from_path(path)
        .with_context(|| format!("cannot infer mesh format of {}", path.display()))?;
    Ok(load_mesh(path, format)?)
}

fn stderr_progress(label: &str) -> impl FnMut(&ProgressRecord) + '_ {
    move |rec: &ProgressRecord| {
        eprintln!(
            "[{label}] iter {:>7}  L_data {:.3e}  L_eiko {:.3e}  L_CV {:.3e}  L_ang {:.3e}",
            rec.iteration, rec.losses.data, rec.losses.eiko, rec.losses.cv, rec.losses.ang
        );
    }
}

pub fn genmesh(cfg: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let mesh = match cfg.mesh.shape {
        MeshShape::Sheet => {
            synth::flat_sheet(cfg.mesh.size_cm, cfg.mesh.size_cm, cfg.mesh.grid, cfg.mesh.grid)?
        }
        MeshShape::Icosphere => synth::icosphere(cfg.mesh.radius_cm, cfg.mesh.subdivisions)?,
        MeshShape::HoledSphere => synth::holed_sphere(
            cfg.mesh.radius_cm,
            cfg.mesh.subdivisions,
            cfg.mesh.cap_angle_rad,
        )?,
    };
    write_vtk(out, &mesh, &PointData::default())?;
    eprintln!(
        "mesh: {} vertices, {} triangles, area {:.3} cm^2 -> {}",
        mesh.vertex_count(),
        mesh.triangle_count(),
        mesh.total_area,
        out.display()
    );
    StageManifest::new("genmesh", cfg.seed, &cfg.mesh)
        .output(out)?
        .write(&out_dir(out))
}

pub fn eigenbasis(cfg: &PipelineConfig, mesh_path: &Path, out: &Path) -> anyhow::Result<()> {
    let mesh_path = require_artifact(mesh_path, "genmesh")?;
    let mesh = load_mesh_any(&mesh_path)?;
    let n_modes = cfg.training.n_modes;
    if let Some(basis) = SpectralBasis::load_cache(out, mesh.content_hash(), n_modes)? {
        eprintln!(
            "eigenbasis cache hit ({} modes, mesh {}), skipping recomputation",
            basis.n_modes,
            &basis.mesh_hash[..12]
        );
        return Ok(());
    }
    let basis = SpectralBasis::compute(&mesh, n_modes)?;
    basis.save_cache(out)?;
    eprintln!(
        "eigenbasis: {} modes, eigenvalues {:?} -> {}",
        basis.n_modes,
        &basis.eigenvalues[..basis.eigenvalues.len().min(4)],
        out.display()
    );
    StageManifest::new("eigenbasis", cfg.seed, &n_modes)
        .input(&mesh_path)?
        .output(out)?
        .write(&out_dir(out))
}

pub fn simulate(cfg: &PipelineConfig, mesh_path: &Path, out: &Path) -> anyhow::Result<()> {
    let mesh_path = require_artifact(mesh_path, "genmesh")?;
    let mesh = load_mesh_any(&mesh_path)?;
    let field = rule_based_fibers(&mesh, cfg.field.rule, cfg.field.v_long, cfg.field.v_trans)?;
    if !field.fallback_vertices.is_empty() {
        eprintln!(
            "note: fiber rule undefined at {} vertices; neighbor average substituted",
            field.fallback_vertices.len()
        );
    }
    let dataset = ActivationDataset::simulate(
        &mesh,
        &field,
        cfg.dataset.n_maps,
        cfg.dataset.density,
        cfg.dataset.sigma_ms,
        cfg.seed,
    )?;
    dataset.save(out, &field)?;
    eprintln!(
        "simulated {} maps at density {} pts/cm^2, sigma {} ms -> {}",
        dataset.n_maps(),
        cfg.dataset.density,
        cfg.dataset.sigma_ms,
        out.display()
    );
    let mut manifest = StageManifest::new("simulate", cfg.seed, &(&cfg.field, &cfg.dataset))
        .input(&mesh_path)?;
    manifest = manifest.output(&out.join("manifest.json"))?;
    for i in 0..dataset.n_maps() {
        manifest = manifest.output(&out.join(format!("map_{i}_samples.csv")))?;
    }
    manifest.write(out)
}

fn load_basis_if_needed(
    mode: Mode,
    basis_path: Option<&Path>,
    mesh: &TriangleSurfaceMesh,
    n_modes: usize,
) -> anyhow::Result<Option<SpectralBasis>> {
    match mode {
        Mode::Cartesian => Ok(None),
        Mode::Spectral => {
            let path = basis_path
                .ok_or_else(|| anyhow::anyhow!("spectral mode requires --basis; run `fiberflow eigenbasis` first"))?;
            let path = require_artifact(path, "eigenbasis")?;
            let basis = SpectralBasis::load_cache(&path, mesh.content_hash(), n_modes)?
                .ok_or_else(|| {
                    anyhow::anyhow!(
                        "basis {} does not match this mesh/mode count; re-run `fiberflow eigenbasis`",
                        path.display()
                    )
                })?;
            Ok(Some(basis))
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    cfg: &PipelineConfig,
    mesh_path: &Path,
    basis_path: Option<&Path>,
    data_dir: &Path,
    out: &Path,
    history_out: Option<&Path>,
    sequential: bool,
) -> anyhow::Result<()> {
    let mesh_path = require_artifact(mesh_path, "genmesh")?;
    let mesh = load_mesh_any(&mesh_path)?;
    let (dataset, _truth) = ActivationDataset::load(data_dir)?;
    let basis = load_basis_if_needed(cfg.training.mode, basis_path, &mesh, cfg.training.n_modes)?;
    let mut state = EnsembleState::init(&mesh, basis.as_ref(), &dataset, cfg.training.clone())?;
    let parallelism = if sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Rayon
    };
    let t0 = std::time::Instant::now();
    let history = {
        let mut progress = stderr_progress("train");
        match state.train(cfg.training.iterations, parallelism, &mut progress) {
            Ok(h) => h,
            Err(e) => {
                // keep whatever state we have for post-mortem inspection
                let rescue = out.with_extension("aborted.json");
                let _ = state.save_checkpoint(&rescue);
                eprintln!("training aborted; partial checkpoint at {}", rescue.display());
                return Err(e.into());
            }
        }
    };
    eprintln!(
        "trained {} members x {} iterations in {:.1}s",
        cfg.training.ensemble_size,
        cfg.training.iterations,
        t0.elapsed().as_secs_f64()
    );
    state.save_checkpoint(out)?;
    let mut manifest = StageManifest::new("train", cfg.seed, &cfg.training)
        .input(&mesh_path)?
        .input(&data_dir.join("manifest.json"))?;
    if let Some(h) = history_out {
        let mut csv = String::from("iteration,l_data,l_eiko,l_cv,l_ang\n");
        for rec in &history {
            csv.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                rec.iteration, rec.losses.data, rec.losses.eiko, rec.losses.cv, rec.losses.ang
            ));
        }
        std::fs::write(h, csv)?;
        manifest = manifest.output(h)?;
    }
    manifest.output(out)?.write(&out_dir(out))
}

#[allow(clippy::too_many_arguments)]
pub fn select(
    cfg: &PipelineConfig,
    mesh_path: &Path,
    basis_path: Option<&Path>,
    data_dir: &Path,
    checkpoint: &Path,
    method: SelectionMethod,
    out: &Path,
    vtk_out: Option<&Path>,
) -> anyhow::Result<()> {
    let mesh_path = require_artifact(mesh_path, "genmesh")?;
    let mesh = load_mesh_any(&mesh_path)?;
    let (dataset, truth) = ActivationDataset::load(data_dir)?;
    let ck = require_artifact(checkpoint, "train")?;
    // checkpoint knows its own mode; peek at it for the basis requirement
    let state = {
        let text = std::fs::read_to_string(&ck)?;
        let peek: serde_json::Value = serde_json::from_str(&text)?;
        let mode = match peek["config"]["mode"].as_str() {
            Some("cartesian") => Mode::Cartesian,
            _ => Mode::Spectral,
        };
        let n_modes = peek["config"]["n_modes"].as_u64().unwrap_or(10) as usize;
        let basis = load_basis_if_needed(mode, basis_path, &mesh, n_modes)?;
        EnsembleState::load_checkpoint(&ck, &mesh, basis.as_ref(), &dataset)?
    };
    let selection = select_field(&state, &mesh, method, Parallelism::Rayon);
    std::fs::write(out, serde_json::to_string(&selection)?)?;
    eprintln!(
        "selected fibers ({:?}) for {} vertices -> {}",
        method,
        mesh.vertex_count(),
        out.display()
    );
    let mut manifest = StageManifest::new("select", cfg.seed, &method)
        .input(&mesh_path)?
        .input(&ck)?
        .output(out)?;
    if let Some(v) = vtk_out {
        export_fields(v, &mesh, &truth, &selection, &dataset, false)?;
        manifest = manifest.output(v)?;
    }
    manifest.write(&out_dir(out))
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    cfg: &PipelineConfig,
    mesh_path: &Path,
    basis_path: Option<&Path>,
    data_dir: &Path,
    checkpoint: &Path,
    out: &Path,
    vtk_out: Option<&Path>,
) -> anyhow::Result<()> {
    let mesh_path = require_artifact(mesh_path, "genmesh")?;
    let mesh = load_mesh_any(&mesh_path)?;
    let (dataset, truth) = ActivationDataset::load(data_dir)?;
    let ck = require_artifact(checkpoint, "train")?;
    let state = {
        let text = std::fs::read_to_string(&ck)?;
        let peek: serde_json::Value = serde_json::from_str(&text)?;
        let mode = match peek["config"]["mode"].as_str() {
            Some("cartesian") => Mode::Cartesian,
            _ => Mode::Spectral,
        };
        let n_modes = peek["config"]["n_modes"].as_u64().unwrap_or(10) as usize;
        let basis = load_basis_if_needed(mode, basis_path, &mesh, n_modes)?;
        EnsembleState::load_checkpoint(&ck, &mesh, basis.as_ref(), &dataset)?
    };
    let (report, medoid, _mean) = evaluate(&state, &mesh, &dataset, &truth, Parallelism::Rayon);
    std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
    eprintln!(
        "eval: ensemble mean FE {:.2} deg (range {:.2}-{:.2}), mean tensor {:.2}, medoid {:.2} -> {}",
        report.ensemble_mean_fe_deg,
        report.fe_range_deg.0,
        report.fe_range_deg.1,
        report.mean_tensor_fe_deg,
        report.medoid_fe_deg,
        out.display()
    );
    let mut manifest = StageManifest::new("eval", cfg.seed, &"metrics")
        .input(&mesh_path)?
        .input(&ck)?
        .output(out)?;
    if let Some(v) = vtk_out {
        export_fields(v, &mesh, &truth, &medoid, &dataset, false)?;
        manifest = manifest.output(v)?;
    }
    manifest.write(&out_dir(out))
}

fn benchmark_from(cfg: &PipelineConfig) -> anyhow::Result<BenchmarkConfig> {
    if !matches!(cfg.mesh.shape, MeshShape::Sheet) {
        bail!("sweep and timing use the flat-sheet benchmark; set mesh.shape = \"sheet\"");
    }
    Ok(BenchmarkConfig {
        sheet_cm: cfg.mesh.size_cm,
        grid: cfg.mesh.grid,
        field: cfg.field,
        n_maps: cfg.dataset.n_maps,
        density: cfg.dataset.density,
        sigma: cfg.dataset.sigma_ms,
        training: cfg.training.clone(),
    })
}

pub fn sweep(
    cfg: &PipelineConfig,
    sigmas: &[f64],
    densities: &[f64],
    out: &Path,
    sequential: bool,
) -> anyhow::Result<()> {
    let base = benchmark_from(cfg)?;
    let parallelism = if sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Rayon
    };
    let cells = run_sweep(&base, sigmas, densities, out, parallelism, &mut |msg| {
        eprintln!("[sweep] {msg}")
    })?;
    let failed = cells.iter().filter(|c| c.error.is_some()).count();
    eprintln!(
        "sweep complete: {} cells, {failed} failed -> {}",
        cells.len(),
        out.display()
    );
    StageManifest::new("sweep", cfg.seed, &(sigmas, densities))
        .output(&out.join("medoid_fe_deg.csv"))?
        .write(out)
}

pub fn timing(
    cfg: &PipelineConfig,
    sizes: &[usize],
    timed_iterations: usize,
    out: &Path,
) -> anyhow::Result<()> {
    let base = benchmark_from(cfg)?;
    let rows = timing_study(sizes, &base, timed_iterations, &mut |msg| {
        eprintln!("[timing] {msg}")
    })?;
    std::fs::write(out, serde_json::to_string_pretty(&rows)?)?;
    let csv_path = out.with_extension("csv");
    let mut csv =
        String::from("ensemble_size,first_iteration_s,timed_iterations_s,loss_data,loss_eiko\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.17e},{:.17e}\n",
            r.ensemble_size, r.first_iteration_s, r.timed_iterations_s, r.loss_data, r.loss_eiko
        ));
    }
    std::fs::write(&csv_path, csv)?;
    eprintln!("timing study -> {} and {}", out.display(), csv_path.display());
    StageManifest::new("timing", cfg.seed, &(sizes, timed_iterations))
        .output(out)?
        .output(&csv_path)?
        .write(&out_dir(out))
}

