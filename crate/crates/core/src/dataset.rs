//! Activation datasets: simulation driver plus on-disk layout (one CSV per
//! map, full-solution CSVs, a ground-truth JSON and a JSON manifest).

use crate::eikonal::{
    farthest_point_pacing, fim_solve, sample_measurements, ActivationMap, FiberRule,
    GroundTruthField,
};
use crate::error::{Error, Result};
use crate::mesh::TriangleSurfaceMesh;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// A set of N activation maps over one mesh with shared density and noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActivationDataset {
    pub maps: Vec<ActivationMap>,
    /// Sampling density (points/cm^2).
    pub density: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub mesh_hash: String,
}

/// Manifest mirroring the dataset minus the bulky per-vertex fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub mesh_hash: String,
    pub pacing_sites: Vec<usize>,
    pub density: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub t_max: Vec<f64>,
    pub sample_counts: Vec<usize>,
}

impl ActivationDataset {
    /// Simulate `n_maps` activation maps: farthest-point pacing, FIM solves,
    /// then noisy sparse sampling. Deterministic per seed.
    pub fn simulate(
        mesh: &TriangleSurfaceMesh,
        field: &GroundTruthField,
        n_maps: usize,
        density: f64,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<ActivationDataset> {
        let sites = farthest_point_pacing(mesh, n_maps, seed)?;
        let mut maps = Vec::with_capacity(n_maps);
        for (i, &site) in sites.iter().enumerate() {
            let full = fim_solve(mesh, field, &[site])?;
            let t_max = full.iter().copied().fold(0.0f64, f64::max);
            let samples = sample_measurements(
                &full,
                mesh.total_area,
                density,
                noise_sigma,
                crate::hash::derive_seed_u64(seed, "map", &[i as u64]),
            )?;
            if samples.is_empty() {
                return Err(Error::EmptyMap { map: i });
            }
            maps.push(ActivationMap {
                pacing_vertex: site,
                full_solution: full,
                samples,
                t_max,
                noise_sigma,
            });
        }
        Ok(ActivationDataset {
            maps,
            density,
            noise_sigma,
            seed,
            mesh_hash: mesh.content_hash().to_string(),
        })
    }

    pub fn n_maps(&self) -> usize {
        self.maps.len()
    }

    /// Write `map_<i>_samples.csv`, `map_<i>_solution.csv`, `manifest.json`
    /// and `ground_truth.json` into `dir`.
    pub fn save(&self, dir: &Path, truth: &GroundTruthField) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, map) in self.maps.iter().enumerate() {
            let mut csv = String::from("vertex_id,time_ms\n");
            for (v, t) in &map.samples {
                csv.push_str(&format!("{v},{t:.17e}\n"));
            }
            let p = dir.join(format!("map_{i}_samples.csv"));
            std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;

            let mut csv = String::from("vertex_id,time_ms\n");
            for (v, t) in map.full_solution.iter().enumerate() {
                csv.push_str(&format!("{v},{t:.17e}\n"));
            }
            let p = dir.join(format!("map_{i}_solution.csv"));
            std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
        }
        let manifest = DatasetManifest {
            mesh_hash: self.mesh_hash.clone(),
            pacing_sites: self.maps.iter().map(|m| m.pacing_vertex).collect(),
            density: self.density,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
            t_max: self.maps.iter().map(|m| m.t_max).collect(),
            sample_counts: self.maps.iter().map(|m| m.samples.len()).collect(),
        };
        let p = dir.join("manifest.json");
        std::fs::write(&p, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::io(&p, e))?;
        let p = dir.join("ground_truth.json");
        std::fs::write(&p, serde_json::to_string(truth)?).map_err(|e| Error::io(&p, e))?;
        Ok(())
    }

    /// Load a dataset directory written by [`ActivationDataset::save`].
    pub fn load(dir: &Path) -> Result<(ActivationDataset, GroundTruthField)> {
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.exists() {
            return Err(Error::MissingArtifact {
                what: format!("dataset manifest {}", manifest_path.display()),
                hint: "simulate".into(),
            });
        }
        let manifest: DatasetManifest = serde_json::from_str(
            &std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?,
        )?;
        let mut maps = Vec::with_capacity(manifest.pacing_sites.len());
        for (i, &site) in manifest.pacing_sites.iter().enumerate() {
            let sp = dir.join(format!("map_{i}_samples.csv"));
            let samples = read_csv_pairs(&sp)?;
            let fp = dir.join(format!("map_{i}_solution.csv"));
            let full_rows = read_csv_pairs(&fp)?;
            let mut full = vec![0.0; full_rows.len()];
            for (v, t) in full_rows {
                if v >= full.len() {
                    return Err(Error::Parse {
                        path: fp.clone(),
                        line: v + 2,
                        msg: format!("vertex id {v} out of range"),
                    });
                }
                full[v] = t;
            }
            maps.push(ActivationMap {
                pacing_vertex: site,
                full_solution: full,
                samples,
                t_max: manifest.t_max[i],
                noise_sigma: manifest.noise_sigma,
            });
        }
        let gp = dir.join("ground_truth.json");
        let truth: GroundTruthField = serde_json::from_str(
            &std::fs::read_to_string(&gp).map_err(|e| Error::io(&gp, e))?,
        )?;
        Ok((
            ActivationDataset {
                maps,
                density: manifest.density,
                noise_sigma: manifest.noise_sigma,
                seed: manifest.seed,
                mesh_hash: manifest.mesh_hash,
            },
            truth,
        ))
    }
}

/// Ground-truth field construction settings, serialized alongside datasets.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FieldSpec {
    #[serde(flatten)]
    pub rule: FiberRule,
    pub v_long: f64,
    pub v_trans: f64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec {
            rule: FiberRule::ConstantAngle { angle: 0.0 },
            v_long: 0.06,
            v_trans: 0.03,
        }
    }
}

fn read_csv_pairs(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 || line.trim().is_empty() {
            continue; // header
        }
        let mut parts = line.split(',');
        let v: usize = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: ln + 1,
                msg: "bad vertex id".into(),
            })?;
        let t: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: ln + 1,
                msg: "bad time value".into(),
            })?;
        out.push((v, t));
    }
    Ok(out)
}
