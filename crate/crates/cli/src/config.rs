//! Pipeline configuration: one JSON file covering every stage, with
//! command-line flags taking precedence over file values over defaults.

use anyhow::{bail, Context};
use fiberflow::dataset::FieldSpec;
use fiberflow::eikonal::FiberRule;
use fiberflow::train::{Mode, TrainingConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshShape {
    Sheet,
    Icosphere,
    HoledSphere,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshSection {
    pub shape: MeshShape,
    /// Sheet: side length (cm).
    pub size_cm: f64,
    /// Sheet: vertices per side.
    pub grid: usize,
    /// Spheres: radius (cm).
    pub radius_cm: f64,
    /// Spheres: subdivision level.
    pub subdivisions: usize,
    /// Holed sphere: polar cap opening angle (radians).
    pub cap_angle_rad: f64,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection {
            shape: MeshShape::Sheet,
            size_cm: 10.0,
            grid: 51,
            radius_cm: 3.45,
            subdivisions: 4,
            cap_angle_rad: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSection {
    pub n_maps: usize,
    pub density: f64,
    pub sigma_ms: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            n_maps: 3,
            density: 16.0,
            sigma_ms: 0.0,
        }
    }
}

/// The whole-pipeline configuration; every stage reads its own section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub mesh: MeshSection,
    pub field: FieldSpec,
    pub dataset: DatasetSection,
    pub training: TrainingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            mesh: MeshSection::default(),
            field: FieldSpec::default(),
            dataset: DatasetSection::default(),
            training: TrainingConfig::spectral_defaults(0),
        }
    }
}

impl PipelineConfig {
    /// Load the config file if given, otherwise defaults.
    pub fn load(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
        match path {
            None => Ok(PipelineConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let cfg: PipelineConfig = serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                Ok(cfg)
            }
        }
    }

    /// Apply flag overrides (flags > file > defaults) and propagate the seed.
    pub fn apply_overrides(&mut self, ov: &Overrides) -> anyhow::Result<()> {
        if let Some(seed) = ov.seed {
            self.seed = seed;
        }
        if let Some(mode) = &ov.mode {
            self.training.mode = match mode.as_str() {
                "spectral" => Mode::Spectral,
                "cartesian" => Mode::Cartesian,
                other => bail!("unknown mode '{other}' (expected spectral or cartesian)"),
            };
            // mode-specific default weights unless explicitly overridden
            let defaults = match self.training.mode {
                Mode::Spectral => TrainingConfig::spectral_defaults(self.seed),
                Mode::Cartesian => TrainingConfig::cartesian_defaults(self.seed),
            };
            self.training.lambda_eiko = defaults.lambda_eiko;
            self.training.lambda_ang = defaults.lambda_ang;
        }
        if let Some(v) = ov.iterations {
            self.training.iterations = v;
        }
        if let Some(v) = ov.ensemble_size {
            self.training.ensemble_size = v;
        }
        if let Some(v) = ov.batch {
            self.training.batch = v;
        }
        if let Some(v) = ov.n_modes {
            self.training.n_modes = v;
        }
        if let Some(v) = ov.density {
            self.dataset.density = v;
        }
        if let Some(v) = ov.sigma {
            self.dataset.sigma_ms = v;
        }
        if let Some(v) = ov.n_maps {
            self.dataset.n_maps = v;
        }
        if let Some(v) = ov.fiber_angle_deg {
            self.field.rule = FiberRule::ConstantAngle {
                angle: v.to_radians(),
            };
        }
        self.training.seed = self.seed;
        Ok(())
    }
}

/// Flag-level overrides shared by the pipeline subcommands.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Global seed (mandatory for reproducibility; defaults to the config value).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Network input encoding: spectral | cartesian.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub ensemble_size: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Number of eigenfunction inputs (spectral mode).
    #[arg(long)]
    pub n_modes: Option<usize>,
    /// Sampling density (points/cm^2).
    #[arg(long)]
    pub density: Option<f64>,
    /// Measurement noise (ms).
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub n_maps: Option<usize>,
    /// Constant fiber angle (degrees from p1).
    #[arg(long)]
    pub fiber_angle_deg: Option<f64>,
}

/// Resolve a path argument that must exist, with the stage to run first.
pub fn require_artifact(path: &Path, produced_by: &str) -> anyhow::Result<PathBuf> {
    if !path.exists() {
        bail!(
            "missing artifact {}; run `fiberflow {produced_by}` first",
            path.display()
        );
    }
    Ok(path.to_path_buf())
}

/// Parse a comma-separated list flag.
pub fn parse_list<T: std::str::FromStr>(text: &str) -> anyhow::Result<Vec<T>> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| anyhow::anyhow!("cannot parse list entry '{s}'"))
        })
        .collect()
}
