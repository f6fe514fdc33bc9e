//! Stage manifests: every command records its effective config, input hashes
//! and output hashes so any artifact directory is self-describing and
//! reproducible.

use serde::Serialize;
use std::path::Path;

#[derive(Debug, Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
pub struct StageManifest {
    command: String,
    version: String,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
}

impl StageManifest {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> StageManifest {
        StageManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(mut self, path: &Path) -> anyhow::Result<StageManifest> {
        self.inputs.push(FileEntry {
            path: path.display().to_string(),
            sha256: fiberflow::hash::sha256_file(path)?,
        });
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> anyhow::Result<StageManifest> {
        self.outputs.push(FileEntry {
            path: path.display().to_string(),
            sha256: fiberflow::hash::sha256_file(path)?,
        });
        Ok(self)
    }

    /// Write `<stage>_manifest.json` next to the outputs.
    pub fn write(self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}_manifest.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(&self)?)?;
        Ok(())
    }
}
