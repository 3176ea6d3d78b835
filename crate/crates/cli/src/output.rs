use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use spikeslab_ep::io::SCHEMA_VERSION;

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// Reads input files and remembers their content hashes.
#[derive(Debug, Default)]
pub struct Inputs {
    hashes: Vec<InputHash>,
}

impl Inputs {
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|source| CliError::Input {
            path: path.to_path_buf(),
            source,
        })?;
        self.hashes.push(InputHash {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(bytes)
    }

    pub fn into_hashes(self) -> Vec<InputHash> {
        self.hashes
    }
}

/// Collects output files in memory and writes them, plus `manifest.json`,
/// into the output directory.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn add_with<F>(&mut self, name: &str, write: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> spikeslab_ep::Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(spikeslab_ep::Error::from)?;
        text.push('\n');
        self.add(name, text.into_bytes());
        Ok(())
    }

    pub fn finish<C: Serialize, T: Serialize>(
        mut self,
        command: &'static str,
        config: &C,
        inputs: Inputs,
        truth: Option<T>,
    ) -> Result<(), CliError> {
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            inputs: inputs.into_hashes(),
            outputs: self.files.iter().map(|(n, _)| n.clone()).collect(),
            truth,
        };
        self.add_json("manifest.json", &manifest)?;
        fs::create_dir_all(&self.dir).map_err(|source| CliError::Output {
            path: self.dir.clone(),
            source,
        })?;
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            fs::write(&path, bytes).map_err(|source| CliError::Output { path, source })?;
        }
        Ok(())
    }
}

/// Everything needed to replay a run. Paths are recorded as given; the
/// output directory is left out so that replays into another directory are
/// byte-identical.
#[derive(Serialize)]
struct Manifest<'a, C, T> {
    schema_version: u32,
    tool_version: &'static str,
    command: &'static str,
    config: &'a C,
    inputs: Vec<InputHash>,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<T>,
}
