//! Per-command provenance: effective config plus hashes of inputs and outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gensr_core::eval::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::{CliError, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    /// Effective configuration minus `out`, which only locates the run.
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileRef>,
    pub outputs: Vec<FileRef>,
}

/// Path relative to the run directory when it lies inside it.
fn display(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

pub fn file_ref(root: &Path, p: &Path) -> Result<FileRef, CliError> {
    let bytes = std::fs::read(p).map_err(|e| CliError::Missing(format!("{}: {e}", p.display())))?;
    Ok(FileRef { path: display(root, p), sha256: sha256_hex(&bytes) })
}

/// Errors with exit code 3 naming the first missing artifact.
pub fn require(paths: &[&Path]) -> Result<(), CliError> {
    for p in paths {
        if !p.is_file() {
            return Err(CliError::Missing(format!("{} not found", p.display())));
        }
    }
    Ok(())
}

pub fn write(dir: &Path, command: &str, cfg: &RunConfig, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<(), CliError> {
    let root = cfg.out();
    let mut config = cfg.values().clone();
    config.remove("out");
    let m = Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config,
        inputs: inputs.iter().map(|p| file_ref(&root, p)).collect::<Result<_, _>>()?,
        outputs: outputs.iter().map(|p| file_ref(&root, p)).collect::<Result<_, _>>()?,
    };
    write_json(&dir.join(MANIFEST_FILE), &m)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    require(&[path])?;
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}
