//! Run provenance written into every output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "run.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    /// Scalar type of every computation.
    pub precision: String,
    pub deterministic: bool,
    pub workers: usize,
    pub version: String,
    /// Content hash over every input file, see [`hash_inputs`].
    pub inputs_sha256: String,
    pub inputs: Vec<PathBuf>,
}

fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

fn collect(path: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        entries.sort();
        for e in entries {
            collect(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Git-style tree hash: each file is hashed as `blob <len>\0<bytes>`, then
/// the sorted `<relative path> <hash>` lines are hashed together. Directories
/// are walked recursively.
pub fn hash_inputs(inputs: &[PathBuf]) -> Result<String, CliError> {
    let mut lines = Vec::new();
    for root in inputs {
        let mut files = Vec::new();
        collect(root, &mut files).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        for f in files {
            let bytes = std::fs::read(&f).map_err(|e| CliError::Io(format!("{}: {e}", f.display())))?;
            let name = f.strip_prefix(root).ok().filter(|p| !p.as_os_str().is_empty()).unwrap_or(&f);
            lines.push(format!("{} {}", name.display(), blob_hash(&bytes)));
        }
    }
    lines.sort();
    Ok(hex::encode(Sha256::digest(lines.join("\n").as_bytes())))
}

/// Writes `run.json` and the resolved config into `out`.
pub fn write_run_files(manifest: &RunManifest, config: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&manifest.out)?;
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(manifest.out.join(MANIFEST_FILE), json + "\n")?;
    std::fs::write(manifest.out.join(RESOLVED_CONFIG_FILE), config.to_toml())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_content_not_location() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [&a, &b] {
            std::fs::create_dir(d.path().join("sub")).unwrap();
            std::fs::write(d.path().join("sub/x.csv"), "1,2\n").unwrap();
            std::fs::write(d.path().join("y.toml"), "k = 1\n").unwrap();
        }
        let ha = hash_inputs(&[a.path().to_path_buf()]).unwrap();
        assert_eq!(ha, hash_inputs(&[b.path().to_path_buf()]).unwrap());
        std::fs::write(b.path().join("y.toml"), "k = 2\n").unwrap();
        assert_ne!(ha, hash_inputs(&[b.path().to_path_buf()]).unwrap());
        // git's hash of an empty blob, with sha256
        assert_eq!(blob_hash(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
    }
}
