//! Run manifest: which stage wrote which files, with checksums and timings.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub seconds: f64,
    pub files: Vec<FileRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Hash of the config used by the most recent stage.
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            stages: BTreeMap::new(),
        }
    }

    pub fn load(out: &Path) -> CliResult<Option<Self>> {
        let path = out.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::BadInput(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::BadInput(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, out: &Path) -> CliResult<()> {
        let path = out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|source| CliError::OutputDir { path, source })
    }

    /// Every file that is missing or whose checksum changed.
    pub fn audit(&self, out: &Path) -> Vec<String> {
        let mut problems = Vec::new();
        for (stage, rec) in &self.stages {
            for f in &rec.files {
                match checksum(&out.join(&f.path)) {
                    Ok((sum, _)) if sum == f.sha256 => {}
                    Ok(_) => problems.push(format!("{stage}: {} checksum changed", f.path)),
                    Err(_) => problems.push(format!("{stage}: {} missing", f.path)),
                }
            }
        }
        problems
    }

    pub fn file(&self, rel: &str) -> Option<&FileRecord> {
        self.stages
            .values()
            .flat_map(|s| &s.files)
            .find(|f| f.path == rel)
    }
}

pub fn checksum(path: &Path) -> std::io::Result<(String, u64)> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex(&hasher.finalize()), total))
}

/// All regular files under `dir`, sorted.
pub fn walk(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn relative(out: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(out).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}
