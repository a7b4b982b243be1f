use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Record of one run: enough to re-execute it and check its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Command-line arguments without the program name and without
    /// `--out-dir`, `--threads` and `--seed`.
    pub args: Vec<String>,
    pub options: serde_json::Value,
    pub seed: u64,
    /// Input path as given, mapped to its SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output directory, mapped to its SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Drops the flags that do not affect artifacts (or are stored separately).
pub fn strip_run_flags(args: &[String]) -> Vec<String> {
    const FLAGS: [&str; 3] = ["--out-dir", "--threads", "--seed"];
    let mut out = Vec::with_capacity(args.len());
    let mut skip_next = false;
    for a in args {
        if skip_next {
            skip_next = false;
            continue;
        }
        if FLAGS.contains(&a.as_str()) {
            skip_next = true;
        } else if !FLAGS.iter().any(|f| a.starts_with(&format!("{f}="))) {
            out.push(a.clone());
        }
    }
    out
}
