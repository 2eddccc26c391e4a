use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one completed stage run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: char,
    /// Directory name under the run directory, e.g. `e-softmax`.
    pub dir: String,
    /// SHA-256 of the stage's configuration slice.
    pub config_hash: String,
    /// Input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the stage directory) → SHA-256.
    pub outputs: BTreeMap<String, String>,
    /// Measurements and decisions; not part of the cache key.
    #[serde(default)]
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format("stage manifest", path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    /// True when every recorded output exists in `dir` with its recorded checksum.
    pub fn outputs_intact(&self, dir: &Path) -> bool {
        self.outputs
            .iter()
            .all(|(name, sum)| sha256_file(&dir.join(name)).is_ok_and(|s| &s == sum))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut r = BufReader::new(File::open(path)?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
