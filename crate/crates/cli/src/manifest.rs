//! Provenance records written next to every command's outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use modah_core::io::SCHEMA_VERSION;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// `prefix` with `suffix` appended to its final component.
pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub tool_version: &'static str,
    pub seed: u64,
    /// Resolved command parameters.
    pub parameters: serde_json::Value,
    /// Input name to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Digest of `parameters`, `seed` and `inputs`; embedded in JSON outputs.
    pub inputs_hash: String,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &'static str, seed: u64, parameters: serde_json::Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed,
            parameters,
            inputs: BTreeMap::new(),
            inputs_hash: String::new(),
            outputs: BTreeMap::new(),
        }
        .rehash()
    }

    pub fn input_file(mut self, name: &str, path: &Path) -> Result<Self> {
        self.inputs.insert(name.to_string(), sha256_file(path)?);
        Ok(self.rehash())
    }

    pub fn input_bytes(mut self, name: &str, bytes: &[u8]) -> Self {
        self.inputs.insert(name.to_string(), sha256_hex(bytes));
        self.rehash()
    }

    fn rehash(mut self) -> Self {
        let canon = serde_json::json!({
            "command": self.command,
            "seed": self.seed,
            "parameters": self.parameters,
            "inputs": self.inputs,
        });
        self.inputs_hash = sha256_hex(canon.to_string().as_bytes());
        self
    }

    /// Records the digest of a file already written.
    pub fn output(&mut self, name: &str, path: &Path) -> Result<()> {
        self.outputs.insert(name.to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}
