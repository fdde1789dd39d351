//! Run records written next to every set of artifacts.
//!
//! A record holds the command, its configuration (with input paths reduced to
//! file names), and sha256 digests of every input and output. Nothing
//! machine- or time-dependent goes in, so identical runs give identical
//! records.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Serialize, Serializer};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn file_name<S: Serializer>(p: &Path, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&label(p))
}

pub fn opt_file_name<S: Serializer>(p: &Option<PathBuf>, s: S) -> Result<S::Ok, S::Error> {
    match p {
        Some(p) => s.serialize_some(&label(p)),
        None => s.serialize_none(),
    }
}

fn label(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Run {
    command: &'static str,
    config: Value,
    out: PathBuf,
    inputs: BTreeMap<String, Value>,
    outputs: BTreeMap<String, String>,
    extra: BTreeMap<String, Value>,
}

impl Run {
    /// Creates the output directory.
    pub fn start(command: &'static str, config: &impl Serialize, out: &Path) -> CliResult<Self> {
        fs::create_dir_all(out).map_err(|e| CliError::Io(out.to_path_buf(), e))?;
        Ok(Run {
            command,
            config: serde_json::to_value(config).expect("config serializes"),
            out: out.to_path_buf(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            extra: BTreeMap::new(),
        })
    }

    /// Reads an input file and records its digest under `role`.
    pub fn read(&mut self, role: &str, path: &Path) -> CliResult<String> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        self.inputs.insert(
            role.to_string(),
            json!({ "file": label(path), "sha256": sha256_hex(text.as_bytes()) }),
        );
        Ok(text)
    }

    /// Compact provenance string for embedding into artifacts.
    pub fn summary(&self) -> String {
        let inputs: BTreeMap<&String, &Value> =
            self.inputs.iter().map(|(k, v)| (k, &v["sha256"])).collect();
        json!({ "command": self.command, "config": self.config, "inputs": inputs }).to_string()
    }

    pub fn config(&self) -> &Value {
        &self.config
    }

    pub fn note(&mut self, key: &str, value: Value) {
        self.extra.insert(key.to_string(), value);
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Io(path.clone(), e))?;
        self.outputs
            .insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    /// Writes `<command>.provenance.json`.
    pub fn finish(self) -> CliResult<()> {
        let record = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "notes": self.extra,
        });
        let path = self.out.join(format!("{}.provenance.json", self.command));
        let text = serde_json::to_string_pretty(&record).expect("json") + "\n";
        fs::write(&path, text).map_err(|e| CliError::Io(path, e))
    }
}
