use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

/// Run manifest, written before any compute.
pub struct Manifest {
    command: &'static str,
    seed: u64,
    config: Map<String, Value>,
    inputs: Vec<(&'static str, PathBuf)>,
}

impl Manifest {
    pub fn new(command: &'static str, seed: u64) -> Self {
        Self {
            command,
            seed,
            config: Map::new(),
            inputs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.config.insert(key.to_string(), value.into());
        self
    }

    pub fn input(&mut self, role: &'static str, path: Option<&Path>) -> &mut Self {
        if let Some(p) = path {
            self.inputs.push((role, p.to_path_buf()));
        }
        self
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        ensure_dir(out_dir)?;
        let mut inputs = Map::new();
        for (role, path) in &self.inputs {
            inputs.insert(
                role.to_string(),
                json!({ "path": path.display().to_string(), "sha256": sha256_file(path)? }),
            );
        }
        let doc = json!({
            "tool": "sahash",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "seed": self.seed,
            "threads": rayon::current_num_threads(),
            "config": self.config,
            "inputs": inputs,
        });
        write_json(&out_dir.join("manifest.json"), &doc)
    }
}

pub fn write_json(path: &Path, doc: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(doc).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// Small CSV builder; fields are numbers or bare identifiers, so no quoting.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self { text }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_text(path, &self.text)
    }
}

/// Empty field for absent values.
pub fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}
