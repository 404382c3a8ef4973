//! Run manifests. Every subcommand writes `<subcommand>.manifest.json` into
//! its output directory, recording the exact command line, the resolved
//! configuration, and SHA-256 digests of every input and output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliResult;
use crate::files::{read_bytes, sha256_hex, write_atomic};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Arguments after the program name; re-running them reproduces the run.
    pub argv: Vec<String>,
    pub config: Value,
    pub inputs: BTreeMap<String, FileRecord>,
    pub outputs: BTreeMap<String, FileRecord>,
    pub seed: Option<u64>,
    pub version: String,
    /// RFC 3339, UTC.
    pub started: String,
    pub finished: String,
    /// Headline results and warnings.
    pub summary: Value,
}

/// Collects inputs and outputs while a subcommand runs.
pub struct Run {
    manifest: RunManifest,
    out_dir: PathBuf,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl Run {
    pub fn start(subcommand: &str, argv: &[String], out_dir: &Path) -> Self {
        Self {
            manifest: RunManifest {
                subcommand: subcommand.to_string(),
                argv: argv.to_vec(),
                config: Value::Null,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                seed: None,
                version: env!("CARGO_PKG_VERSION").to_string(),
                started: now(),
                finished: String::new(),
                summary: Value::Null,
            },
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Records an input file with its digest.
    pub fn input(&mut self, role: &str, path: &Path) -> CliResult<()> {
        let bytes = read_bytes(path)?;
        self.record_input(role, path, &bytes);
        Ok(())
    }

    pub fn record_input(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        self.manifest.inputs.insert(
            role.to_string(),
            FileRecord {
                path: path.display().to_string(),
                sha256: sha256_hex(bytes),
            },
        );
    }

    /// Atomically writes `name` in the output directory and records it.
    pub fn output(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.out_path(name);
        write_atomic(&path, bytes)?;
        self.record_output(name, &path, bytes);
        Ok(path)
    }

    /// Records a file that was already written in place.
    pub fn record_output(&mut self, name: &str, path: &Path, bytes: &[u8]) {
        self.manifest.outputs.insert(
            name.to_string(),
            FileRecord {
                path: path.display().to_string(),
                sha256: sha256_hex(bytes),
            },
        );
    }

    pub fn config(&mut self, config: Value) {
        self.manifest.config = config;
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn summary(&mut self, summary: Value) {
        self.manifest.summary = summary;
    }

    pub fn manifest_name(subcommand: &str) -> String {
        format!("{subcommand}.manifest.json")
    }

    pub fn finish(mut self) -> CliResult<RunManifest> {
        self.manifest.finished = now();
        let path = self.out_path(&Self::manifest_name(&self.manifest.subcommand));
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(self.manifest)
    }
}
