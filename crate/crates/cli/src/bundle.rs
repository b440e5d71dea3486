//! Output bundle: data files, a summary record and a digest manifest.
//!
//! `summary.json` and `manifest.json` depend only on the configuration and
//! the seed. Wall-clock timings go to `timings.json`, which the manifest
//! lists as volatile without a digest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use vhj_core::grid::GridField;

use crate::error::{CliError, CliResult};

pub const SUMMARY: &str = "summary.json";
pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";

pub struct Bundle {
    dir: PathBuf,
    command: String,
    files: BTreeMap<String, String>,
    verdicts: BTreeMap<String, bool>,
    scalars: BTreeMap<String, Value>,
    details: Map<String, Value>,
    timings: BTreeMap<String, f64>,
    clock: Instant,
}

impl Bundle {
    pub fn create(dir: &Path, command: &str) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_owned(),
            files: BTreeMap::new(),
            verdicts: BTreeMap::new(),
            scalars: BTreeMap::new(),
            details: Map::new(),
            timings: BTreeMap::new(),
            clock: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes `bytes` to `rel` inside the bundle and records its digest.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.insert(rel.to_owned(), hex_digest(bytes));
        Ok(())
    }

    /// Records a file written by someone else (e.g. a sweep worker).
    pub fn adopt(&mut self, rel: &str) -> CliResult<()> {
        let path = self.dir.join(rel);
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        self.files.insert(rel.to_owned(), hex_digest(&bytes));
        Ok(())
    }

    pub fn field(&mut self, rel: &str, field: &GridField, value_name: &str) -> CliResult<()> {
        let mut buf = Vec::new();
        field
            .write_columns(&mut buf, value_name)
            .map_err(|e| CliError::io(rel, e))?;
        self.write(rel, &buf)
    }

    /// Headered columnar text; `None` cells are written as `nan`.
    pub fn series(
        &mut self,
        rel: &str,
        header: &[&str],
        rows: &[Vec<Option<f64>>],
    ) -> CliResult<()> {
        let mut text = header.join(" ");
        text.push('\n');
        for row in rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| c.map_or_else(|| "nan".to_owned(), |v| v.to_string()))
                .collect();
            text.push_str(&cells.join(" "));
            text.push('\n');
        }
        self.write(rel, text.as_bytes())
    }

    pub fn verdict(&mut self, name: &str, passed: bool) {
        self.verdicts.insert(name.to_owned(), passed);
    }

    pub fn scalar(&mut self, name: &str, value: f64) {
        self.scalars.insert(name.to_owned(), json!(value));
    }

    pub fn detail(&mut self, name: &str, value: impl Serialize) -> CliResult<()> {
        let v = serde_json::to_value(value)
            .map_err(|e| CliError::Config(format!("cannot serialize {name}: {e}")))?;
        self.details.insert(name.to_owned(), v);
        Ok(())
    }

    /// Time since the previous mark (or creation), stored under `phase`.
    pub fn mark(&mut self, phase: &str) {
        let now = Instant::now();
        *self.timings.entry(phase.to_owned()).or_default() += (now - self.clock).as_secs_f64();
        self.clock = now;
    }

    pub fn passed(&self) -> bool {
        self.verdicts.values().all(|&v| v)
    }

    /// Writes summary, timings and manifest. Returns whether every verdict passed.
    pub fn finish(mut self, config: &toml::Value, seed: u64) -> CliResult<bool> {
        let passed = self.passed();
        let failed: Vec<&String> = self
            .verdicts
            .iter()
            .filter(|(_, &v)| !v)
            .map(|(k, _)| k)
            .collect();
        let summary = json!({
            "command": self.command,
            "passed": passed,
            "failed": failed,
            "verdicts": self.verdicts,
            "scalars": self.scalars,
            "details": self.details,
        });
        let text = to_text(&summary)?;
        self.write(SUMMARY, text.as_bytes())?;

        let timings = to_text(&json!({ "seconds": self.timings }))?;
        let path = self.dir.join(TIMINGS);
        fs::write(&path, timings).map_err(|e| CliError::io(&path, e))?;

        let files: Vec<Value> = self
            .files
            .iter()
            .map(|(p, d)| json!({ "path": p, "sha256": d }))
            .collect();
        let config = serde_json::to_value(config)
            .map_err(|e| CliError::Config(format!("cannot echo config: {e}")))?;
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "seed": seed,
            "config": config,
            "files": files,
            "volatile": [TIMINGS],
        });
        let path = self.dir.join(MANIFEST);
        fs::write(&path, to_text(&manifest)?).map_err(|e| CliError::io(&path, e))?;
        Ok(passed)
    }
}

fn to_text(v: &Value) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(v)
        .map_err(|e| CliError::Config(format!("cannot serialize record: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
