//! Artifact writers. Every file starts with a header carrying the config
//! hash and seed. Metrics and tables never contain wall-clock data; that goes
//! to `run_meta.json` only.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Line-delimited JSON records.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
    run: String,
}

impl MetricsWriter {
    pub fn create(path: &Path, run: &str, config_hash: &str, seed: u64) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = MetricsWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            run: run.to_string(),
        };
        w.line(&json!({
            "kind": "header",
            "run": run,
            "config_hash": config_hash,
            "seed": seed,
            "format": 1,
        }))?;
        Ok(w)
    }

    fn line(&mut self, v: &Value) -> Result<()> {
        let text = serde_json::to_string(v).expect("json values serialise");
        writeln!(self.out, "{text}").map_err(|e| Error::io(&self.path, e))
    }

    /// One record: `kind`, optional iteration, and a payload of named values.
    pub fn record(
        &mut self,
        kind: &str,
        iteration: Option<usize>,
        payload: impl Serialize,
    ) -> Result<()> {
        let mut v = json!({ "kind": kind, "run": self.run });
        if let Some(t) = iteration {
            v["iteration"] = json!(t);
        }
        let payload =
            serde_json::to_value(payload).map_err(|e| Error::InvalidInput(e.to_string()))?;
        v["data"] = payload;
        self.line(&v)
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Writes a comma-delimited table preceded by a `# config_hash=… seed=…` line.
pub fn write_table(
    path: &Path,
    config_hash: &str,
    seed: u64,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "# config_hash={config_hash} seed={seed}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Wall time and start time of a run, kept apart from the reproducible artifacts.
pub fn write_run_meta(dir: &Path, command: &str, wall_time_secs: f64) -> Result<()> {
    let started = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64() - wall_time_secs)
        .unwrap_or(0.0);
    write_json(
        &dir.join("run_meta.json"),
        &json!({ "command": command, "started_unix": started, "wall_time_secs": wall_time_secs }),
    )
}

/// Shortest round-trip rendering.
pub fn num(v: f64) -> String {
    format!("{v}")
}
