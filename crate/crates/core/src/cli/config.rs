//! Run configuration: a TOML document with sections `[data]`, `[model]`,
//! `[train]`, `[schedule]`, `[eval]` and `[verify]`. Every key has a default,
//! unknown keys are rejected, and errors name the section, key and line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    generate_synthetic, load_delimited, ClusterLayout, Column, Dataset, DelimitedSchema, SkewSpec,
};
use crate::error::{Error, Result};
use crate::model::Activation;
use crate::trainer::{Mode, ModelSpec, Sampling, TrainConfig};

/// `{10^i : i = −3..1}`
pub fn decade_grid() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1, 1.0, 10.0]
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub schedule: ScheduleSection,
    pub eval: EvalSection,
    pub verify: VerifySection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutKind {
    Random,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    pub num_concepts: usize,
    pub classes_per_concept: usize,
    pub dim: usize,
    pub concept_weights: Vec<f64>,
    pub n_total: usize,
    pub seed: u64,
    pub layout: LayoutKind,
    pub layout_seed: u64,
    pub radius: f64,
    pub scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
    /// Held-out set drawn from the same clusters.
    pub eval_n_total: usize,
    pub eval_seed: u64,
    /// Defaults to `concept_weights`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_path: Option<PathBuf>,
    pub feature_columns: Vec<Column>,
    pub label_column: Column,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concept_column: Option<Column>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concept_map: Option<PathBuf>,
    pub delimiter: char,
    pub has_header: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Synthetic,
            num_concepts: 4,
            classes_per_concept: 2,
            dim: 10,
            concept_weights: vec![0.7, 0.1, 0.1, 0.1],
            n_total: 1000,
            seed: 100,
            layout: LayoutKind::Random,
            layout_seed: 11,
            radius: 3.0,
            scale: 1.0,
            means: None,
            scales: None,
            eval_n_total: 2000,
            eval_seed: 200,
            eval_weights: None,
            path: None,
            eval_path: None,
            feature_columns: vec![],
            label_column: Column::Index(0),
            concept_column: None,
            concept_map: None,
            delimiter: ',',
            has_header: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_width: usize,
    pub activation: Activation,
    pub init_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelSpec::default();
        ModelSection {
            hidden_width: m.hidden_width,
            activation: m.activation,
            init_scale: m.init_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub mode: Mode,
    pub iterations: usize,
    pub batch_size: usize,
    pub eta_theta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub seed: u64,
    pub snapshot_every: usize,
    pub momentum: f64,
    /// Write one metrics record every this many iterations.
    pub record_every: usize,
    pub gamma_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            mode: t.mode,
            iterations: t.iterations,
            batch_size: t.batch_size,
            eta_theta: t.eta_theta,
            gamma: t.gamma,
            tau: t.tau,
            seed: t.seed,
            snapshot_every: t.snapshot_every,
            momentum: t.momentum,
            record_every: 1,
            gamma_grid: decade_grid(),
            tau_grid: decade_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub lambda: f64,
    pub s: usize,
    pub c: f64,
    pub lambda_grid: Vec<f64>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        ScheduleSection {
            lambda: t.lambda,
            s: t.s,
            c: t.c,
            lambda_grid: decade_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub step_sizes: Vec<f64>,
    pub probe_train_fraction: f64,
    pub probe_seed: u64,
    pub probe_l2: f64,
    pub probe_shuffle_labels: bool,
    /// Training seeds averaged by `sweep`.
    pub seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            step_sizes: crate::eval::DEFAULT_STEP_SIZES.to_vec(),
            probe_train_fraction: 0.8,
            probe_seed: 0,
            probe_l2: 1e-4,
            probe_shuffle_labels: false,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub seed: u64,
    pub instances: usize,
    pub input_dim: usize,
    pub classes: usize,
    /// `λ_w = lambda_factor · l_x`
    pub lambda_factor: f64,
    pub regret_mode: Mode,
    pub regret_iterations: usize,
    pub regret_batch_size: usize,
    pub regret_lambda: f64,
    pub regret_s: usize,
    /// ERM iterations used to obtain the frozen θ (0 keeps the initialisation).
    pub regret_pretrain: usize,
    pub frozen_theta: bool,
    pub warm_phase_samples: usize,
    pub variance_n: usize,
    pub variance_nk: usize,
    pub variance_trials: usize,
    pub variance_sampling: Sampling,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            seed: 0,
            instances: 100,
            input_dim: 2,
            classes: 2,
            lambda_factor: 4.0,
            regret_mode: Mode::Cl,
            regret_iterations: 10_000,
            regret_batch_size: 32,
            regret_lambda: 0.1,
            regret_s: 1000,
            regret_pretrain: 3000,
            frozen_theta: true,
            warm_phase_samples: 200,
            variance_n: 1000,
            variance_nk: 100,
            variance_trials: 100_000,
            variance_sampling: Sampling::Stratified,
        }
    }
}

/// A parsed configuration together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Directory relative data paths are resolved against.
    pub base_dir: PathBuf,
    /// SHA-256 of the effective configuration, as canonical TOML.
    pub hash: String,
}

/// Line (1-based), section and key at a byte offset of a TOML document.
fn locate(text: &str, offset: usize) -> (usize, String, String) {
    let offset = offset.min(text.len());
    let line_no = text[..offset].matches('\n').count() + 1;
    let mut section = String::new();
    for line in text.lines().take(line_no) {
        let t = line.trim();
        if t.starts_with('[') {
            if let Some(end) = t.find(']') {
                section = t[1..end].trim_matches(['[', ']', ' ']).to_string();
            }
        }
    }
    let current = text.lines().nth(line_no - 1).unwrap_or("");
    let key = match current.split_once('=') {
        Some((k, _)) => k.trim().to_string(),
        None => current.trim().trim_matches(['[', ']']).to_string(),
    };
    (line_no, section, key)
}

fn de_error(text: &str, e: &toml::de::Error, from_cli: bool) -> Error {
    let (line, section, key) = match e.span() {
        Some(span) => locate(text, span.start),
        None => (0, String::new(), String::new()),
    };
    let message = e.message().trim().to_string();
    // Unknown fields are reported against the section; name the key itself.
    let key = match message.strip_prefix("unknown field `") {
        Some(rest) => rest.split('`').next().unwrap_or(&key).to_string(),
        None => key,
    };
    Error::Config {
        section,
        key,
        line: (!from_cli).then_some(line),
        message,
    }
}

fn parse_override(spec: &str) -> Result<(String, String, toml::Value)> {
    let bad = |m: &str| Error::Config {
        section: String::new(),
        key: spec.to_string(),
        line: None,
        message: m.to_string(),
    };
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| bad("expected section.key=value"))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| bad("expected section.key=value"))?;
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((section.to_string(), key.to_string(), value))
}

/// Parses `text`, applies `section.key=value` overrides, and fills defaults.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let base: RunConfig = toml::from_str(text).map_err(|e| de_error(text, &e, false))?;
    if overrides.is_empty() {
        return Ok(base);
    }
    let mut table: toml::Table = toml::from_str(text).map_err(|e| de_error(text, &e, false))?;
    for spec in overrides {
        let (section, key, value) = parse_override(spec)?;
        let entry = table
            .entry(section.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match entry {
            toml::Value::Table(t) => {
                t.insert(key, value);
            }
            _ => {
                return Err(Error::Config {
                    section,
                    key,
                    line: None,
                    message: "not a section".into(),
                })
            }
        }
    }
    let merged = toml::to_string(&table).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    toml::from_str(&merged).map_err(|e| de_error(&merged, &e, true))
}

pub fn config_hash(config: &RunConfig) -> String {
    let canonical = toml::to_string(config).expect("config serialises");
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Reads a config file, or the defaults when `path` is `None`.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<LoadedConfig> {
    let (text, base_dir) = match path {
        Some(p) => (
            std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (String::new(), PathBuf::from(".")),
    };
    let config = parse_config(&text, overrides)?;
    Ok(LoadedConfig {
        hash: config_hash(&config),
        config,
        base_dir,
    })
}

impl LoadedConfig {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let (t, s, m) = (
            &self.config.train,
            &self.config.schedule,
            &self.config.model,
        );
        TrainConfig {
            mode: t.mode,
            iterations: t.iterations,
            batch_size: t.batch_size,
            eta_theta: t.eta_theta,
            lambda: s.lambda,
            gamma: t.gamma,
            tau: t.tau,
            s: s.s,
            c: s.c,
            seed: t.seed,
            snapshot_every: t.snapshot_every,
            momentum: t.momentum,
            model: ModelSpec {
                hidden_width: m.hidden_width,
                activation: m.activation,
                init_scale: m.init_scale,
            },
        }
    }

    fn skew_spec(&self, weights: Vec<f64>, n_total: usize, seed: u64) -> SkewSpec {
        let d = &self.config.data;
        let layout = match d.layout {
            LayoutKind::Random => ClusterLayout::Random {
                seed: d.layout_seed,
                radius: d.radius,
                scale: d.scale,
            },
            LayoutKind::Explicit => ClusterLayout::Explicit {
                means: d.means.clone().unwrap_or_default(),
                scales: d.scales.clone().unwrap_or_default(),
            },
        };
        SkewSpec {
            num_concepts: d.num_concepts,
            classes_per_concept: d.classes_per_concept,
            dim: d.dim,
            layout,
            concept_weights: weights,
            n_total,
            seed,
        }
    }

    fn schema(&self) -> DelimitedSchema {
        let d = &self.config.data;
        DelimitedSchema {
            feature_columns: d.feature_columns.clone(),
            label_column: d.label_column.clone(),
            concept_column: d.concept_column.clone(),
            concept_map: d.concept_map.as_deref().map(|p| self.resolve(p)),
            delimiter: d.delimiter,
            has_header: d.has_header,
        }
    }

    fn load_file(&self, path: &Option<PathBuf>, what: &str) -> Result<Dataset> {
        let p = path
            .as_deref()
            .ok_or_else(|| Error::Config {
                section: "data".into(),
                key: what.into(),
                line: None,
                message: "required when source = \"file\"".into(),
            })
            .map(|p| self.resolve(p))?;
        if !p.exists() {
            return Err(Error::io(
                &p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
            ));
        }
        load_delimited(&p, &self.schema())
    }

    pub fn train_dataset(&self) -> Result<Dataset> {
        let d = &self.config.data;
        match d.source {
            DataSource::Synthetic => {
                generate_synthetic(&self.skew_spec(d.concept_weights.clone(), d.n_total, d.seed))
            }
            DataSource::File => self.load_file(&d.path, "path"),
        }
    }

    /// Held-out data; for file sources without `eval_path`, the training file.
    pub fn eval_dataset(&self) -> Result<Dataset> {
        let d = &self.config.data;
        match d.source {
            DataSource::Synthetic => {
                let w = d
                    .eval_weights
                    .clone()
                    .unwrap_or_else(|| d.concept_weights.clone());
                generate_synthetic(&self.skew_spec(w, d.eval_n_total, d.eval_seed))
            }
            DataSource::File if d.eval_path.is_some() => self.load_file(&d.eval_path, "eval_path"),
            DataSource::File => self.load_file(&d.path, "path"),
        }
    }
}
