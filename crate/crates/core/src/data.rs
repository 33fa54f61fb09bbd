//! Datasets with a concept partition over classes: synthetic concept-skewed
//! Gaussian clusters, delimited-file ingestion, and the per-concept counts
//! `N_k` and reference distribution `q0 = N_k / N` derived from them.
//!
//! Labels and concept ids are 0-based in memory and 1-based in files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, ProbVector};

/// Concept census of the ImageNet class hierarchy: (initials, name, #classes).
pub const IMAGENET_CONCEPTS: [(&str, &str, usize); 11] = [
    ("An", "Animal", 121),
    ("Ar", "Artifact", 107),
    ("B", "Bird", 59),
    ("C", "Container", 56),
    ("De", "Device", 129),
    ("Do", "Dog", 118),
    ("I", "Instrumentality", 106),
    ("M", "Mammal", 100),
    ("S", "Structure", 57),
    ("V", "Vehicle", 67),
    ("O", "Others", 80),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    /// Row-major N×d.
    x: Vec<f64>,
    y: Vec<usize>,
    concept: Vec<usize>,
    class_to_concept: Vec<usize>,
    num_concepts: usize,
    concept_counts: Vec<usize>,
}

impl Dataset {
    pub fn new(
        dim: usize,
        x: Vec<f64>,
        y: Vec<usize>,
        concept: Vec<usize>,
        class_to_concept: Vec<usize>,
        num_concepts: usize,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 || dim == 0 {
            return Err(Error::invalid(
                "dataset must have at least one row and one feature",
            ));
        }
        if x.len() != n * dim || concept.len() != n {
            return Err(Error::invalid(
                "feature, label and concept arrays disagree in length",
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features must be finite"));
        }
        if let Some(&c) = class_to_concept.iter().find(|&&c| c >= num_concepts) {
            return Err(Error::invalid(format!(
                "class maps to unknown concept {}",
                c + 1
            )));
        }
        let mut concept_counts = vec![0; num_concepts];
        for (i, (&yi, &ki)) in y.iter().zip(&concept).enumerate() {
            if yi >= class_to_concept.len() {
                return Err(Error::invalid(format!(
                    "row {i}: label {} has no concept",
                    yi + 1
                )));
            }
            if ki >= num_concepts {
                return Err(Error::invalid(format!(
                    "row {i}: concept {} out of range",
                    ki + 1
                )));
            }
            if class_to_concept[yi] != ki {
                return Err(Error::invalid(format!(
                    "row {i}: class {} belongs to concept {}, row says {}",
                    yi + 1,
                    class_to_concept[yi] + 1,
                    ki + 1
                )));
            }
            concept_counts[ki] += 1;
        }
        if let Some(k) = concept_counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("concept {} has no examples", k + 1)));
        }
        Ok(Dataset {
            dim,
            x,
            y,
            concept,
            class_to_concept,
            num_concepts,
            concept_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.class_to_concept.len()
    }

    pub fn num_concepts(&self) -> usize {
        self.num_concepts
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.x
    }

    pub fn label(&self, i: usize) -> usize {
        self.y[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn concept(&self, i: usize) -> usize {
        self.concept[i]
    }

    pub fn concepts(&self) -> &[usize] {
        &self.concept
    }

    pub fn class_to_concept(&self) -> &[usize] {
        &self.class_to_concept
    }

    /// `N_k` for each concept.
    pub fn concept_counts(&self) -> &[usize] {
        &self.concept_counts
    }

    /// Rows `indices` (in that order), keeping the class→concept map. Fails
    /// if a concept ends up empty.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut x = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            x.extend_from_slice(self.row(i));
        }
        Dataset::new(
            self.dim,
            x,
            indices.iter().map(|&i| self.y[i]).collect(),
            indices.iter().map(|&i| self.concept[i]).collect(),
            self.class_to_concept.clone(),
            self.num_concepts,
        )
    }

    /// Same rows with labels permuted by a seeded shuffle.
    pub fn with_shuffled_labels(&self, seed: u64) -> Dataset {
        let mut y = self.y.clone();
        y.shuffle(&mut seeded_rng(seed));
        // Concepts follow labels so the partition invariant still holds.
        let concept = y
            .iter()
            .map(|&c| self.class_to_concept[c])
            .collect::<Vec<_>>();
        let mut out = self.clone();
        out.concept_counts = vec![0; self.num_concepts];
        for &k in &concept {
            out.concept_counts[k] += 1;
        }
        out.y = y;
        out.concept = concept;
        out
    }

    /// Replaces the features, keeping labels and concepts.
    pub fn with_features(&self, dim: usize, x: Vec<f64>) -> Result<Dataset> {
        Dataset::new(
            dim,
            x,
            self.y.clone(),
            self.concept.clone(),
            self.class_to_concept.clone(),
            self.num_concepts,
        )
    }
}

/// `q0_k = N_k / N`.
pub fn reference_distribution(dataset: &Dataset) -> ProbVector {
    let n = dataset.len() as f64;
    let q: Vec<f64> = dataset
        .concept_counts()
        .iter()
        .map(|&c| c as f64 / n)
        .collect();
    crate::numerics::project_to_simplex(&q).expect("concept counts are positive and finite")
}

/// Splits `total` into parts proportional to `weights` by largest remainder,
/// then moves single units from the largest part until no part is zero.
pub fn largest_remainder(weights: &[f64], total: usize) -> Result<Vec<usize>> {
    if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::invalid("weights must be positive and finite"));
    }
    if total < weights.len() {
        return Err(Error::invalid(format!(
            "cannot give {} parts at least one unit each out of {total}",
            weights.len()
        )));
    }
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    while let Some(zero) = counts.iter().position(|&c| c == 0) {
        let largest = (0..counts.len())
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .unwrap();
        counts[largest] -= 1;
        counts[zero] += 1;
    }
    Ok(counts)
}

/// Where the class clusters sit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClusterLayout {
    /// Class means drawn as `radius`-scaled Gaussian directions from `seed`;
    /// every class uses isotropic noise with standard deviation `scale`.
    Random { seed: u64, radius: f64, scale: f64 },
    Explicit {
        means: Vec<Vec<f64>>,
        scales: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewSpec {
    pub num_concepts: usize,
    pub classes_per_concept: usize,
    pub dim: usize,
    pub layout: ClusterLayout,
    pub concept_weights: Vec<f64>,
    pub n_total: usize,
    pub seed: u64,
}

impl SkewSpec {
    pub fn num_classes(&self) -> usize {
        self.num_concepts * self.classes_per_concept
    }

    /// Class means and noise scales; class `c` belongs to concept `c / classes_per_concept`.
    pub fn class_clusters(&self) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let c = self.num_classes();
        match &self.layout {
            ClusterLayout::Random {
                seed,
                radius,
                scale,
            } => {
                if !(radius.is_finite() && scale.is_finite() && *scale >= 0.0) {
                    return Err(Error::invalid(
                        "cluster radius/scale must be finite, scale ≥ 0",
                    ));
                }
                let mut rng = seeded_rng(*seed);
                let means = (0..c)
                    .map(|_| {
                        let v: Vec<f64> =
                            (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                        let n = crate::numerics::norm(&v).max(1e-12);
                        v.into_iter().map(|x| radius * x / n).collect()
                    })
                    .collect();
                Ok((means, vec![*scale; c]))
            }
            ClusterLayout::Explicit { means, scales } => {
                if means.len() != c || scales.len() != c {
                    return Err(Error::invalid(format!(
                        "explicit layout needs {c} means and scales, got {} and {}",
                        means.len(),
                        scales.len()
                    )));
                }
                if means.iter().any(|m| m.len() != self.dim) {
                    return Err(Error::invalid("cluster mean dimension mismatch"));
                }
                Ok((means.clone(), scales.clone()))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_concepts == 0 || self.classes_per_concept == 0 || self.dim == 0 {
            return Err(Error::invalid(
                "K, classes_per_concept and d must be positive",
            ));
        }
        if self.num_classes() < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if self.concept_weights.len() != self.num_concepts {
            return Err(Error::invalid(format!(
                "{} concept weights for {} concepts",
                self.concept_weights.len(),
                self.num_concepts
            )));
        }
        if self.n_total < self.num_concepts {
            return Err(Error::invalid(format!(
                "n_total = {} is smaller than K = {}",
                self.n_total, self.num_concepts
            )));
        }
        Ok(())
    }
}

/// Gaussian-cluster classes grouped into concepts, with per-concept counts
/// proportional to the concept weights. Rows are ordered by concept, then
/// class. Deterministic per seed.
pub fn generate_synthetic(spec: &SkewSpec) -> Result<Dataset> {
    spec.validate()?;
    let (means, scales) = spec.class_clusters()?;
    let per_concept = largest_remainder(&spec.concept_weights, spec.n_total)?;
    let mut rng = seeded_rng(spec.seed);
    let cpc = spec.classes_per_concept;
    let mut x = Vec::with_capacity(spec.n_total * spec.dim);
    let mut y = Vec::with_capacity(spec.n_total);
    let mut concept = Vec::with_capacity(spec.n_total);
    for (k, &n_k) in per_concept.iter().enumerate() {
        let per_class = split_evenly(n_k, cpc);
        for (j, &n_c) in per_class.iter().enumerate() {
            let class = k * cpc + j;
            for _ in 0..n_c {
                for mean in &means[class] {
                    let noise: f64 = rng.sample(StandardNormal);
                    x.push(mean + scales[class] * noise);
                }
                y.push(class);
                concept.push(k);
            }
        }
    }
    let class_to_concept = (0..spec.num_classes()).map(|c| c / cpc).collect();
    Dataset::new(spec.dim, x, y, concept, class_to_concept, spec.num_concepts)
}

fn split_evenly(n: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|j| n / parts + usize::from(j < n % parts))
        .collect()
}

/// A column addressed by 0-based index or by header name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelimitedSchema {
    pub feature_columns: Vec<Column>,
    pub label_column: Column,
    /// When absent, concepts come from `concept_map`.
    #[serde(default)]
    pub concept_column: Option<Column>,
    /// Sidecar file with one `class_id concept_id` pair per line.
    #[serde(default)]
    pub concept_map: Option<PathBuf>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub has_header: bool,
}

fn default_delimiter() -> char {
    ','
}

fn resolve(col: &Column, header: Option<&csv::StringRecord>) -> Result<usize> {
    match col {
        Column::Index(i) => Ok(*i),
        Column::Name(name) => header
            .and_then(|h| h.iter().position(|c| c.trim() == name))
            .ok_or_else(|| Error::invalid(format!("column `{name}` not found in header"))),
    }
}

fn parse_id(cell: &str, row: usize, column: usize, what: &str) -> Result<usize> {
    let v: i64 = cell.trim().parse().map_err(|_| Error::Parse {
        row,
        column,
        message: format!("{what} `{cell}` is not an integer"),
    })?;
    if v < 1 {
        return Err(Error::Parse {
            row,
            column,
            message: format!("{what} {v} must be ≥ 1"),
        });
    }
    Ok(v as usize - 1)
}

/// Reads a `class concept` map (1-based ids, whitespace, comma or tab
/// separated, `#` comments).
pub fn load_concept_map(path: &Path) -> Result<BTreeMap<usize, usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let row = lineno + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        if parts.len() != 2 {
            return Err(Error::Parse {
                row,
                column: parts.len().min(2) + 1,
                message: "expected `class_id concept_id`".into(),
            });
        }
        let class = parse_id(parts[0], row, 1, "class id")?;
        let concept = parse_id(parts[1], row, 2, "concept id")?;
        if let Some(prev) = map.insert(class, concept) {
            if prev != concept {
                return Err(Error::Parse {
                    row,
                    column: 2,
                    message: format!("class {} assigned to two concepts", class + 1),
                });
            }
        }
    }
    Ok(map)
}

/// Loads a delimited numeric file. Row order is preserved; errors carry the
/// 1-based file line and column.
pub fn load_delimited(path: &Path, schema: &DelimitedSchema) -> Result<Dataset> {
    if schema.feature_columns.is_empty() {
        return Err(Error::invalid("schema lists no feature columns"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(
            u8::try_from(schema.delimiter)
                .map_err(|_| Error::invalid("delimiter must be ASCII"))?,
        )
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = if schema.has_header {
        Some(reader.headers().map_err(|e| csv_error(path, e))?.clone())
    } else {
        None
    };
    let feature_idx: Vec<usize> = schema
        .feature_columns
        .iter()
        .map(|c| resolve(c, header.as_ref()))
        .collect::<Result<_>>()?;
    let label_idx = resolve(&schema.label_column, header.as_ref())?;
    let concept_idx = schema
        .concept_column
        .as_ref()
        .map(|c| resolve(c, header.as_ref()))
        .transpose()?;
    let expected_width = header.as_ref().map(|h| h.len());

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut concept = Vec::new();
    let mut rows = Vec::new();
    let mut first_row_of_class: BTreeMap<usize, usize> = BTreeMap::new();
    let mut width = expected_width;
    let mut last_row = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        last_row = row;
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Parse {
                row,
                column: record.len().min(w) + 1,
                message: format!("row has {} cells, expected {w}", record.len()),
            });
        }
        let cell = |col: usize| -> Result<&str> {
            match record.get(col) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(Error::Parse {
                    row,
                    column: col + 1,
                    message: "missing cell".into(),
                }),
            }
        };
        for &c in &feature_idx {
            let s = cell(c)?;
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                row,
                column: c + 1,
                message: format!("`{s}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: c + 1,
                    message: "non-finite value".into(),
                });
            }
            x.push(v);
        }
        let label = parse_id(cell(label_idx)?, row, label_idx + 1, "label")?;
        first_row_of_class.entry(label).or_insert(row);
        rows.push(row);
        y.push(label);
        if let Some(ci) = concept_idx {
            concept.push(parse_id(cell(ci)?, row, ci + 1, "concept")?);
        }
    }
    if y.is_empty() {
        return Err(Error::Parse {
            row: last_row,
            column: 0,
            message: "file has no data rows".into(),
        });
    }

    let sidecar = schema
        .concept_map
        .as_deref()
        .map(load_concept_map)
        .transpose()?;
    let mut class_map: BTreeMap<usize, usize> = sidecar.clone().unwrap_or_default();
    if let Some(col) = concept_idx {
        for (i, (&yi, &ki)) in y.iter().zip(&concept).enumerate() {
            match class_map.insert(yi, ki) {
                Some(prev) if prev != ki => {
                    return Err(Error::Parse {
                        row: rows[i],
                        column: col + 1,
                        message: format!(
                            "class {} appears under concepts {} and {}",
                            yi + 1,
                            prev + 1,
                            ki + 1
                        ),
                    });
                }
                _ => {}
            }
        }
    } else {
        if sidecar.is_none() {
            return Err(Error::invalid(
                "schema needs a concept column or a concept map",
            ));
        }
        for (&yi, &row) in &first_row_of_class {
            if !class_map.contains_key(&yi) {
                return Err(Error::Parse {
                    row,
                    column: label_idx + 1,
                    message: format!("class {} missing from the concept map", yi + 1),
                });
            }
        }
        concept = y.iter().map(|c| class_map[c]).collect();
    }

    let num_classes = class_map.keys().next_back().map_or(0, |c| c + 1);
    let mut class_to_concept = vec![usize::MAX; num_classes];
    for (&c, &k) in &class_map {
        class_to_concept[c] = k;
    }
    if let Some(c) = class_to_concept.iter().position(|&k| k == usize::MAX) {
        return Err(Error::Parse {
            row: 0,
            column: label_idx + 1,
            message: format!("class {} has neither examples nor a concept", c + 1),
        });
    }
    let num_concepts = class_map.values().copied().max().unwrap_or(0) + 1;
    let mut counts = vec![0usize; num_concepts];
    for &k in &concept {
        counts[k] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Parse {
            row: 0,
            column: concept_idx.map_or(label_idx, |c| c) + 1,
            message: format!("concept {} has no examples", k + 1),
        });
    }
    Dataset::new(
        feature_idx.len(),
        x,
        y,
        concept,
        class_to_concept,
        num_concepts,
    )
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            row,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}
