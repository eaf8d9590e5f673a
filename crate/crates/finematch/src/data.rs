//! Datasets of categorical units: schema, CSV input/output, binning of
//! continuous variables, and category counting.
//!
//! Every covariate is categorical with an explicitly ordered category list;
//! continuous variables enter only after [`bin_continuous`]. A missing value
//! is an ordinary category when the schema declares one, so it participates
//! in balance like any other category.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema config error: {0}")]
    Config(String),
    #[error("input has no data rows")]
    EmptyInput,
    #[error("missing column {column:?}")]
    MissingColumn { column: String },
    #[error("row {row}: unknown category {label:?} in column {column:?}")]
    UnknownCategory { row: usize, column: String, label: String },
    #[error("row {row}: unknown exposure level {label:?}")]
    UnknownLevel { row: usize, label: String },
    #[error("row {row}: {detail}")]
    MalformedRow { row: usize, detail: String },
    #[error("thresholds must be strictly increasing")]
    NonIncreasingThresholds,
    #[error("requested {requested} quantile bins but only {distinct} distinct values")]
    TooManyQuantiles { requested: usize, distinct: usize },
    #[error("dataset invariant violated: {0}")]
    Invalid(String),
}

/// One categorical covariate: a name and its ordered category labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub categories: Vec<String>,
    /// Category that empty or sentinel cells map to, if declared.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_category: Option<String>,
}

impl Covariate {
    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }
}

/// Ordered covariate list shared by a dataset and every model built from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub covariates: Vec<Covariate>,
}

impl CovariateSchema {
    /// Number of covariates.
    pub fn n_covariates(&self) -> usize {
        self.covariates.len()
    }

    /// Number of categories of covariate `p`.
    pub fn n_categories(&self, p: usize) -> usize {
        self.covariates[p].n_categories()
    }

    /// Total category count over all covariates; this is the dimension of the
    /// flattened indicator space.
    pub fn total_categories(&self) -> usize {
        self.covariates.iter().map(Covariate::n_categories).sum()
    }

    /// Start of covariate `p`'s block in the flattened indicator space.
    pub fn offset(&self, p: usize) -> usize {
        self.covariates[..p].iter().map(Covariate::n_categories).sum()
    }

    /// Flattened index of category `k` of covariate `p`.
    pub fn flat_index(&self, p: usize, k: usize) -> usize {
        debug_assert!(k < self.n_categories(p));
        self.offset(p) + k
    }

    /// `(covariate, category)` pairs in flattened order.
    pub fn flat_labels(&self) -> Vec<(String, String)> {
        let mut out = Vec::with_capacity(self.total_categories());
        for cov in &self.covariates {
            for cat in &cov.categories {
                out.push((cov.name.clone(), cat.clone()));
            }
        }
        out
    }
}

/// A single unit: id, one category index per covariate, optional outcomes
/// (aligned with [`Dataset::outcome_names`]) and optional exposure label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: String,
    pub x: Vec<u16>,
    pub outcomes: Vec<Option<f64>>,
    pub exposure: Option<String>,
}

/// Units plus the schema they conform to.
///
/// `exposure_levels` fixes the analysis order of the exposure groups; the
/// first entry is the baseline that every contrast is taken against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: CovariateSchema,
    pub outcome_names: Vec<String>,
    pub exposure_levels: Vec<String>,
    pub units: Vec<Unit>,
}

impl Dataset {
    /// Checks the structural invariants every other module relies on.
    pub fn validate(&self) -> Result<(), DataError> {
        for (i, u) in self.units.iter().enumerate() {
            if u.x.len() != self.schema.n_covariates() {
                return Err(DataError::Invalid(format!(
                    "unit {} ({:?}) has {} covariate values, schema has {}",
                    i,
                    u.id,
                    u.x.len(),
                    self.schema.n_covariates()
                )));
            }
            for (p, &k) in u.x.iter().enumerate() {
                if k as usize >= self.schema.n_categories(p) {
                    return Err(DataError::Invalid(format!(
                        "unit {} ({:?}) has category index {} for covariate {:?} (max {})",
                        i,
                        u.id,
                        k,
                        self.schema.covariates[p].name,
                        self.schema.n_categories(p) - 1
                    )));
                }
            }
            if u.outcomes.len() != self.outcome_names.len() {
                return Err(DataError::Invalid(format!(
                    "unit {} ({:?}) has {} outcomes, dataset has {}",
                    i,
                    u.id,
                    u.outcomes.len(),
                    self.outcome_names.len()
                )));
            }
            if let Some(level) = &u.exposure {
                if !self.exposure_levels.contains(level) {
                    return Err(DataError::Invalid(format!(
                        "unit {} ({:?}) has undeclared exposure level {:?}",
                        i, u.id, level
                    )));
                }
            }
        }
        Ok(())
    }

    /// Indices of the units in exposure group `level`.
    pub fn level_units(&self, level: &str) -> Vec<usize> {
        self.units
            .iter()
            .enumerate()
            .filter(|(_, u)| u.exposure.as_deref() == Some(level))
            .map(|(i, _)| i)
            .collect()
    }

    /// `(level label, unit indices)` in declared level order.
    pub fn levels(&self) -> Vec<(String, Vec<usize>)> {
        self.exposure_levels
            .iter()
            .map(|l| (l.clone(), self.level_units(l)))
            .collect()
    }

    /// Index of an outcome column by name.
    pub fn outcome_index(&self, name: &str) -> Option<usize> {
        self.outcome_names.iter().position(|n| n == name)
    }

    /// Category vectors of the given units, in the given order.
    pub fn profiles(&self, indices: &[usize]) -> Vec<Vec<u16>> {
        indices.iter().map(|&i| self.units[i].x.clone()).collect()
    }
}

/// Per-covariate category counts `N(p, k)` of a unit set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    counts: Vec<Vec<u64>>,
}

impl CategoryCounts {
    pub fn zeros(schema: &CovariateSchema) -> Self {
        CategoryCounts {
            counts: schema.covariates.iter().map(|c| vec![0; c.n_categories()]).collect(),
        }
    }

    /// Builds counts directly from category vectors.
    pub fn from_profiles(schema: &CovariateSchema, profiles: &[Vec<u16>]) -> Self {
        let mut c = Self::zeros(schema);
        for x in profiles {
            for (p, &k) in x.iter().enumerate() {
                c.counts[p][k as usize] += 1;
            }
        }
        c
    }

    #[inline]
    pub fn get(&self, p: usize, k: usize) -> u64 {
        self.counts[p][k]
    }

    pub fn n_covariates(&self) -> usize {
        self.counts.len()
    }

    pub fn n_categories(&self, p: usize) -> usize {
        self.counts[p].len()
    }

    /// Counts flattened in `(p, k)` order.
    pub fn flat(&self) -> Vec<u64> {
        self.counts.iter().flatten().copied().collect()
    }

    /// Total units counted under covariate `p`; identical for every `p`.
    pub fn total(&self, p: usize) -> u64 {
        self.counts[p].iter().sum()
    }

    /// Sum over categories of `|self - other|`, the fine-balance objective
    /// between two unit sets of equal size.
    pub fn l1_distance(&self, other: &CategoryCounts) -> u64 {
        assert_eq!(self.counts.len(), other.counts.len());
        let mut total = 0u64;
        for (a, b) in self.counts.iter().zip(&other.counts) {
            assert_eq!(a.len(), b.len());
            for (&x, &y) in a.iter().zip(b) {
                total += x.abs_diff(y);
            }
        }
        total
    }
}

/// Counts categories over the units named by `indices`.
pub fn category_counts(dataset: &Dataset, indices: &[usize]) -> CategoryCounts {
    let mut c = CategoryCounts::zeros(&dataset.schema);
    for &i in indices {
        for (p, &k) in dataset.units[i].x.iter().enumerate() {
            c.counts[p][k as usize] += 1;
        }
    }
    c
}

/// Mean indicator vector (category proportions, flattened) of a unit set.
pub fn indicator_means(dataset: &Dataset, indices: &[usize]) -> Vec<f64> {
    let counts = category_counts(dataset, indices);
    let n = indices.len().max(1) as f64;
    counts.flat().iter().map(|&c| c as f64 / n).collect()
}

/// How a CSV file maps onto a [`Dataset`]: column roles, category orderings,
/// missing-value sentinels, and the declared exposure level order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub id_column: String,
    pub covariates: Vec<Covariate>,
    /// Exposure column and its level order; optional for template-only data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<ExposureConfig>,
    /// Outcome columns read as floats; empty cells become missing outcomes.
    #[serde(default)]
    pub outcomes: Vec<String>,
    /// Cell values treated as missing in covariate columns.
    #[serde(default = "default_missing_values")]
    pub missing_values: Vec<String>,
    /// When true, unseen covariate labels are appended to the category list
    /// instead of rejected.
    #[serde(default)]
    pub auto_extend: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExposureConfig {
    pub column: String,
    pub levels: Vec<String>,
}

fn default_missing_values() -> Vec<String> {
    vec![String::new(), "NA".to_string()]
}

impl SchemaConfig {
    pub fn from_json(reader: impl Read) -> Result<Self, DataError> {
        let cfg: SchemaConfig =
            serde_json::from_reader(reader).map_err(|e| DataError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::from_json(std::fs::File::open(path)?)
    }

    fn check(&self) -> Result<(), DataError> {
        if self.covariates.is_empty() {
            return Err(DataError::Config("no covariates declared".into()));
        }
        for cov in &self.covariates {
            if cov.categories.is_empty() {
                return Err(DataError::Config(format!(
                    "covariate {:?} has no categories",
                    cov.name
                )));
            }
            let mut seen = cov.categories.clone();
            seen.sort();
            seen.dedup();
            if seen.len() != cov.categories.len() {
                return Err(DataError::Config(format!(
                    "covariate {:?} has duplicate categories",
                    cov.name
                )));
            }
            if let Some(mc) = &cov.missing_category {
                if !cov.categories.contains(mc) {
                    return Err(DataError::Config(format!(
                        "covariate {:?}: missing category {:?} is not in its category list",
                        cov.name, mc
                    )));
                }
            }
        }
        if let Some(exp) = &self.exposure {
            if exp.levels.is_empty() {
                return Err(DataError::Config("exposure declared with no levels".into()));
            }
        }
        Ok(())
    }
}

/// Reads a dataset from RFC 4180 CSV under a schema config.
pub fn load_csv(path: impl AsRef<Path>, config: &SchemaConfig) -> Result<Dataset, DataError> {
    load_csv_reader(std::fs::File::open(path)?, config)
}

/// Reads a dataset from any CSV reader under a schema config.
pub fn load_csv_reader(reader: impl Read, config: &SchemaConfig) -> Result<Dataset, DataError> {
    config.check()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn { column: name.to_string() })
    };

    let id_col = col(&config.id_column)?;
    let cov_cols: Vec<usize> =
        config.covariates.iter().map(|c| col(&c.name)).collect::<Result<_, _>>()?;
    let exp_col = config.exposure.as_ref().map(|e| col(&e.column)).transpose()?;
    let out_cols: Vec<usize> =
        config.outcomes.iter().map(|n| col(n)).collect::<Result<_, _>>()?;

    let mut covariates = config.covariates.clone();
    let mut units = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let row = row_idx + 2; // 1-based, after the header line
        let record = record?;
        let field = |c: usize| -> Result<&str, DataError> {
            record.get(c).ok_or_else(|| DataError::MalformedRow {
                row,
                detail: format!("expected at least {} fields, found {}", c + 1, record.len()),
            })
        };

        let id = field(id_col)?.to_string();
        let mut x = Vec::with_capacity(covariates.len());
        for (p, &c) in cov_cols.iter().enumerate() {
            let raw = field(c)?;
            let cov = &mut covariates[p];
            let label = if config.missing_values.iter().any(|m| m == raw) {
                match &cov.missing_category {
                    Some(mc) => mc.clone(),
                    None => {
                        return Err(DataError::UnknownCategory {
                            row,
                            column: cov.name.clone(),
                            label: raw.to_string(),
                        })
                    }
                }
            } else {
                raw.to_string()
            };
            let k = match cov.category_index(&label) {
                Some(k) => k,
                None if config.auto_extend => {
                    cov.categories.push(label);
                    cov.categories.len() - 1
                }
                None => {
                    return Err(DataError::UnknownCategory {
                        row,
                        column: cov.name.clone(),
                        label,
                    })
                }
            };
            x.push(k as u16);
        }

        let exposure = match (exp_col, &config.exposure) {
            (Some(c), Some(exp)) => {
                let raw = field(c)?;
                if raw.is_empty() {
                    None
                } else if exp.levels.iter().any(|l| l == raw) {
                    Some(raw.to_string())
                } else {
                    return Err(DataError::UnknownLevel { row, label: raw.to_string() });
                }
            }
            _ => None,
        };

        let mut outcomes = Vec::with_capacity(out_cols.len());
        for (&c, name) in out_cols.iter().zip(&config.outcomes) {
            let raw = field(c)?;
            if raw.is_empty() || config.missing_values.iter().any(|m| m == raw) {
                outcomes.push(None);
            } else {
                let v: f64 = raw.parse().map_err(|_| DataError::MalformedRow {
                    row,
                    detail: format!("outcome {:?} is not numeric: {:?}", name, raw),
                })?;
                outcomes.push(Some(v));
            }
        }

        units.push(Unit { id, x, outcomes, exposure });
    }

    if units.is_empty() {
        return Err(DataError::EmptyInput);
    }

    let dataset = Dataset {
        schema: CovariateSchema { covariates },
        outcome_names: config.outcomes.clone(),
        exposure_levels: config.exposure.as_ref().map(|e| e.levels.clone()).unwrap_or_default(),
        units,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes a dataset back to CSV with one column per covariate (labels, not
/// indices), plus id, exposure, and outcome columns.
pub fn save_csv(dataset: &Dataset, writer: impl Write) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend(dataset.schema.covariates.iter().map(|c| c.name.clone()));
    if !dataset.exposure_levels.is_empty() {
        header.push("exposure".to_string());
    }
    header.extend(dataset.outcome_names.iter().cloned());
    wtr.write_record(&header)?;
    for u in &dataset.units {
        let mut rec = vec![u.id.clone()];
        for (p, &k) in u.x.iter().enumerate() {
            rec.push(dataset.schema.covariates[p].categories[k as usize].clone());
        }
        if !dataset.exposure_levels.is_empty() {
            rec.push(u.exposure.clone().unwrap_or_default());
        }
        for o in &u.outcomes {
            rec.push(o.map(|v| format!("{v}")).unwrap_or_default());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// The schema config that reads back a [`save_csv`] output.
pub fn round_trip_config(dataset: &Dataset) -> SchemaConfig {
    SchemaConfig {
        id_column: "id".to_string(),
        covariates: dataset.schema.covariates.clone(),
        exposure: if dataset.exposure_levels.is_empty() {
            None
        } else {
            Some(ExposureConfig {
                column: "exposure".to_string(),
                levels: dataset.exposure_levels.clone(),
            })
        },
        outcomes: dataset.outcome_names.clone(),
        missing_values: default_missing_values(),
        auto_extend: false,
    }
}

/// How to discretize a continuous variable.
#[derive(Debug, Clone, PartialEq)]
pub enum BinSpec {
    /// Strictly increasing interior cut points; value `v` falls in bin
    /// `#{c : v >= c}`, so each bin is the half-open interval `[c_j, c_{j+1})`.
    Thresholds(Vec<f64>),
    /// Empirical quantile bins; ties go to the lower bin.
    Quantiles(usize),
}

/// Assigns each value to a bin index under `spec`.
pub fn bin_continuous(values: &[f64], spec: &BinSpec) -> Result<Vec<usize>, DataError> {
    if values.is_empty() {
        return Err(DataError::EmptyInput);
    }
    let cuts = match spec {
        BinSpec::Thresholds(t) => {
            if t.windows(2).any(|w| w[0] >= w[1]) {
                return Err(DataError::NonIncreasingThresholds);
            }
            t.clone()
        }
        BinSpec::Quantiles(q) => quantile_cuts(values, *q)?,
    };
    Ok(values
        .iter()
        .map(|&v| match spec {
            // Threshold bins are half-open [c_j, c_{j+1}): a value equal to a
            // cut belongs to the upper bin.
            BinSpec::Thresholds(_) => cuts.iter().filter(|&&c| v >= c).count(),
            // Quantile ties go to the lower bin: a value equal to a cut stays
            // below it.
            BinSpec::Quantiles(_) => cuts.iter().filter(|&&c| v > c).count(),
        })
        .collect())
}

/// Interior cut points for `q` empirical quantile bins.
///
/// Cut `j` is the smallest order statistic at or above the `j/q` sample
/// fraction, which with `n` divisible by `q` puts exactly `n/q` distinct-value
/// observations in each bin.
pub fn quantile_cuts(values: &[f64], q: usize) -> Result<Vec<f64>, DataError> {
    if q < 2 {
        return Err(DataError::Config("quantile bin count must be at least 2".into()));
    }
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < q {
        return Err(DataError::TooManyQuantiles { requested: q, distinct: distinct.len() });
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut cuts = Vec::with_capacity(q - 1);
    for j in 1..q {
        let idx = (n * j).div_ceil(q) - 1;
        cuts.push(sorted[idx]);
    }
    cuts.dedup();
    Ok(cuts)
}
