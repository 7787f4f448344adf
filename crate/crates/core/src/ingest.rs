//! Loading and validating study data.
//!
//! A [`Dataset`] holds the running score, the outcome, the cutoff and any
//! pre-intervention covariates. Scores are stored both raw and centered at
//! the cutoff; every estimator downstream works with the centered score.
//! Rows at or above the cutoff form the treated side unless the load is
//! configured with [`TreatedSide::AtOrBelow`].

use std::collections::BTreeSet;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};

/// Cell values treated as missing rather than malformed.
const MISSING_TOKENS: &[&str] = &["", "na", "nan", ".", "null", "n/a"];

/// Which side of the cutoff receives treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreatedSide {
    #[default]
    AtOrAbove,
    AtOrBelow,
}

/// Maps analysis roles to column names in the input file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    pub score: String,
    pub outcome: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub group: Option<String>,
}

impl ColumnMap {
    pub fn new(score: impl Into<String>, outcome: impl Into<String>) -> Self {
        ColumnMap {
            score: score.into(),
            outcome: outcome.into(),
            covariates: Vec::new(),
            group: None,
        }
    }

    /// Parses a `role = "column"` TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| RdError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub delimiter: u8,
    pub treated: TreatedSide,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: b',',
            treated: TreatedSide::AtOrAbove,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

/// Categorical grouping column used for heterogeneity analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupColumn {
    pub name: String,
    /// Covariate the group was derived from, if it was discretized.
    pub source: Option<String>,
    pub labels: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    score: Vec<f64>,
    centered: Vec<f64>,
    outcome: Vec<f64>,
    outcome_name: String,
    cutoff: f64,
    treated: TreatedSide,
    covariates: Vec<Covariate>,
    group: Option<GroupColumn>,
    dropped: usize,
}

impl Dataset {
    /// Builds a dataset from in-memory columns. Every score and outcome must
    /// be finite; use [`load_table`] for inputs that need cleaning.
    pub fn new(score: Vec<f64>, outcome: Vec<f64>, cutoff: f64) -> Result<Self> {
        Self::with_side(score, outcome, cutoff, TreatedSide::AtOrAbove)
    }

    pub fn with_side(
        score: Vec<f64>,
        outcome: Vec<f64>,
        cutoff: f64,
        treated: TreatedSide,
    ) -> Result<Self> {
        if !cutoff.is_finite() {
            return Err(RdError::InvalidArgument(format!("cutoff {cutoff} is not finite")));
        }
        if score.len() != outcome.len() {
            return Err(RdError::InvalidArgument(format!(
                "score has {} rows but outcome has {}",
                score.len(),
                outcome.len()
            )));
        }
        if score.is_empty() {
            return Err(RdError::NoRows);
        }
        if let Some(i) = score
            .iter()
            .zip(&outcome)
            .position(|(s, y)| !s.is_finite() || !y.is_finite())
        {
            return Err(RdError::InvalidArgument(format!("row {i} has a non-finite score or outcome")));
        }
        let centered = score.iter().map(|&s| center(s, cutoff, treated)).collect();
        Ok(Dataset {
            score,
            centered,
            outcome,
            outcome_name: "outcome".to_string(),
            cutoff,
            treated,
            covariates: Vec::new(),
            group: None,
            dropped: 0,
        })
    }

    pub fn with_covariate(mut self, name: impl Into<String>, values: Vec<Option<f64>>) -> Result<Self> {
        let name = name.into();
        if values.len() != self.n() {
            return Err(RdError::InvalidArgument(format!(
                "covariate `{name}` has {} rows, dataset has {}",
                values.len(),
                self.n()
            )));
        }
        let values = values.into_iter().map(|v| v.filter(|z| z.is_finite())).collect();
        self.covariates.retain(|c| c.name != name);
        self.covariates.push(Covariate { name, values });
        Ok(self)
    }

    /// Convenience for fully observed covariates.
    pub fn with_covariate_values(self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        self.with_covariate(name, values.into_iter().map(Some).collect())
    }

    pub fn with_group(mut self, name: impl Into<String>, labels: Vec<Option<String>>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(RdError::InvalidArgument(format!(
                "group has {} rows, dataset has {}",
                labels.len(),
                self.n()
            )));
        }
        self.group = Some(GroupColumn {
            name: name.into(),
            source: None,
            labels,
        });
        Ok(self)
    }

    pub fn with_outcome_name(mut self, name: impl Into<String>) -> Self {
        self.outcome_name = name.into();
        self
    }

    pub fn n(&self) -> usize {
        self.score.len()
    }

    /// Raw running score.
    pub fn score(&self) -> &[f64] {
        &self.score
    }

    /// Score centered at the cutoff, oriented so the treated side is `x >= 0`.
    pub fn x(&self) -> &[f64] {
        &self.centered
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn treated_side(&self) -> TreatedSide {
        self.treated
    }

    /// Rows dropped during loading because score or outcome was missing.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn covariate_names(&self) -> Vec<&str> {
        self.covariates.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn covariate(&self, name: &str) -> Option<&[Option<f64>]> {
        self.covariates
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn require_covariate(&self, name: &str) -> Result<&[Option<f64>]> {
        self.covariate(name)
            .ok_or_else(|| RdError::UnknownColumn(name.to_string()))
    }

    pub fn group(&self) -> Option<&GroupColumn> {
        self.group.as_ref()
    }

    pub fn is_treated(&self, row: usize) -> bool {
        self.centered[row] >= 0.0
    }

    pub fn n_left(&self) -> usize {
        self.centered.iter().filter(|&&x| x < 0.0).count()
    }

    pub fn n_right(&self) -> usize {
        self.n() - self.n_left()
    }

    /// Sorted distinct group labels, ignoring missing labels.
    pub fn group_levels(&self) -> Vec<String> {
        match &self.group {
            None => Vec::new(),
            Some(g) => g
                .labels
                .iter()
                .flatten()
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        }
    }

    /// Restricts the dataset to the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            score: pick(&self.score),
            centered: pick(&self.centered),
            outcome: pick(&self.outcome),
            outcome_name: self.outcome_name.clone(),
            cutoff: self.cutoff,
            treated: self.treated,
            covariates: self
                .covariates
                .iter()
                .map(|c| Covariate {
                    name: c.name.clone(),
                    values: rows.iter().map(|&i| c.values[i]).collect(),
                })
                .collect(),
            group: self.group.as_ref().map(|g| GroupColumn {
                name: g.name.clone(),
                source: g.source.clone(),
                labels: rows.iter().map(|&i| g.labels[i].clone()).collect(),
            }),
            dropped: self.dropped,
        }
    }

    /// Rows where every named covariate is observed.
    pub fn complete_rows(&self, covariates: &[String]) -> Result<Vec<usize>> {
        let cols = covariates
            .iter()
            .map(|name| self.require_covariate(name))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..self.n())
            .filter(|&i| cols.iter().all(|c| c[i].is_some()))
            .collect())
    }

    /// The dataset restricted to rows where every named covariate is observed.
    pub fn complete_cases(&self, covariates: &[String]) -> Result<Dataset> {
        let rows = self.complete_rows(covariates)?;
        if rows.len() == self.n() {
            return Ok(self.clone());
        }
        if rows.is_empty() {
            return Err(RdError::NoRows);
        }
        Ok(self.subset(&rows))
    }

    /// Rows carrying the given group label.
    pub fn rows_in_group(&self, label: &str) -> Vec<usize> {
        match &self.group {
            None => Vec::new(),
            Some(g) => g
                .labels
                .iter()
                .enumerate()
                .filter(|(_, l)| l.as_deref() == Some(label))
                .map(|(i, _)| i)
                .collect(),
        }
    }

    /// Replaces the outcome by another column; rows where it is missing are
    /// dropped.
    pub fn with_outcome(&self, name: &str, values: &[Option<f64>]) -> Result<Dataset> {
        if values.len() != self.n() {
            return Err(RdError::InvalidArgument(format!(
                "replacement outcome `{name}` has {} rows, dataset has {}",
                values.len(),
                self.n()
            )));
        }
        let rows: Vec<usize> = (0..self.n()).filter(|&i| values[i].is_some()).collect();
        if rows.is_empty() {
            return Err(RdError::NoRows);
        }
        let mut out = self.subset(&rows);
        out.outcome = rows.iter().map(|&i| values[i].unwrap_or(f64::NAN)).collect();
        out.outcome_name = name.to_string();
        Ok(out)
    }

    /// Uses a covariate as the outcome, e.g. for falsification checks.
    pub fn outcome_from_covariate(&self, name: &str) -> Result<Dataset> {
        let values = self.require_covariate(name)?.to_vec();
        self.with_outcome(name, &values)
    }

    /// Uses the group column (coded as numbers) as the outcome.
    pub fn outcome_from_group(&self) -> Result<Dataset> {
        let g = self
            .group
            .as_ref()
            .ok_or_else(|| RdError::InvalidArgument("dataset has no group column".into()))?;
        let values: Vec<Option<f64>> = g
            .labels
            .iter()
            .map(|l| l.as_deref().and_then(|s| s.parse::<f64>().ok()))
            .collect();
        let name = g.name.clone();
        self.with_outcome(&name, &values)
    }

    /// Adds a binary group `1{Z >= threshold}` derived from a covariate.
    /// Rows where the covariate is missing get no group label.
    pub fn discretize_covariate(&self, column: &str, threshold: f64) -> Result<Dataset> {
        if !threshold.is_finite() {
            return Err(RdError::InvalidArgument(format!("threshold {threshold} is not finite")));
        }
        let values = self.require_covariate(column)?;
        let labels: Vec<Option<String>> = values
            .iter()
            .map(|v| v.map(|z| if z >= threshold { "1" } else { "0" }.to_string()))
            .collect();
        let mut out = self.clone();
        out.group = Some(GroupColumn {
            name: format!("{column}>={threshold}"),
            source: Some(column.to_string()),
            labels,
        });
        if out.group_levels().len() < 2 {
            log::warn!("group derived from `{column}` at {threshold} has a single level");
        }
        Ok(out)
    }
}

fn center(score: f64, cutoff: f64, treated: TreatedSide) -> f64 {
    match treated {
        TreatedSide::AtOrAbove => score - cutoff,
        TreatedSide::AtOrBelow => cutoff - score,
    }
}

enum Cell {
    Value(f64),
    Missing,
    Malformed,
}

fn parse_cell(raw: &str) -> Cell {
    let s = raw.trim();
    if MISSING_TOKENS.iter().any(|t| s.eq_ignore_ascii_case(t)) {
        return Cell::Missing;
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Cell::Value(v),
        Ok(_) => Cell::Missing,
        Err(_) => Cell::Malformed,
    }
}

/// Reads a delimited text file with a header row.
///
/// Rows whose score or outcome is missing (empty, `NA`, `NaN`, `.`,
/// non-finite) are dropped and counted in [`Dataset::dropped`]; missing
/// covariate cells are kept as `None`. Any other unparseable cell in a mapped
/// numeric column is an error naming the row (1-based, header excluded).
pub fn load_table(path: &Path, map: &ColumnMap, cutoff: f64, opts: &LoadOptions) -> Result<Dataset> {
    if !cutoff.is_finite() {
        return Err(RdError::InvalidArgument(format!("cutoff {cutoff} is not finite")));
    }
    let file = File::open(path).map_err(|source| RdError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_table(file, map, cutoff, opts)
}

/// Same as [`load_table`] but reads from any byte stream.
pub fn read_table<R: std::io::Read>(
    reader: R,
    map: &ColumnMap,
    cutoff: f64,
    opts: &LoadOptions,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| RdError::MissingColumn(name.to_string()))
    };
    let score_col = find(&map.score)?;
    let outcome_col = find(&map.outcome)?;
    let cov_cols = map
        .covariates
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    let group_col = map.group.as_deref().map(find).transpose()?;

    let mut score = Vec::new();
    let mut outcome = Vec::new();
    let mut covs: Vec<Vec<Option<f64>>> = vec![Vec::new(); cov_cols.len()];
    let mut groups = Vec::new();
    let mut dropped = 0usize;

    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let row = idx + 1;
        let numeric = |col: usize, name: &str| -> Result<Option<f64>> {
            let raw = record.get(col).unwrap_or("");
            match parse_cell(raw) {
                Cell::Value(v) => Ok(Some(v)),
                Cell::Missing => Ok(None),
                Cell::Malformed => Err(RdError::NonNumeric {
                    column: name.to_string(),
                    row,
                    value: raw.to_string(),
                }),
            }
        };
        let s = numeric(score_col, &map.score)?;
        let y = numeric(outcome_col, &map.outcome)?;
        let zs = cov_cols
            .iter()
            .zip(&map.covariates)
            .map(|(&c, name)| numeric(c, name))
            .collect::<Result<Vec<_>>>()?;
        let (Some(s), Some(y)) = (s, y) else {
            dropped += 1;
            continue;
        };
        score.push(s);
        outcome.push(y);
        for (col, z) in covs.iter_mut().zip(zs) {
            col.push(z);
        }
        if let Some(g) = group_col {
            let raw = record.get(g).unwrap_or("").trim();
            groups.push(if matches!(parse_cell(raw), Cell::Missing) {
                None
            } else {
                Some(raw.to_string())
            });
        }
    }
    if score.is_empty() {
        return Err(RdError::NoRows);
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing score or outcome");
    }

    let mut ds = Dataset::with_side(score, outcome, cutoff, opts.treated)?.with_outcome_name(&map.outcome);
    for (name, values) in map.covariates.iter().zip(covs) {
        ds = ds.with_covariate(name.clone(), values)?;
    }
    if let Some(name) = &map.group {
        ds = ds.with_group(name.clone(), groups)?;
    }
    ds.dropped = dropped;
    Ok(ds)
}
