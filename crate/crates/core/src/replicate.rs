//! End-to-end Head Start replication checked against a ledger of expected
//! values shipped in `data/headstart_expected.toml`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandwidth::coverage_shrinkage_report;
use crate::error::{RdError, Result};
use crate::heterogeneity::{estimate_hte_with_covariates, BandwidthMode, HteOptions, HteResult};
use crate::inference::{estimate_with_selection, falsification_on_group, InferenceConfig, RdEstimate};
use crate::ingest::{load_table, ColumnMap, Dataset, LoadOptions, TreatedSide};
use crate::local_fit::FitSpec;
use crate::rdplot::{build_rdplot, BinnedSeries, PlotOptions};

pub const EXPECTED_TOML: &str = include_str!("../data/headstart_expected.toml");
pub const SCHEMA_VERSION: &str = "rdcov.replicate/1";
/// Environment variable naming a directory that holds the replication data.
pub const DATA_DIR_ENV: &str = "RDCOV_DATA_DIR";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub file: String,
    pub cutoff: f64,
    pub treated: String,
    pub group_source: String,
    pub group_threshold: f64,
    pub small_label: String,
    pub large_label: String,
    pub columns: ColumnMap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedCell {
    pub id: String,
    pub expected: f64,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub rel_tol: Option<f64>,
    pub source: String,
    #[serde(default)]
    pub note: Option<String>,
}

impl ExpectedCell {
    pub fn allowed_error(&self) -> f64 {
        match (self.tol, self.rel_tol) {
            (Some(t), _) => t,
            (None, Some(r)) => r * self.expected.abs(),
            (None, None) => 0.0,
        }
    }

    pub fn accepts(&self, actual: f64) -> bool {
        // Tolerances are printed to a few decimals; allow for their rounding.
        let slack = 1e-9 * (1.0 + self.expected.abs());
        (actual - self.expected).abs() <= self.allowed_error() + slack
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ledger {
    pub data: DataSection,
    pub specs: BTreeMap<String, Vec<String>>,
    pub bandwidths: BTreeMap<String, f64>,
    #[serde(rename = "cell")]
    pub cells: Vec<ExpectedCell>,
}

impl Ledger {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let ledger: Ledger = toml::from_str(text).map_err(|e| RdError::Config(e.to_string()))?;
        for name in ["canonical", "efficiency", "all"] {
            if !ledger.specs.contains_key(name) {
                return Err(RdError::Config(format!("ledger lacks the `{name}` specification")));
            }
        }
        Ok(ledger)
    }

    pub fn builtin() -> Self {
        Self::from_toml_str(EXPECTED_TOML).expect("bundled ledger parses")
    }

    fn spec(&self, name: &str) -> FitSpec {
        FitSpec::default().with_covariates(self.specs[name].clone())
    }

    fn bandwidth(&self, key: &str) -> Result<f64> {
        self.bandwidths
            .get(key)
            .copied()
            .ok_or_else(|| RdError::Config(format!("ledger lacks bandwidth `{key}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCheck {
    pub id: String,
    pub expected: f64,
    pub actual: Option<f64>,
    pub allowed: f64,
    pub pass: bool,
    pub source: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub schema_version: String,
    pub data_file: String,
    pub values: BTreeMap<String, f64>,
    pub checks: Vec<CellCheck>,
    pub passed: usize,
    pub failed: usize,
    pub warnings: Vec<String>,
}

impl ReplicationReport {
    pub fn all_pass(&self) -> bool {
        self.failed == 0
    }

    /// Checks whose id starts with `prefix`.
    pub fn checks_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a CellCheck> + 'a {
        self.checks.iter().filter(move |c| c.id.starts_with(prefix))
    }
}

/// Compares computed values with the ledger. Cells without a computed value
/// fail.
pub fn check_ledger(ledger: &Ledger, values: &BTreeMap<String, f64>) -> Vec<CellCheck> {
    ledger
        .cells
        .iter()
        .map(|cell| {
            let actual = values.get(&cell.id).copied();
            CellCheck {
                id: cell.id.clone(),
                expected: cell.expected,
                actual,
                allowed: cell.allowed_error(),
                pass: actual.is_some_and(|a| cell.accepts(a)),
                source: cell.source.clone(),
            }
        })
        .collect()
}

/// Looks for the data file under `$RDCOV_DATA_DIR`, then under `data/` in
/// the current directory and its ancestors.
pub fn locate_data(file: &str) -> Option<PathBuf> {
    if let Ok(dir) = std::env::var(DATA_DIR_ENV) {
        let p = Path::new(&dir).join(file);
        if p.is_file() {
            return Some(p);
        }
    }
    let mut dir = std::env::current_dir().ok()?;
    loop {
        let p = dir.join("data").join(file);
        if p.is_file() {
            return Some(p);
        }
        if !dir.pop() {
            return None;
        }
    }
}

/// Loads the replication data with the ledger's column mapping and attaches
/// the large-county indicator as the group column.
pub fn load_replication_data(ledger: &Ledger, path: &Path) -> Result<Dataset> {
    let treated = match ledger.data.treated.as_str() {
        "at-or-above" => TreatedSide::AtOrAbove,
        "at-or-below" => TreatedSide::AtOrBelow,
        other => return Err(RdError::Config(format!("unknown treated side `{other}`"))),
    };
    let opts = LoadOptions {
        treated,
        ..LoadOptions::default()
    };
    let d = load_table(path, &ledger.data.columns, ledger.data.cutoff, &opts)?;
    d.discretize_covariate(&ledger.data.group_source, ledger.data.group_threshold)
}

fn record(values: &mut BTreeMap<String, f64>, prefix: &str, e: &RdEstimate) {
    let mut put = |k: &str, v: f64| {
        values.insert(format!("{prefix}.{k}"), v);
    };
    put("tau", e.tau);
    put("tau_bc", e.tau_bc);
    put("ci_lower", e.ci.lower);
    put("ci_upper", e.ci.upper);
    put("p_value", e.p_value);
    put("h", e.h);
    put("n_left", e.n_left as f64);
    put("n_right", e.n_right as f64);
    if let Some(p) = e.pct_effect {
        put("pct_effect", p);
    }
}

fn group_key<'a>(ledger: &'a Ledger, level: &str) -> &'a str {
    if level == ledger.data.small_label {
        "small"
    } else if level == ledger.data.large_label {
        "large"
    } else {
        "other"
    }
}

fn record_hte(values: &mut BTreeMap<String, f64>, ledger: &Ledger, prefix: &str, res: &HteResult) {
    for (level, e) in &res.per_group {
        record(values, &format!("{prefix}.{}", group_key(ledger, level)), e);
    }
    values.insert(format!("{prefix}.equality_p"), res.equality.p_value);
}

fn hte_changes(values: &mut BTreeMap<String, f64>, ledger: &Ledger, prefix: &str, canon: &HteResult, adj: &HteResult) {
    for (level, a) in &adj.per_group {
        if let Some(c) = canon.per_group.get(level) {
            values.insert(
                format!("{prefix}.{}.ci_change", group_key(ledger, level)),
                coverage_shrinkage_report(c, a),
            );
        }
    }
}

/// Plot data for the four published figures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FigureSet {
    pub figure1_global: BinnedSeries,
    pub figure1_local: BinnedSeries,
    pub figure2_global: Vec<BinnedSeries>,
    pub figure2_local: Vec<BinnedSeries>,
}

/// Runs every table, the falsification check and the figures; returns the
/// computed values keyed as in the ledger.
pub fn compute_values(
    ledger: &Ledger,
    d: &Dataset,
) -> Result<(BTreeMap<String, f64>, FigureSet, Vec<String>)> {
    let cfg = InferenceConfig::default();
    let mut values = BTreeMap::new();
    let mut warnings = Vec::new();
    let group = d.group().map(|g| g.name.clone()).ok_or_else(|| RdError::Config("no group column".into()))?;

    // Table 1, fixed and automatic bandwidths.
    let mut fixed = BTreeMap::new();
    for name in ["canonical", "efficiency", "all"] {
        let spec = ledger.spec(name).with_h(ledger.bandwidth(&format!("table1.{name}"))?);
        let (e, _) = estimate_with_selection(d, &spec, &cfg)?;
        record(&mut values, &format!("table1.fixed.{name}"), &e);
        warnings.extend(e.warnings.iter().map(|w| format!("table1.{name}: {w}")));
        fixed.insert(name, e);

        let (auto, report) = estimate_with_selection(d, &ledger.spec(name), &cfg)?;
        let report = report.expect("automatic bandwidth");
        values.insert(format!("table1.auto.{name}.h"), auto.h);
        values.insert(
            format!("table1.auto.{name}.regularized"),
            f64::from(u8::from(report.regularization_active)),
        );
    }
    for name in ["efficiency", "all"] {
        values.insert(
            format!("table1.fixed.{name}.ci_change"),
            coverage_shrinkage_report(&fixed["canonical"], &fixed[name]),
        );
    }

    // Table 2.
    let small = ledger.data.small_label.clone();
    let large = ledger.data.large_label.clone();
    let per_group = |spec: &str| -> Result<HteOptions> {
        let mut o = HteOptions::default();
        o.group_bandwidths.insert(small.clone(), ledger.bandwidth(&format!("table2.A.{spec}.small"))?);
        o.group_bandwidths.insert(large.clone(), ledger.bandwidth(&format!("table2.A.{spec}.large"))?);
        Ok(o)
    };
    let mut fixed_hte = BTreeMap::new();
    for spec_name in ["canonical", "efficiency"] {
        let spec = ledger.spec(spec_name);
        let a = estimate_hte_with_covariates(
            d,
            &group,
            &spec.covariates,
            &spec,
            &cfg,
            BandwidthMode::Separate,
            &per_group(spec_name)?,
        )?;
        record_hte(&mut values, ledger, &format!("table2.A.fixed.{spec_name}"), &a);

        let b_spec = spec.clone().with_h(ledger.bandwidth(&format!("table2.B.{spec_name}"))?);
        let b = estimate_hte_with_covariates(
            d,
            &group,
            &spec.covariates,
            &b_spec,
            &cfg,
            BandwidthMode::Common,
            &HteOptions::default(),
        )?;
        record_hte(&mut values, ledger, &format!("table2.B.fixed.{spec_name}"), &b);

        let auto = estimate_hte_with_covariates(
            d,
            &group,
            &spec.covariates,
            &spec,
            &cfg,
            BandwidthMode::Separate,
            &HteOptions::default(),
        )?;
        for (level, e) in &auto.per_group {
            values.insert(format!("table2.A.auto.{spec_name}.{}.h", group_key(ledger, level)), e.h);
        }
        fixed_hte.insert(spec_name, (a, b, auto));
    }
    let (ca, cb, c_auto) = &fixed_hte["canonical"];
    let (ea, eb, _) = &fixed_hte["efficiency"];
    hte_changes(&mut values, ledger, "table2.A.fixed.efficiency", ca, ea);
    hte_changes(&mut values, ledger, "table2.B.fixed.efficiency", cb, eb);

    // Falsification: large-county indicator as the outcome.
    let (f, _) = falsification_on_group(d, &ledger.spec("canonical"), &cfg)?;
    values.insert("falsification.tau".into(), f.tau);
    values.insert("falsification.p_value".into(), f.p_value);
    values.insert("falsification.h".into(), f.h);

    // Figures.
    let global = PlotOptions::default();
    let fig1a = build_rdplot(d, &global)?;
    let h_canon = estimate_with_selection(d, &ledger.spec("canonical"), &cfg)?.0.h;
    let fig1b = build_rdplot(
        d,
        &PlotOptions {
            window: Some(h_canon),
            ..PlotOptions::default()
        },
    )?;
    values.insert("figure1.global.n_left".into(), fig1a.control.n as f64);
    values.insert("figure1.global.n_right".into(), fig1a.treated.n as f64);
    values.insert("figure1.local.n_left".into(), fig1b.control.n as f64);
    values.insert("figure1.local.n_right".into(), fig1b.treated.n as f64);
    let mut fig2a = Vec::new();
    let mut fig2b = Vec::new();
    for level in [&small, &large] {
        let key = group_key(ledger, level);
        let g = build_rdplot(
            d,
            &PlotOptions {
                subset: Some(level.clone()),
                ..PlotOptions::default()
            },
        )?;
        values.insert(format!("figure2.global.{key}.n_left"), g.control.n as f64);
        values.insert(format!("figure2.global.{key}.n_right"), g.treated.n as f64);
        fig2a.push(g);
        let h = c_auto.per_group.get(level.as_str()).map(|e| e.h).unwrap_or(h_canon);
        let l = build_rdplot(
            d,
            &PlotOptions {
                subset: Some(level.clone()),
                window: Some(h),
                ..PlotOptions::default()
            },
        )?;
        values.insert(format!("figure2.local.{key}.n_left"), l.control.n as f64);
        values.insert(format!("figure2.local.{key}.n_right"), l.treated.n as f64);
        fig2b.push(l);
    }

    Ok((
        values,
        FigureSet {
            figure1_global: fig1a,
            figure1_local: fig1b,
            figure2_global: fig2a,
            figure2_local: fig2b,
        },
        warnings,
    ))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| RdError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json_array(series: &[BinnedSeries]) -> String {
    serde_json::to_string_pretty(series).expect("plot data serializes")
}

/// Writes each figure as JSON and each series as long-format CSV.
pub fn write_figures(figs: &FigureSet, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| RdError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let mut emit = |name: &str, json: String, series: Vec<(&str, &BinnedSeries)>| -> Result<()> {
        let p = dir.join(format!("{name}.json"));
        write_file(&p, json.as_bytes())?;
        written.push(p);
        for (suffix, s) in series {
            let p = dir.join(format!("{name}{suffix}.csv"));
            let mut buf = Vec::new();
            s.write_csv(&mut buf)?;
            write_file(&p, &buf)?;
            written.push(p);
        }
        Ok(())
    };
    emit("figure1_global", figs.figure1_global.to_json(), vec![("", &figs.figure1_global)])?;
    emit("figure1_local", figs.figure1_local.to_json(), vec![("", &figs.figure1_local)])?;
    emit(
        "figure2_global",
        to_json_array(&figs.figure2_global),
        vec![("_small", &figs.figure2_global[0]), ("_large", &figs.figure2_global[1])],
    )?;
    emit(
        "figure2_local",
        to_json_array(&figs.figure2_local),
        vec![("_small", &figs.figure2_local[0]), ("_large", &figs.figure2_local[1])],
    )?;
    Ok(written)
}

/// Full replication: load, compute, check, and optionally write figure
/// files to `figure_dir`.
pub fn run_replication(ledger: &Ledger, data: &Path, figure_dir: Option<&Path>) -> Result<ReplicationReport> {
    let d = load_replication_data(ledger, data)?;
    let (values, figs, warnings) = compute_values(ledger, &d)?;
    if let Some(dir) = figure_dir {
        write_figures(&figs, dir)?;
    }
    let checks = check_ledger(ledger, &values);
    let passed = checks.iter().filter(|c| c.pass).count();
    Ok(ReplicationReport {
        schema_version: SCHEMA_VERSION.to_string(),
        data_file: data.display().to_string(),
        failed: checks.len() - passed,
        passed,
        values,
        checks,
        warnings,
    })
}
