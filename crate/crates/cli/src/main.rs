mod report;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rdcov::bandwidth::{coverage_shrinkage_report, BandwidthReport};
use rdcov::heterogeneity::{estimate_hte_with_covariates, BandwidthMode, HteOptions, COMMON_BANDWIDTH_CAVEAT};
use rdcov::inference::{estimate_with_selection, falsification_estimate, falsification_on_group};
use rdcov::replicate::{locate_data, run_replication, Ledger, ReplicationReport};
use rdcov::simulate::SimulationReport;
use rdcov::{
    build_rdplot, load_table, run_simulation, BinChoice, ColumnMap, Dataset, ErrorClass, FitSpec, InferenceConfig,
    Kernel, LoadOptions, PlotOptions, RdError, RdEstimate, SimulationConfig, TreatedSide, Vce,
};

use report::{estimate_table, sig6, EstimateColumn, Table};

const ESTIMATE_SCHEMA: &str = "rdcov.estimate/1";
const HTE_SCHEMA: &str = "rdcov.hte/1";
const FALSIFY_SCHEMA: &str = "rdcov.falsify/1";

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_LEDGER: u8 = 4;

/// Sharp regression-discontinuity estimation with covariate adjustment,
/// heterogeneity analysis and robust bias-corrected inference.
#[derive(Debug, Parser)]
#[command(name = "rdcov", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the RD effect; with covariates, also report the canonical
    /// column for comparison.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Estimate effects per group level and test their equality.
    Hte {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        /// Share one bandwidth, selected on the full sample, across groups.
        #[arg(long)]
        common_bandwidth: bool,
        /// Fixed bandwidth for one group level, as LEVEL=H. Repeatable.
        #[arg(long = "group-h", value_parser = parse_level_h)]
        group_h: Vec<(String, f64)>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Build binned-scatter plot data with polynomial overlays.
    Plot {
        #[command(flatten)]
        data: DataArgs,
        /// Bins on the control side; requires --bins-treated.
        #[arg(long, requires = "bins_treated")]
        bins_control: Option<usize>,
        /// Bins on the treated side; requires --bins-control.
        #[arg(long, requires = "bins_control")]
        bins_treated: Option<usize>,
        /// Restrict to |score - cutoff| <= WINDOW.
        #[arg(long)]
        window: Option<f64>,
        /// Degree of the per-side overlay polynomial.
        #[arg(long, default_value_t = 1)]
        overlay_degree: usize,
        /// Only rows in this level of the group column.
        #[arg(long)]
        subset: Option<String>,
        /// Write rdplot.json and rdplot.csv into this directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Estimate the "effect" on a pre-determined variable, which should be
    /// null in a valid design.
    Falsify {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        /// Column to use as the placebo outcome; defaults to the group
        /// indicator.
        #[arg(long)]
        placebo: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Reproduce the Head Start tables and figures and check them against
    /// the expected-value ledger.
    Replicate {
        /// Directory holding the replication data file.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Ledger TOML to use instead of the bundled one.
        #[arg(long)]
        ledger: Option<PathBuf>,
        /// Directory for figure plot data and the checked ledger.
        #[arg(long, default_value = "replication")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Run the Monte Carlo studies.
    Simulate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Replications for every study; defaults to each study's own count.
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Delimited input file with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Field delimiter: a single character, or `tab`.
    #[arg(long, default_value = ",", value_parser = parse_delimiter)]
    delimiter: u8,
    /// TOML column map (`score`, `outcome`, `covariates`, `group`); flags
    /// override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    score: Option<String>,
    #[arg(long)]
    outcome: Option<String>,
    /// Comma-separated covariates for efficiency.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Group column; with --group-threshold, a numeric column split at the
    /// threshold.
    #[arg(long)]
    group: Option<String>,
    #[arg(long, requires = "group")]
    group_threshold: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    cutoff: f64,
    /// Treat rows with score at or below the cutoff.
    #[arg(long)]
    treat_below: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long, default_value_t = Kernel::Triangular)]
    kernel: Kernel,
    /// Polynomial degree of the point estimator.
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// Main bandwidth; selected from the data when omitted.
    #[arg(long)]
    h: Option<f64>,
    /// Bias bandwidth; defaults to h.
    #[arg(long)]
    b: Option<f64>,
    #[arg(long, default_value_t = Vce::HC3)]
    vce: Vce,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

fn parse_delimiter(s: &str) -> Result<u8, String> {
    match s {
        "tab" | "\\t" | "\t" => Ok(b'\t'),
        _ if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        _ => Err(format!("delimiter must be one ASCII character, got `{s}`")),
    }
}

fn parse_level_h(s: &str) -> Result<(String, f64), String> {
    let (level, h) = s.split_once('=').ok_or_else(|| format!("expected LEVEL=H, got `{s}`"))?;
    let h: f64 = h.parse().map_err(|e| format!("bad bandwidth in `{s}`: {e}"))?;
    Ok((level.to_string(), h))
}

enum Failure {
    Rd(RdError),
    Ledger { failed: usize, total: usize },
}

impl From<RdError> for Failure {
    fn from(e: RdError) -> Self {
        Failure::Rd(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

/// Loaded data plus the covariates the user asked to adjust for.
struct Loaded {
    data: Dataset,
    covariates: Vec<String>,
}

impl DataArgs {
    fn load(&self, extra: &[&str]) -> rdcov::Result<Loaded> {
        let mut map = match &self.config {
            Some(path) => ColumnMap::from_toml_str(&read_text(path)?)?,
            None => ColumnMap::default(),
        };
        if let Some(s) = &self.score {
            map.score = s.clone();
        }
        if let Some(o) = &self.outcome {
            map.outcome = o.clone();
        }
        if !self.covariates.is_empty() {
            map.covariates = self.covariates.clone();
        }
        if let Some(g) = &self.group {
            map.group = Some(g.clone());
        }
        if map.score.is_empty() || map.outcome.is_empty() {
            return Err(RdError::InvalidArgument(
                "score and outcome columns are required (--score/--outcome or --config)".into(),
            ));
        }
        let covariates = map.covariates.clone();
        let threshold_source = self.group_threshold.and(map.group.clone());
        if threshold_source.is_some() {
            map.group = None;
        }
        for name in extra.iter().copied().chain(threshold_source.as_deref()) {
            if !map.covariates.iter().any(|c| c == name) {
                map.covariates.push(name.to_string());
            }
        }
        let opts = LoadOptions {
            delimiter: self.delimiter,
            treated: if self.treat_below {
                TreatedSide::AtOrBelow
            } else {
                TreatedSide::AtOrAbove
            },
        };
        let mut data = load_table(&self.input, &map, self.cutoff, &opts)?;
        if let (Some(source), Some(t)) = (threshold_source, self.group_threshold) {
            data = data.discretize_covariate(&source, t)?;
        }
        if data.dropped() > 0 {
            log::warn!("dropped {} row(s) with a missing score or outcome", data.dropped());
        }
        Ok(Loaded { data, covariates })
    }
}

impl FitArgs {
    fn spec(&self, covariates: &[String]) -> FitSpec {
        FitSpec {
            p: self.p,
            kernel: self.kernel,
            h: self.h,
            b: self.b,
            vce: self.vce,
            covariates: covariates.to_vec(),
        }
    }

    fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            level: self.level,
            ..InferenceConfig::default()
        }
    }
}

fn read_text(path: &Path) -> rdcov::Result<String> {
    fs::read_to_string(path).map_err(|source| RdError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> rdcov::Result<()> {
    fs::write(path, bytes).map_err(|source| RdError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(dir: &Path) -> rdcov::Result<()> {
    fs::create_dir_all(dir).map_err(|source| RdError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

#[derive(Serialize)]
struct EstimateColumnOut {
    name: String,
    estimate: RdEstimate,
    bandwidth: Option<BandwidthReport>,
    ci_change: Option<f64>,
}

#[derive(Serialize)]
struct EstimateOutput {
    schema_version: &'static str,
    outcome: String,
    cutoff: f64,
    treated: TreatedSide,
    kernel: Kernel,
    n: usize,
    dropped_rows: usize,
    columns: Vec<EstimateColumnOut>,
}

fn print_estimates(out: &EstimateOutput, title: &str, format: Format) {
    match format {
        Format::Json => print_json(out),
        Format::Text => {
            println!(
                "{title}: outcome `{}`, cutoff {}, {} kernel, p = {}, {} rows",
                out.outcome,
                sig6(out.cutoff),
                out.kernel,
                out.columns.first().map_or(1, |c| c.estimate.p),
                out.n
            );
            let names: Vec<String> = out.columns.iter().map(|c| c.name.clone()).collect();
            let cols: Vec<EstimateColumn<'_>> = out
                .columns
                .iter()
                .map(|c| EstimateColumn {
                    estimate: &c.estimate,
                    ci_change: c.ci_change,
                })
                .collect();
            print!("{}", estimate_table(&names, &cols).render());
            for c in &out.columns {
                for w in &c.estimate.warnings {
                    println!("warning ({}): {w}", c.name);
                }
                if c.bandwidth.as_ref().is_some_and(|b| b.regularization_active) {
                    println!("note ({}): bandwidth regularization dominates the estimated bias", c.name);
                }
            }
        }
    }
}

fn estimate_output(d: &Dataset, kernel: Kernel, columns: Vec<EstimateColumnOut>) -> EstimateOutput {
    EstimateOutput {
        schema_version: ESTIMATE_SCHEMA,
        outcome: d.outcome_name().to_string(),
        cutoff: d.cutoff(),
        treated: d.treated_side(),
        kernel,
        n: d.n(),
        dropped_rows: d.dropped(),
        columns,
    }
}

fn cmd_estimate(data: &DataArgs, fit: &FitArgs, format: Format) -> CliResult {
    let loaded = data.load(&[])?;
    let d = &loaded.data;
    let cfg = fit.inference();
    let canonical_spec = fit.spec(&[]);
    let (canonical, canonical_bw) = estimate_with_selection(d, &canonical_spec, &cfg)?;
    let mut columns = Vec::new();
    if !loaded.covariates.is_empty() {
        let (adjusted, bw) = estimate_with_selection(d, &fit.spec(&loaded.covariates), &cfg)?;
        let change = coverage_shrinkage_report(&canonical, &adjusted);
        columns.push(EstimateColumnOut {
            name: "canonical".into(),
            estimate: canonical,
            bandwidth: canonical_bw,
            ci_change: None,
        });
        columns.push(EstimateColumnOut {
            name: "covariates".into(),
            estimate: adjusted,
            bandwidth: bw,
            ci_change: Some(change),
        });
    } else {
        columns.push(EstimateColumnOut {
            name: "canonical".into(),
            estimate: canonical,
            bandwidth: canonical_bw,
            ci_change: None,
        });
    }
    let out = estimate_output(d, fit.kernel, columns);
    print_estimates(&out, "RD estimate", format);
    Ok(())
}

#[derive(Serialize)]
struct HteOutput {
    schema_version: &'static str,
    outcome: String,
    cutoff: f64,
    n: usize,
    dropped_rows: usize,
    result: rdcov::HteResult,
}

fn cmd_hte(
    data: &DataArgs,
    fit: &FitArgs,
    common: bool,
    group_h: &[(String, f64)],
    format: Format,
) -> CliResult {
    let loaded = data.load(&[])?;
    let d = &loaded.data;
    let group = d
        .group()
        .map(|g| g.name.clone())
        .ok_or_else(|| RdError::InvalidArgument("hte needs a group column (--group)".into()))?;
    let mode = if common {
        BandwidthMode::Common
    } else {
        BandwidthMode::Separate
    };
    if common && !group_h.is_empty() {
        return Err(RdError::InvalidArgument("--group-h applies to separate bandwidths only".into()).into());
    }
    let opts = HteOptions {
        group_bandwidths: group_h.iter().cloned().collect::<BTreeMap<_, _>>(),
    };
    let spec = fit.spec(&loaded.covariates);
    let result = estimate_hte_with_covariates(d, &group, &loaded.covariates, &spec, &fit.inference(), mode, &opts)?;
    let out = HteOutput {
        schema_version: HTE_SCHEMA,
        outcome: d.outcome_name().to_string(),
        cutoff: d.cutoff(),
        n: d.n(),
        dropped_rows: d.dropped(),
        result,
    };
    let r = &out.result;
    match format {
        Format::Json => {
            print_json(&out);
            if mode == BandwidthMode::Common {
                eprintln!("note: {COMMON_BANDWIDTH_CAVEAT}");
            }
        }
        Format::Text => {
            println!(
                "Heterogeneous RD: outcome `{}` by `{}`, {} bandwidths, {} rows",
                out.outcome,
                r.group,
                match r.bandwidth_mode {
                    BandwidthMode::Separate => "separate",
                    BandwidthMode::Common => "common",
                },
                out.n
            );
            let names: Vec<String> = r.levels.iter().map(|l| format!("{} = {l}", r.group)).collect();
            let cols: Vec<EstimateColumn<'_>> = r
                .levels
                .iter()
                .map(|l| EstimateColumn {
                    estimate: &r.per_group[l],
                    ci_change: None,
                })
                .collect();
            print!("{}", estimate_table(&names, &cols).render());
            println!(
                "equality of effects: chi2 = {} on {} df, p-value = {}",
                sig6(r.equality.statistic),
                r.equality.df,
                sig6(r.equality.p_value)
            );
            for note in &r.notes {
                println!("note: {note}");
            }
        }
    }
    Ok(())
}

fn cmd_plot(
    data: &DataArgs,
    bins: Option<(usize, usize)>,
    window: Option<f64>,
    overlay_degree: usize,
    subset: Option<String>,
    out_dir: Option<&Path>,
    format: Format,
) -> CliResult {
    let loaded = data.load(&[])?;
    let opts = PlotOptions {
        bins: bins.map_or(BinChoice::Auto, |(control, treated)| BinChoice::Fixed { control, treated }),
        overlay_degree,
        window,
        subset,
    };
    let series = build_rdplot(&loaded.data, &opts)?;
    let json = series.to_json();
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        write_bytes(&dir.join("rdplot.json"), json.as_bytes())?;
        let mut csv = Vec::new();
        series.write_csv(&mut csv)?;
        write_bytes(&dir.join("rdplot.csv"), &csv)?;
    }
    let counts = format!(
        "bins used: control {} ({} rows), treated {} ({} rows)",
        series.control.counts.len(),
        series.control.n,
        series.treated.counts.len(),
        series.treated.n
    );
    match format {
        Format::Json => {
            println!("{json}");
            eprintln!("{counts}");
        }
        Format::Text => {
            println!("RD plot: outcome `{}`, cutoff {}", series.outcome, sig6(series.cutoff));
            println!("{counts}");
            let mut t = Table::new(["lower", "upper", "count", "mean"]);
            for (side, bins) in [("control", &series.control), ("treated", &series.treated)] {
                for (k, count) in bins.counts.iter().enumerate() {
                    t.row(
                        &format!("{side} {}", k + 1),
                        vec![
                            sig6(bins.edges[k]),
                            sig6(bins.edges[k + 1]),
                            count.to_string(),
                            bins.means[k].map_or_else(|| "-".to_string(), sig6),
                        ],
                    );
                }
            }
            print!("{}", t.render());
            if let Some(dir) = out_dir {
                println!("wrote {} and {}", dir.join("rdplot.json").display(), dir.join("rdplot.csv").display());
            }
        }
    }
    Ok(())
}

fn cmd_falsify(data: &DataArgs, fit: &FitArgs, placebo: Option<&str>, format: Format) -> CliResult {
    let extra: Vec<&str> = placebo.into_iter().collect();
    let loaded = data.load(&extra)?;
    let d = &loaded.data;
    let spec = fit.spec(&loaded.covariates);
    let cfg = fit.inference();
    let (estimate, bandwidth, name) = match placebo {
        Some(col) => {
            let (e, bw) = falsification_estimate(d, col, &spec, &cfg)?;
            (e, bw, col.to_string())
        }
        None => {
            let g = d
                .group()
                .map(|g| g.name.clone())
                .ok_or_else(|| RdError::InvalidArgument("falsify needs --placebo or a group column".into()))?;
            let (e, bw) = falsification_on_group(d, &spec, &cfg)?;
            (e, bw, g)
        }
    };
    let mut out = estimate_output(
        d,
        fit.kernel,
        vec![EstimateColumnOut {
            name: name.clone(),
            estimate,
            bandwidth,
            ci_change: None,
        }],
    );
    out.schema_version = FALSIFY_SCHEMA;
    out.outcome = name;
    print_estimates(&out, "Falsification", format);
    Ok(())
}

fn cmd_replicate(data_dir: Option<&Path>, ledger: Option<&Path>, out_dir: &Path, format: Format) -> CliResult {
    let ledger = match ledger {
        Some(p) => Ledger::from_toml_str(&read_text(p)?)?,
        None => Ledger::builtin(),
    };
    let data = match data_dir {
        Some(dir) => dir.join(&ledger.data.file),
        None => locate_data(&ledger.data.file).unwrap_or_else(|| PathBuf::from("data").join(&ledger.data.file)),
    };
    if !data.is_file() {
        return Err(RdError::Io {
            path: data,
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "replication data not found"),
        }
        .into());
    }
    create_dir(out_dir)?;
    let report = run_replication(&ledger, &data, Some(out_dir))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_bytes(&out_dir.join("ledger.json"), json.as_bytes())?;
    match format {
        Format::Json => println!("{json}"),
        Format::Text => print_replication(&report, out_dir),
    }
    if report.all_pass() {
        Ok(())
    } else {
        Err(Failure::Ledger {
            failed: report.failed,
            total: report.checks.len(),
        })
    }
}

fn print_replication(report: &ReplicationReport, out_dir: &Path) {
    println!("Replication of {}", report.data_file);
    let mut t = Table::new(["actual", "expected", "allowed", "source", "status"]);
    for c in &report.checks {
        t.row(
            &c.id,
            vec![
                c.actual.map_or_else(|| "-".to_string(), sig6),
                sig6(c.expected),
                sig6(c.allowed),
                c.source.clone(),
                if c.pass { "PASS" } else { "FAIL" }.to_string(),
            ],
        );
    }
    print!("{}", t.render());
    for w in &report.warnings {
        println!("warning: {w}");
    }
    println!(
        "{} passed, {} failed; plot data and ledger.json written to {}",
        report.passed,
        report.failed,
        out_dir.display()
    );
}

fn cmd_simulate(seed: u64, reps: Option<usize>, level: f64, format: Format) -> CliResult {
    if !(level > 0.0 && level < 1.0) {
        return Err(RdError::InvalidArgument(format!("confidence level {level} not in (0, 1)")).into());
    }
    let mut cfg = SimulationConfig {
        seed,
        level,
        ..SimulationConfig::default()
    };
    if let Some(r) = reps {
        if r == 0 {
            return Err(RdError::InvalidArgument("--reps must be positive".into()).into());
        }
        cfg = cfg.with_reps(r);
    }
    let report = run_simulation(&cfg);
    match format {
        Format::Json => print_json(&report),
        Format::Text => print_simulation(&report),
    }
    Ok(())
}

fn print_simulation(r: &SimulationReport) {
    let c = &r.coverage;
    let e = &r.efficiency;
    let q = &r.equality;
    println!("Monte Carlo report (seed {})", r.config.seed);
    let mut t = Table::new(["value"]);
    t.row("coverage: reps", vec![c.reps.to_string()]);
    t.row("coverage: n", vec![c.n.to_string()]);
    t.row("coverage: rate (%)", vec![sig6(c.coverage)]);
    t.row("coverage: mean CI length", vec![sig6(c.mean_ci_length)]);
    t.row("coverage: mean h", vec![sig6(c.mean_h)]);
    t.row("efficiency: reps", vec![e.reps.to_string()]);
    t.row("efficiency: design R2", vec![sig6(e.design_r2)]);
    t.row("efficiency: shorter CI (%)", vec![sig6(e.shorter_pct)]);
    t.row("efficiency: within one SE (%)", vec![sig6(e.within_one_se_pct)]);
    t.row("efficiency: mean length change (%)", vec![sig6(e.mean_length_change_pct)]);
    t.row("equality: size (%)", vec![sig6(q.size_pct)]);
    t.row("equality: power (%)", vec![sig6(q.power_pct)]);
    t.row("equality: gap", vec![sig6(q.gap)]);
    t.row(
        "failed replications",
        vec![(c.failed + e.failed + q.failed).to_string()],
    );
    print!("{}", t.render());
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Estimate { data, fit, format } => cmd_estimate(&data, &fit, format),
        Command::Hte {
            data,
            fit,
            common_bandwidth,
            group_h,
            format,
        } => cmd_hte(&data, &fit, common_bandwidth, &group_h, format),
        Command::Plot {
            data,
            bins_control,
            bins_treated,
            window,
            overlay_degree,
            subset,
            out_dir,
            format,
        } => cmd_plot(
            &data,
            bins_control.zip(bins_treated),
            window,
            overlay_degree,
            subset,
            out_dir.as_deref(),
            format,
        ),
        Command::Falsify {
            data,
            fit,
            placebo,
            format,
        } => cmd_falsify(&data, &fit, placebo.as_deref(), format),
        Command::Replicate {
            data_dir,
            ledger,
            out_dir,
            format,
        } => cmd_replicate(data_dir.as_deref(), ledger.as_deref(), &out_dir, format),
        Command::Simulate {
            seed,
            reps,
            level,
            format,
        } => cmd_simulate(seed, reps, level, format),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = run(cli);
    let _ = std::io::stdout().flush();
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Rd(e)) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::from(match e.class() {
                ErrorClass::Validation => EXIT_VALIDATION,
                ErrorClass::Numerical => EXIT_NUMERICAL,
            })
        }
        Err(Failure::Ledger { failed, total }) => {
            eprintln!("error[ledger-mismatch]: {failed} of {total} ledger cells outside tolerance");
            ExitCode::from(EXIT_LEDGER)
        }
    }
}
