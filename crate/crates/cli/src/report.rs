//! Plain-text rendering shared by the subcommands.

use rdcov::RdEstimate;

/// Rounds to six significant digits and prints the shortest form that
/// parses back to the rounded value, switching to exponent notation for
/// very small or very large magnitudes.
pub fn sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("scientific notation parses");
    let a = rounded.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}

pub struct Table {
    header: Vec<String>,
    rows: Vec<(String, Vec<String>)>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, label: &str, cells: Vec<String>) {
        self.rows.push((label.to_string(), cells));
    }

    pub fn render(&self) -> String {
        let label_w = self.rows.iter().map(|r| r.0.chars().count()).max().unwrap_or(0);
        let widths: Vec<usize> = (0..self.header.len())
            .map(|j| {
                self.rows
                    .iter()
                    .filter_map(|r| r.1.get(j))
                    .chain(std::iter::once(&self.header[j]))
                    .map(|s| s.chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |label: &str, cells: &[String]| {
            let mut s = format!("{label:<label_w$}");
            for (c, w) in cells.iter().zip(&widths) {
                s.push_str(&format!("  {c:>w$}"));
            }
            s.trim_end().to_string()
        };
        out.push_str(&line("", &self.header));
        out.push('\n');
        for (label, cells) in &self.rows {
            out.push_str(&line(label, cells));
            out.push('\n');
        }
        out
    }
}

/// One column of a Table-1-shaped report.
pub struct EstimateColumn<'a> {
    pub estimate: &'a RdEstimate,
    pub ci_change: Option<f64>,
}

/// Rows in the order of the published Table 1, followed by the
/// bias-corrected point estimate, its standard error and the bias bandwidth.
pub fn estimate_table(names: &[String], cols: &[EstimateColumn<'_>]) -> Table {
    let mut t = Table::new(names.iter().cloned());
    let each = |f: &dyn Fn(&EstimateColumn<'_>) -> String| cols.iter().map(f).collect::<Vec<_>>();
    let level = cols.first().map_or(95.0, |c| 100.0 * c.estimate.level);
    t.row("tau", each(&|c| sig6(c.estimate.tau)));
    t.row(
        &format!("{}% RCI", sig6(level)),
        each(&|c| format!("[{}, {}]", sig6(c.estimate.ci.lower), sig6(c.estimate.ci.upper))),
    );
    if cols.iter().any(|c| c.ci_change.is_some()) {
        t.row(
            "CI length change (%)",
            each(&|c| c.ci_change.map_or_else(|| "-".to_string(), sig6)),
        );
    }
    t.row("p-value", each(&|c| sig6(c.estimate.p_value)));
    t.row("h", each(&|c| sig6(c.estimate.h)));
    t.row("N- | N+", each(&|c| format!("{} | {}", c.estimate.n_left, c.estimate.n_right)));
    t.row(
        "% treatment effect",
        each(&|c| c.estimate.pct_effect.map_or_else(|| "-".to_string(), sig6)),
    );
    t.row("tau bias-corrected", each(&|c| sig6(c.estimate.tau_bc)));
    t.row("robust SE", each(&|c| sig6(c.estimate.se_robust)));
    t.row("b", each(&|c| sig6(c.estimate.b)));
    t
}
