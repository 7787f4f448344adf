//! Binned-means RD plots with global polynomial overlays.
//!
//! Positions are reported in the original score units. The control side is
//! the one below the cutoff unless the dataset flips the treated side.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};
use crate::ingest::{Dataset, TreatedSide};
use crate::kernels::Side;
use crate::wls::wls_fit;

pub const SCHEMA_VERSION: &str = "rdcov.rdplot/1";
pub const OVERLAY_POINTS: usize = 200;
/// Smallest side sample for which [`auto_bin_count`] applies.
pub const AUTO_BIN_MIN_ROWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum BinChoice {
    #[default]
    Auto,
    Fixed {
        control: usize,
        treated: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    pub bins: BinChoice,
    pub overlay_degree: usize,
    /// Restrict the plot to `|X - c| <= h` and emit window markers.
    pub window: Option<f64>,
    /// Keep only rows whose group label equals this value.
    pub subset: Option<String>,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            bins: BinChoice::Auto,
            overlay_degree: 1,
            window: None,
            subset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideBins {
    /// `bins + 1` edges in score units, ascending.
    pub edges: Vec<f64>,
    pub centers: Vec<f64>,
    /// `None` for empty bins.
    pub means: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub degree: usize,
    pub x: Vec<f64>,
    pub fitted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedSeries {
    pub schema_version: String,
    pub outcome: String,
    pub cutoff: f64,
    pub subset: Option<String>,
    pub control: SideBins,
    pub treated: SideBins,
    pub overlay_control: Overlay,
    pub overlay_treated: Overlay,
    /// `[c - h, c + h]` for local plots.
    pub window: Option<[f64; 2]>,
}

/// `ceil(2 n^{2/5})` bins for the rows on `side`.
pub fn auto_bin_count(d: &Dataset, side: Side) -> Result<usize> {
    let n = d.x().iter().filter(|&&x| side.contains(x)).count();
    bins_for(n, side)
}

fn bins_for(n: usize, side: Side) -> Result<usize> {
    if n < AUTO_BIN_MIN_ROWS {
        return Err(RdError::InsufficientData {
            what: format!("automatic bin count on the {} side", side_label(side)),
            needed: AUTO_BIN_MIN_ROWS,
            available: n,
        });
    }
    Ok((2.0 * (n as f64).powf(0.4)).ceil() as usize)
}

fn side_label(side: Side) -> &'static str {
    match side {
        Side::Left => "control",
        Side::Right => "treated",
        Side::Both => "both",
    }
}

/// Evenly spaced edges on `[lo, hi]` with the last edge pinned to `hi`.
fn even_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let step = (hi - lo) / bins as f64;
    let mut e: Vec<f64> = (0..bins).map(|k| lo + k as f64 * step).collect();
    e.push(hi);
    e
}

/// Bin of `x` among `edges`: bins are half-open `[e_k, e_{k+1})` except that
/// values at or beyond the last interior edge fall in the final bin.
fn bin_index(edges: &[f64], x: f64) -> usize {
    let interior = &edges[1..edges.len() - 1];
    interior.partition_point(|&e| e <= x)
}

fn bin_side(xs: &[f64], ys: &[f64], lo: f64, hi: f64, bins: usize) -> (Vec<f64>, Vec<Option<f64>>, Vec<usize>) {
    let edges = even_edges(lo, hi, bins);
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for (&x, &y) in xs.iter().zip(ys) {
        let k = bin_index(&edges, x);
        sums[k] += y;
        counts[k] += 1;
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    (edges, means, counts)
}

fn overlay_fit(xs: &[f64], ys: &[f64], degree: usize, lo: f64, hi: f64) -> Result<Vec<(f64, f64)>> {
    let n = xs.len();
    let design = DMatrix::from_fn(n, degree + 1, |i, j| xs[i].powi(j as i32));
    let fit = wls_fit(&design, &DVector::from_column_slice(ys), &DVector::from_element(n, 1.0))?;
    let step = (hi - lo) / (OVERLAY_POINTS - 1) as f64;
    Ok((0..OVERLAY_POINTS)
        .map(|k| {
            let x = if k == OVERLAY_POINTS - 1 { hi } else { lo + k as f64 * step };
            let row: Vec<f64> = (0..=degree).map(|j| x.powi(j as i32)).collect();
            (x, fit.predict(&row))
        })
        .collect())
}

/// Builds the binned series for the whole sample (global plot) or for the
/// rows within `options.window` of the cutoff (local plot).
pub fn build_rdplot(d: &Dataset, options: &PlotOptions) -> Result<BinnedSeries> {
    if let Some(h) = options.window {
        if h.is_nan() || h <= 0.0 {
            return Err(RdError::InvalidArgument(format!("plot window must be positive, got {h}")));
        }
    }
    if let BinChoice::Fixed { control, treated } = options.bins {
        if control == 0 || treated == 0 {
            return Err(RdError::InvalidArgument("bin counts must be at least 1".into()));
        }
    }
    let rows: Vec<usize> = match &options.subset {
        None => (0..d.n()).collect(),
        Some(level) => {
            if d.group().is_none() {
                return Err(RdError::InvalidArgument(format!(
                    "subset `{level}` requested but the dataset has no group column"
                )));
            }
            d.rows_in_group(level)
        }
    };

    let h = options.window.unwrap_or(f64::INFINITY);
    let (mut xl, mut yl, mut xr, mut yr) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &i in &rows {
        let x = d.x()[i];
        if x.abs() > h {
            continue;
        }
        if x < 0.0 {
            xl.push(x);
            yl.push(d.outcome()[i]);
        } else {
            xr.push(x);
            yr.push(d.outcome()[i]);
        }
    }
    for (xs, side) in [(&xl, "left"), (&xr, "right")] {
        if xs.is_empty() {
            return Err(RdError::EmptyWindow { side, bandwidth: h });
        }
    }

    let (bins_l, bins_r) = match options.bins {
        BinChoice::Auto => (bins_for(xl.len(), Side::Left)?, bins_for(xr.len(), Side::Right)?),
        BinChoice::Fixed { control, treated } => (control, treated),
    };
    let (lo_l, hi_l) = match options.window {
        Some(h) => (-h, 0.0),
        None => (xl.iter().copied().fold(f64::INFINITY, f64::min), 0.0),
    };
    let (lo_r, hi_r) = match options.window {
        Some(h) => (0.0, h),
        None => (0.0, xr.iter().copied().fold(0.0, f64::max)),
    };

    let (el, ml, cl) = bin_side(&xl, &yl, lo_l, hi_l, bins_l);
    let (er, mr, cr) = bin_side(&xr, &yr, lo_r, hi_r, bins_r);
    let ol = overlay_fit(&xl, &yl, options.overlay_degree, lo_l, hi_l)?;
    let or = overlay_fit(&xr, &yr, options.overlay_degree, lo_r, hi_r)?;

    let c = d.cutoff();
    let to_score = |x: f64| match d.treated_side() {
        TreatedSide::AtOrAbove => c + x,
        TreatedSide::AtOrBelow => c - x,
    };
    let side_bins = |edges: Vec<f64>, means, counts, n| {
        let mut edges: Vec<f64> = edges.into_iter().map(to_score).collect();
        let mut means: Vec<Option<f64>> = means;
        let mut counts: Vec<usize> = counts;
        if d.treated_side() == TreatedSide::AtOrBelow {
            edges.reverse();
            means.reverse();
            counts.reverse();
        }
        let centers = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        SideBins { edges, centers, means, counts, n }
    };
    let overlay = |pts: Vec<(f64, f64)>| {
        let mut pts: Vec<(f64, f64)> = pts.into_iter().map(|(x, y)| (to_score(x), y)).collect();
        if d.treated_side() == TreatedSide::AtOrBelow {
            pts.reverse();
        }
        Overlay {
            degree: options.overlay_degree,
            x: pts.iter().map(|p| p.0).collect(),
            fitted: pts.iter().map(|p| p.1).collect(),
        }
    };

    Ok(BinnedSeries {
        schema_version: SCHEMA_VERSION.to_string(),
        outcome: d.outcome_name().to_string(),
        cutoff: c,
        subset: options.subset.clone(),
        control: side_bins(el, ml, cl, xl.len()),
        treated: side_bins(er, mr, cr, xr.len()),
        overlay_control: overlay(ol),
        overlay_treated: overlay(or),
        window: options.window.map(|h| [c - h, c + h]),
    })
}

impl BinnedSeries {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plot data serializes")
    }

    /// Long-format CSV with columns
    /// `kind,side,x,lower,upper,count,value`; `kind` is `bin`, `overlay` or
    /// `window`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "side", "x", "lower", "upper", "count", "value"])?;
        for (name, bins) in [("control", &self.control), ("treated", &self.treated)] {
            for k in 0..bins.counts.len() {
                w.write_record([
                    "bin".to_string(),
                    name.to_string(),
                    bins.centers[k].to_string(),
                    bins.edges[k].to_string(),
                    bins.edges[k + 1].to_string(),
                    bins.counts[k].to_string(),
                    bins.means[k].map(|m| m.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        for (name, o) in [("control", &self.overlay_control), ("treated", &self.overlay_treated)] {
            for (x, y) in o.x.iter().zip(&o.fitted) {
                w.write_record(["overlay", name, &x.to_string(), "", "", "", &y.to_string()])?;
            }
        }
        if let Some([lo, hi]) = self.window {
            for x in [lo, hi] {
                w.write_record(["window", "", &x.to_string(), "", "", "", ""])?;
            }
        }
        w.flush().map_err(|source| RdError::Io {
            path: "<plot csv>".into(),
            source,
        })?;
        Ok(())
    }
}
