//! RD effects conditional on a discrete pre-intervention group.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{select_bandwidth, BandwidthReport};
use crate::error::{RdError, Result};
use crate::inference::{diagonal, estimate_rd, InferenceConfig, RdEstimate};
use crate::ingest::Dataset;
use crate::kernels::{localized_weights, Side};
use crate::local_fit::{power_names, FitSpec};
use crate::wls::{wald_test, wls_fit_named, WaldTest};

/// Printed whenever a common bandwidth is imposed across groups.
pub const COMMON_BANDWIDTH_CAVEAT: &str =
    "a common bandwidth ignores that the bias-variance trade-off can differ across groups; separate bandwidths are generally preferable";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthMode {
    /// Bandwidth selected within each group.
    Separate,
    /// One bandwidth, selected on the full sample, shared by every group.
    Common,
}

#[derive(Debug, Clone, Default)]
pub struct HteOptions {
    /// Fixed per-group bandwidths for separate mode; groups not listed are
    /// selected from their own data.
    pub group_bandwidths: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HteResult {
    pub group: String,
    pub levels: Vec<String>,
    pub per_group: BTreeMap<String, RdEstimate>,
    /// Robust covariance of the bias-corrected group effects, in `levels`
    /// order.
    pub joint_cov: Vec<Vec<f64>>,
    pub equality: WaldTest,
    pub bandwidth_mode: BandwidthMode,
    /// Bias-corrected group effects from the single fully interacted pooled
    /// regression, when all groups share one bandwidth.
    pub interacted_tau_bc: Option<Vec<f64>>,
    pub bandwidths: BTreeMap<String, BandwidthReport>,
    pub notes: Vec<String>,
}

fn check_group(d: &Dataset, group: &str, covariates: &[String]) -> Result<Vec<String>> {
    let g = d
        .group()
        .filter(|g| g.name == group)
        .ok_or_else(|| RdError::UnknownColumn(group.to_string()))?;
    for c in covariates {
        if c == &g.name || Some(c) == g.source.as_ref() {
            return Err(RdError::InvalidArgument(format!(
                "covariate `{c}` defines the group and cannot also adjust for efficiency"
            )));
        }
    }
    let levels = d.group_levels();
    if levels.len() < 2 {
        return Err(RdError::InvalidArgument(format!(
            "group `{group}` has {} level(s); heterogeneity needs at least two",
            levels.len()
        )));
    }
    Ok(levels)
}

/// Per-group RD effects without efficiency covariates.
pub fn estimate_hte(
    d: &Dataset,
    group: &str,
    spec: &FitSpec,
    cfg: &InferenceConfig,
    mode: BandwidthMode,
    opts: &HteOptions,
) -> Result<HteResult> {
    estimate_hte_with_covariates(d, group, &[], &spec.without_covariates(), cfg, mode, opts)
}

/// Per-group RD effects, each group adjusting for `covariates` with its own
/// common-across-sides coefficient vector.
pub fn estimate_hte_with_covariates(
    d: &Dataset,
    group: &str,
    covariates: &[String],
    spec: &FitSpec,
    cfg: &InferenceConfig,
    mode: BandwidthMode,
    opts: &HteOptions,
) -> Result<HteResult> {
    let spec = FitSpec {
        covariates: covariates.to_vec(),
        ..spec.clone()
    };
    let levels = check_group(d, group, &spec.covariates)?;
    let mut bandwidths = BTreeMap::new();
    let mut notes = Vec::new();

    let common_h = match mode {
        BandwidthMode::Common => {
            notes.push(COMMON_BANDWIDTH_CAVEAT.to_string());
            Some(match spec.h {
                Some(h) => h,
                None => {
                    let report = select_bandwidth(d, &spec)?;
                    let h = report.h_mse;
                    bandwidths.insert("all".to_string(), report);
                    h
                }
            })
        }
        BandwidthMode::Separate => None,
    };

    let results: Vec<Result<(String, RdEstimate, Option<BandwidthReport>)>> = levels
        .par_iter()
        .map(|level| {
            let sub = d.subset(&d.rows_in_group(level));
            let wrap = |e: RdError| RdError::GroupLevel {
                level: level.clone(),
                source: Box::new(e),
            };
            let (h, report) = match (common_h, opts.group_bandwidths.get(level), spec.h) {
                (Some(h), _, _) => (h, None),
                (None, Some(&h), _) => (h, None),
                (None, None, _) => {
                    let r = select_bandwidth(&sub, &spec).map_err(wrap)?;
                    (r.h_mse, Some(r))
                }
            };
            let est = estimate_rd(&sub, &spec.clone().with_h(h), cfg).map_err(wrap)?;
            Ok((level.clone(), est, report))
        })
        .collect();

    let mut per_group = BTreeMap::new();
    for r in results {
        let (level, est, report) = r?;
        if let Some(report) = report {
            bandwidths.insert(level.clone(), report);
        }
        per_group.insert(level, est);
    }

    let vars: Vec<f64> = levels.iter().map(|l| per_group[l].se_robust.powi(2)).collect();
    let cov = diagonal(&vars);
    let estimates = DVector::from_iterator(levels.len(), levels.iter().map(|l| per_group[l].tau_bc));
    let equality = equality_wald(&estimates, &cov)?;

    let interacted_tau_bc = match common_h {
        Some(h) => Some(interacted_effects(d, group, &spec.clone().with_h(h), spec.q())?.0),
        None => None,
    };

    Ok(HteResult {
        group: group.to_string(),
        levels,
        per_group,
        joint_cov: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        equality,
        bandwidth_mode: mode,
        interacted_tau_bc,
        bandwidths,
        notes,
    })
}

fn equality_wald(estimates: &DVector<f64>, cov: &DMatrix<f64>) -> Result<WaldTest> {
    let g = estimates.len();
    let mut r = DMatrix::zeros(g - 1, g);
    for i in 1..g {
        r[(i - 1, 0)] = -1.0;
        r[(i - 1, i)] = 1.0;
    }
    wald_test(estimates, cov, &r, &DVector::zeros(g - 1))
}

/// Wald test that every group has the same bias-corrected effect.
pub fn test_effect_equality(res: &HteResult) -> Result<WaldTest> {
    if res.levels.len() < 2 {
        return Err(RdError::InvalidArgument("equality test needs two groups".into()));
    }
    let estimates = DVector::from_iterator(res.levels.len(), res.levels.iter().map(|l| res.per_group[l].tau_bc));
    let k = res.levels.len();
    let cov = DMatrix::from_fn(k, k, |i, j| res.joint_cov[i][j]);
    equality_wald(&estimates, &cov)
}

/// Group-specific jumps from one pooled regression in which every regressor
/// (the polynomial terms and any covariates) is interacted with the group
/// indicators. Returns the jumps in sorted-level order and their robust
/// covariance.
pub fn interacted_effects(
    d: &Dataset,
    group: &str,
    spec: &FitSpec,
    degree: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let levels = check_group(d, group, &spec.covariates)?;
    let h = spec.bandwidth()?;
    let labels = &d.group().expect("checked").labels;
    let cov_cols = spec
        .covariates
        .iter()
        .map(|c| d.require_covariate(c))
        .collect::<Result<Vec<_>>>()?;
    let lw = localized_weights(d, spec.kernel, h, Side::Both)?;

    let mut rows = Vec::new();
    let mut weights = Vec::new();
    let mut codes = Vec::new();
    for (&i, &w) in lw.indices.iter().zip(&lw.weights) {
        let Some(level) = labels[i].as_deref() else { continue };
        if !cov_cols.iter().all(|c| c[i].is_some()) {
            continue;
        }
        rows.push(i);
        weights.push(w);
        codes.push(levels.iter().position(|l| l == level).expect("known level"));
    }

    let block: Vec<String> = std::iter::once("T".to_string())
        .chain(power_names(degree, ""))
        .chain((1..=degree).map(|j| if j == 1 { "T*x".into() } else { format!("T*x^{j}") }))
        .chain(spec.covariates.iter().cloned())
        .collect();
    let width = block.len();
    let names: Vec<String> = levels
        .iter()
        .flat_map(|l| block.iter().map(move |c| format!("[{l}] {c}")))
        .collect();

    let n = rows.len();
    let mut design = DMatrix::zeros(n, width * levels.len());
    for (r, &i) in rows.iter().enumerate() {
        let x = d.x()[i];
        let t = if x >= 0.0 { 1.0 } else { 0.0 };
        let off = codes[r] * width;
        design[(r, off)] = t;
        for j in 0..=degree {
            design[(r, off + 1 + j)] = x.powi(j as i32);
        }
        for j in 1..=degree {
            design[(r, off + degree + 1 + j)] = t * x.powi(j as i32);
        }
        for (c, col) in cov_cols.iter().enumerate() {
            design[(r, off + 2 * degree + 2 + c)] = col[i].expect("complete row");
        }
    }
    let y = DVector::from_iterator(n, rows.iter().map(|&i| d.outcome()[i]));
    let fit = wls_fit_named(&design, &y, &DVector::from_vec(weights), &names)?;
    let cov = fit.sandwich_cov(spec.vce).cov;
    let idx: Vec<usize> = (0..levels.len()).map(|g| g * width).collect();
    let taus = idx.iter().map(|&j| fit.coefficients()[j]).collect();
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| cov[(idx[a], idx[b])]);
    Ok((taus, sub))
}
