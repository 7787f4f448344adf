//! Robust bias-corrected estimation and inference for the sharp RD effect.
//!
//! The conventional estimate comes from degree-`p` fits at the main
//! bandwidth `h`. When the bias bandwidth equals `h`, subtracting the
//! plug-in bias estimated from a degree-`p+1` fit gives exactly the
//! degree-`p+1` estimate, so the bias-corrected point estimate and its
//! robust variance are read off a single degree-`p+1` regression. The general
//! two-fit construction is kept for `b != h` and as a cross-check.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::bandwidth::{select_bandwidth, BandwidthReport};
use crate::error::{RdError, Result};
use crate::ingest::Dataset;
use crate::local_fit::{fit_pooled, FitSpec, WindowFit};
use crate::wls::{hc_scale, Vce};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasRoute {
    /// Degree-`q` regression at `h` (requires `b = h`).
    #[default]
    Equivalent,
    /// Conventional estimate minus an explicit plug-in bias estimate.
    TwoStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub level: f64,
    /// `h / b`.
    pub rho: f64,
    pub route: BiasRoute,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            level: 0.95,
            rho: 1.0,
            route: BiasRoute::Equivalent,
        }
    }
}

impl InferenceConfig {
    fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(RdError::InvalidArgument(format!("confidence level {} not in (0, 1)", self.level)));
        }
        if !self.rho.is_finite() || self.rho <= 0.0 {
            return Err(RdError::InvalidArgument(format!("rho {} must be positive", self.rho)));
        }
        Ok(())
    }

    /// Two-sided normal critical value for the configured level.
    pub fn critical_value(&self) -> f64 {
        std_normal().inverse_cdf(1.0 - (1.0 - self.level) / 2.0)
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdEstimate {
    /// Conventional point estimate.
    pub tau: f64,
    /// Bias-corrected point estimate.
    pub tau_bc: f64,
    pub se_conventional: f64,
    pub se_robust: f64,
    /// Robust bias-corrected interval, centered at `tau_bc`.
    pub ci: Interval,
    pub level: f64,
    /// Two-sided p-value for `τ = 0` from the robust t-statistic.
    pub p_value: f64,
    pub h: f64,
    pub b: f64,
    pub n_left: usize,
    pub n_right: usize,
    /// Control-side limit at the cutoff from the unadjusted degree-`p` fit.
    pub left_intercept: f64,
    /// `100 τ̂ / |μ̂₋|`; absent when the control limit is zero.
    pub pct_effect: Option<f64>,
    pub p: usize,
    pub vce: Vce,
    pub covariates: Vec<String>,
    pub warnings: Vec<String>,
}

/// Robust standard errors at or below this multiple of `max |y|` are treated
/// as zero.
pub const DEGENERATE_SE_RELATIVE: f64 = 1e-10;

/// Two-sided normal p-value for a t-statistic.
pub fn normal_p_value(t: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    erfc(t.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Estimates the RD effect at the spec's bandwidth.
pub fn estimate_rd(d: &Dataset, spec: &FitSpec, cfg: &InferenceConfig) -> Result<RdEstimate> {
    cfg.validate()?;
    let h = spec.bandwidth()?;
    let b = spec.b.unwrap_or(h / cfg.rho);
    if b.is_nan() || b <= 0.0 {
        return Err(RdError::InvalidArgument(format!("bias bandwidth {b} must be positive")));
    }
    let d = d.complete_cases(&spec.covariates)?;
    let p = spec.p;

    let conv = fit_pooled(&d, spec, p, h)?;
    let need = p + 2;
    for (count, side) in [(conv.n_left, "left"), (conv.n_right, "right")] {
        if count < need {
            return Err(RdError::InsufficientData {
                what: format!("effective sample on the {side} side"),
                needed: need,
                available: count,
            });
        }
    }
    let tau = conv.headline();
    let se_conventional = conv.fit.sandwich_cov(spec.vce).cov[(0, 0)].max(0.0).sqrt();

    let (tau_bc, se_robust, mut warnings) = if cfg.route == BiasRoute::Equivalent && b == h {
        let bc = fit_pooled(&d, spec, p + 1, h)?;
        let s = bc.fit.sandwich_cov(spec.vce);
        let mut w = bc.warnings.clone();
        if !s.fallback_rows.is_empty() {
            w.push(format!("{} leverage-one row(s) used the HC1 factor", s.fallback_rows.len()));
        }
        (bc.headline(), s.cov[(0, 0)].max(0.0).sqrt(), w)
    } else {
        let two = two_step(&d, spec, &conv, b)?;
        (two.tau_bc, two.se_robust, two.warnings)
    };
    let y_scale = d.outcome().iter().fold(0.0_f64, |m, y| m.max(y.abs()));
    if se_robust.is_nan() || se_robust <= DEGENERATE_SE_RELATIVE * y_scale {
        return Err(RdError::DegenerateVariance {
            tau: conv.headline(),
            tau_bc,
        });
    }
    warnings.extend(conv.warnings.iter().cloned());

    // Control limit from the unadjusted degree-p fit on the same rows.
    let left_intercept = if spec.covariates.is_empty() {
        conv.coef("1").expect("intercept column")
    } else {
        fit_pooled(&d, &spec.without_covariates(), p, h)?
            .coef("1")
            .expect("intercept column")
    };
    let pct_effect = (left_intercept != 0.0).then(|| 100.0 * tau / left_intercept.abs());

    let z = cfg.critical_value();
    let ci = Interval {
        lower: tau_bc - z * se_robust,
        upper: tau_bc + z * se_robust,
    };
    Ok(RdEstimate {
        tau,
        tau_bc,
        se_conventional,
        se_robust,
        ci,
        level: cfg.level,
        p_value: normal_p_value(tau_bc / se_robust),
        h,
        b,
        n_left: conv.n_left,
        n_right: conv.n_right,
        left_intercept,
        pct_effect,
        p,
        vce: spec.vce,
        covariates: spec.covariates.clone(),
        warnings,
    })
}

/// Bias-corrected estimate built as `τ̂_p - bias`, where the bias comes from
/// the `x^{p+1}` coefficients of a degree-`p+1` fit at bandwidth `b`.
#[derive(Debug, Clone)]
pub struct TwoStepCorrection {
    pub tau: f64,
    pub bias: f64,
    pub tau_bc: f64,
    pub se_robust: f64,
    /// Effective weights of `tau_bc` on the outcomes, by dataset row.
    pub weights: Vec<(usize, f64)>,
    pub warnings: Vec<String>,
}

/// Explicit two-fit bias correction at bias bandwidth `b`.
pub fn bias_corrected_two_step(d: &Dataset, spec: &FitSpec, b: f64) -> Result<TwoStepCorrection> {
    let d = d.complete_cases(&spec.covariates)?;
    let conv = fit_pooled(&d, spec, spec.p, spec.bandwidth()?)?;
    two_step(&d, spec, &conv, b)
}

fn two_step(d: &Dataset, spec: &FitSpec, conv: &WindowFit, b: f64) -> Result<TwoStepCorrection> {
    let p = spec.p;
    let q = p + 1;
    let bias_fit = fit_pooled(d, spec, q, b)?;

    // Columns of the degree-q design that the degree-p fit leaves out.
    let top = if q == 1 { "x".to_string() } else { format!("x^{q}") };
    let top_t = format!("T*{top}");
    let j_top = bias_fit.column(&top).expect("bias column");
    let j_top_t = bias_fit.column(&top_t).expect("bias column");

    // a_p: effective weights of the conventional jump on its window rows.
    let a_p = conv.fit.effective_weights(&conv.selector("T").expect("T column"));
    // D' a_p, with D = [x^q, T x^q] over the conventional window.
    let (mut d_left, mut d_jump) = (0.0, 0.0);
    for (r, &i) in conv.rows.iter().enumerate() {
        let x = d.x()[i];
        let xq = x.powi(q as i32);
        d_left += a_p[r] * xq;
        if x >= 0.0 {
            d_jump += a_p[r] * xq;
        }
    }
    let coefs = bias_fit.fit.coefficients();
    let bias = d_left * coefs[j_top] + d_jump * coefs[j_top_t];
    let tau = conv.headline();
    let tau_bc = tau - bias;

    // Combined effective weights over the union of both windows.
    let mut functional = DVector::zeros(bias_fit.columns.len());
    functional[j_top] = d_left;
    functional[j_top_t] = d_jump;
    let g = bias_fit.fit.effective_weights(&functional);
    let mut weights: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for (r, &i) in conv.rows.iter().enumerate() {
        *weights.entry(i).or_default() += a_p[r];
    }
    for (r, &i) in bias_fit.rows.iter().enumerate() {
        *weights.entry(i).or_default() -= g[r];
    }

    // Residuals from the degree-q fit; leverage from the degree-q fit where
    // the row is in its window, otherwise from the degree-p fit.
    let bias_pos: std::collections::HashMap<usize, usize> =
        bias_fit.rows.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let conv_pos: std::collections::HashMap<usize, usize> =
        conv.rows.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let n_hc = bias_fit.fit.n_positive();
    let k = bias_fit.columns.len();
    let mut variance = 0.0;
    let mut warnings = bias_fit.warnings.clone();
    let mut fallbacks = 0usize;
    for (&i, &w) in &weights {
        let (e, lev) = match bias_pos.get(&i) {
            Some(&r) => (bias_fit.fit.residuals()[r], bias_fit.fit.leverages()[r]),
            None => {
                let row = bias_fit
                    .design_row(d, i)
                    .ok_or_else(|| RdError::InvalidArgument("missing covariate in window".into()))?;
                let e = d.outcome()[i] - bias_fit.fit.predict(&row);
                (e, conv.fit.leverages()[conv_pos[&i]])
            }
        };
        let (scale, fell_back) = hc_scale(spec.vce, lev, n_hc, k);
        fallbacks += usize::from(fell_back);
        variance += w * w * e * e * scale;
    }
    if fallbacks > 0 {
        warnings.push(format!("{fallbacks} leverage-one row(s) used the HC1 factor"));
    }
    Ok(TwoStepCorrection {
        tau,
        bias,
        tau_bc,
        se_robust: variance.max(0.0).sqrt(),
        weights: weights.into_iter().collect(),
        warnings,
    })
}

/// Estimate with the spec's bandwidth, or the MSE-optimal one when the spec
/// leaves it unset.
pub fn estimate_with_selection(
    d: &Dataset,
    spec: &FitSpec,
    cfg: &InferenceConfig,
) -> Result<(RdEstimate, Option<BandwidthReport>)> {
    match spec.h {
        Some(_) => Ok((estimate_rd(d, spec, cfg)?, None)),
        None => {
            let report = select_bandwidth(d, spec)?;
            let fixed = spec.clone().with_h(report.h_mse);
            Ok((estimate_rd(d, &fixed, cfg)?, Some(report)))
        }
    }
}

/// Runs the estimator with a pre-intervention covariate as the outcome.
/// A covariate that should not jump at the cutoff supports the design.
pub fn falsification_estimate(
    d: &Dataset,
    covariate: &str,
    spec: &FitSpec,
    cfg: &InferenceConfig,
) -> Result<(RdEstimate, Option<BandwidthReport>)> {
    let as_outcome = d.outcome_from_covariate(covariate)?;
    let spec = FitSpec {
        covariates: spec.covariates.iter().filter(|c| *c != covariate).cloned().collect(),
        ..spec.clone()
    };
    estimate_with_selection(&as_outcome, &spec, cfg)
}

/// Same as [`falsification_estimate`] but for the dataset's group column.
pub fn falsification_on_group(
    d: &Dataset,
    spec: &FitSpec,
    cfg: &InferenceConfig,
) -> Result<(RdEstimate, Option<BandwidthReport>)> {
    let as_outcome = d.outcome_from_group()?;
    let source = d.group().and_then(|g| g.source.clone());
    let spec = FitSpec {
        covariates: spec
            .covariates
            .iter()
            .filter(|c| Some(c.as_str()) != source.as_deref())
            .cloned()
            .collect(),
        ..spec.clone()
    };
    estimate_with_selection(&as_outcome, &spec, cfg)
}

/// Covariance matrix with the given variances on the diagonal.
pub(crate) fn diagonal(vars: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(vars))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dgp(n: usize, jump: f64) -> Dataset {
        let x: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64).collect();
        let y = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let wiggle = (((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5) * 0.4;
                0.5 + 0.3 * v - 0.8 * v * v + if v >= 0.0 { jump + 0.2 * v } else { 0.0 } + wiggle
            })
            .collect();
        Dataset::new(x, y, 0.0).unwrap()
    }

    #[test]
    fn ci_is_centered_on_bias_corrected_estimate() {
        let e = estimate_rd(&dgp(400, 1.0), &FitSpec::default().with_h(0.5), &InferenceConfig::default()).unwrap();
        assert!((e.ci.midpoint() - e.tau_bc).abs() < 1e-12);
        assert!(e.se_robust > 0.0);
        let z = 1.959963984540054;
        assert!((e.ci.upper - e.tau_bc - z * e.se_robust).abs() < 1e-12);
    }

    #[test]
    fn noiseless_quadratic_jump_is_exact() {
        let n = 200;
        let x: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| if v >= 0.0 { 2.5 + v - 3.0 * v * v } else { 1.0 - 2.0 * v + 0.5 * v * v })
            .collect();
        let d = Dataset::new(x, y, 0.0).unwrap();
        let spec = FitSpec::default().with_h(0.6);
        let conv = fit_pooled(&d, &spec, 2, 0.6).unwrap();
        assert!((conv.headline() - 1.5).abs() < 1e-10);
        // residuals are zero, so the robust SE is zero: degenerate
        assert!(matches!(
            estimate_rd(&d, &spec, &InferenceConfig::default()),
            Err(RdError::DegenerateVariance { tau_bc, .. }) if (tau_bc - 1.5).abs() < 1e-10
        ));
    }

    #[test]
    fn p_value_behaviour() {
        assert_eq!(normal_p_value(0.0), 1.0);
        assert!(normal_p_value(1.0) > normal_p_value(2.0));
        let p = normal_p_value(1.959963984540054);
        assert!((p - 0.05).abs() < 1e-10, "{p}");
    }

    #[test]
    fn missing_bandwidth_and_bad_level() {
        let d = dgp(100, 0.0);
        assert!(estimate_rd(&d, &FitSpec::default(), &InferenceConfig::default()).is_err());
        let cfg = InferenceConfig {
            level: 1.5,
            ..InferenceConfig::default()
        };
        assert!(estimate_rd(&d, &FitSpec::default().with_h(0.5), &cfg).is_err());
    }

    #[test]
    fn constant_covariate_as_outcome_has_no_jump() {
        let d = dgp(300, 1.0).with_covariate_values("c", vec![4.0; 300]).unwrap();
        let wiggly: Vec<f64> = (0..300).map(|i| 4.0 + 1e-3 * ((i * 37) % 11) as f64).collect();
        let d = d.with_covariate_values("w", wiggly).unwrap();
        let spec = FitSpec::default().with_h(0.5);
        let cfg = InferenceConfig::default();
        let (e, _) = falsification_estimate(&d, "w", &spec, &cfg).unwrap();
        assert!(e.tau.abs() < 0.01);
        let conv = fit_pooled(&d.outcome_from_covariate("c").unwrap(), &spec, 1, 0.5).unwrap();
        assert!(conv.headline().abs() < 1e-12);
    }
}
