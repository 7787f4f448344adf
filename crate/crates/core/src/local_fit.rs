//! Boundary local polynomial regressions at the cutoff.
//!
//! Two layouts are supported. A *side* fit regresses the outcome on
//! `(1, x, …, x^deg)` using only one side of the cutoff. A *pooled* fit uses
//! both sides at once with design `(T, 1, x, …, x^deg, T·x, …, T·x^deg, Z)`,
//! where `T = 1{x >= 0}` and the covariates `Z` enter with a single
//! coefficient vector shared by both sides. Without covariates the pooled fit
//! is fully interacted and its `T` coefficient equals the difference of the
//! two side intercepts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};
use crate::ingest::Dataset;
use crate::kernels::{localized_weights, Kernel, Side};
use crate::wls::{wls_fit_named, LocalFit, Vce};

/// Condition number of the weighted design above which a warning is emitted.
pub const CONDITION_WARNING: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    /// Polynomial degree of the point estimator.
    pub p: usize,
    pub kernel: Kernel,
    /// Main bandwidth; `None` means "select it from the data".
    pub h: Option<f64>,
    /// Bias bandwidth; `None` means derived from `h` and the inference `rho`.
    pub b: Option<f64>,
    pub vce: Vce,
    pub covariates: Vec<String>,
}

impl Default for FitSpec {
    fn default() -> Self {
        FitSpec {
            p: 1,
            kernel: Kernel::Triangular,
            h: None,
            b: None,
            vce: Vce::HC3,
            covariates: Vec::new(),
        }
    }
}

impl FitSpec {
    /// Degree of the bias-correction fit.
    pub fn q(&self) -> usize {
        self.p + 1
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = Some(h);
        self
    }

    pub fn with_covariates<S: Into<String>>(mut self, covariates: impl IntoIterator<Item = S>) -> Self {
        self.covariates = covariates.into_iter().map(Into::into).collect();
        self
    }

    pub fn without_covariates(&self) -> Self {
        FitSpec {
            covariates: Vec::new(),
            ..self.clone()
        }
    }

    pub fn bandwidth(&self) -> Result<f64> {
        match self.h {
            Some(h) if h > 0.0 && !h.is_nan() => Ok(h),
            Some(h) => Err(RdError::InvalidArgument(format!("bandwidth {h} must be positive"))),
            None => Err(RdError::InvalidArgument("bandwidth has not been set".into())),
        }
    }
}

/// Affine standardization applied to a covariate inside a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateScaling {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Side,
    Pooled,
}

/// A local regression together with the dataset rows it used.
#[derive(Debug, Clone)]
pub struct WindowFit {
    pub fit: LocalFit,
    /// Dataset row index of each design row.
    pub rows: Vec<usize>,
    pub columns: Vec<String>,
    pub degree: usize,
    pub bandwidth: f64,
    pub n_left: usize,
    pub n_right: usize,
    /// Covariates that entered the design, with their window standardization.
    pub covariates: Vec<CovariateScaling>,
    pub dropped_covariates: Vec<String>,
    pub warnings: Vec<String>,
    layout: Layout,
}

impl WindowFit {
    pub fn coef(&self, name: &str) -> Option<f64> {
        self.column(name).map(|j| self.fit.coefficients()[j])
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// The level at the cutoff: the intercept of a side fit, or the `T`
    /// coefficient (the jump) of a pooled fit.
    pub fn headline(&self) -> f64 {
        self.fit.coefficients()[0]
    }

    /// Unit vector selecting a named coefficient.
    pub fn selector(&self, name: &str) -> Option<DVector<f64>> {
        let j = self.column(name)?;
        let mut e = DVector::zeros(self.columns.len());
        e[j] = 1.0;
        Some(e)
    }

    /// Design row for an arbitrary dataset row, using this fit's covariate
    /// standardization. Rows with missing covariates yield `None`.
    pub fn design_row(&self, d: &Dataset, row: usize) -> Option<Vec<f64>> {
        match self.layout {
            Layout::Side => {
                let mut out = Vec::with_capacity(self.degree + 1);
                push_powers(&mut out, d.x()[row], self.degree);
                Some(out)
            }
            Layout::Pooled => pooled_row(d, row, self.degree, &self.covariates),
        }
    }
}

fn pooled_row(d: &Dataset, row: usize, degree: usize, covariates: &[CovariateScaling]) -> Option<Vec<f64>> {
    let x = d.x()[row];
    let t = if x >= 0.0 { 1.0 } else { 0.0 };
    let mut out = Vec::with_capacity(2 * degree + 2 + covariates.len());
    out.push(t);
    push_powers(&mut out, x, degree);
    for j in 1..=degree {
        out.push(t * x.powi(j as i32));
    }
    for s in covariates {
        let z = d.covariate(&s.name)?[row]?;
        out.push((z - s.mean) / s.sd);
    }
    Some(out)
}

fn push_powers(out: &mut Vec<f64>, x: f64, degree: usize) {
    let mut v = 1.0;
    for _ in 0..=degree {
        out.push(v);
        v *= x;
    }
}

pub(crate) fn power_names(degree: usize, prefix: &str) -> Vec<String> {
    (0..=degree)
        .map(|j| match j {
            0 => format!("{prefix}1"),
            1 => format!("{prefix}x"),
            _ => format!("{prefix}x^{j}"),
        })
        .collect()
}

fn condition_warning(fit: &LocalFit, warnings: &mut Vec<String>) {
    if fit.condition_number() > CONDITION_WARNING {
        let msg = format!(
            "weighted design condition number {:.3e} exceeds {:.0e}",
            fit.condition_number(),
            CONDITION_WARNING
        );
        log::debug!("{msg}");
        warnings.push(msg);
    }
}

/// Degree-`degree` weighted regression on one side of the cutoff, using the
/// spec's kernel and main bandwidth.
pub fn fit_side(d: &Dataset, spec: &FitSpec, side: Side, degree: usize) -> Result<WindowFit> {
    fit_side_at(d, spec.kernel, spec.bandwidth()?, side, degree)
}

pub fn fit_side_at(d: &Dataset, kernel: Kernel, h: f64, side: Side, degree: usize) -> Result<WindowFit> {
    if side == Side::Both {
        return Err(RdError::InvalidArgument("a side fit needs the left or the right side".into()));
    }
    let lw = localized_weights(d, kernel, h, side)?;
    let k = degree + 1;
    let n = lw.indices.len();
    let mut design = DMatrix::zeros(n, k);
    for (r, &i) in lw.indices.iter().enumerate() {
        let mut v = 1.0;
        for c in 0..k {
            design[(r, c)] = v;
            v *= d.x()[i];
        }
    }
    let y = DVector::from_iterator(n, lw.indices.iter().map(|&i| d.outcome()[i]));
    let w = DVector::from_vec(lw.weights.clone());
    let columns = power_names(degree, "");
    let fit = wls_fit_named(&design, &y, &w, &columns)?;
    if fit.n_positive() < degree + 2 {
        return Err(RdError::InsufficientData {
            what: format!("{side:?} side fit of degree {degree}").to_lowercase(),
            needed: degree + 2,
            available: fit.n_positive(),
        });
    }
    let mut warnings = Vec::new();
    condition_warning(&fit, &mut warnings);
    Ok(WindowFit {
        fit,
        rows: lw.indices,
        columns,
        degree,
        bandwidth: h,
        n_left: lw.n_left,
        n_right: lw.n_right,
        covariates: Vec::new(),
        dropped_covariates: Vec::new(),
        warnings,
        layout: Layout::Side,
    })
}

/// Pooled regression with a restricted common covariate coefficient. The
/// `T` coefficient is the covariate-adjusted jump at the cutoff.
pub fn fit_covariate_adjusted(d: &Dataset, spec: &FitSpec, degree: usize) -> Result<WindowFit> {
    if spec.covariates.is_empty() {
        return Err(RdError::InvalidArgument("covariate adjustment needs at least one covariate".into()));
    }
    fit_pooled(d, spec, degree, spec.bandwidth()?)
}

/// Pooled fit `(T, 1, x…, T·x…, Z)` at bandwidth `h`. With no covariates
/// this is the fully interacted regression.
pub fn fit_pooled(d: &Dataset, spec: &FitSpec, degree: usize, h: f64) -> Result<WindowFit> {
    let lw = localized_weights(d, spec.kernel, h, Side::Both)?;
    let cov_cols = spec
        .covariates
        .iter()
        .map(|name| d.require_covariate(name))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(lw.indices.len());
    let mut weights = Vec::with_capacity(lw.indices.len());
    for (&i, &w) in lw.indices.iter().zip(&lw.weights) {
        if cov_cols.iter().all(|c| c[i].is_some()) {
            rows.push(i);
            weights.push(w);
        }
    }
    let n_left = rows.iter().filter(|&&i| d.x()[i] < 0.0).count();
    let n_right = rows.len() - n_left;
    for (count, side) in [(n_left, "left"), (n_right, "right")] {
        if count == 0 {
            return Err(RdError::EmptyWindow { side, bandwidth: h });
        }
    }

    let mut warnings = Vec::new();
    let mut scaling = Vec::new();
    let mut dropped = Vec::new();
    let wsum: f64 = weights.iter().sum();
    for (name, col) in spec.covariates.iter().zip(&cov_cols) {
        let vals: Vec<f64> = rows.iter().map(|&i| col[i].unwrap_or(0.0)).collect();
        let mean = if wsum > 0.0 {
            vals.iter().zip(&weights).map(|(z, w)| z * w).sum::<f64>() / wsum
        } else {
            0.0
        };
        let var = if wsum > 0.0 {
            vals.iter().zip(&weights).map(|(z, w)| w * (z - mean).powi(2)).sum::<f64>() / wsum
        } else {
            0.0
        };
        let sd = var.sqrt();
        let scale = vals
            .iter()
            .zip(&weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(z, _)| z.abs())
            .fold(0.0, f64::max);
        if sd <= 1e-12 * scale || sd == 0.0 {
            let msg = format!("covariate `{name}` has no variation inside the window; dropped");
            log::debug!("{msg}");
            warnings.push(msg);
            dropped.push(name.clone());
            continue;
        }
        scaling.push(CovariateScaling {
            name: name.clone(),
            mean,
            sd,
        });
    }

    let mut columns = vec!["T".to_string()];
    columns.extend(power_names(degree, ""));
    columns.extend((1..=degree).map(|j| if j == 1 { "T*x".to_string() } else { format!("T*x^{j}") }));
    let n_poly = columns.len();
    columns.extend(scaling.iter().map(|s| s.name.clone()));

    let n = rows.len();
    let k = columns.len();
    let mut design = DMatrix::zeros(n, k);
    for (r, &i) in rows.iter().enumerate() {
        let row = pooled_row(d, i, degree, &scaling).expect("covariates observed in window rows");
        for (c, v) in row.into_iter().enumerate() {
            design[(r, c)] = v;
        }
    }
    let y = DVector::from_iterator(n, rows.iter().map(|&i| d.outcome()[i]));
    let w = DVector::from_vec(weights);
    let fit = wls_fit_named(&design, &y, &w, &columns).map_err(|e| match e {
        RdError::RankDeficient { column, name } if column >= n_poly => RdError::CollinearCovariate(name),
        other => other,
    })?;
    condition_warning(&fit, &mut warnings);
    Ok(WindowFit {
        fit,
        rows,
        columns,
        degree,
        bandwidth: h,
        n_left,
        n_right,
        covariates: scaling,
        dropped_covariates: dropped,
        warnings,
        layout: Layout::Pooled,
    })
}

/// `τ̂ = μ̂₊ - μ̂₋` from two side fits.
pub fn intercept_difference(left: &WindowFit, right: &WindowFit) -> f64 {
    right.headline() - left.headline()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    fn spec(h: f64) -> FitSpec {
        FitSpec::default().with_h(h)
    }

    #[test]
    fn noiseless_line_recovered_on_right() {
        let x = grid(41, -1.0, 1.0);
        let y: Vec<f64> = x.iter().map(|&v| if v >= 0.0 { 2.0 + 3.0 * v } else { -1.0 + v }).collect();
        let d = Dataset::new(x, y, 0.0).unwrap();
        for h in [0.3, 0.7, 5.0] {
            let f = fit_side(&d, &spec(h), Side::Right, 1).unwrap();
            assert!((f.coef("1").unwrap() - 2.0).abs() < 1e-12);
            assert!((f.coef("x").unwrap() - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_scores_are_rank_deficient() {
        let d = Dataset::new(vec![0.5, 0.5, 0.5, -0.5], vec![1.0, 2.0, 3.0, 0.0], 0.0).unwrap();
        let err = fit_side(&d, &spec(1.0), Side::Right, 2).unwrap_err();
        assert!(matches!(err, RdError::RankDeficient { column: 1, .. }), "{err:?}");
    }

    #[test]
    fn jump_and_identical_sides() {
        let x = grid(60, -2.0, 2.0);
        let base: Vec<f64> = x.iter().map(|&v| 1.0 + 0.5 * v - 0.2 * v * v).collect();
        let d = Dataset::new(x.clone(), base.clone(), 0.0).unwrap();
        let s = spec(1.5);
        let l = fit_side(&d, &s, Side::Left, 2).unwrap();
        let r = fit_side(&d, &s, Side::Right, 2).unwrap();
        assert!(intercept_difference(&l, &r).abs() < 1e-12);

        let jumped: Vec<f64> = x.iter().zip(&base).map(|(&v, &y)| if v >= 0.0 { y + 0.75 } else { y }).collect();
        let d = Dataset::new(x, jumped, 0.0).unwrap();
        let l = fit_side(&d, &s, Side::Left, 2).unwrap();
        let r = fit_side(&d, &s, Side::Right, 2).unwrap();
        assert!((intercept_difference(&l, &r) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_covariate_is_dropped() {
        let x = grid(50, -1.0, 1.0);
        let y: Vec<f64> = x.iter().map(|&v| v.sin() + if v >= 0.0 { 1.0 } else { 0.0 }).collect();
        let d = Dataset::new(x, y, 0.0)
            .unwrap()
            .with_covariate_values("zero", vec![0.0; 50])
            .unwrap();
        let s = spec(0.8).with_covariates(["zero"]);
        let adj = fit_covariate_adjusted(&d, &s, 1).unwrap();
        assert_eq!(adj.dropped_covariates, vec!["zero".to_string()]);
        let l = fit_side(&d, &s, Side::Left, 1).unwrap();
        let r = fit_side(&d, &s, Side::Right, 1).unwrap();
        assert!((adj.headline() - intercept_difference(&l, &r)).abs() < 1e-12);
    }

    #[test]
    fn collinear_covariates_are_named() {
        let x = grid(50, -1.0, 1.0);
        let z: Vec<f64> = x.iter().map(|v| (3.0 * v).cos()).collect();
        let z2: Vec<f64> = z.iter().map(|v| 2.0 * v + 1.0).collect();
        let d = Dataset::new(x.clone(), x.clone(), 0.0)
            .unwrap()
            .with_covariate_values("z", z)
            .unwrap()
            .with_covariate_values("z2", z2)
            .unwrap();
        let err = fit_covariate_adjusted(&d, &spec(0.9).with_covariates(["z", "z2"]), 1).unwrap_err();
        assert!(matches!(err, RdError::CollinearCovariate(ref n) if n == "z2"), "{err:?}");
    }

    #[test]
    fn covariate_adjustment_requires_covariates() {
        let d = Dataset::new(vec![-1.0, 1.0], vec![0.0, 1.0], 0.0).unwrap();
        assert!(fit_covariate_adjusted(&d, &spec(1.0), 1).is_err());
        assert!(fit_side(&d, &FitSpec::default(), Side::Left, 1).is_err());
    }
}
