//! Weighted least squares via Householder QR, leverages, HC0–HC3 sandwich
//! covariances and Wald tests.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{RdError, Result};

/// Relative tolerance on `|R_jj| / ||column j||` below which a column is
/// treated as linearly dependent on the ones before it.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// `1 - leverage` below this is treated as a leverage of one.
pub const LEVERAGE_ONE_TOLERANCE: f64 = 1e-10;

/// Heteroskedasticity-consistent variance flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Vce {
    HC0,
    HC1,
    HC2,
    #[default]
    HC3,
}

impl fmt::Display for Vce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Vce::HC0 => "HC0",
            Vce::HC1 => "HC1",
            Vce::HC2 => "HC2",
            Vce::HC3 => "HC3",
        })
    }
}

impl FromStr for Vce {
    type Err = RdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HC0" => Ok(Vce::HC0),
            "HC1" => Ok(Vce::HC1),
            "HC2" => Ok(Vce::HC2),
            "HC3" => Ok(Vce::HC3),
            other => Err(RdError::InvalidArgument(format!("unknown variance estimator `{other}`"))),
        }
    }
}

/// Squared-residual multiplier for one observation.
///
/// When the leverage is one the HC2/HC3 factor is undefined; the row falls
/// back to the HC1 factor and the caller is told through the returned flag.
pub(crate) fn hc_scale(flavor: Vce, leverage: f64, n: usize, k: usize) -> (f64, bool) {
    let hc1 = if n > k { n as f64 / (n - k) as f64 } else { 1.0 };
    match flavor {
        Vce::HC0 => (1.0, false),
        Vce::HC1 => (hc1, false),
        Vce::HC2 | Vce::HC3 if 1.0 - leverage < LEVERAGE_ONE_TOLERANCE => (hc1, true),
        Vce::HC2 => (1.0 / (1.0 - leverage), false),
        Vce::HC3 => (1.0 / (1.0 - leverage).powi(2), false),
    }
}

/// A solved weighted least squares problem.
#[derive(Debug, Clone)]
pub struct LocalFit {
    design: DMatrix<f64>,
    weights: DVector<f64>,
    coefficients: DVector<f64>,
    residuals: DVector<f64>,
    leverages: DVector<f64>,
    /// `(X'WX)⁻¹`
    bread: DMatrix<f64>,
    condition_number: f64,
    n_positive: usize,
}

impl LocalFit {
    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    /// `y_i - x_i'β̂` for every row, including zero-weight rows.
    pub fn residuals(&self) -> &DVector<f64> {
        &self.residuals
    }

    /// Diagonal of the weighted hat matrix `W^{1/2} X (X'WX)⁻¹ X' W^{1/2}`.
    pub fn leverages(&self) -> &DVector<f64> {
        &self.leverages
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// `(X'WX)⁻¹`
    pub fn bread(&self) -> &DMatrix<f64> {
        &self.bread
    }

    pub fn design_dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.design.nrows()
    }

    /// Rows with strictly positive weight.
    pub fn n_positive(&self) -> usize {
        self.n_positive
    }

    /// 2-norm condition number of `W^{1/2} X`.
    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    /// Weights `ω` such that `c'β̂ = Σ ω_i y_i`.
    pub fn effective_weights(&self, functional: &DVector<f64>) -> DVector<f64> {
        let g = &self.bread * functional;
        let xg = &self.design * g;
        xg.component_mul(&self.weights)
    }

    /// Fitted value `x'β̂` at an arbitrary design row.
    pub fn predict(&self, row: &[f64]) -> f64 {
        row.iter().zip(self.coefficients.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn sandwich_cov(&self, flavor: Vce) -> Sandwich {
        sandwich_cov(self, flavor)
    }
}

/// A sandwich covariance plus the rows (if any) whose HC2/HC3 factor fell
/// back to HC1 because their leverage was one.
#[derive(Debug, Clone)]
pub struct Sandwich {
    pub cov: DMatrix<f64>,
    pub flavor: Vce,
    pub fallback_rows: Vec<usize>,
}

/// Solves `min Σ w_i (y_i - x_i'β)²` through a QR factorization of the
/// `√w`-scaled design.
pub fn wls_fit(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> Result<LocalFit> {
    wls_fit_named(x, y, w, &[])
}

/// As [`wls_fit`], with column names used in rank-deficiency errors.
pub fn wls_fit_named(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    names: &[String],
) -> Result<LocalFit> {
    let (n, k) = x.shape();
    if y.len() != n || w.len() != n {
        return Err(RdError::InvalidArgument(format!(
            "design has {n} rows but outcome has {} and weights {}",
            y.len(),
            w.len()
        )));
    }
    if let Some(bad) = w.iter().position(|&v| !v.is_finite() || v < 0.0) {
        return Err(RdError::InvalidArgument(format!("weight {bad} is negative or not finite")));
    }
    let pos: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    if k == 0 || pos.len() < k {
        return Err(RdError::InsufficientData {
            what: "weighted least squares".into(),
            needed: k.max(1),
            available: pos.len(),
        });
    }

    let m = pos.len();
    let sw: Vec<f64> = pos.iter().map(|&i| w[i].sqrt()).collect();
    let a = DMatrix::from_fn(m, k, |r, c| sw[r] * x[(pos[r], c)]);
    let b = DVector::from_fn(m, |r, _| sw[r] * y[pos[r]]);

    let col_norms: Vec<f64> = (0..k).map(|c| a.column(c).norm()).collect();
    let qr = a.qr();
    let r = qr.r();
    for c in 0..k {
        if r[(c, c)].abs() <= RANK_TOLERANCE * col_norms[c] || col_norms[c] == 0.0 {
            let name = names.get(c).cloned().unwrap_or_else(|| format!("x{c}"));
            return Err(RdError::RankDeficient { column: c, name });
        }
    }
    let q = qr.q();

    let qtb = q.transpose() * &b;
    let coefficients = r
        .solve_upper_triangular(&qtb)
        .ok_or(RdError::SingularMatrix("triangular solve"))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or(RdError::SingularMatrix("triangular inverse"))?;
    let bread = &r_inv * r_inv.transpose();
    let bread = (&bread + bread.transpose()) * 0.5;

    let mut leverages = DVector::zeros(n);
    for (row, &i) in pos.iter().enumerate() {
        leverages[i] = q.row(row).norm_squared();
    }
    let residuals = y - x * &coefficients;

    let sv = r.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition_number = if smin > 0.0 { smax / smin } else { f64::INFINITY };

    Ok(LocalFit {
        design: x.clone(),
        weights: w.clone(),
        coefficients,
        residuals,
        leverages,
        bread,
        condition_number,
        n_positive: m,
    })
}

/// `(X'WX)⁻¹ X'W Σ̂ W X (X'WX)⁻¹` with `Σ̂ = diag(s_i e_i²)` and `s_i` set by
/// the HC flavor, using the weighted leverages.
pub fn sandwich_cov(fit: &LocalFit, flavor: Vce) -> Sandwich {
    let k = fit.design_dim();
    let n = fit.n_positive();
    let mut meat = DMatrix::zeros(k, k);
    let mut fallback_rows = Vec::new();
    for i in 0..fit.n_rows() {
        let w = fit.weights[i];
        if w <= 0.0 {
            continue;
        }
        let (scale, fell_back) = hc_scale(flavor, fit.leverages[i], n, k);
        if fell_back {
            fallback_rows.push(i);
        }
        let e = fit.residuals[i];
        let s = w * w * e * e * scale;
        let xi = fit.design.row(i);
        meat.ger(s, &xi.transpose(), &xi.transpose(), 1.0);
    }
    if !fallback_rows.is_empty() {
        log::debug!(
            "{} row(s) with leverage one: {flavor} factor replaced by HC1 for those rows",
            fallback_rows.len()
        );
    }
    let cov = &fit.bread * meat * &fit.bread;
    let cov = (&cov + cov.transpose()) * 0.5;
    Sandwich {
        cov,
        flavor,
        fallback_rows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub statistic: f64,
    pub df: usize,
    /// Chi-square reference.
    pub p_value: f64,
    /// `statistic / df`, the robust F form with infinite denominator df.
    pub f_statistic: f64,
}

/// Wald test of `Rθ = r`: `(Rθ̂ - r)' (R V R')⁻¹ (Rθ̂ - r)` against a
/// chi-square with `rows(R)` degrees of freedom.
pub fn wald_test(
    estimates: &DVector<f64>,
    cov: &DMatrix<f64>,
    restriction: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Result<WaldTest> {
    let q = restriction.nrows();
    if q == 0
        || restriction.ncols() != estimates.len()
        || cov.shape() != (estimates.len(), estimates.len())
        || rhs.len() != q
    {
        return Err(RdError::InvalidArgument("inconsistent Wald test dimensions".into()));
    }
    let diff = restriction * estimates - rhs;
    let middle = restriction * cov * restriction.transpose();
    let middle = (&middle + middle.transpose()) * 0.5;
    let chol = middle
        .cholesky()
        .ok_or(RdError::SingularMatrix("Wald test covariance"))?;
    let statistic = diff.dot(&chol.solve(&diff)).max(0.0);
    let chi2 = ChiSquared::new(q as f64).map_err(|e| RdError::InvalidArgument(e.to_string()))?;
    let p_value = if statistic == 0.0 { 1.0 } else { chi2.sf(statistic) };
    Ok(WaldTest {
        statistic,
        df: q,
        p_value,
        f_statistic: statistic / q as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_interpolate() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 5.0]);
        let w = DVector::from_element(2, 1.0);
        let fit = wls_fit(&x, &y, &w).unwrap();
        assert!((fit.coefficients()[0] - 1.0).abs() < 1e-14);
        assert!((fit.coefficients()[1] - 2.0).abs() < 1e-14);
        assert!(fit.residuals().amax() < 1e-14);
    }

    #[test]
    fn duplicated_column_is_named() {
        let x = DMatrix::from_fn(10, 3, |i, j| match j {
            0 => 1.0,
            _ => i as f64,
        });
        let y = DVector::from_fn(10, |i, _| i as f64);
        let w = DVector::from_element(10, 1.0);
        let names = vec!["const".to_string(), "x".to_string(), "x_copy".to_string()];
        match wls_fit_named(&x, &y, &w, &names) {
            Err(RdError::RankDeficient { column, name }) => {
                assert_eq!(column, 2);
                assert_eq!(name, "x_copy");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_few_positive_weights() {
        let x = DMatrix::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_element(4, 1.0);
        let w = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(wls_fit(&x, &y, &w), Err(RdError::InsufficientData { .. })));
    }

    #[test]
    fn saturated_fit_falls_back_for_leverage_one() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![0.3, 0.9]);
        let w = DVector::from_element(2, 1.0);
        let fit = wls_fit(&x, &y, &w).unwrap();
        assert!(fit.leverages().iter().all(|&l| (l - 1.0).abs() < 1e-12));
        let s = fit.sandwich_cov(Vce::HC3);
        assert_eq!(s.fallback_rows, vec![0, 1]);
        assert!(s.cov.iter().all(|v| v.is_finite()));
        assert!(fit.sandwich_cov(Vce::HC0).fallback_rows.is_empty());
    }

    #[test]
    fn wald_exact_restriction_gives_unit_p() {
        let est = DVector::from_vec(vec![1.5, 1.5]);
        let cov = DMatrix::from_row_slice(2, 2, &[0.4, 0.0, 0.0, 0.7]);
        let r = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let t = wald_test(&est, &cov, &r, &DVector::zeros(1)).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
        assert_eq!(t.df, 1);
    }

    #[test]
    fn wald_singular_covariance() {
        let est = DVector::from_vec(vec![1.0, 2.0]);
        let cov = DMatrix::zeros(2, 2);
        let r = DMatrix::identity(2, 2);
        assert!(matches!(
            wald_test(&est, &cov, &r, &DVector::zeros(2)),
            Err(RdError::SingularMatrix(_))
        ));
    }

    #[test]
    fn wald_one_coordinate_matches_normal() {
        // z = 1.96 gives the two-sided 5% point.
        let est = DVector::from_vec(vec![1.96 * 2.0]);
        let cov = DMatrix::from_element(1, 1, 4.0);
        let t = wald_test(&est, &cov, &DMatrix::identity(1, 1), &DVector::zeros(1)).unwrap();
        assert!((t.p_value - 0.04999579).abs() < 1e-6);
    }

    #[test]
    fn vce_parse_roundtrip() {
        for v in [Vce::HC0, Vce::HC1, Vce::HC2, Vce::HC3] {
            assert_eq!(v.to_string().parse::<Vce>().unwrap(), v);
        }
        assert!("HC9".parse::<Vce>().is_err());
    }
}
