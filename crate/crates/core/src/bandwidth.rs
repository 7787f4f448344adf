//! Plug-in MSE-optimal bandwidth for the boundary RD estimator.
//!
//! The asymptotic MSE of the degree-`p` jump estimator is
//! `h^{2(p+1)} B² + V / (n h)`, minimized at
//! `h = [V / (2(p+1) B² n)]^{1/(2p+3)}`. The bias and variance terms combine
//! kernel moment constants with pilot estimates of the (p+1)-th derivatives,
//! residual variances and the score density at the cutoff.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};
use crate::ingest::Dataset;
use crate::inference::RdEstimate;
use crate::kernels::{BoundaryMoments, Kernel};
use crate::local_fit::{fit_pooled, FitSpec};
use crate::wls::Vce;

/// Multiplier on `sd(x) n^{-1/5}` for the density pilot window.
pub const DENSITY_WINDOW_FACTOR: f64 = 1.84;

/// The regularization term is `(REGULARIZATION_SE_MULTIPLE · se(B̂))²`.
pub const REGULARIZATION_SE_MULTIPLE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pilot {
    pub sigma2_left: f64,
    pub sigma2_right: f64,
    /// Estimated (p+1)-th derivative of the regression function at the
    /// cutoff, from the left.
    pub deriv_left: f64,
    pub deriv_right: f64,
    pub density_at_cutoff: f64,
    pub density_window: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub h_mse: f64,
    pub pilot: Pilot,
    /// `e₀'Γ⁻¹ϑ`
    pub bias_const: f64,
    /// `e₀'Γ⁻¹ΨΓ⁻¹e₀`
    pub var_const: f64,
    /// `B̂`
    pub bias: f64,
    /// `V̂`
    pub variance: f64,
    /// `λ` added to `B̂²` in the denominator.
    pub regularization: f64,
    pub regularization_active: bool,
    pub n: usize,
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

fn power_column(j: usize, interacted: bool) -> String {
    let base = if j == 1 { "x".to_string() } else { format!("x^{j}") };
    if interacted {
        format!("T*{base}")
    } else {
        base
    }
}

/// Selects the MSE-optimal main bandwidth. The spec's `h` is ignored; its
/// kernel, degree and covariates are used.
pub fn select_bandwidth(d: &Dataset, spec: &FitSpec) -> Result<BandwidthReport> {
    let d = d.complete_cases(&spec.covariates)?;
    let p = spec.p;
    let pilot_degree = p + 3;
    let need = p + 5;
    let (n_left, n_right) = (d.n_left(), d.n_right());
    for (count, side) in [(n_left, "left"), (n_right, "right")] {
        if count < need {
            return Err(RdError::InsufficientData {
                what: format!("bandwidth pilot on the {side} side"),
                needed: need,
                available: count,
            });
        }
    }

    // Global unweighted pilot: fully interacted polynomial of degree p+3 on
    // the whole support, plus common covariate coefficients.
    let pilot_spec = FitSpec {
        kernel: Kernel::Uniform,
        ..spec.clone()
    };
    let pilot = fit_pooled(&d, &pilot_spec, pilot_degree, f64::INFINITY)?;
    let coefs = pilot.fit.coefficients();
    let j_left = pilot.column(&power_column(p + 1, false)).expect("pilot column");
    let j_jump = pilot.column(&power_column(p + 1, true)).expect("pilot column");
    let a_left = coefs[j_left];
    let a_right = coefs[j_left] + coefs[j_jump];
    let fact = factorial(p + 1);
    let deriv_left = fact * a_left;
    let deriv_right = fact * a_right;

    let dof = pilot_degree + 1;
    let (mut rss_l, mut rss_r) = (0.0, 0.0);
    for (r, &i) in pilot.rows.iter().enumerate() {
        let e2 = pilot.fit.residuals()[r].powi(2);
        if d.x()[i] < 0.0 {
            rss_l += e2;
        } else {
            rss_r += e2;
        }
    }
    let sigma2_left = rss_l / (n_left - dof) as f64;
    let sigma2_right = rss_r / (n_right - dof) as f64;

    // B̂ / C_B = a₊ - (-1)^{p+1} a₋, linear in the pilot coefficients.
    let sign = if (p + 1).is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut grad = DVector::zeros(coefs.len());
    grad[j_left] = 1.0 - sign;
    grad[j_jump] = 1.0;
    let diff = grad.dot(coefs);
    let cov = pilot.fit.sandwich_cov(Vce::HC1).cov;
    let diff_var = (grad.transpose() * &cov * &grad)[(0, 0)].max(0.0);

    let moments = BoundaryMoments::compute(spec.kernel, p);
    let bias_const = moments.bias_constant();
    let var_const = moments.variance_constant();

    let n = d.n();
    let nf = n as f64;
    let mean = d.x().iter().sum::<f64>() / nf;
    let sd = (d.x().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let window = DENSITY_WINDOW_FACTOR * sd * nf.powf(-0.2);
    let inside = d.x().iter().filter(|x| x.abs() <= window).count();
    if inside == 0 || window.is_nan() || window <= 0.0 {
        return Err(RdError::ZeroDensityWindow);
    }
    let density = inside as f64 / (2.0 * window * nf);

    let bias = bias_const * diff;
    let regularization = (REGULARIZATION_SE_MULTIPLE * bias_const).powi(2) * diff_var;
    let variance = var_const * (sigma2_left + sigma2_right) / density;
    let denom = 2.0 * (p as f64 + 1.0) * (bias * bias + regularization) * nf;
    if denom.is_nan() || denom <= 0.0 {
        return Err(RdError::InvalidArgument(
            "bias and its regularization are both zero; bandwidth is unbounded".into(),
        ));
    }
    let h_mse = (variance / denom).powf(1.0 / (2.0 * p as f64 + 3.0));
    let regularization_active = regularization > bias * bias;
    if regularization_active {
        log::debug!("bandwidth regularization dominates the estimated bias");
    }

    Ok(BandwidthReport {
        h_mse,
        pilot: Pilot {
            sigma2_left,
            sigma2_right,
            deriv_left,
            deriv_right,
            density_at_cutoff: density,
            density_window: window,
        },
        bias_const,
        var_const,
        bias,
        variance,
        regularization,
        regularization_active,
        n,
    })
}

/// Percent change in confidence-interval length from `canonical` to
/// `adjusted`.
pub fn coverage_shrinkage_report(canonical: &RdEstimate, adjusted: &RdEstimate) -> f64 {
    100.0 * (adjusted.ci.length() / canonical.ci.length() - 1.0)
}
