//! Compact-support kernels, bandwidth-localized weights and the boundary
//! kernel moment constants used by bandwidth selection.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};
use crate::ingest::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Triangular,
    Uniform,
    Epanechnikov,
}

impl Kernel {
    pub fn value(self, u: f64) -> f64 {
        let a = u.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Triangular => 1.0 - a,
            Kernel::Uniform => 0.5,
            Kernel::Epanechnikov => 0.75 * (1.0 - u * u),
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Triangular => "triangular",
            Kernel::Uniform => "uniform",
            Kernel::Epanechnikov => "epanechnikov",
        })
    }
}

impl FromStr for Kernel {
    type Err = RdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "triangular" | "tri" => Ok(Kernel::Triangular),
            "uniform" | "uni" => Ok(Kernel::Uniform),
            "epanechnikov" | "epa" => Ok(Kernel::Epanechnikov),
            other => Err(RdError::InvalidArgument(format!("unknown kernel `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Both,
}

impl Side {
    fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Both => "both",
        }
    }

    pub fn contains(self, x: f64) -> bool {
        match self {
            Side::Left => x < 0.0,
            Side::Right => x >= 0.0,
            Side::Both => true,
        }
    }
}

/// Rows inside the closed window `|x| <= h` on the requested side(s).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalWeights {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub n_left: usize,
    pub n_right: usize,
}

/// Kernel weights `K(x_i / h)` for rows with `|x_i| <= h`.
///
/// The window is closed, so a row sitting exactly at `±h` is part of the
/// effective sample even though the triangular and Epanechnikov kernels give
/// it zero weight.
pub fn localized_weights(d: &Dataset, kernel: Kernel, h: f64, side: Side) -> Result<LocalWeights> {
    if h.is_nan() || h <= 0.0 {
        return Err(RdError::InvalidArgument(format!("bandwidth {h} must be positive")));
    }
    let mut out = LocalWeights {
        indices: Vec::new(),
        weights: Vec::new(),
        n_left: 0,
        n_right: 0,
    };
    for (i, &x) in d.x().iter().enumerate() {
        if !side.contains(x) || x.abs() > h {
            continue;
        }
        out.indices.push(i);
        out.weights.push(kernel.value(x / h));
        if x < 0.0 {
            out.n_left += 1;
        } else {
            out.n_right += 1;
        }
    }
    if side != Side::Right && out.n_left == 0 {
        return Err(RdError::EmptyWindow {
            side: Side::Left.name(),
            bandwidth: h,
        });
    }
    if side != Side::Left && out.n_right == 0 {
        return Err(RdError::EmptyWindow {
            side: Side::Right.name(),
            bandwidth: h,
        });
    }
    Ok(out)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j as f64 + 1.0) * z * p1 - j as f64 * p2) / (j as f64 + 1.0);
            }
            dp = nf * (z * p0 - p1) / (z * z - 1.0);
            let step = p0 / dp;
            z -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Node count for the moment quadrature. Every integrand is a polynomial on
/// `[0, 1]` of degree well below `2 * QUAD_NODES - 1`, so the rule is exact up
/// to rounding.
const QUAD_NODES: usize = 48;

/// One-sided kernel moments for a degree-`p` boundary fit.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMoments {
    pub p: usize,
    /// `∫₀¹ r(u) r(u)' K(u) du`
    pub gamma: DMatrix<f64>,
    /// `∫₀¹ r(u) u^{p+1} K(u) du`
    pub theta: DVector<f64>,
    /// `∫₀¹ r(u) r(u)' K(u)² du`
    pub psi: DMatrix<f64>,
}

impl BoundaryMoments {
    pub fn compute(kernel: Kernel, p: usize) -> Self {
        let (nodes, weights) = gauss_legendre(QUAD_NODES);
        let k = p + 1;
        let mut gamma = DMatrix::zeros(k, k);
        let mut theta = DVector::zeros(k);
        let mut psi = DMatrix::zeros(k, k);
        for (t, wt) in nodes.iter().zip(&weights) {
            // map [-1, 1] -> [0, 1]
            let u = 0.5 * (t + 1.0);
            let w = 0.5 * wt;
            let kv = kernel.value(u);
            let r: Vec<f64> = (0..k).map(|j| u.powi(j as i32)).collect();
            let up = u.powi(k as i32);
            for a in 0..k {
                theta[a] += w * r[a] * up * kv;
                for b in 0..k {
                    gamma[(a, b)] += w * r[a] * r[b] * kv;
                    psi[(a, b)] += w * r[a] * r[b] * kv * kv;
                }
            }
        }
        BoundaryMoments { p, gamma, theta, psi }
    }

    fn gamma_inv_e0(&self) -> DVector<f64> {
        let mut e0 = DVector::zeros(self.p + 1);
        e0[0] = 1.0;
        self.gamma
            .clone()
            .cholesky()
            .expect("kernel moment matrix is positive definite")
            .solve(&e0)
    }

    /// `e₀' Γ⁻¹ ϑ`
    pub fn bias_constant(&self) -> f64 {
        self.gamma_inv_e0().dot(&self.theta)
    }

    /// `e₀' Γ⁻¹ Ψ Γ⁻¹ e₀`
    pub fn variance_constant(&self) -> f64 {
        let g = self.gamma_inv_e0();
        (g.transpose() * &self.psi * &g)[(0, 0)]
    }
}
