use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rdcov::wls::{sandwich_cov, wald_test, wls_fit, Vce};

fn rng(rep: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(20240601);
    r.set_stream(rep as u64);
    r
}

#[test]
fn hc0_is_unbiased_for_the_sandwich_under_heteroskedasticity() {
    let n = 400;
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { -1.0 + 2.0 * i as f64 / (n - 1) as f64 });
    let sd: Vec<f64> = (0..n).map(|i| 0.5 + x[(i, 1)].abs()).collect();
    let w = DVector::from_element(n, 1.0);

    // (X'X)⁻¹ X'ΩX (X'X)⁻¹ for the slope
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    let omega = DMatrix::from_diagonal(&DVector::from_iterator(n, sd.iter().map(|s| s * s)));
    let truth = (&xtx_inv * x.transpose() * omega * &x * &xtx_inv)[(1, 1)];

    let reps = 10_000;
    let draws: Vec<(f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut r = rng(rep);
            let y = DVector::from_fn(n, |i, _| {
                let e: f64 = StandardNormal.sample(&mut r);
                1.0 + 2.0 * x[(i, 1)] + sd[i] * e
            });
            let fit = wls_fit(&x, &y, &w).unwrap();
            (fit.coefficients()[1], sandwich_cov(&fit, Vce::HC0).cov[(1, 1)])
        })
        .collect();
    let mean_b = draws.iter().map(|d| d.0).sum::<f64>() / reps as f64;
    let emp_var = draws.iter().map(|d| (d.0 - mean_b).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let mean_hc0 = draws.iter().map(|d| d.1).sum::<f64>() / reps as f64;
    assert!((mean_hc0 / truth - 1.0).abs() < 0.05, "{mean_hc0} vs {truth}");
    assert!((emp_var / truth - 1.0).abs() < 0.05, "{emp_var} vs {truth}");
}

#[test]
fn wald_p_values_are_uniform_under_the_null() {
    let n = 500;
    let reps = 2000;
    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => (i as f64 * 0.731).sin(),
        _ => (i as f64 * 0.173).cos(),
    });
    let w = DVector::from_element(n, 1.0);
    let r = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let mut p: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut g = rng(1_000_000 + rep);
            let y = DVector::from_fn(n, |_, _| {
                let e: f64 = StandardNormal.sample(&mut g);
                0.3 + e
            });
            let fit = wls_fit(&x, &y, &w).unwrap();
            let cov = sandwich_cov(&fit, Vce::HC3).cov;
            wald_test(fit.coefficients(), &cov, &r, &DVector::zeros(2)).unwrap().p_value
        })
        .collect();
    p.sort_by(f64::total_cmp);
    let nf = reps as f64;
    let d = p
        .iter()
        .enumerate()
        .map(|(i, &u)| ((i + 1) as f64 / nf - u).max(u - i as f64 / nf))
        .fold(0.0, f64::max);
    let critical = 1.628 / nf.sqrt();
    assert!(d < critical, "KS distance {d} exceeds {critical}");
}
