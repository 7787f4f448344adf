mod common;

use proptest::prelude::*;
use rdcov::bandwidth::select_bandwidth;
use rdcov::inference::{bias_corrected_two_step, estimate_rd, BiasRoute, InferenceConfig};
use rdcov::kernels::{BoundaryMoments, Kernel, Side};
use rdcov::local_fit::{fit_pooled, fit_side_at, intercept_difference, FitSpec};
use rdcov::Dataset;

fn grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.37) / n as f64).collect()
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, a| acc * x + a)
}

#[test]
fn uniform_kernel_moments_match_closed_forms() {
    // K = 1/2 on [0, 1]: Γ_ab = 1/(2(a+b+1)), ϑ_a = 1/(2(a+p+2)),
    // Ψ_ab = 1/(4(a+b+1)).
    for p in 0..=3 {
        let m = BoundaryMoments::compute(Kernel::Uniform, p);
        for a in 0..=p {
            assert!((m.theta[a] - 0.5 / (a + p + 2) as f64).abs() < 1e-10);
            for b in 0..=p {
                let h = 1.0 / (a + b + 1) as f64;
                assert!((m.gamma[(a, b)] - 0.5 * h).abs() < 1e-10);
                assert!((m.psi[(a, b)] - 0.25 * h).abs() < 1e-10);
            }
        }
    }
    // p = 1 by hand: e₀'Γ⁻¹ = (8, -12), so C_B = 8/6 - 12/8 = -1/6 and
    // C_V = (64 - 96 + 48) / 4 = 4.
    let m = BoundaryMoments::compute(Kernel::Uniform, 1);
    assert!((m.bias_constant() + 1.0 / 6.0).abs() < 1e-10);
    assert!((m.variance_constant() - 4.0).abs() < 1e-10);
}

#[test]
fn epanechnikov_gamma_closed_form() {
    // ∫₀¹ u^k · ¾(1 - u²) du = ¾ (1/(k+1) - 1/(k+3))
    let m = BoundaryMoments::compute(Kernel::Epanechnikov, 1);
    let mom = |k: usize| 0.75 * (1.0 / (k + 1) as f64 - 1.0 / (k + 3) as f64);
    assert!((m.gamma[(0, 0)] - mom(0)).abs() < 1e-12);
    assert!((m.gamma[(0, 1)] - mom(1)).abs() < 1e-12);
    assert!((m.gamma[(1, 1)] - mom(2)).abs() < 1e-12);
    assert!((m.theta[1] - mom(3)).abs() < 1e-12);
}

#[test]
fn two_step_equals_equivalent_route_on_fixed_sample() {
    let d = common::sample(11, 800, 0.4, 0.3);
    for covs in [vec![], vec!["z1".to_string(), "z2".to_string()]] {
        let spec = FitSpec::default().with_h(0.45).with_covariates(covs);
        let eq = estimate_rd(&d, &spec, &InferenceConfig::default()).unwrap();
        let two = estimate_rd(
            &d,
            &spec,
            &InferenceConfig {
                route: BiasRoute::TwoStep,
                ..InferenceConfig::default()
            },
        )
        .unwrap();
        assert!((eq.tau_bc - two.tau_bc).abs() < 1e-10, "{} {}", eq.tau_bc, two.tau_bc);
        assert!((eq.se_robust - two.se_robust).abs() < 1e-10 * eq.se_robust.max(1.0));
    }
}

#[test]
fn replicating_the_sample_shrinks_the_bandwidth() {
    let x = grid(1500);
    let y: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let e = ((i * 7919) % 1009) as f64 / 1009.0 - 0.5;
            let m = if v >= 0.0 { 0.3 + v - 8.0 * v * v } else { v + 8.0 * v * v };
            m + 0.2 * e
        })
        .collect();
    let base = Dataset::new(x, y, 0.0).unwrap();
    let h1 = select_bandwidth(&base, &FitSpec::default()).unwrap();
    // the k^{-1/5} law holds once the regularization term is negligible
    assert!(h1.regularization < 0.05 * h1.bias * h1.bias, "{h1:?}");
    for k in [2usize, 4] {
        let rows: Vec<usize> = (0..k).flat_map(|_| 0..base.n()).collect();
        let rep = base.subset(&rows);
        let hk = select_bandwidth(&rep, &FitSpec::default()).unwrap().h_mse;
        let expected = h1.h_mse * (k as f64).powf(-0.2);
        assert!((hk / expected - 1.0).abs() < 0.01, "k={k}: {hk} vs {expected}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn degree_p_polynomials_are_reproduced(
        left in prop::collection::vec(-3.0..3.0f64, 2),
        right in prop::collection::vec(-3.0..3.0f64, 2),
        h in 0.3..1.0f64,
    ) {
        let x = grid(160);
        let y: Vec<f64> = x.iter().map(|&v| if v >= 0.0 { poly(&right, v) } else { poly(&left, v) }).collect();
        let d = Dataset::new(x, y, 0.0).unwrap();
        let fit = fit_pooled(&d, &FitSpec::default(), 1, h).unwrap();
        prop_assert!((fit.headline() - (right[0] - left[0])).abs() < 1e-9);
    }

    #[test]
    fn degree_q_polynomials_are_reproduced_after_bias_correction(
        left in prop::collection::vec(-3.0..3.0f64, 3),
        right in prop::collection::vec(-3.0..3.0f64, 3),
        h in 0.3..1.0f64,
    ) {
        let x = grid(160);
        let y: Vec<f64> = x.iter().map(|&v| if v >= 0.0 { poly(&right, v) } else { poly(&left, v) }).collect();
        let d = Dataset::new(x, y, 0.0).unwrap();
        let jump = right[0] - left[0];
        let spec = FitSpec::default().with_h(h);
        prop_assert!((fit_pooled(&d, &spec, 2, h).unwrap().headline() - jump).abs() < 1e-9);
        let two = bias_corrected_two_step(&d, &spec, h).unwrap();
        prop_assert!((two.tau_bc - jump).abs() < 1e-9);
    }

    #[test]
    fn pooled_jump_equals_difference_of_side_intercepts(
        seed in any::<u64>(),
        h in 0.25..1.5f64,
        p in 0usize..=2,
        kernel in prop_oneof![Just(Kernel::Triangular), Just(Kernel::Uniform), Just(Kernel::Epanechnikov)],
    ) {
        let d = common::sample(seed, 300, 0.5, 0.5);
        let spec = FitSpec { p, kernel, ..FitSpec::default() };
        let pooled = fit_pooled(&d, &spec, p, h).unwrap();
        let l = fit_side_at(&d, kernel, h, Side::Left, p).unwrap();
        let r = fit_side_at(&d, kernel, h, Side::Right, p).unwrap();
        prop_assert!((pooled.headline() - intercept_difference(&l, &r)).abs() < 1e-10);
    }

    #[test]
    fn bias_correction_routes_agree_when_b_equals_h(seed in any::<u64>(), h in 0.3..1.0f64) {
        let d = common::sample(seed, 400, 0.2, 0.4);
        let spec = FitSpec::default().with_h(h);
        let eq = estimate_rd(&d, &spec, &InferenceConfig::default()).unwrap();
        let two = bias_corrected_two_step(&d, &spec, h).unwrap();
        prop_assert!((eq.tau_bc - two.tau_bc).abs() < 1e-10);
        prop_assert!((eq.se_robust - two.se_robust).abs() < 1e-10);
        prop_assert!((eq.tau - two.tau).abs() < 1e-12);
    }

    #[test]
    fn covariate_affine_maps_leave_the_adjusted_jump(
        seed in any::<u64>(),
        shift in -100.0..100.0f64,
        scale in prop_oneof![-50.0..-0.01f64, 0.01..50.0f64],
    ) {
        let d = common::sample(seed, 400, 0.3, 0.3);
        let z: Vec<f64> = d.covariate("z1").unwrap().iter().map(|v| shift + scale * v.unwrap()).collect();
        let moved = d.clone().with_covariate_values("z1", z).unwrap();
        let spec = FitSpec::default().with_h(0.6).with_covariates(["z1", "z2"]);
        let a = estimate_rd(&d, &spec, &InferenceConfig::default()).unwrap();
        let b = estimate_rd(&moved, &spec, &InferenceConfig::default()).unwrap();
        prop_assert!((a.tau - b.tau).abs() < 1e-9);
        prop_assert!((a.tau_bc - b.tau_bc).abs() < 1e-9);
        prop_assert!((a.se_robust - b.se_robust).abs() < 1e-9);
    }

    #[test]
    fn row_order_does_not_matter(seed in any::<u64>(), rot in 1usize..399) {
        let d = common::sample(seed, 400, 0.3, 0.3);
        let perm: Vec<usize> = (0..400).map(|i| (i * 7 + rot) % 400).collect();
        let shuffled = d.subset(&perm);
        let spec = FitSpec::default().with_h(0.5).with_covariates(["z1"]);
        let a = estimate_rd(&d, &spec, &InferenceConfig::default()).unwrap();
        let b = estimate_rd(&shuffled, &spec, &InferenceConfig::default()).unwrap();
        prop_assert!((a.tau - b.tau).abs() < 1e-10);
        prop_assert!((a.ci.lower - b.ci.lower).abs() < 1e-10);
        prop_assert_eq!((a.n_left, a.n_right), (b.n_left, b.n_right));
    }

    #[test]
    fn shifting_score_and_cutoff_together_changes_nothing(seed in any::<u64>(), c in -1000.0..1000.0f64) {
        let d = common::sample(seed, 300, 0.3, 0.3);
        let moved = Dataset::new(d.x().iter().map(|x| x + c).collect(), d.outcome().to_vec(), c).unwrap();
        let base = Dataset::new(d.x().to_vec(), d.outcome().to_vec(), 0.0).unwrap();
        let spec = FitSpec::default().with_h(0.5);
        let a = estimate_rd(&base, &spec, &InferenceConfig::default()).unwrap();
        let b = estimate_rd(&moved, &spec, &InferenceConfig::default()).unwrap();
        // centering reintroduces rounding of order |c| ε in the scores
        let tol = 1e-9 * (1.0 + c.abs());
        prop_assert!((a.tau - b.tau).abs() < tol);
        prop_assert!((a.se_robust - b.se_robust).abs() < tol);
    }
}
