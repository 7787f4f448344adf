use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rdcov::wls::{sandwich_cov, wls_fit, Vce};

type Q = BigRational;

fn q(num: i64, den: i64) -> Q {
    Q::new(BigInt::from(num), BigInt::from(den))
}

fn to_f64(v: &Q) -> f64 {
    v.to_f64().unwrap()
}

/// Gauss-Jordan inverse over the rationals.
fn inverse(m: &[Vec<Q>]) -> Vec<Vec<Q>> {
    let n = m.len();
    let mut a: Vec<Vec<Q>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { Q::one() } else { Q::zero() }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).find(|&r| !a[r][col].is_zero()).expect("nonsingular");
        a.swap(col, piv);
        let p = a[col][col].clone();
        for v in a[col].iter_mut() {
            *v = &*v / &p;
        }
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let f = a[r][col].clone();
                let pivot_row = a[col].clone();
                for (v, pv) in a[r].iter_mut().zip(&pivot_row) {
                    *v = &*v - &f * pv;
                }
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

struct ExactFit {
    beta: Vec<Q>,
    bread: Vec<Vec<Q>>,
    resid: Vec<Q>,
    lev: Vec<Q>,
}

fn exact_wls(x: &[Vec<Q>], y: &[Q], w: &[Q]) -> ExactFit {
    let k = x[0].len();
    let mut xtwx = vec![vec![Q::zero(); k]; k];
    let mut xtwy = vec![Q::zero(); k];
    for ((xi, yi), wi) in x.iter().zip(y).zip(w) {
        for a in 0..k {
            xtwy[a] += wi * &xi[a] * yi;
            for b in 0..k {
                xtwx[a][b] += wi * &xi[a] * &xi[b];
            }
        }
    }
    let bread = inverse(&xtwx);
    let beta: Vec<Q> = (0..k).map(|a| (0..k).map(|b| &bread[a][b] * &xtwy[b]).sum()).collect();
    let resid = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| yi - xi.iter().zip(&beta).map(|(a, b)| a * b).sum::<Q>())
        .collect();
    let lev = x
        .iter()
        .zip(w)
        .map(|(xi, wi)| {
            let mut s = Q::zero();
            for a in 0..k {
                for b in 0..k {
                    s += &xi[a] * &bread[a][b] * &xi[b];
                }
            }
            wi * s
        })
        .collect();
    ExactFit { beta, bread, resid, lev }
}

fn to_nalgebra(x: &[Vec<Q>], y: &[Q], w: &[Q]) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let n = x.len();
    let k = x[0].len();
    (
        DMatrix::from_fn(n, k, |i, j| to_f64(&x[i][j])),
        DVector::from_iterator(n, y.iter().map(to_f64)),
        DVector::from_iterator(n, w.iter().map(to_f64)),
    )
}

#[test]
fn coefficients_match_exact_normal_equations() {
    // 50 rows of (1, v, v²) with uneven rational weights
    let n = 50;
    let x: Vec<Vec<Q>> = (0..n)
        .map(|i| {
            let v = q(i as i64 - 23, 17);
            vec![Q::one(), v.clone(), &v * &v]
        })
        .collect();
    let y: Vec<Q> = (0..n).map(|i| q(((i * 37) % 23) as i64 - 11, 7)).collect();
    let w: Vec<Q> = (0..n).map(|i| q(1 + (i % 5) as i64, 3)).collect();
    let exact = exact_wls(&x, &y, &w);
    let (xm, ym, wm) = to_nalgebra(&x, &y, &w);
    let fit = wls_fit(&xm, &ym, &wm).unwrap();
    for (b, e) in fit.coefficients().iter().zip(&exact.beta) {
        let e = to_f64(e);
        assert!((b - e).abs() <= 1e-10 * e.abs().max(1.0), "{b} vs {e}");
    }
    for (l, e) in fit.leverages().iter().zip(&exact.lev) {
        assert!((l - to_f64(e)).abs() < 1e-12);
    }
}

#[test]
fn hc3_matches_exact_six_point_oracle() {
    let xs = [-3, -1, 0, 2, 3, 5];
    let ys = [q(1, 1), q(3, 2), q(-1, 3), q(4, 1), q(2, 5), q(7, 2)];
    let ws = [q(1, 1), q(2, 1), q(1, 2), q(3, 2), q(1, 1), q(1, 4)];
    let x: Vec<Vec<Q>> = xs.iter().map(|&v| vec![Q::one(), q(v, 1)]).collect();
    let exact = exact_wls(&x, &ys, &ws);

    let k = 2;
    let mut meat = vec![vec![Q::zero(); k]; k];
    for i in 0..6 {
        let one_minus = Q::one() - &exact.lev[i];
        let s = &ws[i] * &ws[i] * &exact.resid[i] * &exact.resid[i] / (&one_minus * &one_minus);
        for a in 0..k {
            for b in 0..k {
                meat[a][b] += &s * &x[i][a] * &x[i][b];
            }
        }
    }
    let mut v = vec![vec![Q::zero(); k]; k];
    for a in 0..k {
        for b in 0..k {
            for c in 0..k {
                for d in 0..k {
                    v[a][b] += &exact.bread[a][c] * &meat[c][d] * &exact.bread[d][b];
                }
            }
        }
    }

    let (xm, ym, wm) = to_nalgebra(&x, &ys, &ws);
    let fit = wls_fit(&xm, &ym, &wm).unwrap();
    let s = sandwich_cov(&fit, Vce::HC3);
    assert!(s.fallback_rows.is_empty());
    for a in 0..k {
        for b in 0..k {
            let e = to_f64(&v[a][b]);
            assert!((s.cov[(a, b)] - e).abs() <= 1e-12 * e.abs(), "({a},{b}) {} vs {e}", s.cov[(a, b)]);
        }
    }
}

#[test]
fn leverages_sum_to_design_dimension() {
    let n = 40;
    let x = DMatrix::from_fn(n, 4, |i, j| ((i as f64) * 0.37 - 5.0).powi(j as i32) / (1.0 + j as f64));
    let y = DVector::from_fn(n, |i, _| (i as f64 * 1.3).sin());
    let w = DVector::from_fn(n, |i, _| 0.1 + (i % 7) as f64);
    let fit = wls_fit(&x, &y, &w).unwrap();
    assert!((fit.leverages().sum() - 4.0).abs() < 1e-10);
    assert!(fit.leverages().iter().all(|&h| (0.0..=1.0 + 1e-12).contains(&h)));
}

#[test]
fn rescaling_weights_changes_nothing() {
    let n = 30;
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 / 7.0 });
    let y = DVector::from_fn(n, |i, _| ((i * 13) % 11) as f64);
    let w = DVector::from_fn(n, |i, _| 1.0 + (i % 3) as f64);
    let a = wls_fit(&x, &y, &w).unwrap();
    let b = wls_fit(&x, &y, &(&w * 123.0)).unwrap();
    assert!((a.coefficients() - b.coefficients()).amax() < 1e-12);
    for flavor in [Vce::HC0, Vce::HC1, Vce::HC2, Vce::HC3] {
        let (va, vb) = (sandwich_cov(&a, flavor).cov, sandwich_cov(&b, flavor).cov);
        assert!((va - vb).amax() < 1e-12, "{flavor}");
    }
}

#[test]
fn hc_variants_are_ordered() {
    let n = 25;
    let x = DMatrix::from_fn(n, 3, |i, j| (i as f64 / 5.0 - 2.0).powi(j as i32));
    let y = DVector::from_fn(n, |i, _| ((i * 7) % 5) as f64 - 2.0);
    let w = DVector::from_element(n, 1.0);
    let fit = wls_fit(&x, &y, &w).unwrap();
    let v = |f| sandwich_cov(&fit, f).cov;
    let (v0, v2, v3) = (v(Vce::HC0), v(Vce::HC2), v(Vce::HC3));
    for j in 0..3 {
        assert!(v3[(j, j)] >= v2[(j, j)] && v2[(j, j)] >= v0[(j, j)]);
    }
    // HC1 is HC0 scaled by n / (n - k)
    let v1 = v(Vce::HC1);
    assert!((v1 - v0 * (25.0 / 22.0)).amax() < 1e-12);
}
