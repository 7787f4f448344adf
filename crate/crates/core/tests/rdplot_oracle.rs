mod common;

use proptest::prelude::*;
use rdcov::rdplot::{auto_bin_count, build_rdplot, BinChoice, PlotOptions, SideBins};
use rdcov::kernels::Side;
use rdcov::Dataset;

/// Re-bins by scanning every row against explicit edge comparisons.
fn brute_force(rows: &[(f64, f64)], edges: &[f64]) -> (Vec<usize>, Vec<Option<f64>>) {
    let k = edges.len() - 1;
    let mut counts = vec![0; k];
    let mut means = vec![None; k];
    for b in 0..k {
        let last = b == k - 1;
        let members: Vec<f64> = rows
            .iter()
            .filter(|(x, _)| *x >= edges[b] && (*x < edges[b + 1] || (last && *x <= edges[b + 1])))
            .map(|r| r.1)
            .collect();
        counts[b] = members.len();
        if !members.is_empty() {
            means[b] = Some(members.iter().sum::<f64>() / members.len() as f64);
        }
    }
    (counts, means)
}

fn check_side(d: &Dataset, bins: &SideBins, keep: impl Fn(f64) -> bool) {
    let rows: Vec<(f64, f64)> = d
        .score()
        .iter()
        .zip(d.outcome())
        .filter(|(s, _)| keep(**s - d.cutoff()))
        .map(|(s, y)| (*s, *y))
        .collect();
    let (counts, means) = brute_force(&rows, &bins.edges);
    assert_eq!(bins.counts, counts);
    assert_eq!(bins.means, means);
    assert_eq!(bins.counts.iter().sum::<usize>(), bins.n);
    assert_eq!(bins.n, rows.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bins_match_brute_force(
        seed in any::<u64>(),
        n in 20usize..400,
        left in 1usize..40,
        right in 1usize..40,
        window in prop::option::of(0.1..1.2f64),
    ) {
        let d = common::sample(seed, n, 0.3, 1.0);
        prop_assume!(d.n_left() > 0 && d.n_right() > 0);
        if let Some(h) = window {
            prop_assume!(d.x().iter().any(|&x| x < 0.0 && x >= -h) && d.x().iter().any(|&x| x >= 0.0 && x <= h));
        }
        let opts = PlotOptions { bins: BinChoice::Fixed { control: left, treated: right }, window, ..PlotOptions::default() };
        let s = build_rdplot(&d, &opts).unwrap();
        let h = window.unwrap_or(f64::INFINITY);
        check_side(&d, &s.control, |x| x < 0.0 && x >= -h);
        check_side(&d, &s.treated, |x| x >= 0.0 && x <= h);
    }

    #[test]
    fn binning_ignores_row_order(seed in any::<u64>(), rot in 1usize..199) {
        let d = common::sample(seed, 200, 0.3, 1.0);
        let perm: Vec<usize> = (0..200).map(|i| (i * 13 + rot) % 200).collect();
        let opts = PlotOptions { bins: BinChoice::Fixed { control: 7, treated: 5 }, ..PlotOptions::default() };
        let a = build_rdplot(&d, &opts).unwrap();
        let b = build_rdplot(&d.subset(&perm), &opts).unwrap();
        prop_assert_eq!(&a.control.counts, &b.control.counts);
        prop_assert_eq!(&a.treated.edges, &b.treated.edges);
        for (x, y) in a.control.means.iter().zip(&b.control.means) {
            match (x, y) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (None, None) => {}
                _ => prop_assert!(false),
            }
        }
    }
}

#[test]
fn auto_counts_follow_the_rule() {
    let d = common::sample(3, 500, 0.0, 1.0);
    let n_left = d.n_left() as f64;
    assert_eq!(auto_bin_count(&d, Side::Left).unwrap(), (2.0 * n_left.powf(0.4)).ceil() as usize);
    let s = build_rdplot(&d, &PlotOptions::default()).unwrap();
    assert_eq!(s.control.counts.len(), auto_bin_count(&d, Side::Left).unwrap());
    assert_eq!(s.treated.counts.len(), auto_bin_count(&d, Side::Right).unwrap());
}

#[test]
fn overlay_is_the_unweighted_side_fit() {
    let x: Vec<f64> = (0..40).map(|i| -2.0 + i as f64 * 0.1 + 0.05).collect();
    let y: Vec<f64> = x.iter().map(|&v| if v >= 0.0 { 3.0 + 0.5 * v } else { 1.0 - v }).collect();
    let d = Dataset::new(x, y, 0.0).unwrap();
    let s = build_rdplot(&d, &PlotOptions { bins: BinChoice::Fixed { control: 4, treated: 4 }, ..PlotOptions::default() }).unwrap();
    for (x, f) in s.overlay_control.x.iter().zip(&s.overlay_control.fitted) {
        assert!((f - (1.0 - x)).abs() < 1e-10);
    }
    assert_eq!(s.overlay_treated.x.first(), Some(&0.0));
    assert!((s.overlay_treated.fitted[0] - 3.0).abs() < 1e-10);
}

#[test]
fn json_round_trip_keeps_schema() {
    let d = common::sample(8, 120, 0.2, 1.0);
    let s = build_rdplot(&d, &PlotOptions::default()).unwrap();
    let back: rdcov::BinnedSeries = serde_json::from_str(&s.to_json()).unwrap();
    assert_eq!(back, s);
    assert_eq!(back.schema_version, rdcov::rdplot::SCHEMA_VERSION);
}
