use crt_filling::dimension::{self, box_dimension_matrix, box_dimension_tree, fit_dimension};
use crt_filling::excursion::stream_rng;
use crt_filling::stats::{self, chi_square, ks_two_sample, mean_se, ols};
use crt_filling::{ContourTree, PathGrid, PathKind};
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

const SCALES: [f64; 5] = [0.25, 0.125, 0.0625, 0.03125, 0.015625];

#[test]
fn segment_has_slope_one() {
    let n = 2048;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    let dim = box_dimension_matrix(n, |a, b| (xs[a] - xs[b]).abs(), &SCALES).unwrap();
    assert!((dim.slope - 1.0).abs() <= 0.1, "{dim:?}");
}

#[test]
fn square_has_slope_two_in_the_max_metric() {
    let k = 128;
    let pts: Vec<(f64, f64)> = (0..k * k).map(|i| ((i / k) as f64 / k as f64, (i % k) as f64 / k as f64)).collect();
    let d = |a: usize, b: usize| (pts[a].0 - pts[b].0).abs().max((pts[a].1 - pts[b].1).abs());
    let dim = box_dimension_matrix(pts.len(), d, &SCALES).unwrap();
    assert!((dim.slope - 2.0).abs() <= 0.1, "{dim:?}");
}

#[test]
fn tree_of_a_tent_is_a_segment() {
    // A tent codes a single segment of length equal to its height.
    let m = 4096;
    let values = (0..=2 * m).map(|i| i.min(2 * m - i) as f64 / m as f64).collect();
    let tree = ContourTree::finite(&PathGrid::new(PathKind::Excursion, 0.0, 1.0 / m as f64, values).unwrap()).unwrap();
    let dim = box_dimension_tree(&tree, &SCALES).unwrap();
    assert!((dim.slope - 1.0).abs() <= 0.1, "{dim:?}");
}

#[test]
fn bad_scales_are_rejected() {
    for s in [&[0.5, 0.25][..], &[0.5, 0.25, 0.25], &[0.5, 0.0, 0.125], &[0.5, 0.4, 0.3], &[1.0, f64::INFINITY, 0.1]] {
        assert!(dimension::check_scales(s).is_err(), "{s:?}");
    }
    assert!(fit_dimension(&SCALES, &[1, 2, 4, 8, 16]).is_ok());
}

#[test]
fn ols_recovers_an_exact_line() {
    let xs = [0.0, 1.0, 2.0, 3.0];
    let ys: Vec<f64> = xs.iter().map(|x| 2.5 - 0.75 * x).collect();
    let fit = ols(&xs, &ys).unwrap();
    assert!((fit.slope + 0.75).abs() < 1e-12 && (fit.intercept - 2.5).abs() < 1e-12);
    assert!(fit.slope_se < 1e-12);
    assert!(ols(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    assert!(ols(&[1.0], &[0.0]).is_err());
}

#[test]
fn mean_se_and_log_mean_exp() {
    let m = mean_se(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m.mean, 2.5);
    assert!((m.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
    let xs = [-1000.0, -1000.0 + 2f64.ln()];
    assert!((stats::log_mean_exp(&xs) - (-1000.0 + 1.5f64.ln())).abs() < 1e-9);
}

#[test]
fn ks_separates_different_laws() {
    let mut rng = stream_rng(4, 0);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let a: Vec<f64> = (0..2000).map(|_| normal.sample(&mut rng)).collect();
    let b: Vec<f64> = (0..2000).map(|_| normal.sample(&mut rng)).collect();
    let c: Vec<f64> = (0..2000).map(|_| Exp::new(1.0).unwrap().sample(&mut rng) - 1.0).collect();
    assert!(ks_two_sample(&a, &b).unwrap().p_value > 0.01);
    assert!(ks_two_sample(&a, &c).unwrap().p_value < 1e-6);
    assert_eq!(ks_two_sample(&a, &a).unwrap().statistic, 0.0);
    assert!(ks_two_sample(&a, &[]).is_err());
}

#[test]
fn chi_square_matches_hand_values() {
    let r = chi_square(&[10, 20, 30], &[20.0, 20.0, 20.0]).unwrap();
    assert!((r.statistic - 10.0).abs() < 1e-12);
    assert_eq!(r.dof, 2);
    // Two degrees of freedom: survival is exp(-x / 2).
    assert!((r.p_value - (-5.0f64).exp()).abs() < 1e-9);
    let mut rng = stream_rng(5, 0);
    let mut counts = [0usize; 6];
    for _ in 0..6000 {
        counts[rng.random_range(0..6)] += 1;
    }
    assert!(chi_square(&counts, &[1000.0; 6]).unwrap().p_value > 0.001);
    assert!(chi_square(&[1], &[1.0]).is_err());
}
