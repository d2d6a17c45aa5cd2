mod common;

use common::*;
use prodmed_core::balanced::{
    balance_mean, balanced_sandwich, bisect_alpha, bisect_squares, solve_balanced, BalancedConfig, BisectStatus,
};
use prodmed_core::linalg::SymEigen;
use prodmed_core::metric::{sample_squares, FactorSquares, Frame, ProductPoint, ProductSample};
use prodmed_core::solver::{product_weiszfeld, score_coordinates, SolverConfig};
use rand::Rng;

fn gaussian(seed: u64, n: usize, sd_m: f64, sd_n: f64) -> ProductSample {
    let mut r = rng(seed);
    sample((0..n).map(|_| pp(&[sd_m * normal(&mut r), sd_m * normal(&mut r)], &[sd_n * normal(&mut r)])).collect())
}

#[test]
fn balance_mean_is_monotone_on_a_fine_grid() {
    let s = gaussian(71, 300, 1.0, 2.0);
    let m = pp(&[0.3, -0.2], &[0.5]);
    let mut prev = -2.0;
    for k in 0..200 {
        let alpha = 0.05 + 1.9 * k as f64 / 199.0;
        let h = balance_mean(a(alpha), &m, &s, None).unwrap().value;
        assert!(h >= prev - 1e-14);
        prev = h;
    }
}

#[test]
fn bisection_brackets_and_reports_boundaries() {
    let interior = [FactorSquares { a: 1.0, b: 4.0 }, FactorSquares { a: 3.0, b: 0.5 }];
    let out = bisect_squares(&interior, 0.05, 1e-12).unwrap();
    assert_eq!(out.status, BisectStatus::Root);
    assert!(out.h.abs() < 1e-9);

    let m_dominant = [FactorSquares { a: 9.0, b: 1e-4 }; 3];
    assert_eq!(bisect_squares(&m_dominant, 0.05, 1e-12).unwrap().status, BisectStatus::LowerBoundary);
    let n_dominant = [FactorSquares { a: 1e-4, b: 9.0 }; 3];
    let up = bisect_squares(&n_dominant, 0.05, 1e-12).unwrap();
    assert_eq!(up.status, BisectStatus::UpperBoundary);
    assert_eq!(up.alpha.value(), 1.95);
    let flat = [FactorSquares { a: 0.0, b: 2.0 }, FactorSquares { a: 3.0, b: 0.0 }];
    let nu = bisect_squares(&flat, 0.05, 1e-12).unwrap();
    assert_eq!(nu.status, BisectStatus::NonUnique);
    assert_eq!(nu.alpha.value(), 1.0);
}

#[test]
fn mirrored_sample_balances_at_one() {
    let mut r = rng(72);
    let mut pts = Vec::new();
    for _ in 0..150 {
        let (x, y) = (normal(&mut r), normal(&mut r));
        pts.push(pp(&[x], &[y]));
        pts.push(pp(&[y], &[x]));
    }
    let s = sample(pts);
    let fit = solve_balanced(&s, &BalancedConfig::default()).unwrap();
    assert!(fit.converged);
    assert!((fit.alpha_bal.value() - 1.0).abs() < 1e-6, "{}", fit.alpha_bal.value());
    let one = product_weiszfeld(a(1.0), &s, None, &SolverConfig::default()).unwrap();
    let gap = prodmed_core::calibration::location_drift(&fit.location, &one.location).unwrap();
    assert!(gap < 1e-6);
}

#[test]
fn balanced_fit_satisfies_both_equations() {
    let s = gaussian(73, 400, 1.0, 1.7);
    let cfg = BalancedConfig::default();
    let fit = solve_balanced(&s, &cfg).unwrap();
    assert!(fit.converged && fit.status == BisectStatus::Root);
    let h = balance_mean(fit.alpha_bal, &fit.location, &s, None).unwrap().value;
    assert!(h.abs() < 1e-6);
    let again = bisect_alpha(&fit.location, &s, cfg.epsilon, 1e-12, None).unwrap();
    assert!((again.alpha.value() - fit.alpha_bal.value()).abs() < 1e-6);
    // N spreads more, so its squared distances dominate and α tips upward.
    assert!(fit.alpha_bal.value() > 1.0);
}

#[test]
fn stacked_rows_are_bounded() {
    let s = gaussian(74, 300, 1.0, 0.3);
    let cfg = BalancedConfig::default();
    let fit = solve_balanced(&s, &cfg).unwrap();
    let rows = score_coordinates(fit.alpha_bal, &fit.location, &s, Frame::Unscaled).unwrap();
    let bound = 1.0 / cfg.epsilon.sqrt();
    for row in rows.iter().flatten() {
        assert!(row.norm() <= bound + 1e-9);
    }
    for sq in sample_squares(&fit.location, &s).unwrap() {
        let h = prodmed_core::metric::balance_value(fit.alpha_bal, sq.a, sq.b).unwrap();
        assert!(h.abs() <= 1.0);
    }
}

#[test]
fn sandwich_is_psd_with_positive_alpha_se() {
    let s = gaussian(75, 500, 1.0, 1.4);
    let fit = solve_balanced(&s, &BalancedConfig::default()).unwrap();
    let inf = balanced_sandwich(&fit, &s).unwrap();
    let v = &inf.covariance;
    assert!((v - v.transpose()).abs().max() < 1e-10);
    assert!(SymEigen::new(v).min() > -1e-10);
    assert!(inf.alpha_se > 0.0);
    let (lo, hi) = inf.wald_interval;
    assert!(lo < fit.alpha_bal.value() && fit.alpha_bal.value() < hi);
    assert_eq!(inf.influence.len(), 500);
}

fn contaminated(distance: f64) -> ProductSample {
    let mut pts: Vec<ProductPoint> = gaussian(76, 400, 1.0, 1.0).points().to_vec();
    let mut r = rng(77);
    for z in pts.iter_mut().take(20) {
        *z = pp(&[distance + normal(&mut r), normal(&mut r)], &[normal(&mut r)]);
    }
    sample(pts)
}

#[test]
fn far_outliers_have_bounded_influence() {
    let mut worst = Vec::new();
    for dist in [100.0, 1000.0] {
        let s = contaminated(dist);
        let fit = solve_balanced(&s, &BalancedConfig::default()).unwrap();
        let inf = fit.inference.clone().unwrap_or_else(|| balanced_sandwich(&fit, &s).unwrap());
        let outlier = inf.influence[..20].iter().map(|v| v.norm()).fold(0.0, f64::max);
        let clean = inf.influence[20..].iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(outlier.is_finite() && outlier < 10.0 * clean, "{outlier} vs {clean}");
        worst.push(outlier);
    }
    assert!(worst[1] < 1.5 * worst[0], "{worst:?}");
}

#[test]
fn solution_does_not_depend_on_starting_scale() {
    let s = gaussian(78, 300, 1.0, 1.5);
    let mut r = rng(79);
    let base = solve_balanced(&s, &BalancedConfig::default()).unwrap();
    for _ in 0..4 {
        let init = r.random_range(0.3..1.7);
        let fit = solve_balanced(&s, &BalancedConfig { init_alpha: init, ..BalancedConfig::default() }).unwrap();
        assert!((fit.alpha_bal.value() - base.alpha_bal.value()).abs() < 1e-6, "start {init}");
    }
}
