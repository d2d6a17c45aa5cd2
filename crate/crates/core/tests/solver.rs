mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use prodmed_core::linalg::SymEigen;
use prodmed_core::metric::{empirical_objective, ProductChart, ProductPoint, ProductSample};
use prodmed_core::solver::{
    estimate_a_alpha, estimate_a_alpha_with_steps, estimate_sigma_and_sandwich, marginal_median, product_weiszfeld,
    SolverConfig,
};
use rand::seq::SliceRandom;
use rand::Rng;

/// Exhaustive 401 × 401 search of the mean Euclidean distance over `[0, 4] × [0, 3]`.
fn fermat_grid_oracle(points: &[[f64; 2]]) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=400 {
        for j in 0..=400 {
            let (x, y) = (4.0 * i as f64 / 400.0, 3.0 * j as f64 / 400.0);
            let f: f64 = points.iter().map(|p| ((x - p[0]).powi(2) + (y - p[1]).powi(2)).sqrt()).sum();
            if f < best.0 {
                best = (f, x, y);
            }
        }
    }
    (best.1, best.2)
}

const FERMAT: [[f64; 2]; 3] = [[0.0, 0.0], [4.0, 0.0], [0.0, 3.0]];
/// Output of `fermat_grid_oracle(&FERMAT)`.
const FERMAT_GRID: (f64, f64) = (0.70, 0.75);
const FERMAT_CELL: (f64, f64) = (0.01, 0.0075);

#[test]
fn fermat_oracle_is_frozen() {
    let (x, y) = fermat_grid_oracle(&FERMAT);
    assert!((x - FERMAT_GRID.0).abs() < 1e-12 && (y - FERMAT_GRID.1).abs() < 1e-12);
}

#[test]
fn fermat_point_matches_grid_oracle() {
    // Degenerate product: every N-coordinate sits at the origin.
    let s = sample(FERMAT.iter().map(|p| pp(p, &[0.0])).collect());
    let fit = product_weiszfeld(a(1.0), &s, None, &SolverConfig::default()).unwrap();
    assert!(fit.converged);
    let p = vec_of(&fit.location.p);
    assert!((p[0] - FERMAT_GRID.0).abs() <= FERMAT_CELL.0, "{p}");
    assert!((p[1] - FERMAT_GRID.1).abs() <= FERMAT_CELL.1, "{p}");
    assert_eq!(vec_of(&fit.location.q)[0], 0.0);
}

/// `s ↦ Σ d_BW(diag(s, s), diag(t, t))` scanned over `[1, 9]` with step 1e-3.
fn bw_ray_scan(ts: &[f64]) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=8000 {
        let s = 1.0 + 1e-3 * k as f64;
        let f: f64 = ts.iter().map(|t| 2f64.sqrt() * (s.sqrt() - t.sqrt()).abs()).sum();
        if f < best.0 {
            best = (f, s);
        }
    }
    best.1
}

const BW_RAY_MEDIAN: f64 = 4.0;

#[test]
fn bw_marginal_median_of_commuting_diagonals() {
    assert!((bw_ray_scan(&[1.0, 4.0, 9.0]) - BW_RAY_MEDIAN).abs() < 1e-9);
    let pts = [diag(&[1.0, 1.0]), diag(&[4.0, 4.0]), diag(&[9.0, 9.0])];
    let fit = marginal_median(&pts, &SolverConfig::default()).unwrap();
    assert!(fit.converged);
    let m = fit.location.as_matrix().unwrap();
    assert!(m[(0, 1)].abs() < 1e-9 && (m[(0, 0)] - m[(1, 1)]).abs() < 1e-9);
    assert!((m[(0, 0)] - BW_RAY_MEDIAN).abs() < 1e-3, "{m}");
}

#[test]
fn marginal_median_of_symmetric_triple_and_constant_data() {
    let fit = marginal_median(&[e(&[-1.0]), e(&[0.0]), e(&[1.0])], &SolverConfig::default()).unwrap();
    assert_eq!(vec_of(&fit.location)[0], 0.0);
    let same = vec![diag(&[2.0, 5.0]); 3];
    assert_eq!(marginal_median(&same, &SolverConfig::default()).unwrap().location, diag(&[2.0, 5.0]));
}

/// Hessian of the objective in `g_α`-orthonormal coordinates by second
/// differences, for Euclidean 1 × 1 data at `m = 0`.
fn objective_hessian(s: &ProductSample, alpha: f64, h: f64) -> DMatrix<f64> {
    let f = |c: [f64; 2]| {
        let m = pp(&[c[0] / alpha.sqrt()], &[c[1] / (2.0 - alpha).sqrt()]);
        empirical_objective(a(alpha), &m, s).unwrap()
    };
    let mut hess = DMatrix::zeros(2, 2);
    for i in 0..2 {
        for j in 0..2 {
            let mut c = [[0.0; 2]; 4];
            c[0][i] += h;
            c[0][j] += h;
            c[1][i] += h;
            c[1][j] -= h;
            c[2][i] -= h;
            c[2][j] += h;
            c[3][i] -= h;
            c[3][j] -= h;
            hess[(i, j)] = (f(c[0]) - f(c[1]) - f(c[2]) + f(c[3])) / (4.0 * h * h);
        }
    }
    hess
}

#[test]
fn jacobian_matches_objective_hessian_on_two_points() {
    let s = sample(vec![pp(&[-1.0], &[0.5]), pp(&[1.0], &[-0.5])]);
    for alpha in [0.4, 0.8, 1.0, 1.5] {
        let m = pp(&[0.0], &[0.0]);
        let jac = estimate_a_alpha(a(alpha), &m, &s).unwrap().matrix;
        let oracle = objective_hessian(&s, alpha, 1e-3);
        assert!((&jac - &oracle).norm() / oracle.norm() < 1e-3, "α={alpha}\n{jac}\n{oracle}");
    }
}

fn gaussian_sample(seed: u64, n: usize, dm: usize, dn: usize) -> ProductSample {
    let mut r = rng(seed);
    sample((0..n).map(|_| ProductPoint::new(random_vec(&mut r, dm), random_vec(&mut r, dn))).collect())
}

#[test]
fn jacobian_is_stable_under_step_doubling() {
    let s = gaussian_sample(31, 200, 2, 2);
    let fit = product_weiszfeld(a(0.7), &s, None, &SolverConfig::default()).unwrap();
    let base = estimate_a_alpha(a(0.7), &fit.location, &s).unwrap();
    let wide =
        estimate_a_alpha_with_steps(a(0.7), &fit.location, &s, (2.0 * base.steps.0, 2.0 * base.steps.1)).unwrap();
    let scale = base.matrix.abs().max();
    for (x, y) in base.matrix.iter().zip(wide.matrix.iter()) {
        assert!((x - y).abs() < 0.05 * scale);
    }
}

#[test]
fn jacobian_is_psd_and_nearly_diagonal_for_gaussian_data() {
    let s = gaussian_sample(32, 5000, 1, 1);
    let fit = product_weiszfeld(a(1.0), &s, None, &SolverConfig::default()).unwrap();
    let jac = estimate_a_alpha(a(1.0), &fit.location, &s).unwrap().matrix;
    assert!(SymEigen::new(&jac).min() > 0.0);
    let off = jac[(0, 1)].abs() / (jac[(0, 0)] * jac[(1, 1)]).sqrt();
    assert!(off < 0.1, "{jac}");
}

#[test]
fn sandwich_is_symmetric_psd_and_block_diagonal_for_symmetric_data() {
    let s = gaussian_sample(33, 4000, 2, 1);
    let fit = product_weiszfeld(a(0.9), &s, None, &SolverConfig::default()).unwrap();
    let pieces = estimate_sigma_and_sandwich(a(0.9), &fit.location, &s).unwrap();
    for m in [&pieces.sigma_hat, &pieces.v_hat] {
        assert!((m - m.transpose()).abs().max() < 1e-10);
        assert!(SymEigen::new(m).min() > -1e-10);
    }
    let v = &pieces.v_hat;
    let cross = v[(0, 2)].abs().max(v[(1, 2)].abs()) / v.abs().max();
    assert!(cross < 0.1, "{v}");
}

fn random_fixture(r: &mut rand_chacha::ChaCha20Rng, k: usize) -> ProductSample {
    let n = 6 + k % 15;
    sample(
        (0..n)
            .map(|_| {
                let q = if k.is_multiple_of(2) { random_vec(r, 2) } else { spd(random_spd(r, 2)) };
                ProductPoint::new(random_vec(r, 2), q)
            })
            .collect(),
    )
}

#[test]
fn descent_stationarity_and_objective_consistency() {
    let mut r = rng(34);
    let cfg = SolverConfig::default();
    for k in 0..80 {
        let s = random_fixture(&mut r, k);
        let alpha = a(r.random_range(0.05..1.95));
        let fit = product_weiszfeld(alpha, &s, None, &cfg).unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
        assert!((fit.objective - empirical_objective(alpha, &fit.location, &s).unwrap()).abs() <= 1e-12);
        if fit.converged {
            assert!(fit.residual <= 10.0 * cfg.tolerance, "fixture {k}: residual {}", fit.residual);
        }
    }
}

fn location_gap(x: &ProductPoint, y: &ProductPoint) -> f64 {
    let chart = ProductChart::new(x).unwrap();
    let t = chart.log(y).unwrap().tangent;
    chart.norm(&t, prodmed_core::metric::Frame::Unscaled).unwrap()
}

#[test]
fn shuffling_the_sample_does_not_move_the_median() {
    let mut r = rng(35);
    let cfg = SolverConfig { tolerance: 1e-12, max_iterations: 20_000, ..SolverConfig::default() };
    for k in 0..20 {
        let s = random_fixture(&mut r, k);
        let mut pts = s.points().to_vec();
        pts.shuffle(&mut r);
        let shuffled = sample(pts);
        let alpha = a(r.random_range(0.1..1.9));
        // A common starting point isolates the effect of observation order.
        let init = s.points()[0].clone();
        let f1 = product_weiszfeld(alpha, &s, Some(&init), &cfg).unwrap();
        let f2 = product_weiszfeld(alpha, &shuffled, Some(&init), &cfg).unwrap();
        assert!(location_gap(&f1.location, &f2.location) < 1e-9);
    }
}

#[test]
fn coincident_iterate_is_returned_exactly() {
    let z = ProductPoint::new(e(&[1.0, 2.0]), diag(&[2.0, 3.0]));
    let s = sample(vec![z.clone(); 4]);
    let fit = product_weiszfeld(a(1.3), &s, None, &SolverConfig::default()).unwrap();
    assert_eq!(fit.location, z);
    assert_eq!(fit.iterations, 1);
}

#[test]
fn symmetric_line_fit() {
    let s = sample(vec![pp(&[-1.0, 0.0], &[0.0, 0.0]), pp(&[0.0, 0.0], &[0.0, 0.0]), pp(&[1.0, 0.0], &[0.0, 0.0])]);
    let fit = product_weiszfeld(a(1.0), &s, None, &SolverConfig::default()).unwrap();
    assert!(vec_of(&fit.location.p)[0].abs() < 1e-12);
    assert_eq!(vec_of(&fit.location.q), &DVector::zeros(2));
}
