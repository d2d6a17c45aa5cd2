mod common;

use common::*;
use prodmed_core::metric::{ProductPoint, ProductSample};
use prodmed_core::path::{
    bootstrap_indices, default_grid, equispaced_grid, finite_difference_derivative, path_derivative, solve_path,
    PathConfig, SensitivityMethod,
};
use prodmed_core::solver::{product_weiszfeld, SolverConfig};
use rand::Rng;

fn tight() -> SolverConfig {
    SolverConfig { tolerance: 1e-12, max_iterations: 20_000, ..SolverConfig::default() }
}

fn skewed_sample(seed: u64, n: usize) -> ProductSample {
    let mut r = rng(seed);
    sample(
        (0..n)
            .map(|_| {
                let shift = if r.random_bool(0.3) { 3.0 } else { 0.0 };
                let p = [normal(&mut r) + shift, normal(&mut r)];
                let q = [0.5 * normal(&mut r), 0.5 * normal(&mut r) + 0.5 * shift];
                pp(&p, &q)
            })
            .collect(),
    )
}

#[test]
fn swapping_factors_mirrors_the_path() {
    let s = skewed_sample(41, 120);
    let swapped = sample(s.points().iter().map(|z| ProductPoint::new(z.q.clone(), z.p.clone())).collect());
    let grid = default_grid();
    let cfg = PathConfig { solver: tight(), ..PathConfig::default() };
    let a = solve_path(&s, &grid, &cfg).unwrap();
    let b = solve_path(&swapped, &grid, &cfg).unwrap();
    let k = grid.len();
    for i in 0..k {
        assert!((grid[i].value() + grid[k - 1 - i].value() - 2.0).abs() < 1e-12);
        assert!((a.displacement_m[i] - b.displacement_n[k - 1 - i]).abs() < 1e-6);
        assert!((a.displacement_n[i] - b.displacement_m[k - 1 - i]).abs() < 1e-6);
        assert!((a.profiled[i] - b.profiled[k - 1 - i]).abs() < 1e-9);
    }
}

#[test]
fn warm_start_direction_does_not_matter() {
    let s = skewed_sample(42, 150);
    let grid = default_grid();
    let fwd = solve_path(&s, &grid, &PathConfig { solver: tight(), ..PathConfig::default() }).unwrap();
    let back = solve_path(&s, &grid, &PathConfig { solver: tight(), reverse: true, ..PathConfig::default() }).unwrap();
    assert!(fwd.all_converged() && back.all_converged());
    for (x, y) in fwd.displacement_m.iter().zip(&back.displacement_m) {
        assert!((x - y).abs() < 1e-6);
    }
    for (x, y) in fwd.displacement_n.iter().zip(&back.displacement_n) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn reference_is_the_unit_scale_fit() {
    let s = skewed_sample(43, 80);
    let grid = equispaced_grid(0.05, 1.95, 8, 0.05).unwrap();
    let path = solve_path(&s, &grid, &PathConfig::default()).unwrap();
    assert!(grid.iter().all(|a| (a.value() - 1.0).abs() > 1e-12));
    let one = product_weiszfeld(a(1.0), &s, None, &tight()).unwrap();
    let chart = prodmed_core::metric::ProductChart::new(&one.location).unwrap();
    let gap = chart.norm(&chart.log(&path.reference.location).unwrap().tangent, prodmed_core::metric::Frame::Unscaled);
    assert!(gap.unwrap() < 1e-6);
}

#[test]
fn profile_minimum_sits_at_an_endpoint() {
    let s = skewed_sample(44, 200);
    let grid = default_grid();
    let path = solve_path(&s, &grid, &PathConfig::default()).unwrap();
    let lo = path.profiled.iter().cloned().fold(f64::INFINITY, f64::min);
    let ends = path.profiled[0].min(*path.profiled.last().unwrap());
    assert!(ends - lo <= 1e-6);
    for w in path.profiled.windows(3) {
        assert!(w[0] - 2.0 * w[1] + w[2] <= 1e-8);
    }
}

#[test]
fn implicit_derivative_agrees_with_central_differences() {
    let s = skewed_sample(45, 400);
    let cfg = tight();
    let h = 1e-3;
    for alpha in [0.5, 1.0, 1.4] {
        let mid = product_weiszfeld(a(alpha), &s, None, &cfg).unwrap();
        let lo = product_weiszfeld(a(alpha - h), &s, Some(&mid.location), &cfg).unwrap();
        let hi = product_weiszfeld(a(alpha + h), &s, Some(&mid.location), &cfg).unwrap();
        let fd = finite_difference_derivative(a(alpha), &lo.location, &mid.location, &hi.location, 2.0 * h).unwrap();
        let imp = path_derivative(a(alpha), &mid.location, &s).unwrap();
        let err = (&imp.coords - &fd.coords).norm() / fd.coords.norm();
        assert!(err < 0.05, "α={alpha}: {} vs {}", imp.coords, fd.coords);
        assert_eq!(imp.coords[0].signum(), fd.coords[0].signum());
    }
}

#[test]
fn finite_difference_method_leaves_endpoints_empty() {
    let s = skewed_sample(46, 60);
    let grid = equispaced_grid(0.2, 1.8, 9, 0.05).unwrap();
    let cfg = PathConfig { method: SensitivityMethod::FiniteDifference, ..PathConfig::default() };
    let path = solve_path(&s, &grid, &cfg).unwrap();
    assert!(path.sensitivity[0].is_none() && path.sensitivity[8].is_none());
    assert!(path.sensitivity[1..8].iter().all(|x| x.is_some()));
}

#[test]
fn bootstrap_indices_are_reproducible_and_in_range() {
    let a = bootstrap_indices(50, 9, 3);
    assert_eq!(a, bootstrap_indices(50, 9, 3));
    assert_ne!(a, bootstrap_indices(50, 9, 4));
    assert!(a.iter().all(|&i| i < 50));
}
