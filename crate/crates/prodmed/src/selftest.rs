//! Property suites run by `prodmed selftest`.
//!
//! Every check draws its fixtures from its own stream of the supplied seed and
//! reports the worst observed value against a fixed tolerance.

use nalgebra::{DMatrix, DVector};
use prodmed_core::balanced::{balance_mean_from_squares, bisect_squares, BisectStatus};
use prodmed_core::calibration::{unit_rescale_check, CalibrationConfig};
use prodmed_core::linalg::symmetrize;
use prodmed_core::manifold::{factor_distance, FactorChart, FactorPoint, TangentVector};
use prodmed_core::metric::{
    median_score, sample_squares, scaled_distance, Frame, ProductChart, ProductPoint, ProductSample, ScaleValue,
};
use prodmed_core::path::{default_grid, solve_path, PathConfig};
use prodmed_core::solver::{product_weiszfeld, SolverConfig};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::experiments::{run_experiment, ExperimentConfig, GridSpec};
use crate::generators::stream_rng;

pub const CONCAVITY_TOL: f64 = 1e-10;
pub const ENDPOINT_TOL: f64 = 1e-6;
pub const GRADIENT_TOL: f64 = 1e-4;
pub const BISECTION_TOL: f64 = 1e-4;
pub const EQUIVARIANCE_TOL: f64 = 1e-9;
pub const COMMUTING_TOL: f64 = 1e-10;
pub const ROUND_TRIP_TOL: f64 = 1e-8;
/// Relative slack allowed between successive Weiszfeld objective values.
pub const DESCENT_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    /// Largest violation measure seen; compared against `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(id: u8, name: &'static str, worst: f64, tolerance: f64, detail: String) -> Self {
        Self { id, name, passed: worst <= tolerance, worst, tolerance, detail }
    }
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_vector(rng: &mut ChaCha20Rng, d: usize, scale: f64) -> FactorPoint {
    FactorPoint::Euclidean(DVector::from_fn(d, |_, _| scale * normal(rng)))
}

fn random_spd(rng: &mut ChaCha20Rng, d: usize) -> FactorPoint {
    let a = DMatrix::from_fn(d, d, |_, _| normal(rng));
    let s = symmetrize(&(&a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.2));
    FactorPoint::spd(s).expect("well-conditioned SPD fixture")
}

/// Fixture kinds cycled through by the checks: Euclidean pairs and
/// Euclidean × SPD.
fn random_point(rng: &mut ChaCha20Rng, kind: usize) -> ProductPoint {
    match kind % 3 {
        0 => ProductPoint::new(random_vector(rng, 2, 1.0), random_vector(rng, 2, 1.0)),
        1 => ProductPoint::new(random_vector(rng, 3, 2.0), random_vector(rng, 1, 0.5)),
        _ => ProductPoint::new(random_vector(rng, 2, 1.0), random_spd(rng, 2)),
    }
}

fn random_sample(rng: &mut ChaCha20Rng, n: usize, kind: usize) -> ProductSample {
    ProductSample::new((0..n).map(|_| random_point(rng, kind)).collect()).expect("fixture sample")
}

fn tight() -> SolverConfig {
    SolverConfig { tolerance: 1e-12, max_iterations: 20_000, ..SolverConfig::default() }
}

/// Second α-differences of `d_α(m, z)` on a 50-point grid over `[0.05, 1.95]`.
pub fn check_concavity(seed: u64) -> CheckResult {
    let mut rng = stream_rng(seed, 6);
    let grid: Vec<f64> = (0..50).map(|k| 0.05 + 1.9 * k as f64 / 49.0).collect();
    let mut worst = f64::NEG_INFINITY;
    for f in 0..1000 {
        let m = random_point(&mut rng, f);
        let z = random_point(&mut rng, f);
        let d: Vec<f64> = grid.iter().map(|a| scaled_distance(ScaleValue::new(*a).unwrap(), &m, &z).unwrap()).collect();
        for w in d.windows(3) {
            worst = worst.max(w[0] - 2.0 * w[1] + w[2]);
        }
    }
    CheckResult::new(6, "concavity", worst, CONCAVITY_TOL, "1000 fixtures, 50-point grid".into())
}

/// Grid-profiled minimum against the smaller endpoint profile.
pub fn check_endpoint_identity(seed: u64) -> CheckResult {
    let mut rng = stream_rng(seed, 7);
    let cfg = PathConfig { solver: tight(), ..PathConfig::default() };
    let grid = default_grid();
    let mut worst = 0.0f64;
    let mut failures = 0;
    for k in 0..20 {
        let n = 5 + k % 8;
        let sample = random_sample(&mut rng, n, k);
        match solve_path(&sample, &grid, &cfg) {
            Ok(path) => {
                let inner = path.profiled.iter().copied().fold(f64::INFINITY, f64::min);
                let ends = path.profiled[0].min(*path.profiled.last().unwrap());
                worst = worst.max(ends - inner);
            }
            Err(_) => failures += 1,
        }
    }
    if failures > 0 {
        worst = f64::INFINITY;
    }
    CheckResult::new(7, "endpoint identity", worst, ENDPOINT_TOL, format!("20 datasets, {failures} solver failures"))
}

/// Riemannian gradient of `m ↦ d_α(m, z)` in `g_α` against central
/// differences along `g_1`-orthonormal chart directions.
pub fn check_score_gradient(seed: u64) -> CheckResult {
    let mut rng = stream_rng(seed, 8);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for f in 0..1000 {
        let m = random_point(&mut rng, f);
        let z = random_point(&mut rng, f);
        let alpha = ScaleValue::new(rng.random_range(0.05..1.95)).unwrap();
        let a = alpha.value();
        let chart = ProductChart::new(&m).unwrap();
        let score = median_score(alpha, &m, &z).unwrap();
        let psi = chart.coords(&score.tangent(), Frame::Unscaled).unwrap();
        let (dm, dn) = chart.dim();
        let mut fd = DVector::zeros(dm + dn);
        for k in 0..dm + dn {
            let mut e = vec![0.0; dm + dn];
            e[k] = h;
            let plus = chart.exp(&chart.from_coords(&e, Frame::Unscaled).unwrap()).unwrap();
            e[k] = -h;
            let minus = chart.exp(&chart.from_coords(&e, Frame::Unscaled).unwrap()).unwrap();
            let diff = scaled_distance(alpha, &plus, &z).unwrap() - scaled_distance(alpha, &minus, &z).unwrap();
            // Convert the g_1 partial into the g_α-gradient component.
            let w = if k < dm { a } else { 2.0 - a };
            fd[k] = diff / (2.0 * h) / w;
        }
        let err = (&fd + &psi).norm() / psi.norm().max(1e-300);
        worst = worst.max(err);
    }
    CheckResult::new(8, "score gradient", worst, GRADIENT_TOL, "1000 fixtures, central step 1e-6".into())
}

/// `H_{n,α}` monotone in α, and bisection against a 1e-4 grid scan.
pub fn check_balance_bisection(seed: u64) -> CheckResult {
    let mut rng = stream_rng(seed, 9);
    let eps: f64 = 0.05;
    let steps = ((2.0 - 2.0 * eps) / 1e-4).round() as usize;
    let mut worst = 0.0f64;
    let mut monotone_breaks = 0;
    let mut roots = 0;
    for k in 0..100 {
        let n = 10 + k % 20;
        let mut pts: Vec<ProductPoint> = Vec::with_capacity(n);
        let cm = (rng.random_range(-1.5f64..1.5)).exp();
        for _ in 0..n {
            let p = random_point(&mut rng, k);
            pts.push(p.rescaled(cm, 1.0));
        }
        let sample = ProductSample::new(pts).unwrap();
        let m = random_point(&mut rng, k);
        let sq = sample_squares(&m, &sample).unwrap();
        let mut prev = f64::NEG_INFINITY;
        let mut scan_root = None;
        for i in 0..=steps {
            let a = eps + 1e-4 * i as f64;
            let h = balance_mean_from_squares(a, &sq).unwrap().value;
            if h < prev - 1e-14 {
                monotone_breaks += 1;
            }
            if i > 0 && scan_root.is_none() && prev < 0.0 && h >= 0.0 {
                scan_root = Some(a - 0.5e-4);
            }
            prev = h;
        }
        let out = bisect_squares(&sq, eps, 1e-10).unwrap();
        match (out.status, scan_root) {
            (BisectStatus::Root, Some(r)) => {
                roots += 1;
                worst = worst.max((out.alpha.value() - r).abs());
            }
            (BisectStatus::LowerBoundary, None) | (BisectStatus::UpperBoundary, None) => {}
            _ => worst = f64::INFINITY,
        }
    }
    if monotone_breaks > 0 {
        worst = f64::INFINITY;
    }
    CheckResult::new(
        9,
        "balance bisection",
        worst,
        BISECTION_TOL,
        format!("100 samples, {roots} interior roots, {monotone_breaks} monotonicity breaks"),
    )
}

/// Calibrated median under random `(c_M, c_N)` rescalings.
pub fn check_calibration_equivariance(seed: u64) -> CheckResult {
    let mut rng = stream_rng(seed, 10);
    let cfg = CalibrationConfig { solver: tight(), ..CalibrationConfig::default() };
    let mut worst = 0.0f64;
    let mut used = 0;
    let mut k = 0;
    while used < 30 && k < 200 {
        let sample = random_sample(&mut rng, 15 + k % 10, k);
        k += 1;
        let c_m = rng.random_range(-1.0f64..1.0).exp();
        let c_n = rng.random_range(-1.0f64..1.0).exp();
        let Ok(rep) = unit_rescale_check(&sample, c_m, c_n, &cfg) else {
            worst = f64::INFINITY;
            continue;
        };
        let (lo, hi) = (cfg.epsilon, 2.0 - cfg.epsilon);
        let interior = |a: f64| a > lo && a < hi;
        if !(interior(rep.alpha_reference) && interior(rep.alpha_rescaled)) {
            continue;
        }
        used += 1;
        worst = worst.max(rep.drift);
    }
    CheckResult::new(10, "calibration equivariance", worst, EQUIVARIANCE_TOL, format!("{used} rescalings"))
}

fn commuting_worst(rng: &mut ChaCha20Rng) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..200 {
        let d = 2 + k % 4;
        let g = DMatrix::from_fn(d, d, |_, _| normal(rng));
        let q = g.qr().q();
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..5.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..5.0)).collect();
        let make = |l: &[f64]| symmetrize(&(&q * DMatrix::from_diagonal(&DVector::from_row_slice(l)) * q.transpose()));
        let exact: f64 = a.iter().zip(&b).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum::<f64>().sqrt();
        let got = factor_distance(&FactorPoint::Spd(make(&a)), &FactorPoint::Spd(make(&b))).unwrap();
        worst = worst.max((got - exact).abs() / exact);
    }
    worst
}

fn matrix_gap(a: &FactorPoint, b: &FactorPoint) -> f64 {
    match (a, b) {
        (FactorPoint::Spd(x), FactorPoint::Spd(y)) => (x - y).norm() / y.norm(),
        (FactorPoint::Euclidean(x), FactorPoint::Euclidean(y)) => (x - y).norm() / y.norm().max(1.0),
        _ => f64::INFINITY,
    }
}

fn round_trip_worst(rng: &mut ChaCha20Rng) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..200 {
        let d = 2 + k % 4;
        let (p, x) = (random_spd(rng, d), random_spd(rng, d));
        let chart = FactorChart::new(&p).unwrap();
        let v = chart.log(&x).unwrap();
        worst = worst.max(matrix_gap(&chart.exp(&v).unwrap(), &x));
        let half = v.scale(0.5);
        let back = chart.log(&chart.exp(&half).unwrap()).unwrap();
        worst = worst.max(tangent_gap(&back, &half));
    }
    worst
}

fn tangent_gap(a: &TangentVector, b: &TangentVector) -> f64 {
    match (a, b) {
        (TangentVector::Spd(x), TangentVector::Spd(y)) => (x - y).norm() / y.norm().max(1e-12),
        (TangentVector::Euclidean(x), TangentVector::Euclidean(y)) => (x - y).norm() / y.norm().max(1e-12),
        _ => f64::INFINITY,
    }
}

/// Largest relative objective increase along Weiszfeld traces.
fn descent_worst(rng: &mut ChaCha20Rng) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut fixtures = 0;
    for k in 0..60 {
        let sample = random_sample(rng, 8 + k % 12, k);
        let alpha = ScaleValue::new(rng.random_range(0.05..1.95)).unwrap();
        let fit = product_weiszfeld(alpha, &sample, None, &tight()).unwrap();
        for w in fit.trace.windows(2) {
            worst = worst.max((w[1] - w[0]) / w[0].abs().max(1e-300));
        }
        fixtures += 1;
    }
    (worst, fixtures)
}

/// Solver location against a grid-search oracle on `ℝ × ℝ` and `ℝ × SPD(1)`,
/// in cells of the initial 400 × 400 grid. SPD(1) is searched in `√σ`,
/// where the BW distance is Euclidean.
fn grid_search_worst(rng: &mut ChaCha20Rng) -> f64 {
    let cells = 400usize;
    let mut worst = 0.0f64;
    for k in 0..12 {
        let spd = k % 2 == 1;
        let n = 5 + k % 4;
        let xs: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        let ys: Vec<f64> =
            (0..n).map(|_| if spd { rng.random_range(0.3f64..3.0).sqrt() } else { normal(rng) }).collect();
        let alpha = rng.random_range(0.2..1.8);
        let pts: Vec<ProductPoint> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| {
                let q = if spd {
                    FactorPoint::spd(DMatrix::from_element(1, 1, y * y)).unwrap()
                } else {
                    FactorPoint::Euclidean(DVector::from_element(1, *y))
                };
                ProductPoint::new(FactorPoint::Euclidean(DVector::from_element(1, *x)), q)
            })
            .collect();
        let sample = ProductSample::new(pts).unwrap();
        let fit = product_weiszfeld(ScaleValue::new(alpha).unwrap(), &sample, None, &tight()).unwrap();
        let mx = fit.location.p.as_vector().unwrap()[0];
        let my = match &fit.location.q {
            FactorPoint::Euclidean(v) => v[0],
            FactorPoint::Spd(s) => s[(0, 0)].sqrt(),
        };
        let span = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        };
        let ((x0, x1), (y0, y1)) = (span(&xs), span(&ys));
        let (hx, hy) = ((x1 - x0) / cells as f64, (y1 - y0) / cells as f64);
        let objective = |gx: f64, gy: f64| -> f64 {
            xs.iter().zip(&ys).map(|(x, y)| (alpha * (gx - x).powi(2) + (2.0 - alpha) * (gy - y).powi(2)).sqrt()).sum()
        };
        // Exhaustive search over the data box, then over ±4 cells of the
        // incumbent at the same resolution, three more times.
        let (mut cx, mut cy, mut wx, mut wy) = (x0, y0, x1 - x0, y1 - y0);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for _ in 0..4 {
            let (sx, sy) = (wx / cells as f64, wy / cells as f64);
            for i in 0..=cells {
                for j in 0..=cells {
                    let (gx, gy) = (cx + sx * i as f64, cy + sy * j as f64);
                    let v = objective(gx, gy);
                    if v < best.0 {
                        best = (v, gx, gy);
                    }
                }
            }
            (wx, wy) = (8.0 * sx, 8.0 * sy);
            (cx, cy) = (best.1 - 4.0 * sx, best.2 - 4.0 * sy);
        }
        worst = worst.max(((mx - best.1) / hx).abs().max(((my - best.2) / hy).abs()));
    }
    worst
}

/// BW closed form, log/exp round trips, monotone descent and grid search.
pub fn check_geometry(seed: u64) -> CheckResult {
    let mut rng = stream_rng(seed, 11);
    let commuting = commuting_worst(&mut rng);
    let round = round_trip_worst(&mut rng);
    let (descent, fixtures) = descent_worst(&mut rng);
    let grid = grid_search_worst(&mut rng);
    // Each part is normalized by its own tolerance.
    let parts = [commuting / COMMUTING_TOL, round / ROUND_TRIP_TOL, descent / DESCENT_SLACK, grid];
    let worst = parts.iter().copied().fold(0.0, f64::max);
    CheckResult::new(
        11,
        "geometry oracles",
        worst,
        1.0,
        format!(
            "commuting rel err {commuting:.2e}, round trip {round:.2e}, descent {descent:.2e} over {fixtures} traces, grid offset {grid:.2e} cells"
        ),
    )
}

fn determinism_configs() -> Vec<ExperimentConfig> {
    let mut e1 = ExperimentConfig::defaults(1).unwrap();
    e1.sizes = vec![40];
    e1.replications = 6;
    e1.grid = GridSpec { lo: 0.05, hi: 1.95, steps: 9 };
    let mut e2 = ExperimentConfig::defaults(2).unwrap();
    e2.sizes = vec![40];
    e2.replications = 4;
    e2.etas = vec![0.0, 0.1];
    e2.rescale = vec![0.5, 1.0, 2.0];
    vec![e1, e2]
}

/// Experiment outputs under 1, 4 and 8 worker threads.
pub fn check_determinism(seed: u64) -> CheckResult {
    let mut mismatches = 0;
    let mut runs = 0;
    for base in determinism_configs() {
        let mut reference: Option<Vec<(String, String)>> = None;
        for threads in [1, 4, 8] {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.threads = Some(threads);
            let files = match run_experiment(&cfg) {
                Ok(out) => out.files(true),
                Err(_) => {
                    mismatches += 1;
                    continue;
                }
            };
            runs += 1;
            match &reference {
                None => reference = Some(files),
                Some(r) if *r != files => mismatches += 1,
                Some(_) => {}
            }
        }
    }
    CheckResult::new(12, "determinism", mismatches as f64, 0.0, format!("{runs} runs, {mismatches} mismatches"))
}

/// Every property check, in id order.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        check_concavity(seed),
        check_endpoint_identity(seed),
        check_score_gradient(seed),
        check_balance_bisection(seed),
        check_calibration_equivariance(seed),
        check_geometry(seed),
        check_determinism(seed),
    ]
}
