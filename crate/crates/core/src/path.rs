//! The empirical median path `α ↦ m̂_{n,α}` over a scale grid, the profiled
//! objective, factorwise displacements from the `α = 1` median, sensitivity
//! indices, and case-resampling bootstrap bands for scalar path summaries.

use alloc::vec::Vec;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::checked_inverse;
use crate::manifold::factor_distance;
use crate::math::{abs, quantile, sqrt};
use crate::metric::{Frame, ProductChart, ProductPoint, ProductSample, ProductTangent, ScaleValue, COINCIDENCE_GUARD};
use crate::solver::{estimate_a_alpha, product_weiszfeld, MedianFit, SolverConfig, MAX_CONDITION};

/// `steps` equispaced scale values on `[lo, hi]`, each carrying `epsilon`.
pub fn equispaced_grid(lo: f64, hi: f64, steps: usize, epsilon: f64) -> Result<Vec<ScaleValue>> {
    if steps < 2 || !(lo < hi) {
        return Err(Error::InvalidArgument("grid needs lo < hi and at least two points"));
    }
    if lo < epsilon - 1e-12 || hi > 2.0 - epsilon + 1e-12 {
        return Err(Error::InvalidArgument("grid must lie inside [epsilon, 2 - epsilon]"));
    }
    (0..steps)
        .map(|i| {
            let t = i as f64 / (steps - 1) as f64;
            let a = if i + 1 == steps { hi } else { lo + t * (hi - lo) };
            ScaleValue::with_epsilon(a, epsilon)
        })
        .collect()
}

/// The 39-point grid `0.05, 0.10, …, 1.95`.
pub fn default_grid() -> Vec<ScaleValue> {
    equispaced_grid(0.05, 1.95, 39, 0.05).expect("static grid")
}

fn check_grid(grid: &[ScaleValue]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty grid"));
    }
    for w in grid.windows(2) {
        if !(w[1].value() > w[0].value()) {
            return Err(Error::InvalidArgument("grid must be strictly increasing"));
        }
    }
    if grid.iter().any(|a| !a.in_interval()) {
        return Err(Error::InvalidArgument("grid must lie inside [epsilon, 2 - epsilon]"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SensitivityMethod {
    /// `ṁ_α = −A_α⁻¹ B_α` evaluated at each fit.
    Implicit,
    /// Central differences of neighbouring grid fits (interior points only).
    FiniteDifference,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathConfig {
    pub solver: SolverConfig,
    pub method: SensitivityMethod,
    /// Solve right-to-left instead of left-to-right.
    pub reverse: bool,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self { solver: SolverConfig::default(), method: SensitivityMethod::Implicit, reverse: false }
    }
}

#[derive(Clone, Debug)]
pub struct PathResult {
    pub grid: Vec<ScaleValue>,
    pub fits: Vec<MedianFit>,
    /// `φ̂_n(α) = min_m F_{n,α}(m)` at each grid point.
    pub profiled: Vec<f64>,
    /// The `α = 1` fit displacements are measured from.
    pub reference: MedianFit,
    pub displacement_m: Vec<f64>,
    pub displacement_n: Vec<f64>,
    /// `S(α)`; `None` where it could not be computed.
    pub sensitivity: Vec<Option<f64>>,
    pub sensitivity_m: Vec<Option<f64>>,
    pub sensitivity_n: Vec<Option<f64>>,
    pub method: SensitivityMethod,
}

impl PathResult {
    /// Index of the smallest profiled objective (lowest index on ties).
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.profiled.iter().enumerate() {
            if *v < self.profiled[best] {
                best = i;
            }
        }
        best
    }

    pub fn all_converged(&self) -> bool {
        self.fits.iter().all(|f| f.converged) && self.reference.converged
    }
}

fn solve_fits(
    sample: &ProductSample,
    grid: &[ScaleValue],
    cfg: &SolverConfig,
    reverse: bool,
) -> Result<Vec<MedianFit>> {
    let mut fits: Vec<Option<MedianFit>> = (0..grid.len()).map(|_| None).collect();
    let order: Vec<usize> = if reverse { (0..grid.len()).rev().collect() } else { (0..grid.len()).collect() };
    let mut warm: Option<ProductPoint> = None;
    for i in order {
        let fit = product_weiszfeld(grid[i], sample, warm.as_ref(), cfg)?;
        warm = Some(fit.location.clone());
        fits[i] = Some(fit);
    }
    Ok(fits.into_iter().map(|f| f.expect("filled")).collect())
}

/// Median path over `grid`, warm-starting each fit from its neighbour.
/// Unconverged fits are recorded, not fatal.
pub fn solve_path(sample: &ProductSample, grid: &[ScaleValue], cfg: &PathConfig) -> Result<PathResult> {
    check_grid(grid)?;
    let fits = solve_fits(sample, grid, &cfg.solver, cfg.reverse)?;
    let profiled = fits.iter().map(|f| f.objective).collect();

    let reference = match grid.iter().position(|a| abs(a.value() - 1.0) < 1e-12) {
        Some(i) => fits[i].clone(),
        None => {
            let nearest = (0..grid.len())
                .min_by(|&i, &j| abs(grid[i].value() - 1.0).total_cmp(&abs(grid[j].value() - 1.0)))
                .expect("non-empty grid");
            let one = ScaleValue::with_epsilon(1.0, grid[0].epsilon())?;
            product_weiszfeld(one, sample, Some(&fits[nearest].location), &cfg.solver)?
        }
    };
    let mut displacement_m = Vec::with_capacity(grid.len());
    let mut displacement_n = Vec::with_capacity(grid.len());
    for f in &fits {
        displacement_m.push(factor_distance(&reference.location.p, &f.location.p)?);
        displacement_n.push(factor_distance(&reference.location.q, &f.location.q)?);
    }

    let mut sensitivity = alloc::vec![None; grid.len()];
    let mut sensitivity_m = alloc::vec![None; grid.len()];
    let mut sensitivity_n = alloc::vec![None; grid.len()];
    match cfg.method {
        SensitivityMethod::Implicit => {
            for (i, f) in fits.iter().enumerate() {
                if let Ok(d) = path_derivative(grid[i], &f.location, sample) {
                    sensitivity[i] = Some(d.s);
                    sensitivity_m[i] = Some(d.s_m);
                    sensitivity_n[i] = Some(d.s_n);
                }
            }
        }
        SensitivityMethod::FiniteDifference => {
            for i in 1..grid.len().saturating_sub(1) {
                let h2 = grid[i + 1].value() - grid[i - 1].value();
                if let Ok(d) = finite_difference_derivative(
                    grid[i],
                    &fits[i - 1].location,
                    &fits[i].location,
                    &fits[i + 1].location,
                    h2,
                ) {
                    sensitivity[i] = Some(d.s);
                    sensitivity_m[i] = Some(d.s_m);
                    sensitivity_n[i] = Some(d.s_n);
                }
            }
        }
    }

    Ok(PathResult {
        grid: grid.to_vec(),
        fits,
        profiled,
        reference,
        displacement_m,
        displacement_n,
        sensitivity,
        sensitivity_m,
        sensitivity_n,
        method: cfg.method,
    })
}

/// Derivative of the median path at one scale.
#[derive(Clone, Debug)]
pub struct PathDerivative {
    pub tangent: ProductTangent,
    /// `ṁ` in the `g_α`-orthonormal frame.
    pub coords: DVector<f64>,
    /// `‖ṁ‖_{g_α}`.
    pub s: f64,
    /// `‖ṗ‖_{g_M}`.
    pub s_m: f64,
    /// `‖q̇‖_{g_N}`.
    pub s_n: f64,
    /// Observations skipped by the coincidence guard.
    pub skipped: usize,
}

fn derivative_from_coords(
    alpha: f64,
    chart: &ProductChart,
    coords: DVector<f64>,
    skipped: usize,
) -> Result<PathDerivative> {
    let (dm, _) = chart.dim();
    let s = coords.norm();
    let s_m = coords.rows(0, dm).norm() / sqrt(alpha);
    let s_n = coords.rows(dm, coords.len() - dm).norm() / sqrt(2.0 - alpha);
    let tangent = chart.from_coords(coords.as_slice(), Frame::Scaled(alpha))?;
    Ok(PathDerivative { tangent, coords, s, s_m, s_n, skipped })
}

/// `∂_α G_{n,α}(m)` in the `g_α` frame at `m`: the sample mean of
/// `−(d_M² − d_N²) / (2 d_α³) · log_m Z`.
pub fn b_alpha(alpha: ScaleValue, m: &ProductPoint, sample: &ProductSample) -> Result<(DVector<f64>, usize)> {
    let a = alpha.value();
    let chart = ProductChart::new(m)?;
    let (dm, dn) = chart.dim();
    let mut acc = DVector::zeros(dm + dn);
    let mut skipped = 0;
    for z in sample.points() {
        let log = chart.log(z)?;
        let r = log.squares.scaled(a);
        if r <= COINCIDENCE_GUARD {
            skipped += 1;
            continue;
        }
        let w = -(log.squares.a - log.squares.b) / (2.0 * r * r * r);
        acc += chart.coords(&log.tangent, Frame::Scaled(a))? * w;
    }
    Ok((acc / sample.len() as f64, skipped))
}

/// Implicit-function path derivative `ṁ_α = −A_α⁻¹ B_α` at a fitted median.
pub fn path_derivative(alpha: ScaleValue, m_hat: &ProductPoint, sample: &ProductSample) -> Result<PathDerivative> {
    let jac = estimate_a_alpha(alpha, m_hat, sample)?;
    let (b, skipped) = b_alpha(alpha, m_hat, sample)?;
    // jac.matrix is the Jacobian of −G, so −A⁻¹B = jac⁻¹ B.
    let inv = checked_inverse(&jac.matrix, MAX_CONDITION)?;
    let chart = ProductChart::new(m_hat)?;
    derivative_from_coords(alpha.value(), &chart, inv * b, skipped)
}

/// Centered difference `(log_m m₊ − log_m m₋) / (α₊ − α₋)` at the middle fit.
pub fn finite_difference_derivative(
    alpha: ScaleValue,
    m_minus: &ProductPoint,
    m_mid: &ProductPoint,
    m_plus: &ProductPoint,
    span: f64,
) -> Result<PathDerivative> {
    let chart = ProductChart::new(m_mid)?;
    let frame = Frame::Scaled(alpha.value());
    let up = chart.coords(&chart.log(m_plus)?.tangent, frame)?;
    let down = chart.coords(&chart.log(m_minus)?.tangent, frame)?;
    derivative_from_coords(alpha.value(), &chart, (up - down) / span, 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BandMethod {
    /// Per-point quantiles of the replicate summaries.
    Percentile,
    /// `estimate ± q(|replicate − estimate|)`, always containing the estimate.
    SymmetricPercentile,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    /// Lower and upper tail probabilities, default `(0.025, 0.975)`.
    pub levels: (f64, f64),
    pub method: BandMethod,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { replicates: 200, seed: 0, levels: (0.025, 0.975), method: BandMethod::Percentile }
    }
}

#[derive(Clone, Debug)]
pub struct PathBands {
    pub grid: Vec<ScaleValue>,
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub replicates: usize,
    /// Replicates discarded because some fit failed to converge.
    pub dropped: usize,
    /// More than 10% of replicates were dropped.
    pub unreliable: bool,
    pub seed: u64,
}

/// Resampling indices for replicate `b`. Replicate `b` draws from ChaCha8
/// stream `b` keyed by `seed`, so results do not depend on scheduling.
pub fn bootstrap_indices(n: usize, seed: u64, b: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// One bootstrap replicate of the path summary; `None` if any fit failed.
pub fn bootstrap_replicate<F: Fn(&ProductPoint) -> f64>(
    sample: &ProductSample,
    grid: &[ScaleValue],
    summary: &F,
    seed: u64,
    b: u64,
    cfg: &SolverConfig,
) -> Result<Option<Vec<f64>>> {
    let resampled = sample.resample(&bootstrap_indices(sample.len(), seed, b));
    let fits = solve_fits(&resampled, grid, cfg, false)?;
    if fits.iter().any(|f| !f.converged) {
        return Ok(None);
    }
    Ok(Some(fits.iter().map(|f| summary(&f.location)).collect()))
}

/// Assembles bands from per-replicate summaries.
pub fn bands_from_replicates(
    grid: &[ScaleValue],
    estimate: Vec<f64>,
    replicates: &[Option<Vec<f64>>],
    cfg: &BootstrapConfig,
) -> Result<PathBands> {
    let kept: Vec<&Vec<f64>> = replicates.iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::InvalidArgument("every bootstrap replicate failed"));
    }
    let dropped = replicates.len() - kept.len();
    let (lo_q, hi_q) = cfg.levels;
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    let mut col = Vec::with_capacity(kept.len());
    for i in 0..grid.len() {
        col.clear();
        match cfg.method {
            BandMethod::Percentile => {
                col.extend(kept.iter().map(|r| r[i]));
                lower.push(quantile(&col, lo_q).expect("non-empty"));
                upper.push(quantile(&col, hi_q).expect("non-empty"));
            }
            BandMethod::SymmetricPercentile => {
                col.extend(kept.iter().map(|r| abs(r[i] - estimate[i])));
                let w = quantile(&col, hi_q - lo_q).expect("non-empty");
                lower.push(estimate[i] - w);
                upper.push(estimate[i] + w);
            }
        }
    }
    Ok(PathBands {
        grid: grid.to_vec(),
        estimate,
        lower,
        upper,
        replicates: replicates.len(),
        dropped,
        unreliable: dropped * 10 > replicates.len(),
        seed: cfg.seed,
    })
}

/// Nonparametric bootstrap bands for `summary(m̂_{n,α})` along the grid.
pub fn bootstrap_bands<F: Fn(&ProductPoint) -> f64>(
    sample: &ProductSample,
    grid: &[ScaleValue],
    summary: &F,
    bcfg: &BootstrapConfig,
    cfg: &SolverConfig,
) -> Result<PathBands> {
    if bcfg.replicates < 50 {
        return Err(Error::InvalidArgument("bootstrap needs at least 50 replicates"));
    }
    check_grid(grid)?;
    let fits = solve_fits(sample, grid, cfg, false)?;
    let estimate = fits.iter().map(|f| summary(&f.location)).collect();
    let reps: Vec<Option<Vec<f64>>> = (0..bcfg.replicates as u64)
        .map(|b| bootstrap_replicate(sample, grid, summary, bcfg.seed, b, cfg))
        .collect::<Result<_>>()?;
    bands_from_replicates(grid, estimate, &reps, bcfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::FactorPoint;
    use alloc::vec;

    fn pp(p: &[f64], q: &[f64]) -> ProductPoint {
        ProductPoint::new(FactorPoint::euclidean_from_slice(p).unwrap(), FactorPoint::euclidean_from_slice(q).unwrap())
    }

    #[test]
    fn default_grid_shape() {
        let g = default_grid();
        assert_eq!(g.len(), 39);
        assert_eq!(g[0].value(), 0.05);
        assert_eq!(g[38].value(), 1.95);
        assert!((g[19].value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_outside_interval_rejected() {
        assert!(equispaced_grid(0.01, 1.0, 5, 0.05).is_err());
        assert!(equispaced_grid(1.0, 1.0, 5, 0.05).is_err());
    }

    #[test]
    fn single_observation_path_is_constant() {
        let z = pp(&[1.0, -2.0], &[0.5]);
        let s = ProductSample::new(vec![z.clone()]).unwrap();
        let grid = equispaced_grid(0.1, 1.9, 7, 0.05).unwrap();
        let path = solve_path(&s, &grid, &PathConfig::default()).unwrap();
        assert!(path.fits.iter().all(|f| f.location == z));
        assert!(path.profiled.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn point_mass_bands_are_degenerate() {
        let z = pp(&[1.0], &[2.0]);
        let s = ProductSample::new(vec![z; 6]).unwrap();
        let grid = equispaced_grid(0.5, 1.5, 3, 0.05).unwrap();
        let summary = |m: &ProductPoint| m.p.as_vector().unwrap()[0];
        let bcfg = BootstrapConfig { replicates: 50, seed: 3, ..BootstrapConfig::default() };
        let bands = bootstrap_bands(&s, &grid, &summary, &bcfg, &SolverConfig::default()).unwrap();
        for i in 0..3 {
            assert_eq!(bands.upper[i] - bands.lower[i], 0.0);
        }
        assert_eq!(bands.dropped, 0);
        assert!(bootstrap_bands(
            &s,
            &grid,
            &summary,
            &BootstrapConfig { replicates: 10, ..bcfg },
            &SolverConfig::default()
        )
        .is_err());
    }

    #[test]
    fn bootstrap_indices_are_seeded() {
        assert_eq!(bootstrap_indices(20, 5, 3), bootstrap_indices(20, 5, 3));
        assert_ne!(bootstrap_indices(20, 5, 3), bootstrap_indices(20, 5, 4));
    }
}
