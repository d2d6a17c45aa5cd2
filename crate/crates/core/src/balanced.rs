//! The balanced estimator: a joint root of the median equation
//! `G_{n,α}(m) = 0` and the balance equation `H_{n,α}(m) = 0`, where
//! `H_{n,α}` is the sample mean of the bounded contrast `h_α`.
//!
//! For fixed `m`, `H_{n,α}` is nondecreasing in `α`, so the scale step is a
//! bisection. The outer loop alternates a warm-started Weiszfeld fit at the
//! current scale with that bisection.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::calibration::location_drift;
use crate::error::{Error, Result};
use crate::linalg::{checked_inverse, condition_number, covariance, sandwich};
use crate::math::{abs, sqrt, CompensatedSum};
use crate::metric::{
    balance_raw, sample_squares, score_from_log, FactorSquares, Frame, ProductChart, ProductPoint, ProductSample,
    ScaleValue, DEFAULT_EPSILON,
};
use crate::solver::{fd_steps, product_weiszfeld, score_residual, SolverConfig, MAX_CONDITION};

/// Normal quantile used for the Wald interval (two-sided 95%).
pub const WALD_Z: f64 = 1.96;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BalanceMean {
    pub value: f64,
    /// Observations whose balance denominator vanished.
    pub degenerate: usize,
}

fn squares_for(squares: &[FactorSquares], dims: Option<(usize, usize)>) -> Vec<FactorSquares> {
    match dims {
        Some(d) => squares.iter().map(|s| s.per_dimension(d)).collect(),
        None => squares.to_vec(),
    }
}

/// `H_{n,α}` from precomputed factor squares (already dimension-normalized
/// if requested).
pub fn balance_mean_from_squares(alpha: f64, squares: &[FactorSquares]) -> Result<BalanceMean> {
    let mut acc = CompensatedSum::new();
    let mut used = 0usize;
    let mut degenerate = 0usize;
    for s in squares {
        match balance_raw(alpha, s.a, s.b) {
            Ok(h) => {
                acc.add(h);
                used += 1;
            }
            Err(Error::DegenerateObservation) => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::AllDegenerate);
    }
    Ok(BalanceMean { value: (acc.value() / used as f64).clamp(-1.0, 1.0), degenerate })
}

/// `H_{n,α}(m)`, optionally with the per-dimension contrast `A/d_M`, `B/d_N`.
pub fn balance_mean(
    alpha: ScaleValue,
    m: &ProductPoint,
    sample: &ProductSample,
    dims: Option<(usize, usize)>,
) -> Result<BalanceMean> {
    let sq = squares_for(&sample_squares(m, sample)?, dims);
    balance_mean_from_squares(alpha.value(), &sq)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BisectStatus {
    /// A sign change was bracketed and refined.
    Root,
    /// `H > 0` on the whole interval; `α = ε` returned.
    LowerBoundary,
    /// `H < 0` on the whole interval; `α = 2 − ε` returned.
    UpperBoundary,
    /// `H ≡ 0` because every usable observation has `AB = 0`; `α = 1` returned.
    NonUnique,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BisectOutcome {
    pub alpha: ScaleValue,
    pub status: BisectStatus,
    /// `H_{n,α}` at the returned scale.
    pub h: f64,
    pub degenerate: usize,
    pub iterations: usize,
}

/// Root of `α ↦ H_{n,α}(m)` on `[ε, 2 − ε]`, to within `tol_alpha`.
pub fn bisect_alpha(
    m: &ProductPoint,
    sample: &ProductSample,
    epsilon: f64,
    tol_alpha: f64,
    dims: Option<(usize, usize)>,
) -> Result<BisectOutcome> {
    let sq = squares_for(&sample_squares(m, sample)?, dims);
    bisect_squares(&sq, epsilon, tol_alpha)
}

/// [`bisect_alpha`] on precomputed factor squares.
pub fn bisect_squares(sq: &[FactorSquares], epsilon: f64, tol_alpha: f64) -> Result<BisectOutcome> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    if !(tol_alpha > 0.0) {
        return Err(Error::InvalidArgument("bisection tolerance must be positive"));
    }
    let mut lo = epsilon;
    let mut hi = 2.0 - epsilon;
    let h_lo = balance_mean_from_squares(lo, sq)?;
    let degenerate = h_lo.degenerate;
    let flat = sq.iter().all(|s| !(s.a * s.b > 0.0));
    let done = |alpha: f64, status, h: f64, iterations| -> Result<BisectOutcome> {
        Ok(BisectOutcome { alpha: ScaleValue::with_epsilon(alpha, epsilon)?, status, h, degenerate, iterations })
    };
    if flat && h_lo.value == 0.0 {
        return done(1.0, BisectStatus::NonUnique, 0.0, 0);
    }
    if h_lo.value > 0.0 {
        return done(lo, BisectStatus::LowerBoundary, h_lo.value, 0);
    }
    let h_hi = balance_mean_from_squares(hi, sq)?.value;
    if h_hi < 0.0 {
        return done(hi, BisectStatus::UpperBoundary, h_hi, 0);
    }
    if h_lo.value == 0.0 {
        return done(lo, BisectStatus::Root, 0.0, 0);
    }
    if h_hi == 0.0 {
        return done(hi, BisectStatus::Root, 0.0, 0);
    }
    let mut iterations = 0;
    while hi - lo > tol_alpha && iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let h = balance_mean_from_squares(mid, sq)?.value;
        iterations += 1;
        if h == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if h < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let h = balance_mean_from_squares(alpha, sq)?.value;
    done(alpha, BisectStatus::Root, h, iterations)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BalancedConfig {
    pub solver: SolverConfig,
    pub epsilon: f64,
    /// Bisection width.
    pub tol_alpha: f64,
    /// Outer stop: `g_1` distance between successive locations.
    pub location_tol: f64,
    /// Outer stop: `|Δα|` between the current scale and its bisection update.
    pub alpha_tol: f64,
    pub max_outer: usize,
    pub dimension_adjusted: bool,
    pub init_alpha: f64,
    /// Secant extrapolation on `α ↦ bisect(m_α) − α` once two iterates exist.
    pub accelerate: bool,
    /// Compute the joint sandwich at the returned fit.
    pub inference: bool,
}

impl Default for BalancedConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            epsilon: DEFAULT_EPSILON,
            tol_alpha: 1e-10,
            location_tol: 1e-8,
            alpha_tol: 1e-7,
            max_outer: 100,
            dimension_adjusted: false,
            init_alpha: 1.0,
            accelerate: true,
            inference: true,
        }
    }
}

/// One outer iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuterStep {
    pub alpha: f64,
    /// Bisection root at the fitted location.
    pub alpha_update: f64,
    pub location_step: f64,
    pub inner_iterations: usize,
    pub inner_converged: bool,
    pub damped: bool,
}

/// Joint sandwich inference for `(m̂, α̂)`.
#[derive(Clone, Debug)]
pub struct BalancedInference {
    /// Jacobian of `(m, α) ↦ P_n Ξ_α(·; m)` in `g_1` normal coordinates at
    /// `m̂` followed by the raw `α` coordinate.
    pub j_hat: DMatrix<f64>,
    pub condition: f64,
    /// Covariance (divisor `n`) of the stacked rows `(ψ, h)`.
    pub xi_cov: DMatrix<f64>,
    /// `J⁻¹ Ξ J⁻ᵀ`; divide by `n` for the estimator covariance.
    pub covariance: DMatrix<f64>,
    pub alpha_se: f64,
    pub wald_interval: (f64, f64),
    /// Per-observation influence `−J⁻¹ Ξᵢ`.
    pub influence: Vec<DVector<f64>>,
}

#[derive(Clone, Debug)]
pub struct BalancedFit {
    pub location: ProductPoint,
    pub alpha_bal: ScaleValue,
    /// `H_{n,α̂}(m̂)`.
    pub h_residual: f64,
    /// `g_1`-norm of the mean score at `(m̂, α̂)`.
    pub g_residual: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Status of the last bisection.
    pub status: BisectStatus,
    /// The oscillation damping was engaged at least once.
    pub damped: bool,
    pub dimension_adjusted: bool,
    pub degenerate: usize,
    pub trace: Vec<OuterStep>,
    /// `None` when not requested, or when `J` is singular.
    pub inference: Option<BalancedInference>,
}

fn oscillating(trace: &[OuterStep]) -> bool {
    if trace.len() < 10 {
        return false;
    }
    let w = &trace[trace.len() - 10..];
    let deltas: Vec<f64> = w.iter().map(|s| s.alpha_update - s.alpha).collect();
    let flips = deltas.windows(2).filter(|p| p[0] * p[1] < 0.0).count();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in w {
        lo = lo.min(s.alpha);
        hi = hi.max(s.alpha);
    }
    flips >= 8 && hi - lo > 1e-4
}

/// Alternating solver for the balanced system.
pub fn solve_balanced(sample: &ProductSample, cfg: &BalancedConfig) -> Result<BalancedFit> {
    if sample.len() < 2 {
        return Err(Error::InvalidArgument("balanced estimator needs at least two observations"));
    }
    if cfg.max_outer < 1 {
        return Err(Error::InvalidArgument("max_outer must be at least 1"));
    }
    let eps = cfg.epsilon;
    let dims = cfg.dimension_adjusted.then(|| sample.intrinsic_dims());
    let mut alpha = ScaleValue::truncated(cfg.init_alpha, eps)?.value();
    let mut location: Option<ProductPoint> = None;
    let mut trace: Vec<OuterStep> = Vec::new();
    let mut previous: Option<(f64, f64)> = None;
    let mut converged = false;
    let mut damped_any = false;
    let mut damping = false;

    for _ in 0..cfg.max_outer {
        let scale = ScaleValue::with_epsilon(alpha, eps)?;
        let fit = product_weiszfeld(scale, sample, location.as_ref(), &cfg.solver)?;
        let location_step = match &location {
            Some(prev) => location_drift(prev, &fit.location)?,
            None => f64::INFINITY,
        };
        let bis = bisect_alpha(&fit.location, sample, eps, cfg.tol_alpha, dims)?;
        let update = bis.alpha.value();
        let delta = update - alpha;
        trace.push(OuterStep {
            alpha,
            alpha_update: update,
            location_step,
            inner_iterations: fit.iterations,
            inner_converged: fit.converged,
            damped: damping,
        });
        location = Some(fit.location);
        if abs(delta) < cfg.alpha_tol && location_step < cfg.location_tol {
            converged = fit.converged;
            break;
        }
        if !damping && oscillating(&trace) {
            damping = true;
            damped_any = true;
        }
        let mut next = if damping { 0.5 * (alpha + update) } else { update };
        if cfg.accelerate && !damping {
            if let Some((a0, d0)) = previous {
                let denom = delta - d0;
                if denom != 0.0 && alpha != a0 {
                    let s = alpha - delta * (alpha - a0) / denom;
                    if s.is_finite() && s >= eps && s <= 2.0 - eps {
                        next = s;
                    }
                }
            }
        }
        previous = Some((alpha, delta));
        alpha = next;
    }

    // Re-sync the location with the last scale update.
    let last = *trace.last().ok_or(Error::EmptySample)?;
    let alpha_bal = ScaleValue::with_epsilon(last.alpha_update, eps)?;
    let fit = product_weiszfeld(alpha_bal, sample, location.as_ref(), &cfg.solver)?;
    let location = fit.location;
    let sq = squares_for(&sample_squares(&location, sample)?, dims);
    let hm = balance_mean_from_squares(alpha_bal.value(), &sq)?;
    let bis = bisect_squares(&sq, eps, cfg.tol_alpha)?;
    let g_residual = score_residual(alpha_bal, &location, sample)?;
    let mut out = BalancedFit {
        location,
        alpha_bal,
        h_residual: hm.value,
        g_residual,
        outer_iterations: trace.len(),
        converged: converged && fit.converged,
        status: bis.status,
        damped: damped_any,
        dimension_adjusted: cfg.dimension_adjusted,
        degenerate: hm.degenerate,
        trace,
        inference: None,
    };
    if cfg.inference && out.status == BisectStatus::Root {
        out.inference = match balanced_sandwich(&out, sample) {
            Ok(inf) => Some(inf),
            Err(Error::SingularMatrix { .. }) => None,
            Err(e) => return Err(e),
        };
    }
    Ok(out)
}

/// Stacked rows `Ξᵢ = (ψ_α(Zᵢ; m) in g_1 coordinates of `base`, h_α(Zᵢ; m))`.
fn stacked_rows(
    base: &ProductChart,
    at: &ProductChart,
    alpha: f64,
    sample: &ProductSample,
    dims: Option<(usize, usize)>,
) -> Result<Vec<DVector<f64>>> {
    let (dm, dn) = base.dim();
    let d = dm + dn;
    sample
        .points()
        .iter()
        .map(|z| {
            let log = at.log(z)?;
            let sq = match dims {
                Some(dd) => log.squares.per_dimension(dd),
                None => log.squares,
            };
            let h = match balance_raw(alpha, sq.a, sq.b) {
                Ok(h) => h,
                Err(Error::DegenerateObservation) => 0.0,
                Err(e) => return Err(e),
            };
            let mut row = DVector::zeros(d + 1);
            match score_from_log(alpha, log) {
                Ok(s) => row.rows_mut(0, d).copy_from(&base.coords(&s.tangent(), Frame::Unscaled)?),
                Err(Error::Coincident) => {}
                Err(e) => return Err(e),
            }
            row[d] = h;
            Ok(row)
        })
        .collect()
}

fn stacked_mean(
    base: &ProductChart,
    at: &ProductChart,
    alpha: f64,
    sample: &ProductSample,
    dims: Option<(usize, usize)>,
) -> Result<DVector<f64>> {
    let rows = stacked_rows(base, at, alpha, sample, dims)?;
    let mut acc = DVector::zeros(rows[0].len());
    for r in &rows {
        acc += r;
    }
    Ok(acc / rows.len() as f64)
}

/// Joint sandwich covariance, standard error and 95% Wald interval for `α̂`.
pub fn balanced_sandwich(fit: &BalancedFit, sample: &ProductSample) -> Result<BalancedInference> {
    let alpha = fit.alpha_bal.value();
    let dims = fit.dimension_adjusted.then(|| sample.intrinsic_dims());
    let chart = ProductChart::new(&fit.location)?;
    let (dm, dn) = chart.dim();
    let d = dm + dn;
    let steps = fd_steps(&fit.location);
    let mut j_hat = DMatrix::zeros(d + 1, d + 1);
    for j in 0..d {
        let h = if j < dm { steps.0 } else { steps.1 };
        let mut e = alloc::vec![0.0; d];
        let mut vals = [DVector::zeros(d + 1), DVector::zeros(d + 1)];
        for (slot, sign) in [(0usize, 1.0), (1usize, -1.0)] {
            e[j] = sign * h;
            let moved = chart.exp(&chart.from_coords(&e, Frame::Unscaled)?)?;
            vals[slot] = stacked_mean(&chart, &ProductChart::new(&moved)?, alpha, sample, dims)?;
        }
        j_hat.set_column(j, &((&vals[0] - &vals[1]) / (2.0 * h)));
    }
    let ha = 1e-5_f64.min(0.5 * alpha).min(0.5 * (2.0 - alpha));
    let up = stacked_mean(&chart, &chart, alpha + ha, sample, dims)?;
    let down = stacked_mean(&chart, &chart, alpha - ha, sample, dims)?;
    j_hat.set_column(d, &((up - down) / (2.0 * ha)));

    let rows = stacked_rows(&chart, &chart, alpha, sample, dims)?;
    let xi_cov = covariance(&rows);
    let condition = condition_number(&j_hat);
    let inv = checked_inverse(&j_hat, MAX_CONDITION)?;
    let cov = sandwich(&inv, &xi_cov);
    let n = sample.len() as f64;
    let alpha_se = sqrt(cov[(d, d)].max(0.0) / n);
    let influence = rows.iter().map(|r| -(&inv * r)).collect();
    Ok(BalancedInference {
        j_hat,
        condition,
        xi_cov,
        covariance: cov,
        alpha_se,
        wald_interval: (alpha - WALD_Z * alpha_se, alpha + WALD_Z * alpha_se),
        influence,
    })
}
