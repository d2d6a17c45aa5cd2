//! Fixed-scale product geometric medians (product Weiszfeld), marginal
//! geometric medians on a single factor, and the local Jacobian and score
//! covariance used for sandwich inference.
//!
//! The Weiszfeld step at `m` is the tangent vector
//! `Σᵢ ψ_α(Zᵢ; m) / Σᵢ 1/rᵢ`, applied factorwise through the exponential map.
//! Observations that coincide with the iterate are handled with the
//! Vardi–Zhang modification: with `k` coincident points and
//! `ρ = ‖Σ ψ‖_{g_α}`, the step is shrunk by `(1 − k/ρ)⁺` and the iterate is
//! optimal once `ρ ≤ k`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{checked_inverse, covariance, sandwich, symmetrize};
use crate::manifold::{FactorChart, FactorPoint, Geometry, TangentVector};
use crate::math::{lower_median, sqrt, CompensatedSum};
use crate::metric::{
    score_from_log, Frame, ProductChart, ProductPoint, ProductSample, ProductTangent, ScaleValue, COINCIDENCE_GUARD,
};

/// Largest condition number accepted when inverting Jacobians.
pub const MAX_CONDITION: f64 = 1e10;

/// Iteration controls for the Weiszfeld solvers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once the step's `g_1`-norm and the score residual fall below this
    /// (the residual is allowed ten times the tolerance).
    pub tolerance: f64,
    /// Factor applied to a step that leaves the SPD cone or fails to descend.
    pub shrink: f64,
    pub coincidence_guard: f64,
    /// Candidate cap when initializing an SPD factor from the data.
    pub init_candidates: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-9,
            shrink: 0.5,
            coincidence_guard: COINCIDENCE_GUARD,
            init_candidates: 256,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("solver tolerance must be positive"));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidArgument("shrink factor must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// A fixed-α product median.
#[derive(Clone, Debug)]
pub struct MedianFit {
    pub location: ProductPoint,
    pub alpha: ScaleValue,
    /// `F_{n,α}(location)`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `g_1`-norm of the last proposed step.
    pub final_step_norm: f64,
    /// `g_1`-norm of the (coincidence-corrected) mean score at the location.
    pub residual: f64,
    /// Objective at every accepted iterate, starting with the initial point.
    pub trace: Vec<f64>,
}

struct Pass {
    objective: f64,
    /// Σ ψ over non-coincident observations.
    score_sum: ProductTangent,
    inv_r_sum: f64,
    coincident: usize,
    /// Index and distance of the closest non-coincident observation.
    nearest: Option<(usize, f64)>,
}

fn pass(chart: &ProductChart, alpha: f64, sample: &ProductSample, guard: f64) -> Result<Pass> {
    let mut objective = CompensatedSum::new();
    let mut inv_r = CompensatedSum::new();
    let mut score_sum = ProductTangent::zero(sample.geometry_m(), sample.geometry_n());
    let mut coincident = 0;
    let mut nearest: Option<(usize, f64)> = None;
    for (i, z) in sample.points().iter().enumerate() {
        let log = chart.log(z)?;
        let r = log.squares.scaled(alpha);
        objective.add(r);
        if r <= guard {
            coincident += 1;
            continue;
        }
        if nearest.is_none_or(|(_, best)| r < best) {
            nearest = Some((i, r));
        }
        score_sum.axpy(1.0 / r, &log.tangent)?;
        inv_r.add(1.0 / r);
    }
    Ok(Pass {
        objective: objective.value() / sample.len() as f64,
        score_sum,
        inv_r_sum: inv_r.value(),
        coincident,
        nearest,
    })
}

/// Deterministic starting point: coordinatewise lower medians for Euclidean
/// factors, the marginal-objective-minimizing observation for SPD factors.
pub fn auto_init(sample: &ProductSample, cfg: &SolverConfig) -> Result<ProductPoint> {
    Ok(ProductPoint::new(factor_init(&sample.m_points(), cfg)?, factor_init(&sample.n_points(), cfg)?))
}

fn factor_init(points: &[FactorPoint], cfg: &SolverConfig) -> Result<FactorPoint> {
    let first = points.first().ok_or(Error::EmptySample)?;
    match first.geometry() {
        Geometry::Euclidean { dim } => {
            let mut out = DVector::zeros(dim);
            let mut col = Vec::with_capacity(points.len());
            for k in 0..dim {
                col.clear();
                for x in points {
                    col.push(x.as_vector().ok_or(Error::GeometryMismatch)?[k]);
                }
                out[k] = lower_median(&col).ok_or(Error::EmptySample)?;
            }
            Ok(FactorPoint::Euclidean(out))
        }
        Geometry::BuresWasserstein { .. } => {
            let mut best: Option<(f64, usize)> = None;
            for (j, cand) in points.iter().enumerate().take(cfg.init_candidates.max(1)) {
                let chart = FactorChart::new(cand)?;
                let mut acc = CompensatedSum::new();
                for x in points {
                    acc.add(sqrt(chart.sq_distance(x)?));
                }
                let v = acc.value();
                if best.is_none_or(|(b, _)| v < b) {
                    best = Some((v, j));
                }
            }
            Ok(points[best.expect("non-empty").1].clone())
        }
    }
}

/// Product Weiszfeld iteration at fixed `alpha`.
///
/// `init = None` uses [`auto_init`]. Non-convergence is reported through
/// `MedianFit::converged`, not as an error.
pub fn product_weiszfeld(
    alpha: ScaleValue,
    sample: &ProductSample,
    init: Option<&ProductPoint>,
    cfg: &SolverConfig,
) -> Result<MedianFit> {
    cfg.validate()?;
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let a = alpha.value();
    let n = sample.len() as f64;
    let mut chart = match init {
        Some(m) => {
            if m.geometries() != (sample.geometry_m(), sample.geometry_n()) {
                return Err(Error::GeometryMismatch);
            }
            ProductChart::new(m)?
        }
        None => ProductChart::new(&auto_init(sample, cfg)?)?,
    };
    let mut current = pass(&chart, a, sample, cfg.coincidence_guard)?;
    let mut trace = alloc::vec![current.objective];
    let mut iterations = 0;
    let mut final_step_norm;
    let mut residual;
    let mut converged = false;

    loop {
        if current.inv_r_sum == 0.0 {
            // every observation sits on the iterate
            residual = 0.0;
            final_step_norm = 0.0;
            converged = true;
            iterations = iterations.max(1);
            break;
        }
        let k = current.coincident as f64;
        let rho = chart.norm(&current.score_sum, Frame::Scaled(a))?;
        if k > 0.0 && rho <= k {
            residual = 0.0;
            final_step_norm = 0.0;
            converged = true;
            break;
        }
        let factor = if k > 0.0 { 1.0 - k / rho } else { 1.0 };
        let step = current.score_sum.scale(factor / current.inv_r_sum);
        final_step_norm = chart.norm(&step, Frame::Unscaled)?;
        residual = factor * chart.norm(&current.score_sum, Frame::Unscaled)? / n;
        if final_step_norm <= cfg.tolerance && residual <= 10.0 * cfg.tolerance {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iterations {
            break;
        }

        // Weiszfeld crawls towards a median sitting on an observation; test
        // the nearest one directly once the iterate is within a few steps.
        if let Some((j, r)) = current.nearest {
            if r <= 4.0 * final_step_norm.max(cfg.tolerance) * (1.0 + 1.0 / sqrt(a.min(2.0 - a))) {
                let cand_chart = ProductChart::new(&sample.points()[j])?;
                let cand = pass(&cand_chart, a, sample, cfg.coincidence_guard)?;
                let rho = cand_chart.norm(&cand.score_sum, Frame::Scaled(a))?;
                if cand.coincident > 0 && rho <= cand.coincident as f64 && cand.objective <= current.objective + 1e-12 {
                    chart = cand_chart;
                    current = cand;
                    trace.push(current.objective);
                    iterations += 1;
                    residual = 0.0;
                    final_step_norm = r;
                    converged = true;
                    break;
                }
            }
        }

        // Damped step: shrink on cone violations or objective increase.
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            match chart.exp(&step.scale(t)) {
                Ok(cand) => {
                    let cand_chart = ProductChart::new(&cand)?;
                    let cand_pass = pass(&cand_chart, a, sample, cfg.coincidence_guard)?;
                    if cand_pass.objective <= current.objective + 1e-12 {
                        accepted = Some((cand_chart, cand_pass));
                        break;
                    }
                }
                Err(Error::ConeViolation) => {}
                Err(e) => return Err(e),
            }
            t *= cfg.shrink;
        }
        let Some((next_chart, next_pass)) = accepted else {
            // no descent direction at working precision
            converged = residual <= 10.0 * cfg.tolerance;
            break;
        };
        chart = next_chart;
        current = next_pass;
        trace.push(current.objective);
        iterations += 1;
    }

    Ok(MedianFit {
        location: chart.location().clone(),
        alpha,
        objective: current.objective,
        iterations,
        converged,
        final_step_norm,
        residual,
        trace,
    })
}

/// A geometric median on one factor.
#[derive(Clone, Debug)]
pub struct MarginalFit {
    pub location: FactorPoint,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct MarginalPass {
    objective: f64,
    sum: TangentVector,
    inv_sum: f64,
    coincident: usize,
    nearest: Option<(usize, f64)>,
}

/// Riemannian Weiszfeld on a single factor.
pub fn marginal_median(points: &[FactorPoint], cfg: &SolverConfig) -> Result<MarginalFit> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::EmptySample);
    }
    let geometry = points[0].geometry();
    if points.iter().any(|x| x.geometry() != geometry) {
        return Err(Error::GeometryMismatch);
    }
    let n = points.len() as f64;
    let eval = |chart: &FactorChart| -> Result<MarginalPass> {
        let mut obj = CompensatedSum::new();
        let mut inv = CompensatedSum::new();
        let mut sum = TangentVector::zero(geometry);
        let mut k = 0;
        let mut nearest: Option<(usize, f64)> = None;
        for (i, x) in points.iter().enumerate() {
            let (u, d2) = chart.log_with_sq_distance(x)?;
            let r = sqrt(d2);
            obj.add(r);
            if r <= cfg.coincidence_guard {
                k += 1;
                continue;
            }
            if nearest.is_none_or(|(_, best)| r < best) {
                nearest = Some((i, r));
            }
            sum.axpy(1.0 / r, &u)?;
            inv.add(1.0 / r);
        }
        Ok(MarginalPass { objective: obj.value() / n, sum, inv_sum: inv.value(), coincident: k, nearest })
    };

    let mut chart = FactorChart::new(&factor_init(points, cfg)?)?;
    let mut cur = eval(&chart)?;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let obj = cur.objective;
        let inv = cur.inv_sum;
        let k = cur.coincident;
        let sum = &cur.sum;
        if inv == 0.0 {
            converged = true;
            iterations = iterations.max(1);
            break;
        }
        let kf = k as f64;
        let rho = chart.norm(sum)?;
        if kf > 0.0 && rho <= kf {
            converged = true;
            break;
        }
        let factor = if kf > 0.0 { 1.0 - kf / rho } else { 1.0 };
        let step = sum.scale(factor / inv);
        let step_norm = chart.norm(&step)?;
        let residual = factor * rho / n;
        if step_norm <= cfg.tolerance && residual <= 10.0 * cfg.tolerance {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iterations {
            break;
        }
        if let Some((j, r)) = cur.nearest {
            if r <= 4.0 * step_norm.max(cfg.tolerance) {
                let cc = FactorChart::new(&points[j])?;
                let ce = eval(&cc)?;
                if ce.coincident > 0 && cc.norm(&ce.sum)? <= ce.coincident as f64 && ce.objective <= obj + 1e-12 {
                    chart = cc;
                    cur = ce;
                    iterations += 1;
                    converged = true;
                    break;
                }
            }
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            match chart.exp(&step.scale(t)) {
                Ok(cand) => {
                    let cc = FactorChart::new(&cand)?;
                    let ce = eval(&cc)?;
                    if ce.objective <= obj + 1e-12 {
                        accepted = Some((cc, ce));
                        break;
                    }
                }
                Err(Error::ConeViolation) => {}
                Err(e) => return Err(e),
            }
            t *= cfg.shrink;
        }
        let Some((cc, ce)) = accepted else {
            converged = residual <= 10.0 * cfg.tolerance;
            break;
        };
        chart = cc;
        cur = ce;
        iterations += 1;
    }
    Ok(MarginalFit { location: chart.base().clone(), objective: cur.objective, iterations, converged })
}

/// Mean score `G_{n,α}(m)` over non-coincident observations, as a tangent at `m`.
pub fn mean_score(alpha: ScaleValue, m: &ProductPoint, sample: &ProductSample) -> Result<ProductTangent> {
    let chart = ProductChart::new(m)?;
    mean_score_with(&chart, alpha.value(), sample)
}

fn mean_score_with(chart: &ProductChart, alpha: f64, sample: &ProductSample) -> Result<ProductTangent> {
    let p = pass(chart, alpha, sample, COINCIDENCE_GUARD)?;
    Ok(p.score_sum.scale(1.0 / sample.len() as f64))
}

/// `g_1`-norm of the mean score, with the Vardi–Zhang allowance for
/// observations that coincide with `m`.
pub fn score_residual(alpha: ScaleValue, m: &ProductPoint, sample: &ProductSample) -> Result<f64> {
    let chart = ProductChart::new(m)?;
    let p = pass(&chart, alpha.value(), sample, COINCIDENCE_GUARD)?;
    let k = p.coincident as f64;
    let rho = chart.norm(&p.score_sum, Frame::Scaled(alpha.value()))?;
    let factor = if k > 0.0 { (1.0 - k / rho).max(0.0) } else { 1.0 };
    Ok(factor * chart.norm(&p.score_sum, Frame::Unscaled)? / sample.len() as f64)
}

/// Per-observation scores in `frame` at `m`; coincident observations give `None`.
pub fn score_coordinates(
    alpha: ScaleValue,
    m: &ProductPoint,
    sample: &ProductSample,
    frame: Frame,
) -> Result<Vec<Option<DVector<f64>>>> {
    let chart = ProductChart::new(m)?;
    sample
        .points()
        .iter()
        .map(|z| match score_from_log(alpha.value(), chart.log(z)?) {
            Ok(s) => Ok(Some(chart.coords(&s.tangent(), frame)?)),
            Err(Error::Coincident) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

/// Finite-difference step for each factor at `m`: `1e-4 (1 + size)`.
pub(crate) fn fd_steps(m: &ProductPoint) -> (f64, f64) {
    (1e-4 * (1.0 + m.p.magnitude()), 1e-4 * (1.0 + m.q.magnitude()))
}

/// Local Jacobian of the median equation at `m_hat`.
#[derive(Clone, Debug)]
pub struct AlphaJacobian {
    /// Jacobian of `m ↦ −G_{n,α}(m)` in `g_α`-orthonormal normal coordinates,
    /// symmetrized. This is the Hessian of the objective, positive
    /// semidefinite at a minimizer; the Jacobian of `G` itself is its negative.
    pub matrix: DMatrix<f64>,
    pub condition: f64,
    pub frame: Frame,
    pub steps: (f64, f64),
}

/// Central-difference estimate of the median-equation Jacobian at `m_hat`.
pub fn estimate_a_alpha(alpha: ScaleValue, m_hat: &ProductPoint, sample: &ProductSample) -> Result<AlphaJacobian> {
    estimate_a_alpha_with_steps(alpha, m_hat, sample, fd_steps(m_hat))
}

pub fn estimate_a_alpha_with_steps(
    alpha: ScaleValue,
    m_hat: &ProductPoint,
    sample: &ProductSample,
    steps: (f64, f64),
) -> Result<AlphaJacobian> {
    let a = alpha.value();
    let frame = Frame::Scaled(a);
    let chart = ProductChart::new(m_hat)?;
    let (dm, dn) = chart.dim();
    let d = dm + dn;
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let h = if j < dm { steps.0 } else { steps.1 };
        if !(h > 0.0) || !(h.is_finite()) {
            return Err(Error::InvalidArgument("finite-difference step underflow"));
        }
        let mut e = alloc::vec![0.0; d];
        let mut g = [DVector::zeros(d), DVector::zeros(d)];
        for (slot, sign) in [(0usize, 1.0), (1usize, -1.0)] {
            e[j] = sign * h;
            let moved = chart.exp(&chart.from_coords(&e, frame)?)?;
            let moved_chart = ProductChart::new(&moved)?;
            let field = mean_score_with(&moved_chart, a, sample)?;
            g[slot] = chart.coords(&field, frame)?;
        }
        let col = -(&g[0] - &g[1]) / (2.0 * h);
        jac.set_column(j, &col);
    }
    let matrix = symmetrize(&jac);
    let condition = crate::linalg::condition_number(&matrix);
    Ok(AlphaJacobian { matrix, condition, frame, steps })
}

/// Pieces of the fixed-α sandwich covariance `V = A⁻¹ Σ A⁻ᵀ`, all in the
/// `g_α`-orthonormal frame at `m_hat`.
#[derive(Clone, Debug)]
pub struct SandwichPieces {
    pub a_hat: DMatrix<f64>,
    /// Covariance of the scores with divisor `n`.
    pub sigma_hat: DMatrix<f64>,
    /// Asymptotic covariance of `√n log_{m}(m̂)`; divide by `n` for standard errors.
    pub v_hat: DMatrix<f64>,
    pub frame: Frame,
    pub condition: f64,
    /// Observations skipped because they coincide with `m_hat`.
    pub skipped: usize,
}

/// Covariance (divisor `n`) of the scores at `m`, in `frame`.
pub fn score_covariance(
    alpha: ScaleValue,
    m: &ProductPoint,
    sample: &ProductSample,
    frame: Frame,
) -> Result<(DMatrix<f64>, usize)> {
    let coords = score_coordinates(alpha, m, sample, frame)?;
    let skipped = coords.iter().filter(|c| c.is_none()).count();
    let rows: Vec<DVector<f64>> = coords.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(Error::Coincident);
    }
    Ok((covariance(&rows), skipped))
}

pub fn estimate_sigma_and_sandwich(
    alpha: ScaleValue,
    m_hat: &ProductPoint,
    sample: &ProductSample,
) -> Result<SandwichPieces> {
    let jac = estimate_a_alpha(alpha, m_hat, sample)?;
    let (sigma_hat, skipped) = score_covariance(alpha, m_hat, sample, jac.frame)?;
    let a_inv = checked_inverse(&jac.matrix, MAX_CONDITION)?;
    Ok(SandwichPieces {
        v_hat: sandwich(&a_inv, &sigma_hat),
        a_hat: jac.matrix,
        sigma_hat,
        frame: jac.frame,
        condition: jac.condition,
        skipped,
    })
}
