//! Robust scale calibration from marginal radial scales.
//!
//! Each factor gets a marginal geometric median and a radial scale, the
//! (lower) median distance of the factor observations from it. The weight
//! `α̂_sc = 2 ŝ_N² / (ŝ_M² + ŝ_N²)` standardizes both factors to unit scale,
//! which makes the calibrated median invariant to changes of units in either
//! factor metric.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Factor, Result};
use crate::linalg::{checked_inverse, covariance, sandwich};
use crate::manifold::{factor_distance, FactorChart, FactorPoint};
use crate::math::{exp, lower_median, mean, powf, quantile, sqrt, CompensatedSum};
use crate::metric::{Frame, ProductPoint, ProductSample, ScaleValue, DEFAULT_EPSILON};
use crate::path::b_alpha;
use crate::solver::{
    estimate_a_alpha, marginal_median, product_weiszfeld, score_coordinates, MedianFit, SolverConfig, MAX_CONDITION,
};

/// Statistic used for the marginal radial scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleMethod {
    /// Lower median of the radial distances.
    RadialMedian,
    /// Root mean square of the radial distances about the marginal median.
    Rms,
}

#[derive(Clone, Debug)]
pub struct RadialScales {
    pub p_hat: FactorPoint,
    pub q_hat: FactorPoint,
    pub s_m: f64,
    pub s_n: f64,
    pub radial_m: Vec<f64>,
    pub radial_n: Vec<f64>,
    pub marginals_converged: bool,
}

fn radial_distances(center: &FactorPoint, points: &[FactorPoint]) -> Result<Vec<f64>> {
    let chart = FactorChart::new(center)?;
    points.iter().map(|x| Ok(sqrt(chart.sq_distance(x)?))).collect()
}

fn scale_statistic(r: &[f64], method: ScaleMethod) -> f64 {
    match method {
        ScaleMethod::RadialMedian => lower_median(r).unwrap_or(0.0),
        ScaleMethod::Rms => {
            let mut acc = CompensatedSum::new();
            for x in r {
                acc.add(x * x);
            }
            sqrt(acc.value() / r.len() as f64)
        }
    }
}

/// Marginal medians and radial median scales of both factors.
pub fn radial_scales(sample: &ProductSample, cfg: &SolverConfig) -> Result<RadialScales> {
    radial_scales_with(sample, ScaleMethod::RadialMedian, cfg)
}

pub fn radial_scales_with(sample: &ProductSample, method: ScaleMethod, cfg: &SolverConfig) -> Result<RadialScales> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let xs = sample.m_points();
    let ys = sample.n_points();
    let pm = marginal_median(&xs, cfg)?;
    let qm = marginal_median(&ys, cfg)?;
    let radial_m = radial_distances(&pm.location, &xs)?;
    let radial_n = radial_distances(&qm.location, &ys)?;
    let s_m = scale_statistic(&radial_m, method);
    let s_n = scale_statistic(&radial_n, method);
    if !(s_m > 0.0) {
        return Err(Error::CalibrationDegenerate { factor: Factor::M });
    }
    if !(s_n > 0.0) {
        return Err(Error::CalibrationDegenerate { factor: Factor::N });
    }
    Ok(RadialScales {
        p_hat: pm.location,
        q_hat: qm.location,
        s_m,
        s_n,
        radial_m,
        radial_n,
        marginals_converged: pm.converged && qm.converged,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibratedAlpha {
    /// Weight before truncation, in `[0, 2]`.
    pub raw: f64,
    /// Weight clamped to `[ε, 2 − ε]`.
    pub truncated: ScaleValue,
    pub truncation_binds: bool,
}

/// `α = 2 s_N² / (s_M² + s_N²)`, or with intrinsic dimensions `(d_M*, d_N*)`,
/// `α = 2 (d_M*/s_M²) / (d_M*/s_M² + d_N*/s_N²)`.
pub fn calibrated_alpha(s_m: f64, s_n: f64, dims: Option<(usize, usize)>, epsilon: f64) -> Result<CalibratedAlpha> {
    if !(s_m >= 0.0 && s_n >= 0.0) || !(s_m + s_n > 0.0) {
        return Err(Error::InvalidArgument("radial scales must be non-negative and not both zero"));
    }
    let (wm, wn) = match dims {
        Some((dm, dn)) => (dm as f64, dn as f64),
        None => (1.0, 1.0),
    };
    // multiply through by s_M² s_N² so a single zero scale stays finite
    let num = wm * s_n * s_n;
    let den = wm * s_n * s_n + wn * s_m * s_m;
    let raw = 2.0 * num / den;
    let truncated = ScaleValue::truncated(raw, epsilon)?;
    Ok(CalibratedAlpha { raw, truncated, truncation_binds: truncated.value() != raw })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationConfig {
    pub solver: SolverConfig,
    pub epsilon: f64,
    pub method: ScaleMethod,
    pub dimension_adjusted: bool,
    /// Fit at the truncated weight (default) or at the raw weight.
    pub truncate: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            epsilon: DEFAULT_EPSILON,
            method: ScaleMethod::RadialMedian,
            dimension_adjusted: false,
            truncate: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CalibrationResult {
    pub marginal_median_m: FactorPoint,
    pub marginal_median_n: FactorPoint,
    pub s_m: f64,
    pub s_n: f64,
    pub alpha_raw: f64,
    /// The weight the median was fitted at.
    pub alpha_sc: ScaleValue,
    pub truncation_binds: bool,
    pub dimension_adjusted: bool,
    pub method: ScaleMethod,
    pub fit: MedianFit,
    pub radial_m: Vec<f64>,
    pub radial_n: Vec<f64>,
    pub marginals_converged: bool,
}

impl CalibrationResult {
    pub fn converged(&self) -> bool {
        self.fit.converged && self.marginals_converged
    }
}

/// Radial scales, calibrated weight, and the product median at that weight.
pub fn calibrate(sample: &ProductSample, cfg: &CalibrationConfig) -> Result<CalibrationResult> {
    let scales = radial_scales_with(sample, cfg.method, &cfg.solver)?;
    let dims = cfg.dimension_adjusted.then(|| sample.intrinsic_dims());
    let ca = calibrated_alpha(scales.s_m, scales.s_n, dims, cfg.epsilon)?;
    let alpha_sc = if cfg.truncate { ca.truncated } else { ScaleValue::with_epsilon(ca.raw, cfg.epsilon)? };
    let fit = product_weiszfeld(alpha_sc, sample, None, &cfg.solver)?;
    Ok(CalibrationResult {
        marginal_median_m: scales.p_hat,
        marginal_median_n: scales.q_hat,
        s_m: scales.s_m,
        s_n: scales.s_n,
        alpha_raw: ca.raw,
        alpha_sc,
        truncation_binds: cfg.truncate && ca.truncation_binds,
        dimension_adjusted: cfg.dimension_adjusted,
        method: cfg.method,
        fit,
        radial_m: scales.radial_m,
        radial_n: scales.radial_n,
        marginals_converged: scales.marginals_converged,
    })
}

/// `{d_M(p, p')² + d_N(q, q')²}^{1/2}`.
pub fn location_drift(a: &ProductPoint, b: &ProductPoint) -> Result<f64> {
    let dm = factor_distance(&a.p, &b.p)?;
    let dn = factor_distance(&a.q, &b.q)?;
    Ok(sqrt(dm * dm + dn * dn))
}

/// Effective weight ratio of the M-factor in original units,
/// `α c_M² / ((2 − α) c_N²)`.
pub fn effective_weight_ratio(alpha: f64, c_m: f64, c_n: f64) -> f64 {
    alpha * c_m * c_m / ((2.0 - alpha) * c_n * c_n)
}

#[derive(Clone, Debug)]
pub struct DriftReport {
    pub c_m: f64,
    pub c_n: f64,
    pub alpha_reference: f64,
    pub alpha_rescaled: f64,
    /// Rescaled-units location mapped back to original units.
    pub location_rescaled: ProductPoint,
    pub location_reference: ProductPoint,
    pub drift: f64,
    pub weight_ratio_reference: f64,
    pub weight_ratio_rescaled: f64,
}

/// Recomputes the calibrated median with factor distances multiplied by
/// `c_m`, `c_n` and reports the location drift and weight-ratio invariant.
pub fn unit_rescale_check(sample: &ProductSample, c_m: f64, c_n: f64, cfg: &CalibrationConfig) -> Result<DriftReport> {
    if !(c_m > 0.0 && c_n > 0.0) {
        return Err(Error::InvalidArgument("rescaling constants must be positive"));
    }
    let reference = calibrate(sample, cfg)?;
    let rescaled =
        if c_m == 1.0 && c_n == 1.0 { reference.clone() } else { calibrate(&sample.rescaled(c_m, c_n), cfg)? };
    let back = rescaled.fit.location.rescaled(1.0 / c_m, 1.0 / c_n);
    let drift = if c_m == 1.0 && c_n == 1.0 { 0.0 } else { location_drift(&reference.fit.location, &back)? };
    let a0 = reference.alpha_sc.value();
    let a1 = rescaled.alpha_sc.value();
    Ok(DriftReport {
        c_m,
        c_n,
        alpha_reference: a0,
        alpha_rescaled: a1,
        location_rescaled: back,
        location_reference: reference.fit.location,
        drift,
        weight_ratio_reference: effective_weight_ratio(a0, 1.0, 1.0),
        weight_ratio_rescaled: effective_weight_ratio(a1, c_m, c_n),
    })
}

/// Partial derivatives `(∂α/∂s_M, ∂α/∂s_N)` of the calibration map.
pub fn alpha_partials(s_m: f64, s_n: f64, dims: Option<(usize, usize)>) -> (f64, f64) {
    let (a, b) = match dims {
        Some((dm, dn)) => (dm as f64, dn as f64),
        None => (1.0, 1.0),
    };
    let den = a * s_n * s_n + b * s_m * s_m;
    let den2 = den * den;
    (-4.0 * a * b * s_m * s_n * s_n / den2, 4.0 * a * b * s_n * s_m * s_m / den2)
}

/// Gaussian kernel density estimate at `at`, with Silverman's bandwidth.
pub fn kernel_density(data: &[f64], at: f64) -> (f64, f64) {
    let n = data.len() as f64;
    let mu = mean(data);
    let var = mean(&data.iter().map(|x| (x - mu) * (x - mu)).collect::<Vec<_>>());
    let sd = sqrt(var.max(0.0));
    let iqr = quantile(data, 0.75).unwrap_or(0.0) - quantile(data, 0.25).unwrap_or(0.0);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * powf(n, -0.2);
    if !(h > 0.0) {
        return (0.0, 0.0);
    }
    let norm = 1.0 / (n * h * sqrt(2.0 * core::f64::consts::PI));
    let mut acc = CompensatedSum::new();
    for x in data {
        let t = (at - x) / h;
        acc.add(exp(-0.5 * t * t));
    }
    (acc.value() * norm, h)
}

/// Density values below this flag the plug-in variance as unreliable.
pub const MIN_DENSITY: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct InfluencePieces {
    pub density_m: f64,
    pub density_n: f64,
    pub bandwidth_m: f64,
    pub bandwidth_n: f64,
    pub phi_s_m: Vec<f64>,
    pub phi_s_n: Vec<f64>,
    /// Influence values of the calibrated weight, re-centred to mean zero.
    pub phi_alpha: Vec<f64>,
}

/// Two-step sandwich covariance of the calibrated median.
#[derive(Clone, Debug)]
pub struct CalibratedVariance {
    /// `A⁻¹ Var{ψ + B φ_α} A⁻ᵀ` in the `g_α` frame at the calibrated median;
    /// divide by `n` for the covariance of `log_{m}(m̂_sc)`.
    pub v_sc: DMatrix<f64>,
    /// Jacobian of `−G` at the calibrated median (see [`crate::solver::AlphaJacobian`]).
    pub a0: DMatrix<f64>,
    /// `∂_α G` at the calibrated median.
    pub b0: DVector<f64>,
    pub frame: Frame,
    /// Per-observation influence `−A_G⁻¹(ψ + B φ_α)` of the calibrated median.
    pub influence: Vec<DVector<f64>>,
    /// Density estimate too small for a stable plug-in.
    pub unreliable: bool,
    /// The marginal-median shift term of the radial-scale influence is omitted.
    pub first_order_radial_plugin: bool,
}

/// Plug-in influence functions of the radial scales and calibrated weight,
/// and the two-step covariance of the calibrated median.
pub fn influence_and_vsc(
    sample: &ProductSample,
    calib: &CalibrationResult,
) -> Result<(InfluencePieces, CalibratedVariance)> {
    if calib.method != ScaleMethod::RadialMedian {
        return Err(Error::InvalidArgument("influence functions require radial-median scales"));
    }
    let (f_m, h_m) = kernel_density(&calib.radial_m, calib.s_m);
    let (f_n, h_n) = kernel_density(&calib.radial_n, calib.s_n);
    let unreliable = !(f_m >= MIN_DENSITY && f_n >= MIN_DENSITY);
    let phi = |r: &[f64], s: f64, f: f64| -> Vec<f64> {
        r.iter()
            .map(|x| {
                let ind = if *x <= s { 1.0 } else { 0.0 };
                if f > 0.0 {
                    (0.5 - ind) / f
                } else {
                    0.0
                }
            })
            .collect()
    };
    let phi_s_m = phi(&calib.radial_m, calib.s_m, f_m);
    let phi_s_n = phi(&calib.radial_n, calib.s_n, f_n);
    let dims = calib.dimension_adjusted.then(|| sample.intrinsic_dims());
    let (dh_m, dh_n) = alpha_partials(calib.s_m, calib.s_n, dims);
    let mut phi_alpha: Vec<f64> = if calib.truncation_binds {
        alloc::vec![0.0; sample.len()]
    } else {
        phi_s_m.iter().zip(&phi_s_n).map(|(a, b)| dh_m * a + dh_n * b).collect()
    };
    let centre = mean(&phi_alpha);
    for x in phi_alpha.iter_mut() {
        *x -= centre;
    }

    let alpha = calib.alpha_sc;
    let m0 = &calib.fit.location;
    let jac = estimate_a_alpha(alpha, m0, sample)?;
    let (b0, _) = b_alpha(alpha, m0, sample)?;
    let d = b0.len();
    let scores = score_coordinates(alpha, m0, sample, jac.frame)?;
    let rows: Vec<DVector<f64>> =
        scores.into_iter().zip(&phi_alpha).map(|(s, p)| s.unwrap_or_else(|| DVector::zeros(d)) + &b0 * *p).collect();
    let inv = checked_inverse(&jac.matrix, MAX_CONDITION)?;
    let v_sc = sandwich(&inv, &covariance(&rows));
    let influence = rows.iter().map(|r| &inv * r).collect();
    Ok((
        InfluencePieces {
            density_m: f_m,
            density_n: f_n,
            bandwidth_m: h_m,
            bandwidth_n: h_n,
            phi_s_m,
            phi_s_n,
            phi_alpha,
        },
        CalibratedVariance {
            v_sc,
            a0: jac.matrix,
            b0,
            frame: jac.frame,
            influence,
            unreliable,
            first_order_radial_plugin: true,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pp(p: &[f64], q: &[f64]) -> ProductPoint {
        ProductPoint::new(FactorPoint::euclidean_from_slice(p).unwrap(), FactorPoint::euclidean_from_slice(q).unwrap())
    }

    #[test]
    fn calibrated_alpha_examples() {
        assert_eq!(calibrated_alpha(1.5, 1.5, None, 0.05).unwrap().raw, 1.0);
        let c = calibrated_alpha(2.0, 1.0, None, 0.05).unwrap();
        assert!((c.raw - 0.4).abs() < 1e-15);
        assert!(!c.truncation_binds);
        let c = calibrated_alpha(10.0, 1.0, None, 0.05).unwrap();
        assert!((c.raw - 2.0 / 101.0).abs() < 1e-15);
        assert_eq!(c.truncated.value(), 0.05);
        assert!(c.truncation_binds);
        assert!(calibrated_alpha(0.0, 0.0, None, 0.05).is_err());
    }

    #[test]
    fn dimension_adjusted_alpha() {
        let c = calibrated_alpha(1.0, 1.0, Some((2, 6)), 0.05).unwrap();
        assert!((c.raw - 2.0 * 2.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn radial_scale_of_symmetric_line() {
        let s = ProductSample::new(vec![pp(&[-1.0], &[0.0]), pp(&[0.0], &[1.0]), pp(&[1.0], &[2.0])]).unwrap();
        let r = radial_scales(&s, &SolverConfig::default()).unwrap();
        assert!(r.p_hat.as_vector().unwrap()[0].abs() < 1e-12);
        assert_eq!(r.s_m, 1.0);
    }

    #[test]
    fn identical_data_is_degenerate() {
        let s = ProductSample::new(vec![pp(&[1.0], &[2.0]); 4]).unwrap();
        assert_eq!(
            radial_scales(&s, &SolverConfig::default()).unwrap_err(),
            Error::CalibrationDegenerate { factor: Factor::M }
        );
    }

    #[test]
    fn chain_rule_coefficients_at_unit_scales() {
        assert_eq!(alpha_partials(1.0, 1.0, None), (-1.0, 1.0));
    }

    #[test]
    fn identity_rescaling_has_zero_drift() {
        let s = ProductSample::new(vec![
            pp(&[0.0, 1.0], &[0.3]),
            pp(&[1.0, -1.0], &[2.0]),
            pp(&[2.0, 0.5], &[-1.0]),
            pp(&[-1.0, 0.0], &[0.0]),
            pp(&[0.5, 0.2], &[1.1]),
        ])
        .unwrap();
        let rep = unit_rescale_check(&s, 1.0, 1.0, &CalibrationConfig::default()).unwrap();
        assert_eq!(rep.drift, 0.0);
    }
}
