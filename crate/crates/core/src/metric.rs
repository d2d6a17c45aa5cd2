//! The α-scaled product distance `d_α = {α d_M² + (2−α) d_N²}^{1/2}` and the
//! per-observation kernels built on it: α-derivatives, the median score, and
//! the bounded balance contrast.

use alloc::vec::Vec;
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::manifold::{FactorChart, FactorPoint, Geometry, TangentVector};
use crate::math::{sqrt, CompensatedSum};

/// Distances at or below this are treated as coincident with the location.
pub const COINCIDENCE_GUARD: f64 = 1e-12;
/// Default half-width of the truncation interval `[ε, 2 − ε]`.
pub const DEFAULT_EPSILON: f64 = 0.05;

/// A relative factor weight `α ∈ (0, 2)` with its truncation width `ε`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleValue {
    alpha: f64,
    epsilon: f64,
}

impl ScaleValue {
    pub fn new(alpha: f64) -> Result<Self> {
        Self::with_epsilon(alpha, DEFAULT_EPSILON)
    }

    pub fn with_epsilon(alpha: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidEpsilon(epsilon));
        }
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::InvalidScale(alpha));
        }
        Ok(Self { alpha, epsilon })
    }

    /// Clamps `alpha` into `[ε, 2 − ε]`.
    pub fn truncated(alpha: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidEpsilon(epsilon));
        }
        if alpha.is_nan() {
            return Err(Error::InvalidScale(alpha));
        }
        Ok(Self { alpha: alpha.clamp(epsilon, 2.0 - epsilon), epsilon })
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Weight on the N-factor, `2 − α`.
    #[inline]
    pub fn complement(&self) -> f64 {
        2.0 - self.alpha
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.epsilon, 2.0 - self.epsilon)
    }

    pub fn in_interval(&self) -> bool {
        self.alpha >= self.epsilon && self.alpha <= 2.0 - self.epsilon
    }
}

/// Upper bound on the sectional curvature of the scaled product given factor
/// bounds `κ_M`, `κ_N`: `max{κ_M/α, κ_N/(2−α)}`.
pub fn curvature_bound(kappa_m: f64, kappa_n: f64, alpha: ScaleValue) -> f64 {
    (kappa_m / alpha.value()).max(kappa_n / alpha.complement())
}

/// Factors multiplying the injectivity radii of the two factors, `(√α, √(2−α))`.
pub fn injectivity_scaling(alpha: ScaleValue) -> (f64, f64) {
    (sqrt(alpha.value()), sqrt(alpha.complement()))
}

/// A point `(p, q)` of the product `M × N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductPoint {
    pub p: FactorPoint,
    pub q: FactorPoint,
}

impl ProductPoint {
    pub fn new(p: FactorPoint, q: FactorPoint) -> Self {
        Self { p, q }
    }

    pub fn geometries(&self) -> (Geometry, Geometry) {
        (self.p.geometry(), self.q.geometry())
    }

    pub fn rescaled(&self, c_m: f64, c_n: f64) -> Self {
        Self { p: self.p.rescaled(c_m), q: self.q.rescaled(c_n) }
    }
}

/// Observations `Z_1..Z_n` with the factor geometries they live on.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductSample {
    points: Vec<ProductPoint>,
    m: Geometry,
    n: Geometry,
}

impl ProductSample {
    pub fn new(points: Vec<ProductPoint>) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptySample)?;
        let (m, n) = first.geometries();
        for z in &points {
            let (gm, gn) = z.geometries();
            if gm != m || gn != n {
                return Err(Error::GeometryMismatch);
            }
        }
        Ok(Self { points, m, n })
    }

    pub fn points(&self) -> &[ProductPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn geometry_m(&self) -> Geometry {
        self.m
    }

    pub fn geometry_n(&self) -> Geometry {
        self.n
    }

    /// Intrinsic dimensions `(d_M*, d_N*)`.
    pub fn intrinsic_dims(&self) -> (usize, usize) {
        (self.m.intrinsic_dim(), self.n.intrinsic_dim())
    }

    pub fn total_dim(&self) -> usize {
        let (a, b) = self.intrinsic_dims();
        a + b
    }

    pub fn m_points(&self) -> Vec<FactorPoint> {
        self.points.iter().map(|z| z.p.clone()).collect()
    }

    pub fn n_points(&self) -> Vec<FactorPoint> {
        self.points.iter().map(|z| z.q.clone()).collect()
    }

    /// New sample with observations taken at `indices` (with repetition).
    pub fn resample(&self, indices: &[usize]) -> Self {
        Self { points: indices.iter().map(|&i| self.points[i].clone()).collect(), m: self.m, n: self.n }
    }

    /// Image under the isometry rescaling the factor metrics by `c_m`, `c_n`.
    pub fn rescaled(&self, c_m: f64, c_n: f64) -> Self {
        Self { points: self.points.iter().map(|z| z.rescaled(c_m, c_n)).collect(), m: self.m, n: self.n }
    }
}

/// Squared factor distances `A = d_M(p,x)²`, `B = d_N(q,y)²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FactorSquares {
    pub a: f64,
    pub b: f64,
}

impl FactorSquares {
    #[inline]
    pub fn scaled_sq(&self, alpha: f64) -> f64 {
        alpha * self.a + (2.0 - alpha) * self.b
    }

    #[inline]
    pub fn scaled(&self, alpha: f64) -> f64 {
        sqrt(self.scaled_sq(alpha))
    }

    /// Squares with per-dimension normalization `A/d_M*`, `B/d_N*`.
    pub fn per_dimension(&self, dims: (usize, usize)) -> Self {
        Self { a: self.a / dims.0 as f64, b: self.b / dims.1 as f64 }
    }
}

/// A tangent vector of the product, `(u, v)` with `u ∈ T_pM`, `v ∈ T_qN`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductTangent {
    pub u: TangentVector,
    pub v: TangentVector,
}

impl ProductTangent {
    pub fn zero(m: Geometry, n: Geometry) -> Self {
        Self { u: TangentVector::zero(m), v: TangentVector::zero(n) }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { u: self.u.scale(s), v: self.v.scale(s) }
    }

    pub fn axpy(&mut self, s: f64, other: &ProductTangent) -> Result<()> {
        self.u.axpy(s, &other.u)?;
        self.v.axpy(s, &other.v)
    }
}

/// Which orthonormal frame tangent coordinates are expressed in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Frame {
    /// Orthonormal for the canonical product metric `g_1 = g_M ⊕ g_N`.
    Unscaled,
    /// Orthonormal for `g_α = α g_M ⊕ (2−α) g_N`.
    Scaled(f64),
}

impl Frame {
    fn weights(&self) -> (f64, f64) {
        match *self {
            Frame::Unscaled => (1.0, 1.0),
            Frame::Scaled(a) => (sqrt(a), sqrt(2.0 - a)),
        }
    }
}

/// Logarithm of one observation seen from a product location.
#[derive(Clone, Debug)]
pub struct ProductLog {
    pub tangent: ProductTangent,
    pub squares: FactorSquares,
}

/// Charts for both factors at a product location.
#[derive(Clone, Debug)]
pub struct ProductChart {
    location: ProductPoint,
    p: FactorChart,
    q: FactorChart,
}

impl ProductChart {
    pub fn new(m: &ProductPoint) -> Result<Self> {
        Ok(Self { location: m.clone(), p: FactorChart::new(&m.p)?, q: FactorChart::new(&m.q)? })
    }

    pub fn location(&self) -> &ProductPoint {
        &self.location
    }

    pub fn m_chart(&self) -> &FactorChart {
        &self.p
    }

    pub fn n_chart(&self) -> &FactorChart {
        &self.q
    }

    pub fn squares(&self, z: &ProductPoint) -> Result<FactorSquares> {
        Ok(FactorSquares { a: self.p.sq_distance(&z.p)?, b: self.q.sq_distance(&z.q)? })
    }

    pub fn log(&self, z: &ProductPoint) -> Result<ProductLog> {
        let (u, a) = self.p.log_with_sq_distance(&z.p)?;
        let (v, b) = self.q.log_with_sq_distance(&z.q)?;
        Ok(ProductLog { tangent: ProductTangent { u, v }, squares: FactorSquares { a, b } })
    }

    pub fn exp(&self, t: &ProductTangent) -> Result<ProductPoint> {
        Ok(ProductPoint { p: self.p.exp(&t.u)?, q: self.q.exp(&t.v)? })
    }

    /// Squared factor norms `(‖u‖², ‖v‖²)`.
    pub fn factor_sq_norms(&self, t: &ProductTangent) -> Result<(f64, f64)> {
        Ok((self.p.coords(&t.u)?.norm_squared(), self.q.coords(&t.v)?.norm_squared()))
    }

    pub fn norm(&self, t: &ProductTangent, frame: Frame) -> Result<f64> {
        let (a, b) = self.factor_sq_norms(t)?;
        let (wa, wb) = frame.weights();
        Ok(sqrt(wa * wa * a + wb * wb * b))
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.p.geometry().intrinsic_dim(), self.q.geometry().intrinsic_dim())
    }

    /// Concatenated orthonormal coordinates `[M-part, N-part]` in `frame`.
    pub fn coords(&self, t: &ProductTangent, frame: Frame) -> Result<DVector<f64>> {
        let cu = self.p.coords(&t.u)?;
        let cv = self.q.coords(&t.v)?;
        let (wa, wb) = frame.weights();
        let mut out = DVector::zeros(cu.len() + cv.len());
        for (i, x) in cu.iter().enumerate() {
            out[i] = wa * x;
        }
        for (i, x) in cv.iter().enumerate() {
            out[cu.len() + i] = wb * x;
        }
        Ok(out)
    }

    pub fn from_coords(&self, c: &[f64], frame: Frame) -> Result<ProductTangent> {
        let (dm, dn) = self.dim();
        if c.len() != dm + dn {
            return Err(Error::DimensionMismatch { expected: dm + dn, found: c.len() });
        }
        let (wa, wb) = frame.weights();
        let cu: Vec<f64> = c[..dm].iter().map(|x| x / wa).collect();
        let cv: Vec<f64> = c[dm..].iter().map(|x| x / wb).collect();
        Ok(ProductTangent { u: self.p.from_coords(&cu)?, v: self.q.from_coords(&cv)? })
    }
}

/// The median score `ψ_α(Z; m) = (u, v) / r_α` together with `r_α`.
#[derive(Clone, Debug)]
pub struct ScoreVector {
    pub u: TangentVector,
    pub v: TangentVector,
    pub r: f64,
}

impl ScoreVector {
    pub fn tangent(&self) -> ProductTangent {
        ProductTangent { u: self.u.clone(), v: self.v.clone() }
    }
}

pub fn scaled_distance(alpha: ScaleValue, m: &ProductPoint, z: &ProductPoint) -> Result<f64> {
    Ok(ProductChart::new(m)?.squares(z)?.scaled(alpha.value()))
}

/// First and second α-derivatives of `d_α = {αA + (2−α)B}^{1/2}`.
pub fn alpha_derivatives(alpha: ScaleValue, a: f64, b: f64) -> Result<(f64, f64)> {
    let d2 = FactorSquares { a, b }.scaled_sq(alpha.value());
    if !(d2 > COINCIDENCE_GUARD) {
        return Err(Error::Coincident);
    }
    let d = sqrt(d2);
    let diff = a - b;
    Ok((diff / (2.0 * d), -(diff * diff) / (4.0 * d * d2)))
}

pub fn median_score(alpha: ScaleValue, m: &ProductPoint, z: &ProductPoint) -> Result<ScoreVector> {
    let log = ProductChart::new(m)?.log(z)?;
    score_from_log(alpha.value(), log)
}

pub(crate) fn score_from_log(alpha: f64, log: ProductLog) -> Result<ScoreVector> {
    let r = log.squares.scaled(alpha);
    if !(r > COINCIDENCE_GUARD) {
        return Err(Error::Coincident);
    }
    Ok(ScoreVector { u: log.tangent.u.scale(1.0 / r), v: log.tangent.v.scale(1.0 / r), r })
}

/// `h_α = (αA − (2−α)B) / (αA + (2−α)B)`.
pub fn balance_value(alpha: ScaleValue, a: f64, b: f64) -> Result<f64> {
    balance_raw(alpha.value(), a, b)
}

pub(crate) fn balance_raw(alpha: f64, a: f64, b: f64) -> Result<f64> {
    let num = alpha * a - (2.0 - alpha) * b;
    let den = alpha * a + (2.0 - alpha) * b;
    if !(den > COINCIDENCE_GUARD) {
        return Err(Error::DegenerateObservation);
    }
    Ok((num / den).clamp(-1.0, 1.0))
}

/// `∂h_α/∂α = 4AB / {αA + (2−α)B}²`.
pub fn balance_slope(alpha: ScaleValue, a: f64, b: f64) -> Result<f64> {
    balance_slope_raw(alpha.value(), a, b)
}

pub(crate) fn balance_slope_raw(alpha: f64, a: f64, b: f64) -> Result<f64> {
    let den = alpha * a + (2.0 - alpha) * b;
    if !(den > COINCIDENCE_GUARD) {
        return Err(Error::DegenerateObservation);
    }
    Ok(4.0 * a * b / (den * den))
}

/// Factor squares of every observation seen from `m`, computed once per pass.
pub fn sample_squares(m: &ProductPoint, sample: &ProductSample) -> Result<Vec<FactorSquares>> {
    let chart = ProductChart::new(m)?;
    sample.points().iter().map(|z| chart.squares(z)).collect()
}

pub(crate) fn mean_scaled(alpha: f64, squares: &[FactorSquares]) -> f64 {
    let mut acc = CompensatedSum::new();
    for s in squares {
        acc.add(s.scaled(alpha));
    }
    acc.value() / squares.len() as f64
}

/// `F_{n,α}(m)`: mean scaled distance from `m` to the sample.
pub fn empirical_objective(alpha: ScaleValue, m: &ProductPoint, sample: &ProductSample) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(mean_scaled(alpha.value(), &sample_squares(m, sample)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn e(xs: &[f64]) -> FactorPoint {
        FactorPoint::euclidean_from_slice(xs).unwrap()
    }

    fn pp(p: &[f64], q: &[f64]) -> ProductPoint {
        ProductPoint::new(e(p), e(q))
    }

    fn a(x: f64) -> ScaleValue {
        ScaleValue::new(x).unwrap()
    }

    #[test]
    fn scale_value_validation() {
        assert!(ScaleValue::new(0.0).is_err());
        assert!(ScaleValue::new(2.0).is_err());
        assert!(ScaleValue::with_epsilon(1.0, 1.0).is_err());
        let t = ScaleValue::truncated(0.0198, 0.05).unwrap();
        assert_eq!(t.value(), 0.05);
    }

    #[test]
    fn scaled_distance_examples() {
        let m = pp(&[0.0], &[0.0]);
        assert_eq!(scaled_distance(a(1.0), &m, &pp(&[3.0], &[4.0])).unwrap(), 5.0);
        assert_eq!(scaled_distance(a(0.7), &m, &m).unwrap(), 0.0);
        let d = scaled_distance(a(0.5), &m, &pp(&[2.0], &[2.0])).unwrap();
        assert!((d - 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn alpha_derivative_examples() {
        assert_eq!(alpha_derivatives(a(1.3), 2.0, 2.0).unwrap(), (0.0, 0.0));
        let (d1, d2) = alpha_derivatives(a(1.0), 4.0, 0.0).unwrap();
        assert_eq!(d1, 1.0);
        assert_eq!(d2, -0.5);
        assert_eq!(alpha_derivatives(a(1.0), 0.0, 0.0), Err(Error::Coincident));
    }

    #[test]
    fn score_example_is_unit_direction() {
        let m = pp(&[0.0, 0.0], &[0.0, 0.0]);
        let z = pp(&[3.0, 0.0], &[4.0, 0.0]);
        let s = median_score(a(1.0), &m, &z).unwrap();
        assert_eq!(s.r, 5.0);
        let (TangentVector::Euclidean(u), TangentVector::Euclidean(v)) = (&s.u, &s.v) else { panic!() };
        assert!((u - DVector::from_vec(vec![0.6, 0.0])).amax() < 1e-15);
        assert!((v - DVector::from_vec(vec![0.8, 0.0])).amax() < 1e-15);
        assert!(matches!(median_score(a(1.0), &m, &m), Err(Error::Coincident)));
    }

    #[test]
    fn balance_examples() {
        assert_eq!(balance_value(a(1.0), 2.0, 2.0).unwrap(), 0.0);
        for al in [0.1, 0.7, 1.9] {
            assert_eq!(balance_value(a(al), 1.0, 0.0).unwrap(), 1.0);
        }
        assert_eq!(balance_value(a(0.5), 1.0, 1.0).unwrap(), -0.5);
        assert_eq!(balance_value(a(1.0), 0.0, 0.0), Err(Error::DegenerateObservation));
        assert_eq!(balance_slope(a(1.0), 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(balance_slope(a(1.0), 1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn objective_examples() {
        let m = pp(&[0.0], &[0.0]);
        let one = ProductSample::new(vec![m.clone()]).unwrap();
        assert_eq!(empirical_objective(a(1.0), &m, &one).unwrap(), 0.0);
        let two = ProductSample::new(vec![pp(&[3.0], &[4.0]), m.clone()]).unwrap();
        assert_eq!(empirical_objective(a(1.0), &m, &two).unwrap(), 2.5);
    }

    #[test]
    fn coords_frames_round_trip() {
        let m = pp(&[1.0, 2.0], &[0.5]);
        let chart = ProductChart::new(&m).unwrap();
        let t = chart.log(&pp(&[2.0, 0.0], &[3.0])).unwrap().tangent;
        let c = chart.coords(&t, Frame::Scaled(0.4)).unwrap();
        let back = chart.from_coords(c.as_slice(), Frame::Scaled(0.4)).unwrap();
        assert_eq!(chart.coords(&back, Frame::Unscaled).unwrap(), chart.coords(&t, Frame::Unscaled).unwrap());
        let expected = (0.4f64 * 5.0 + 1.6 * 6.25).sqrt();
        assert!((chart.norm(&t, Frame::Scaled(0.4)).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn mixed_sample_rejected() {
        let z1 = pp(&[0.0], &[0.0]);
        let z2 = pp(&[0.0, 1.0], &[0.0]);
        assert_eq!(ProductSample::new(vec![z1, z2]), Err(Error::GeometryMismatch));
        assert_eq!(ProductSample::new(vec![]), Err(Error::EmptySample));
    }

    #[test]
    fn curvature_bound_takes_max() {
        assert_eq!(curvature_bound(1.0, 1.0, a(0.5)), 2.0);
        assert_eq!(curvature_bound(0.0, 0.0, a(1.0)), 0.0);
    }
}
