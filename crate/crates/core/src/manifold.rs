//! Factor manifolds: Euclidean space and the Bures–Wasserstein manifold of
//! symmetric positive-definite matrices.
//!
//! A [`FactorChart`] caches everything that depends only on the base point
//! (for SPD matrices: the eigendecomposition and its square roots), so that
//! distances and logarithms to many targets cost one eigendecomposition each.
//!
//! Bures–Wasserstein conventions. With `T = Σ^{-1/2}(Σ^{1/2} S Σ^{1/2})^{1/2} Σ^{-1/2}`
//! the optimal transport map from `N(0, Σ)` to `N(0, S)`, the logarithm is
//! `Log_Σ(S) = (T − I)Σ + Σ(T − I)`, the exponential is
//! `Exp_Σ(V) = (I + L)Σ(I + L)` with `LΣ + ΣL = V`, and the metric is
//! `⟨U, V⟩_Σ = tr(L_U Σ L_V)`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_spd, lyapunov_with, symmetrize, SymEigen, EIGEN_CLAMP, MIN_EIGENVALUE};
use crate::math::sqrt;

/// The kind and size of a factor manifold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Geometry {
    /// `ℝ^dim`.
    Euclidean { dim: usize },
    /// SPD matrices of size `dim × dim` with the Bures–Wasserstein metric.
    BuresWasserstein { dim: usize },
}

impl Geometry {
    pub fn descriptor(&self) -> ManifoldDescriptor {
        match *self {
            Geometry::Euclidean { dim } => ManifoldDescriptor { geometry: *self, ambient_dim: dim, intrinsic_dim: dim },
            Geometry::BuresWasserstein { dim } => {
                ManifoldDescriptor { geometry: *self, ambient_dim: dim * dim, intrinsic_dim: dim * (dim + 1) / 2 }
            }
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.descriptor().intrinsic_dim
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ManifoldDescriptor {
    pub geometry: Geometry,
    pub ambient_dim: usize,
    /// Dimension of the tangent space.
    pub intrinsic_dim: usize,
}

/// A point on one factor manifold.
#[derive(Clone, Debug, PartialEq)]
pub enum FactorPoint {
    Euclidean(DVector<f64>),
    Spd(DMatrix<f64>),
}

impl FactorPoint {
    pub fn euclidean(v: DVector<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::InvalidArgument("empty Euclidean point"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(FactorPoint::Euclidean(v))
    }

    pub fn euclidean_from_slice(xs: &[f64]) -> Result<Self> {
        Self::euclidean(DVector::from_column_slice(xs))
    }

    /// Validates symmetry and positive definiteness; stores the symmetrized matrix.
    pub fn spd(m: DMatrix<f64>) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::InvalidArgument("empty SPD point"));
        }
        Ok(FactorPoint::Spd(check_spd(&m)?))
    }

    pub fn geometry(&self) -> Geometry {
        match self {
            FactorPoint::Euclidean(v) => Geometry::Euclidean { dim: v.len() },
            FactorPoint::Spd(m) => Geometry::BuresWasserstein { dim: m.nrows() },
        }
    }

    pub fn as_vector(&self) -> Option<&DVector<f64>> {
        match self {
            FactorPoint::Euclidean(v) => Some(v),
            FactorPoint::Spd(_) => None,
        }
    }

    pub fn as_matrix(&self) -> Option<&DMatrix<f64>> {
        match self {
            FactorPoint::Spd(m) => Some(m),
            FactorPoint::Euclidean(_) => None,
        }
    }

    /// Image of the point under the isometry onto the same manifold with the
    /// metric multiplied by `c`: Euclidean points scale by `c`, SPD matrices by `c²`.
    pub fn rescaled(&self, c: f64) -> Self {
        match self {
            FactorPoint::Euclidean(v) => FactorPoint::Euclidean(v * c),
            FactorPoint::Spd(m) => FactorPoint::Spd(m * (c * c)),
        }
    }

    /// Size proxy used for finite-difference steps: `‖x‖` or `(tr Σ)^{1/2}`.
    pub fn magnitude(&self) -> f64 {
        match self {
            FactorPoint::Euclidean(v) => v.norm(),
            FactorPoint::Spd(m) => sqrt(m.trace().max(0.0)),
        }
    }
}

/// A tangent vector: a real vector, or a symmetric matrix for the SPD factor.
/// The base point is implied by the chart that produced it.
#[derive(Clone, Debug, PartialEq)]
pub enum TangentVector {
    Euclidean(DVector<f64>),
    Spd(DMatrix<f64>),
}

impl TangentVector {
    pub fn zero(geometry: Geometry) -> Self {
        match geometry {
            Geometry::Euclidean { dim } => TangentVector::Euclidean(DVector::zeros(dim)),
            Geometry::BuresWasserstein { dim } => TangentVector::Spd(DMatrix::zeros(dim, dim)),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        match self {
            TangentVector::Euclidean(v) => TangentVector::Euclidean(v * s),
            TangentVector::Spd(m) => TangentVector::Spd(m * s),
        }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &TangentVector) -> Result<()> {
        match (self, other) {
            (TangentVector::Euclidean(a), TangentVector::Euclidean(b)) if a.len() == b.len() => {
                a.axpy(s, b, 1.0);
                Ok(())
            }
            (TangentVector::Spd(a), TangentVector::Spd(b)) if a.shape() == b.shape() => {
                *a += b * s;
                Ok(())
            }
            _ => Err(Error::GeometryMismatch),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            TangentVector::Euclidean(v) => v.iter().all(|x| *x == 0.0),
            TangentVector::Spd(m) => m.iter().all(|x| *x == 0.0),
        }
    }
}

#[derive(Clone, Debug)]
enum ChartData {
    Euclidean,
    Spd { eig: SymEigen, sqrt: DMatrix<f64>, inv_sqrt: DMatrix<f64> },
}

/// A base point together with the cached quantities its log/exp/norm need.
#[derive(Clone, Debug)]
pub struct FactorChart {
    base: FactorPoint,
    data: ChartData,
}

impl FactorChart {
    pub fn new(base: &FactorPoint) -> Result<Self> {
        let data = match base {
            FactorPoint::Euclidean(_) => ChartData::Euclidean,
            FactorPoint::Spd(m) => {
                let eig = SymEigen::new(m);
                if eig.min() <= MIN_EIGENVALUE {
                    return Err(Error::NotPositiveDefinite { min_eigenvalue: eig.min() });
                }
                let sqrt = eig.sqrt();
                let inv_sqrt = eig.inv_sqrt();
                ChartData::Spd { eig, sqrt, inv_sqrt }
            }
        };
        Ok(Self { base: base.clone(), data })
    }

    pub fn base(&self) -> &FactorPoint {
        &self.base
    }

    pub fn geometry(&self) -> Geometry {
        self.base.geometry()
    }

    fn check_target(&self, target: &FactorPoint) -> Result<()> {
        let (g0, g1) = (self.geometry(), target.geometry());
        match (g0, g1) {
            (Geometry::Euclidean { dim: a }, Geometry::Euclidean { dim: b })
            | (Geometry::BuresWasserstein { dim: a }, Geometry::BuresWasserstein { dim: b }) => {
                if a == b {
                    Ok(())
                } else {
                    Err(Error::DimensionMismatch { expected: a, found: b })
                }
            }
            _ => Err(Error::GeometryMismatch),
        }
    }

    /// Transport displacement `L = T − I` from the base to `target` (SPD only).
    fn transport_displacement(&self, target: &DMatrix<f64>) -> DMatrix<f64> {
        let ChartData::Spd { sqrt, inv_sqrt, .. } = &self.data else {
            unreachable!("transport displacement on a Euclidean chart")
        };
        let inner = symmetrize(&(sqrt * target * sqrt));
        let root = SymEigen::new(&inner).sqrt();
        let t = symmetrize(&(inv_sqrt * root * inv_sqrt));
        let n = t.nrows();
        t - DMatrix::identity(n, n)
    }

    fn spd_sq_norm_of_displacement(&self, l: &DMatrix<f64>) -> f64 {
        let ChartData::Spd { sqrt, .. } = &self.data else { unreachable!() };
        (l * sqrt).norm_squared()
    }

    /// Squared distance from the base to `target`.
    pub fn sq_distance(&self, target: &FactorPoint) -> Result<f64> {
        self.check_target(target)?;
        match (&self.base, target) {
            (FactorPoint::Euclidean(a), FactorPoint::Euclidean(b)) => Ok((b - a).norm_squared()),
            (FactorPoint::Spd(_), FactorPoint::Spd(s)) => {
                let l = self.transport_displacement(s);
                Ok(self.spd_sq_norm_of_displacement(&l))
            }
            _ => Err(Error::GeometryMismatch),
        }
    }

    /// Logarithm together with the squared distance (which equals its squared norm).
    pub fn log_with_sq_distance(&self, target: &FactorPoint) -> Result<(TangentVector, f64)> {
        self.check_target(target)?;
        match (&self.base, target) {
            (FactorPoint::Euclidean(a), FactorPoint::Euclidean(b)) => {
                let u = b - a;
                let d2 = u.norm_squared();
                Ok((TangentVector::Euclidean(u), d2))
            }
            (FactorPoint::Spd(sigma), FactorPoint::Spd(s)) => {
                let l = self.transport_displacement(s);
                let d2 = self.spd_sq_norm_of_displacement(&l);
                let v = symmetrize(&(&l * sigma + sigma * &l));
                Ok((TangentVector::Spd(v), d2))
            }
            _ => Err(Error::GeometryMismatch),
        }
    }

    pub fn log(&self, target: &FactorPoint) -> Result<TangentVector> {
        Ok(self.log_with_sq_distance(target)?.0)
    }

    fn check_tangent(&self, v: &TangentVector) -> Result<()> {
        match (self.geometry(), v) {
            (Geometry::Euclidean { dim }, TangentVector::Euclidean(x)) => {
                if x.len() == dim {
                    Ok(())
                } else {
                    Err(Error::DimensionMismatch { expected: dim, found: x.len() })
                }
            }
            (Geometry::BuresWasserstein { dim }, TangentVector::Spd(x)) => {
                if x.nrows() == dim && x.ncols() == dim {
                    Ok(())
                } else {
                    Err(Error::DimensionMismatch { expected: dim, found: x.nrows() })
                }
            }
            _ => Err(Error::GeometryMismatch),
        }
    }

    /// Exponential map. For the SPD factor a result that is not numerically
    /// positive definite yields [`Error::ConeViolation`].
    pub fn exp(&self, v: &TangentVector) -> Result<FactorPoint> {
        self.check_tangent(v)?;
        match (&self.base, v, &self.data) {
            (FactorPoint::Euclidean(a), TangentVector::Euclidean(x), _) => Ok(FactorPoint::Euclidean(a + x)),
            (FactorPoint::Spd(sigma), TangentVector::Spd(x), ChartData::Spd { eig, .. }) => {
                let n = sigma.nrows();
                let l = lyapunov_with(eig, &symmetrize(x));
                let step = DMatrix::identity(n, n) + l;
                let out = symmetrize(&(&step * sigma * step.transpose()));
                let lmin = SymEigen::new(&out).min();
                if !(lmin > MIN_EIGENVALUE) {
                    return Err(Error::ConeViolation);
                }
                Ok(FactorPoint::Spd(out))
            }
            _ => Err(Error::GeometryMismatch),
        }
    }

    pub fn inner(&self, a: &TangentVector, b: &TangentVector) -> Result<f64> {
        self.check_tangent(a)?;
        self.check_tangent(b)?;
        let ca = self.coords(a)?;
        let cb = self.coords(b)?;
        Ok(ca.dot(&cb))
    }

    pub fn norm(&self, v: &TangentVector) -> Result<f64> {
        Ok(self.coords(v)?.norm())
    }

    /// Coordinates of `v` in an orthonormal basis of the tangent space at the base.
    ///
    /// For the SPD factor, writing `Ṽ = UᵀVU` in the eigenbasis of `Σ = UΛUᵀ`,
    /// the coordinates are `Ṽ_ii / (2√λ_i)` and `Ṽ_ij / √(λ_i + λ_j)` for `i < j`.
    pub fn coords(&self, v: &TangentVector) -> Result<DVector<f64>> {
        self.check_tangent(v)?;
        match (v, &self.data) {
            (TangentVector::Euclidean(x), _) => Ok(x.clone()),
            (TangentVector::Spd(x), ChartData::Spd { eig, .. }) => {
                let u = &eig.vectors;
                let vt = u.transpose() * symmetrize(x) * u;
                let n = vt.nrows();
                let mut out = Vec::with_capacity(n * (n + 1) / 2);
                for i in 0..n {
                    let li = eig.values[i].max(EIGEN_CLAMP);
                    out.push(vt[(i, i)] / (2.0 * sqrt(li)));
                    for j in (i + 1)..n {
                        let lj = eig.values[j].max(EIGEN_CLAMP);
                        out.push(vt[(i, j)] / sqrt(li + lj));
                    }
                }
                Ok(DVector::from_vec(out))
            }
            _ => Err(Error::GeometryMismatch),
        }
    }

    /// Inverse of [`FactorChart::coords`].
    pub fn from_coords(&self, c: &[f64]) -> Result<TangentVector> {
        let expected = self.geometry().intrinsic_dim();
        if c.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: c.len() });
        }
        match &self.data {
            ChartData::Euclidean => Ok(TangentVector::Euclidean(DVector::from_column_slice(c))),
            ChartData::Spd { eig, .. } => {
                let n = eig.values.len();
                let mut vt = DMatrix::zeros(n, n);
                let mut k = 0;
                for i in 0..n {
                    let li = eig.values[i].max(EIGEN_CLAMP);
                    vt[(i, i)] = 2.0 * sqrt(li) * c[k];
                    k += 1;
                    for j in (i + 1)..n {
                        let lj = eig.values[j].max(EIGEN_CLAMP);
                        let x = sqrt(li + lj) * c[k];
                        vt[(i, j)] = x;
                        vt[(j, i)] = x;
                        k += 1;
                    }
                }
                let u = &eig.vectors;
                Ok(TangentVector::Spd(symmetrize(&(u * vt * u.transpose()))))
            }
        }
    }
}

/// Geodesic distance between two points of the same factor.
pub fn factor_distance(a: &FactorPoint, b: &FactorPoint) -> Result<f64> {
    Ok(sqrt(FactorChart::new(a)?.sq_distance(b)?))
}

pub fn log_map(base: &FactorPoint, target: &FactorPoint) -> Result<TangentVector> {
    FactorChart::new(base)?.log(target)
}

pub fn exp_map(base: &FactorPoint, v: &TangentVector) -> Result<FactorPoint> {
    FactorChart::new(base)?.exp(v)
}

pub fn tangent_norm(base: &FactorPoint, v: &TangentVector) -> Result<f64> {
    FactorChart::new(base)?.norm(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn diag(xs: &[f64]) -> FactorPoint {
        FactorPoint::spd(DMatrix::from_diagonal(&DVector::from_column_slice(xs))).unwrap()
    }

    fn spd2(a: f64, b: f64, c: f64) -> FactorPoint {
        FactorPoint::spd(DMatrix::from_row_slice(2, 2, &[a, b, b, c])).unwrap()
    }

    #[test]
    fn euclidean_distance_is_pythagorean() {
        let a = FactorPoint::euclidean_from_slice(&[0.0, 0.0]).unwrap();
        let b = FactorPoint::euclidean_from_slice(&[3.0, 4.0]).unwrap();
        assert_eq!(factor_distance(&a, &b).unwrap(), 5.0);
    }

    #[test]
    fn bw_identity_distance_is_zero() {
        let i = diag(&[1.0, 1.0]);
        assert!(factor_distance(&i, &i).unwrap() < 1e-15);
    }

    #[test]
    fn bw_commuting_closed_form() {
        let d = factor_distance(&diag(&[1.0, 4.0]), &diag(&[9.0, 16.0])).unwrap();
        assert!((d - 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn euclidean_log_and_exp() {
        let base = FactorPoint::euclidean_from_slice(&[1.0, 1.0]).unwrap();
        let t = FactorPoint::euclidean_from_slice(&[4.0, 5.0]).unwrap();
        assert_eq!(log_map(&base, &t).unwrap(), TangentVector::Euclidean(DVector::from_vec(vec![3.0, 4.0])));
        let o = FactorPoint::euclidean_from_slice(&[0.0, 0.0]).unwrap();
        let v = TangentVector::Euclidean(DVector::from_vec(vec![1.0, 2.0]));
        assert_eq!(exp_map(&o, &v).unwrap(), FactorPoint::euclidean_from_slice(&[1.0, 2.0]).unwrap());
        assert_eq!(tangent_norm(&o, &TangentVector::Euclidean(DVector::from_vec(vec![3.0, 4.0]))).unwrap(), 5.0);
    }

    #[test]
    fn bw_log_at_self_is_zero_and_exp_zero_is_base() {
        let s = spd2(2.0, 0.3, 1.0);
        let v = log_map(&s, &s).unwrap();
        match &v {
            TangentVector::Spd(m) => assert!(m.amax() < 1e-12),
            _ => panic!(),
        }
        let z = TangentVector::zero(s.geometry());
        let back = exp_map(&s, &z).unwrap();
        assert!((back.as_matrix().unwrap() - s.as_matrix().unwrap()).amax() < 1e-14);
        assert_eq!(tangent_norm(&s, &z).unwrap(), 0.0);
    }

    #[test]
    fn bw_log_norm_matches_distance_from_identity() {
        let i = diag(&[1.0, 1.0]);
        let t = diag(&[4.0, 9.0]);
        let v = log_map(&i, &t).unwrap();
        let n = tangent_norm(&i, &v).unwrap();
        assert!((n - 5f64.sqrt()).abs() < 1e-12);
        assert!((n - factor_distance(&i, &t).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn bw_exp_inverts_log() {
        let a = spd2(1.3, 0.2, 0.9);
        let b = spd2(0.8, -0.1, 1.4);
        let chart = FactorChart::new(&a).unwrap();
        let back = chart.exp(&chart.log(&b).unwrap()).unwrap();
        assert!((back.as_matrix().unwrap() - b.as_matrix().unwrap()).amax() < 1e-12);
    }

    #[test]
    fn coords_round_trip_and_are_isometric() {
        let a = spd2(1.3, 0.2, 0.9);
        let chart = FactorChart::new(&a).unwrap();
        let v = chart.log(&spd2(0.7, 0.4, 2.0)).unwrap();
        let c = chart.coords(&v).unwrap();
        assert_eq!(c.len(), 3);
        let back = chart.from_coords(c.as_slice()).unwrap();
        match (&v, &back) {
            (TangentVector::Spd(x), TangentVector::Spd(y)) => assert!((x - y).amax() < 1e-12),
            _ => panic!(),
        }
        // ⟨V, V⟩ = tr(L Σ L) with LΣ + ΣL = V
        let TangentVector::Spd(vm) = &v else { panic!() };
        let l = crate::linalg::lyapunov(a.as_matrix().unwrap(), vm);
        let direct = (&l * a.as_matrix().unwrap() * &l).trace();
        assert!((c.norm_squared() - direct).abs() < 1e-12);
    }

    #[test]
    fn mismatches_are_errors() {
        let e = FactorPoint::euclidean_from_slice(&[0.0, 0.0]).unwrap();
        let f = FactorPoint::euclidean_from_slice(&[0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(factor_distance(&e, &f), Err(Error::DimensionMismatch { .. })));
        assert_eq!(factor_distance(&e, &diag(&[1.0, 1.0])), Err(Error::GeometryMismatch));
        assert!(FactorPoint::spd(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn intrinsic_dims() {
        assert_eq!(Geometry::BuresWasserstein { dim: 10 }.intrinsic_dim(), 55);
        assert_eq!(Geometry::Euclidean { dim: 3 }.intrinsic_dim(), 3);
    }

    #[test]
    fn rescaling_scales_distance() {
        let a = spd2(1.3, 0.2, 0.9);
        let b = spd2(0.8, -0.1, 1.4);
        let d = factor_distance(&a, &b).unwrap();
        let dc = factor_distance(&a.rescaled(3.0), &b.rescaled(3.0)).unwrap();
        assert!((dc - 3.0 * d).abs() < 1e-12);
    }
}
