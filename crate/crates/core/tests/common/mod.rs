#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use prodmed_core::manifold::FactorPoint;
use prodmed_core::metric::{ProductPoint, ProductSample, ScaleValue};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha20Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn e(xs: &[f64]) -> FactorPoint {
    FactorPoint::euclidean_from_slice(xs).unwrap()
}

pub fn pp(p: &[f64], q: &[f64]) -> ProductPoint {
    ProductPoint::new(e(p), e(q))
}

pub fn a(x: f64) -> ScaleValue {
    ScaleValue::new(x).unwrap()
}

pub fn sample(points: Vec<ProductPoint>) -> ProductSample {
    ProductSample::new(points).unwrap()
}

pub fn spd(m: DMatrix<f64>) -> FactorPoint {
    FactorPoint::spd(m).unwrap()
}

pub fn diag(xs: &[f64]) -> FactorPoint {
    spd(DMatrix::from_diagonal(&DVector::from_row_slice(xs)))
}

pub fn random_spd(rng: &mut ChaCha20Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| normal(rng));
    let s = &g * g.transpose() / d as f64 + DMatrix::identity(d, d) * 0.3;
    (&s + s.transpose()) * 0.5
}

/// `I + t G` symmetrized, with `G` standard normal; SPD for small `t`.
pub fn near_identity(rng: &mut ChaCha20Rng, d: usize, t: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| normal(rng));
    DMatrix::identity(d, d) + (&g + g.transpose()) * (0.5 * t)
}

pub fn random_vec(rng: &mut ChaCha20Rng, d: usize) -> FactorPoint {
    FactorPoint::Euclidean(DVector::from_fn(d, |_, _| normal(rng)))
}

pub fn vec_of(p: &FactorPoint) -> &DVector<f64> {
    p.as_vector().unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
