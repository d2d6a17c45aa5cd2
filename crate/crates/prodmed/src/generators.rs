//! Simulation designs: the two-factor Euclidean mixture, its M-factor
//! contamination, and the Gaussian mean–covariance mixture on `ℝ^d × SPD(d)`.

use nalgebra::{DMatrix, DVector};
use prodmed_core::linalg::{sym_sqrt, symmetrize, SymEigen};
use prodmed_core::manifold::FactorPoint;
use prodmed_core::metric::{ProductPoint, ProductSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Name recorded in output metadata for the generator behind every stream.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha 0.9), seed_from_u64 + set_stream";

/// Streams above this offset are reserved for auxiliary draws (outliers,
/// reference samples) so they never collide with replication streams.
const AUX_STREAM: u64 = 1 << 40;

/// The generator for replication `stream` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Auxiliary generator paired with `stream`.
pub fn aux_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    stream_rng(seed, AUX_STREAM + stream)
}

fn normal_vec<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn pick<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// Parameters of the Euclidean `ℝ² × ℝ²` mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureDesign {
    /// Central, M-shifted, N-shifted.
    pub weights: [f64; 3],
    pub shift_m: [f64; 2],
    pub shift_n: [f64; 2],
    pub noise_sd: f64,
}

impl Default for MixtureDesign {
    fn default() -> Self {
        Self { weights: [0.45, 0.30, 0.25], shift_m: [4.0, 0.0], shift_n: [3.0, 0.0], noise_sd: 0.1 }
    }
}

impl MixtureDesign {
    pub fn validate(&self) -> anyhow::Result<()> {
        let total: f64 = self.weights.iter().sum();
        anyhow::ensure!(self.weights.iter().all(|w| *w >= 0.0), "mixture weights must be nonnegative");
        anyhow::ensure!((total - 1.0).abs() <= 1e-12, "mixture weights sum to {total}, not 1");
        anyhow::ensure!(self.noise_sd >= 0.0, "noise sd must be nonnegative");
        Ok(())
    }
}

/// One draw with its component label (0 central, 1 M-shifted, 2 N-shifted).
pub fn draw_exp1<R: Rng>(rng: &mut R, design: &MixtureDesign) -> (usize, ProductPoint) {
    let k = pick(rng, &design.weights);
    let mut x = normal_vec(rng, 2) * design.noise_sd;
    let mut y = normal_vec(rng, 2) * design.noise_sd;
    match k {
        1 => x += DVector::from_row_slice(&design.shift_m),
        2 => y += DVector::from_row_slice(&design.shift_n),
        _ => {}
    }
    let p = ProductPoint::new(FactorPoint::Euclidean(x), FactorPoint::Euclidean(y));
    (k, p)
}

/// Labelled Euclidean mixture sample.
pub fn generate_exp1_labelled<R: Rng>(
    rng: &mut R,
    n: usize,
    design: &MixtureDesign,
) -> (Vec<usize>, Vec<ProductPoint>) {
    (0..n).map(|_| draw_exp1(rng, design)).unzip()
}

/// Euclidean mixture sample of size `n` from `(seed, stream)`.
pub fn generate_exp1(n: usize, seed: u64, stream: u64, design: &MixtureDesign) -> anyhow::Result<ProductSample> {
    design.validate()?;
    let mut rng = stream_rng(seed, stream);
    let (_, pts) = generate_exp1_labelled(&mut rng, n, design);
    Ok(ProductSample::new(pts)?)
}

/// Location of the M-factor outliers.
pub const OUTLIER_CENTER: [f64; 2] = [20.0, 0.0];

/// The mixture sample with its first `⌊ηn⌋` M-observations replaced by
/// `(20, 0) + N(0, I₂)`; the outlier noise comes from the auxiliary stream so
/// that `η = 0` reproduces [`generate_exp1`] exactly.
pub fn generate_exp2_contaminated(
    n: usize,
    eta: f64,
    seed: u64,
    stream: u64,
    design: &MixtureDesign,
) -> anyhow::Result<ProductSample> {
    anyhow::ensure!((0.0..=0.5).contains(&eta), "contamination fraction {eta} outside [0, 0.5]");
    design.validate()?;
    let mut rng = stream_rng(seed, stream);
    let (_, mut pts) = generate_exp1_labelled(&mut rng, n, design);
    let k = (eta * n as f64).floor() as usize;
    let mut aux = aux_rng(seed, stream);
    for p in pts.iter_mut().take(k) {
        p.p = FactorPoint::Euclidean(DVector::from_row_slice(&OUTLIER_CENTER) + normal_vec(&mut aux, 2));
    }
    Ok(ProductSample::new(pts)?)
}

/// Parameters of the Gaussian mean–covariance mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianDesign {
    pub d: usize,
    /// Central, mean-shifted, covariance-shifted.
    pub weights: [f64; 3],
    pub delta: f64,
    pub rho: f64,
    pub mean_noise: f64,
    /// Scale `s` of the symmetric perturbation `C (I + s W) Cᵀ`.
    pub cov_noise: f64,
}

impl Default for GaussianDesign {
    fn default() -> Self {
        Self { d: 10, weights: [0.50, 0.25, 0.25], delta: 3.0, rho: 0.7, mean_noise: 0.1, cov_noise: 0.072 }
    }
}

impl GaussianDesign {
    pub fn validate(&self) -> anyhow::Result<()> {
        let total: f64 = self.weights.iter().sum();
        anyhow::ensure!(self.d >= 2, "dimension must be at least 2");
        anyhow::ensure!((total - 1.0).abs() <= 1e-12, "mixture weights sum to {total}, not 1");
        anyhow::ensure!(self.rho.abs() < 1.0, "AR coefficient must lie in (-1, 1)");
        Ok(())
    }
}

/// `Σ_AR(ρ)_{jk} = ρ^{|j−k|}`.
pub fn ar1_matrix(d: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |j, k| rho.powi((j as i32 - k as i32).abs()))
}

/// Eigenvalue floor applied after perturbing a covariance.
pub const COV_FLOOR: f64 = 1e-8;

fn perturb_cov<R: Rng>(rng: &mut R, base_root: &DMatrix<f64>, s: f64) -> DMatrix<f64> {
    let d = base_root.nrows();
    let mut w = DMatrix::zeros(d, d);
    for j in 0..d {
        for k in j..d {
            let z: f64 = rng.sample(StandardNormal);
            w[(j, k)] = z;
            w[(k, j)] = z;
        }
    }
    let inner = DMatrix::identity(d, d) + w * s;
    let raw = symmetrize(&(base_root * inner * base_root.transpose()));
    SymEigen::new(&raw).map(|l| l.max(COV_FLOOR))
}

/// Labelled Gaussian mixture sample: `(μ, Σ)` pairs on `ℝ^d × SPD(d)`.
pub fn generate_exp4_labelled<R: Rng>(
    rng: &mut R,
    n: usize,
    design: &GaussianDesign,
) -> (Vec<usize>, Vec<ProductPoint>) {
    let d = design.d;
    let eye = DMatrix::<f64>::identity(d, d);
    let ar_root = sym_sqrt(&ar1_matrix(d, design.rho));
    (0..n)
        .map(|_| {
            let k = pick(rng, &design.weights);
            let mut mu = normal_vec(rng, d) * design.mean_noise;
            if k == 1 {
                mu[0] += design.delta;
            }
            let root = if k == 2 { &ar_root } else { &eye };
            let sigma = perturb_cov(rng, root, design.cov_noise);
            (k, ProductPoint::new(FactorPoint::Euclidean(mu), FactorPoint::Spd(sigma)))
        })
        .unzip()
}

pub fn generate_exp4_gaussians(
    n: usize,
    seed: u64,
    stream: u64,
    design: &GaussianDesign,
) -> anyhow::Result<ProductSample> {
    design.validate()?;
    let mut rng = stream_rng(seed, stream);
    let (_, pts) = generate_exp4_labelled(&mut rng, n, design);
    // Validate every covariance through the checked constructor.
    let pts = pts
        .into_iter()
        .map(|p| match p.q {
            FactorPoint::Spd(s) => Ok(ProductPoint::new(p.p, FactorPoint::spd(s)?)),
            q => Ok(ProductPoint::new(p.p, q)),
        })
        .collect::<Result<Vec<_>, prodmed_core::Error>>()?;
    Ok(ProductSample::new(pts)?)
}
