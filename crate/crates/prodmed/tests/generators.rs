use nalgebra::DMatrix;
use prodmed::generators::{
    ar1_matrix, generate_exp1, generate_exp1_labelled, generate_exp2_contaminated, generate_exp4_gaussians,
    generate_exp4_labelled, stream_rng, GaussianDesign, MixtureDesign, OUTLIER_CENTER,
};
use prodmed_core::calibration::{radial_scales_with, ScaleMethod};
use prodmed_core::manifold::FactorPoint;
use prodmed_core::metric::{scaled_distance, ScaleValue};
use prodmed_core::solver::SolverConfig;

const N: usize = 100_000;

/// Upper 0.001 point of χ² with 2 degrees of freedom, `−2 ln 0.001`.
const CHI2_2DF_999: f64 = 13.815_510_557_964_274;

fn x_of(p: &FactorPoint) -> [f64; 2] {
    let v = p.as_vector().unwrap();
    [v[0], v[1]]
}

#[test]
fn mixture_component_frequencies() {
    let design = MixtureDesign::default();
    let (labels, _) = generate_exp1_labelled(&mut stream_rng(1, 0), N, &design);
    let mut counts = [0usize; 3];
    for k in labels {
        counts[k] += 1;
    }
    let mut chi2 = 0.0;
    for (c, w) in counts.iter().zip(design.weights) {
        let expected = w * N as f64;
        let sigma = (N as f64 * w * (1.0 - w)).sqrt();
        assert!((*c as f64 - expected).abs() <= 3.0 * sigma, "{counts:?}");
        chi2 += (*c as f64 - expected).powi(2) / expected;
    }
    assert!(chi2 < CHI2_2DF_999, "χ² = {chi2}");
}

#[test]
fn mixture_shift_and_tail_probability() {
    let (labels, pts) = generate_exp1_labelled(&mut stream_rng(2, 0), N, &MixtureDesign::default());
    let shifted: Vec<[f64; 2]> = labels.iter().zip(&pts).filter(|(k, _)| **k == 1).map(|(_, p)| x_of(&p.p)).collect();
    let mean = |j: usize| shifted.iter().map(|x| x[j]).sum::<f64>() / shifted.len() as f64;
    assert!((mean(0) - 4.0).abs() < 0.01 && mean(1).abs() < 0.01);
    let far = pts.iter().filter(|p| x_of(&p.p).iter().map(|v| v * v).sum::<f64>().sqrt() > 2.0).count();
    assert!((far as f64 / N as f64 - 0.30).abs() < 0.02);
}

#[test]
fn uncontaminated_design_reproduces_the_mixture() {
    let design = MixtureDesign::default();
    let a = generate_exp1(500, 3, 7, &design).unwrap();
    let b = generate_exp2_contaminated(500, 0.0, 3, 7, &design).unwrap();
    assert_eq!(a.points(), b.points());
}

#[test]
fn contamination_replaces_exactly_the_first_block() {
    let design = MixtureDesign::default();
    let clean = generate_exp1(1000, 4, 0, &design).unwrap();
    let dirty = generate_exp2_contaminated(1000, 0.1, 4, 0, &design).unwrap();
    let near = |p: &FactorPoint| {
        let x = x_of(p);
        ((x[0] - OUTLIER_CENTER[0]).powi(2) + (x[1] - OUTLIER_CENTER[1]).powi(2)).sqrt() < 6.0
    };
    assert_eq!(dirty.points().iter().filter(|z| near(&z.p)).count(), 100);
    for (i, (c, d)) in clean.points().iter().zip(dirty.points()).enumerate() {
        assert_eq!(c.q, d.q);
        if i >= 100 {
            assert_eq!(c.p, d.p);
        }
    }
}

#[test]
fn rms_scale_blows_up_under_contamination() {
    let s = generate_exp2_contaminated(10_000, 0.05, 5, 0, &MixtureDesign::default()).unwrap();
    let cfg = SolverConfig { max_iterations: 5000, ..SolverConfig::default() };
    let med = radial_scales_with(&s, ScaleMethod::RadialMedian, &cfg).unwrap();
    let rms = radial_scales_with(&s, ScaleMethod::Rms, &cfg).unwrap();
    assert!(rms.s_m > 2.0 * med.s_m, "{} vs {}", rms.s_m, med.s_m);
}

#[test]
fn ar1_matrix_for_three_dimensions() {
    let m = ar1_matrix(3, 0.7);
    let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.7, 0.49, 0.7, 1.0, 0.7, 0.49, 0.7, 1.0]);
    assert!((m - expected).abs().max() < 1e-15);
}

#[test]
fn gaussian_mixture_covariances_are_spd() {
    let design = GaussianDesign::default();
    let (labels, pts) = generate_exp4_labelled(&mut stream_rng(6, 0), 2000, &design);
    for p in &pts {
        let FactorPoint::Spd(s) = &p.q else { panic!("covariance factor expected") };
        assert!(FactorPoint::spd(s.clone()).is_ok());
        assert_eq!(s.nrows(), design.d);
    }
    assert!(labels.contains(&2));
    assert!(generate_exp4_gaussians(50, 6, 1, &design).is_ok());
}

/// `tr A + tr B − 2 tr (A^{1/2} B A^{1/2})^{1/2}` via eigendecompositions.
fn bw_squared(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let root = |m: &DMatrix<f64>| {
        let e = m.clone().symmetric_eigen();
        &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt())) * e.eigenvectors.transpose()
    };
    let ra = root(a);
    let inner = &ra * b * &ra;
    let cross: f64 = inner.symmetric_eigen().eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    a.trace() + b.trace() - 2.0 * cross
}

#[test]
fn wasserstein_distance_decomposes() {
    let s = generate_exp4_gaussians(40, 7, 0, &GaussianDesign::default()).unwrap();
    let one = ScaleValue::new(1.0).unwrap();
    for w in s.points().windows(2) {
        let (x, y) = (&w[0], &w[1]);
        let dmu = (x.p.as_vector().unwrap() - y.p.as_vector().unwrap()).norm_squared();
        let oracle = (dmu + bw_squared(x.q.as_matrix().unwrap(), y.q.as_matrix().unwrap())).sqrt();
        let got = scaled_distance(one, x, y).unwrap();
        assert!((got - oracle).abs() / oracle < 1e-10, "{got} vs {oracle}");
    }
}
