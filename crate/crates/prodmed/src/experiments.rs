//! Monte Carlo drivers for the four simulation designs.
//!
//! Every replication draws from its own generator stream, computed
//! independently of scheduling, and results are collected in index order, so
//! outputs are identical for any worker count.

use std::fs;
use std::path::Path;

use anyhow::Context;
use prodmed_core::balanced::{solve_balanced, BalancedConfig, BisectStatus};
use prodmed_core::calibration::{
    calibrate, calibrated_alpha, location_drift, radial_scales_with, CalibrationConfig, ScaleMethod,
};
use prodmed_core::manifold::factor_distance;
use prodmed_core::metric::{ProductSample, ScaleValue, DEFAULT_EPSILON};
use prodmed_core::path::{equispaced_grid, solve_path, PathConfig, PathResult, SensitivityMethod};
use prodmed_core::solver::{product_weiszfeld, SolverConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::generators::{
    generate_exp1, generate_exp2_contaminated, generate_exp4_gaussians, GaussianDesign, MixtureDesign, RNG_ALGORITHM,
};
use crate::table::{Cell, Table};

/// `lo:hi:steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { lo: 0.05, hi: 1.95, steps: 39 }
    }
}

impl std::str::FromStr for GridSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("grid '{s}' is not lo:hi:steps"));
        }
        let lo = parts[0].trim().parse().map_err(|_| format!("invalid grid start '{}'", parts[0]))?;
        let hi = parts[1].trim().parse().map_err(|_| format!("invalid grid end '{}'", parts[1]))?;
        let steps = parts[2].trim().parse().map_err(|_| format!("invalid grid step count '{}'", parts[2]))?;
        Ok(Self { lo, hi, steps })
    }
}

impl GridSpec {
    pub fn build(&self, epsilon: f64) -> anyhow::Result<Vec<ScaleValue>> {
        Ok(equispaced_grid(self.lo, self.hi, self.steps, epsilon)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: u8,
    /// Sample sizes, one summary row (group) each.
    pub sizes: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub grid: GridSpec,
    pub epsilon: f64,
    pub mixture: MixtureDesign,
    pub gaussian: GaussianDesign,
    /// Contamination fractions (experiment 2).
    pub etas: Vec<f64>,
    /// M-factor unit multipliers (experiment 2).
    pub rescale: Vec<f64>,
    /// Truncation width for the raw calibrated and balanced fits under
    /// rescaling; small enough not to bind for the multipliers above.
    pub unit_epsilon: f64,
    /// Size and seed of the large sample approximating the experiment-3 target.
    pub reference_n: usize,
    pub reference_seed: u64,
    /// Worker threads; `None` uses the global pool. Never affects outputs.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    /// Desk-scale defaults for experiment `id`.
    pub fn defaults(id: u8) -> anyhow::Result<Self> {
        let base = Self {
            experiment: id,
            sizes: vec![300],
            replications: 100,
            seed: 20_240_601,
            grid: GridSpec::default(),
            epsilon: DEFAULT_EPSILON,
            mixture: MixtureDesign::default(),
            gaussian: GaussianDesign::default(),
            etas: vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.4],
            rescale: vec![0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 10.0],
            unit_epsilon: 1e-5,
            reference_n: 200_000,
            reference_seed: 0x5eed_0003,
            threads: None,
        };
        Ok(match id {
            1 => Self { sizes: vec![100, 300, 1000], ..base },
            2 => base,
            3 => Self { sizes: vec![100, 200, 500, 1000], replications: 300, ..base },
            4 => Self { sizes: vec![100], replications: 50, ..base },
            _ => anyhow::bail!("unknown experiment {id} (expected 1-4)"),
        })
    }

    /// Larger replication counts and sample sizes for full-scale runs.
    pub fn full_scale(mut self) -> Self {
        match self.experiment {
            1 | 2 => self.replications = 500,
            3 => self.replications = 1000,
            4 => {
                self.replications = 300;
                self.sizes = vec![100, 300, 1000];
            }
            _ => {}
        }
        self
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!((1..=4).contains(&self.experiment), "experiment must be 1-4");
        anyhow::ensure!(!self.sizes.is_empty(), "at least one sample size is required");
        anyhow::ensure!(self.sizes.iter().all(|n| *n >= 2), "sample sizes must be at least 2");
        anyhow::ensure!(self.replications >= 1, "replications must be at least 1");
        anyhow::ensure!(self.epsilon > 0.0 && self.epsilon < 1.0, "epsilon must lie in (0, 1)");
        anyhow::ensure!(self.unit_epsilon > 0.0 && self.unit_epsilon < 1.0, "unit_epsilon must lie in (0, 1)");
        anyhow::ensure!(self.rescale.iter().all(|c| *c > 0.0), "rescaling constants must be positive");
        anyhow::ensure!(
            self.etas.iter().all(|e| (0.0..=0.5).contains(e)),
            "contamination fractions must lie in [0, 0.5]"
        );
        self.mixture.validate()?;
        self.gaussian.validate()?;
        self.grid.build(self.epsilon)?;
        Ok(())
    }
}

/// Summary tables, per-replication logs, and run metadata.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub summaries: Vec<Table>,
    pub replications: Vec<Table>,
    /// Plot-ready path of a representative sample (experiment 1).
    pub path: Option<Table>,
    pub meta: serde_json::Value,
}

impl ExperimentOutput {
    pub fn summary(&self, name: &str) -> Option<&Table> {
        self.summaries.iter().find(|t| t.name == name)
    }

    pub fn replication_log(&self, name: &str) -> Option<&Table> {
        self.replications.iter().find(|t| t.name == name)
    }

    /// `(file name, contents)` for every output file.
    pub fn files(&self, json: bool) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let suffix =
            |i: usize, t: &Table, stem: &str| if i == 0 { stem.to_string() } else { format!("{stem}_{}", t.name) };
        if json {
            let obj: serde_json::Map<String, serde_json::Value> =
                self.summaries.iter().map(|t| (t.name.clone(), t.to_json())).collect();
            out.push(("summary.json".into(), pretty(&serde_json::Value::Object(obj))));
        } else {
            for (i, t) in self.summaries.iter().enumerate() {
                out.push((format!("{}.csv", suffix(i, t, "summary")), t.to_csv()));
            }
        }
        for (i, t) in self.replications.iter().enumerate() {
            out.push((format!("{}.csv", suffix(i, t, "replications")), t.to_csv()));
        }
        if let Some(p) = &self.path {
            out.push(("path.csv".into(), p.to_csv()));
        }
        out.push(("meta.json".into(), pretty(&self.meta)));
        out
    }

    pub fn write_to(&self, dir: &Path, json: bool) -> anyhow::Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, body) in self.files(json) {
            let p = dir.join(&name);
            fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        }
        Ok(())
    }
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON serialization");
    s.push('\n');
    s
}

/// Maps `f` over `0..count` in parallel and returns results in index order.
pub fn par_map<T, F>(count: usize, threads: Option<usize>, f: F) -> anyhow::Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build()?;
            Ok(pool.install(|| (0..count).into_par_iter().map(&f).collect()))
        }
        None => Ok((0..count).into_par_iter().map(f).collect()),
    }
}

/// Stream for replication `rep` of group `group`.
pub fn stream_id(group: usize, rep: usize) -> u64 {
    ((group as u64) << 32) | rep as u64
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NAN, f64::max)
}

fn frac(count: usize, total: usize) -> f64 {
    if total == 0 {
        f64::NAN
    } else {
        count as f64 / total as f64
    }
}

fn tight_solver() -> SolverConfig {
    SolverConfig { tolerance: 1e-11, max_iterations: 5000, ..SolverConfig::default() }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentOutput> {
    cfg.validate()?;
    let mut out = match cfg.experiment {
        1 => experiment1(cfg)?,
        2 => experiment2(cfg)?,
        3 => experiment3(cfg)?,
        4 => experiment4(cfg)?,
        _ => unreachable!("validated"),
    };
    let mut meta = json!({
        "experiment": cfg.experiment,
        "config": cfg,
        "rng": RNG_ALGORITHM,
        "stream_rule": "replication r of group g uses stream (g << 32) | r under the base seed",
        "prodmed_version": env!("CARGO_PKG_VERSION"),
    });
    if let (Some(m), serde_json::Value::Object(extra)) = (meta.as_object_mut(), out.meta.take()) {
        m.extend(extra);
    }
    out.meta = meta;
    Ok(out)
}

// ---------------------------------------------------------------- experiment 1

struct Exp1Rep {
    converged: bool,
    argmin: usize,
    phi_left: f64,
    phi_right: f64,
    phi_one: f64,
    error: String,
}

fn exp1_rep(cfg: &ExperimentConfig, grid: &[ScaleValue], n: usize, stream: u64) -> anyhow::Result<Exp1Rep> {
    let sample = generate_exp1(n, cfg.seed, stream, &cfg.mixture)?;
    let pc = PathConfig { method: SensitivityMethod::FiniteDifference, ..PathConfig::default() };
    let path = solve_path(&sample, grid, &pc)?;
    Ok(Exp1Rep {
        converged: path.all_converged(),
        argmin: path.argmin(),
        phi_left: path.profiled[0],
        phi_right: *path.profiled.last().expect("non-empty grid"),
        phi_one: path.reference.objective,
        error: String::new(),
    })
}

pub const EXP1_SUMMARY_COLUMNS: [&str; 9] =
    ["n", "phi_left", "phi_right", "phi_1", "conv", "left", "right", "interior", "replications"];
pub const EXP1_REPLICATION_COLUMNS: [&str; 10] =
    ["n", "rep", "stream", "converged", "argmin_index", "argmin_alpha", "phi_left", "phi_right", "phi_1", "error"];
pub const PATH_COLUMNS: [&str; 8] = [
    "alpha",
    "profiled",
    "displacement_m",
    "displacement_n",
    "sensitivity",
    "sensitivity_m",
    "sensitivity_n",
    "converged",
];

/// One row per grid point of a solved path, under [`PATH_COLUMNS`].
pub fn path_table(path: &PathResult) -> Table {
    let mut pt = Table::new("path", &PATH_COLUMNS);
    let opt = |v: Option<f64>| Cell::Float(v.unwrap_or(f64::NAN));
    for i in 0..path.grid.len() {
        pt.push(vec![
            path.grid[i].value().into(),
            path.profiled[i].into(),
            path.displacement_m[i].into(),
            path.displacement_n[i].into(),
            opt(path.sensitivity[i]),
            opt(path.sensitivity_m[i]),
            opt(path.sensitivity_n[i]),
            path.fits[i].converged.into(),
        ]);
    }
    pt
}

fn experiment1(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentOutput> {
    let grid = cfg.grid.build(cfg.epsilon)?;
    let last = grid.len() - 1;
    let mut summary = Table::new("boundary", &EXP1_SUMMARY_COLUMNS);
    let mut log = Table::new("boundary", &EXP1_REPLICATION_COLUMNS);
    for (g, &n) in cfg.sizes.iter().enumerate() {
        let reps = par_map(cfg.replications, cfg.threads, |r| {
            exp1_rep(cfg, &grid, n, stream_id(g, r)).unwrap_or_else(|e| Exp1Rep {
                converged: false,
                argmin: usize::MAX,
                phi_left: f64::NAN,
                phi_right: f64::NAN,
                phi_one: f64::NAN,
                error: e.to_string(),
            })
        })?;
        for (r, x) in reps.iter().enumerate() {
            let argmin_alpha = grid.get(x.argmin).map(|a| a.value()).unwrap_or(f64::NAN);
            log.push(vec![
                n.into(),
                r.into(),
                stream_id(g, r).into(),
                x.converged.into(),
                Cell::Int(if x.argmin == usize::MAX { -1 } else { x.argmin as i64 }),
                argmin_alpha.into(),
                x.phi_left.into(),
                x.phi_right.into(),
                x.phi_one.into(),
                x.error.as_str().into(),
            ]);
        }
        let ok: Vec<&Exp1Rep> = reps.iter().filter(|x| x.converged).collect();
        let col = |f: fn(&Exp1Rep) -> f64| mean(&ok.iter().map(|x| f(x)).collect::<Vec<_>>());
        let left = ok.iter().filter(|x| x.argmin == 0).count();
        let right = ok.iter().filter(|x| x.argmin == last).count();
        summary.push(vec![
            n.into(),
            col(|x| x.phi_left).into(),
            col(|x| x.phi_right).into(),
            col(|x| x.phi_one).into(),
            frac(ok.len(), reps.len()).into(),
            frac(left, ok.len()).into(),
            frac(right, ok.len()).into(),
            frac(ok.len() - left - right, ok.len()).into(),
            reps.len().into(),
        ]);
    }

    // Representative path: first replication of the first size.
    let sample = generate_exp1(cfg.sizes[0], cfg.seed, stream_id(0, 0), &cfg.mixture)?;
    let path = solve_path(&sample, &grid, &PathConfig::default())?;
    let pt = path_table(&path);
    Ok(ExperimentOutput { summaries: vec![summary], replications: vec![log], path: Some(pt), meta: json!({}) })
}

// ---------------------------------------------------------------- experiment 2

pub const EXP2_UNIT_COLUMNS: [&str; 11] = [
    "c",
    "fixed_drift",
    "calibrated_drift",
    "balanced_drift",
    "calibrated_drift_max",
    "balanced_drift_max",
    "alpha_sc",
    "alpha_bal",
    "weight_ratio_sc",
    "weight_ratio_bal",
    "conv",
];
pub const EXP2_UNIT_REPLICATION_COLUMNS: [&str; 11] = [
    "rep",
    "c",
    "fixed_drift",
    "calibrated_drift",
    "balanced_drift",
    "alpha_sc",
    "alpha_bal",
    "weight_ratio_sc",
    "weight_ratio_bal",
    "converged",
    "error",
];
pub const EXP2_CONTAMINATION_COLUMNS: [&str; 6] =
    ["eta", "radial_median_alpha", "rms_alpha", "radial_median_sd", "rms_sd", "conv"];
pub const EXP2_CONTAMINATION_REPLICATION_COLUMNS: [&str; 6] =
    ["rep", "eta", "radial_median_alpha", "rms_alpha", "converged", "error"];

#[derive(Clone, Default)]
struct UnitRow {
    fixed: f64,
    calibrated: f64,
    balanced: f64,
    alpha_sc: f64,
    alpha_bal: f64,
    converged: bool,
    error: String,
}

fn unit_configs(cfg: &ExperimentConfig) -> (CalibrationConfig, BalancedConfig) {
    let solver = tight_solver();
    let cal = CalibrationConfig { solver, epsilon: cfg.unit_epsilon, truncate: false, ..CalibrationConfig::default() };
    let bal = BalancedConfig {
        solver,
        epsilon: cfg.unit_epsilon,
        tol_alpha: 1e-14,
        location_tol: 1e-10,
        alpha_tol: 1e-12,
        inference: false,
        ..BalancedConfig::default()
    };
    (cal, bal)
}

fn exp2_unit_rep(cfg: &ExperimentConfig, stream: u64) -> anyhow::Result<Vec<UnitRow>> {
    let sample = generate_exp1(cfg.sizes[0], cfg.seed, stream, &cfg.mixture)?;
    let (cal_cfg, bal_cfg) = unit_configs(cfg);
    let one = ScaleValue::with_epsilon(1.0, cfg.epsilon)?;
    let solver = tight_solver();
    let fixed_ref = product_weiszfeld(one, &sample, None, &solver)?;
    let cal_ref = calibrate(&sample, &cal_cfg)?;
    let bal_ref = solve_balanced(&sample, &bal_cfg)?;
    let mut rows = Vec::with_capacity(cfg.rescale.len());
    for &c in &cfg.rescale {
        if c == 1.0 {
            rows.push(UnitRow {
                fixed: 0.0,
                calibrated: 0.0,
                balanced: 0.0,
                alpha_sc: cal_ref.alpha_raw,
                alpha_bal: bal_ref.alpha_bal.value(),
                converged: fixed_ref.converged && cal_ref.converged() && bal_ref.converged,
                error: String::new(),
            });
            continue;
        }
        let scaled = sample.rescaled(c, 1.0);
        let back = |p: &prodmed_core::metric::ProductPoint| p.rescaled(1.0 / c, 1.0);
        let fixed = product_weiszfeld(one, &scaled, None, &solver)?;
        let cal = calibrate(&scaled, &cal_cfg)?;
        let bal = solve_balanced(&scaled, &bal_cfg)?;
        rows.push(UnitRow {
            fixed: location_drift(&fixed_ref.location, &back(&fixed.location))?,
            calibrated: location_drift(&cal_ref.fit.location, &back(&cal.fit.location))?,
            balanced: location_drift(&bal_ref.location, &back(&bal.location))?,
            alpha_sc: cal.alpha_raw,
            alpha_bal: bal.alpha_bal.value(),
            converged: fixed.converged && cal.converged() && bal.converged,
            error: String::new(),
        });
    }
    Ok(rows)
}

fn ratio(alpha: f64, c: f64) -> f64 {
    alpha * c * c / (2.0 - alpha)
}

struct ContRow {
    radial: f64,
    rms: f64,
    converged: bool,
    error: String,
}

fn exp2_contamination_rep(cfg: &ExperimentConfig, stream: u64) -> Vec<ContRow> {
    // Heavy contamination leaves the marginal objective nearly flat between
    // clusters, where Weiszfeld needs more than the default iteration cap.
    let solver = SolverConfig { max_iterations: 5000, ..SolverConfig::default() };
    cfg.etas
        .iter()
        .map(|&eta| {
            let run = || -> anyhow::Result<ContRow> {
                let s = generate_exp2_contaminated(cfg.sizes[0], eta, cfg.seed, stream, &cfg.mixture)?;
                let rm = radial_scales_with(&s, ScaleMethod::RadialMedian, &solver)?;
                let rms = radial_scales_with(&s, ScaleMethod::Rms, &solver)?;
                Ok(ContRow {
                    radial: calibrated_alpha(rm.s_m, rm.s_n, None, cfg.epsilon)?.raw,
                    rms: calibrated_alpha(rms.s_m, rms.s_n, None, cfg.epsilon)?.raw,
                    converged: rm.marginals_converged && rms.marginals_converged,
                    error: String::new(),
                })
            };
            run().unwrap_or_else(|e| ContRow {
                radial: f64::NAN,
                rms: f64::NAN,
                converged: false,
                error: e.to_string(),
            })
        })
        .collect()
}

fn experiment2(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentOutput> {
    let nc = cfg.rescale.len();
    let unit = par_map(cfg.replications, cfg.threads, |r| {
        exp2_unit_rep(cfg, stream_id(0, r)).unwrap_or_else(|e| {
            vec![
                UnitRow {
                    fixed: f64::NAN,
                    calibrated: f64::NAN,
                    balanced: f64::NAN,
                    alpha_sc: f64::NAN,
                    alpha_bal: f64::NAN,
                    converged: false,
                    error: e.to_string()
                };
                nc
            ]
        })
    })?;
    let mut unit_log = Table::new("unit", &EXP2_UNIT_REPLICATION_COLUMNS);
    for (r, rows) in unit.iter().enumerate() {
        for (k, x) in rows.iter().enumerate() {
            let c = cfg.rescale[k];
            unit_log.push(vec![
                r.into(),
                c.into(),
                x.fixed.into(),
                x.calibrated.into(),
                x.balanced.into(),
                x.alpha_sc.into(),
                x.alpha_bal.into(),
                ratio(x.alpha_sc, c).into(),
                ratio(x.alpha_bal, c).into(),
                x.converged.into(),
                x.error.as_str().into(),
            ]);
        }
    }
    let mut unit_summary = Table::new("unit", &EXP2_UNIT_COLUMNS);
    for (k, &c) in cfg.rescale.iter().enumerate() {
        let ok: Vec<&UnitRow> = unit.iter().map(|rows| &rows[k]).filter(|x| x.converged).collect();
        let col = |f: fn(&UnitRow) -> f64| ok.iter().map(|x| f(x)).collect::<Vec<_>>();
        let sc = col(|x| x.alpha_sc);
        let bal = col(|x| x.alpha_bal);
        unit_summary.push(vec![
            c.into(),
            mean(&col(|x| x.fixed)).into(),
            mean(&col(|x| x.calibrated)).into(),
            mean(&col(|x| x.balanced)).into(),
            max(&col(|x| x.calibrated)).into(),
            max(&col(|x| x.balanced)).into(),
            mean(&sc).into(),
            mean(&bal).into(),
            mean(&sc.iter().map(|a| ratio(*a, c)).collect::<Vec<_>>()).into(),
            mean(&bal.iter().map(|a| ratio(*a, c)).collect::<Vec<_>>()).into(),
            frac(ok.len(), unit.len()).into(),
        ]);
    }

    let cont = par_map(cfg.replications, cfg.threads, |r| exp2_contamination_rep(cfg, stream_id(0, r)))?;
    let mut cont_log = Table::new("contamination", &EXP2_CONTAMINATION_REPLICATION_COLUMNS);
    for (r, rows) in cont.iter().enumerate() {
        for (k, x) in rows.iter().enumerate() {
            cont_log.push(vec![
                r.into(),
                cfg.etas[k].into(),
                x.radial.into(),
                x.rms.into(),
                x.converged.into(),
                x.error.as_str().into(),
            ]);
        }
    }
    let mut cont_summary = Table::new("contamination", &EXP2_CONTAMINATION_COLUMNS);
    for (k, &eta) in cfg.etas.iter().enumerate() {
        let ok: Vec<&ContRow> = cont.iter().map(|rows| &rows[k]).filter(|x| x.converged).collect();
        let radial: Vec<f64> = ok.iter().map(|x| x.radial).collect();
        let rms: Vec<f64> = ok.iter().map(|x| x.rms).collect();
        cont_summary.push(vec![
            eta.into(),
            mean(&radial).into(),
            mean(&rms).into(),
            sd(&radial).into(),
            sd(&rms).into(),
            frac(ok.len(), cont.len()).into(),
        ]);
    }
    Ok(ExperimentOutput {
        summaries: vec![unit_summary, cont_summary],
        replications: vec![unit_log, cont_log],
        path: None,
        meta: json!({}),
    })
}

// ---------------------------------------------------------------- experiment 3

pub const EXP3_SUMMARY_COLUMNS: [&str; 10] =
    ["n", "alpha0", "bias", "sd", "sqrt_n_sd", "rmse", "mean_se", "coverage", "conv", "replications"];
pub const EXP3_REPLICATION_COLUMNS: [&str; 11] =
    ["n", "rep", "stream", "alpha", "se", "wald_lo", "wald_hi", "covered", "converged", "status", "error"];

struct Exp3Rep {
    alpha: f64,
    se: f64,
    lo: f64,
    hi: f64,
    converged: bool,
    status: String,
    error: String,
}

/// Target `α₀` from the balanced fit on a large reference sample.
pub fn exp3_target(cfg: &ExperimentConfig) -> anyhow::Result<(f64, bool)> {
    let big = generate_exp1(cfg.reference_n, cfg.reference_seed, 0, &cfg.mixture)?;
    let fit =
        solve_balanced(&big, &BalancedConfig { epsilon: cfg.epsilon, inference: false, ..BalancedConfig::default() })?;
    Ok((fit.alpha_bal.value(), fit.converged))
}

fn status_name(s: BisectStatus) -> &'static str {
    match s {
        BisectStatus::Root => "root",
        BisectStatus::LowerBoundary => "lower_boundary",
        BisectStatus::UpperBoundary => "upper_boundary",
        BisectStatus::NonUnique => "non_unique",
    }
}

fn experiment3(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentOutput> {
    let (alpha0, target_converged) = exp3_target(cfg)?;
    let bcfg = BalancedConfig { epsilon: cfg.epsilon, ..BalancedConfig::default() };
    let mut summary = Table::new("balanced", &EXP3_SUMMARY_COLUMNS);
    let mut log = Table::new("balanced", &EXP3_REPLICATION_COLUMNS);
    for (g, &n) in cfg.sizes.iter().enumerate() {
        let reps = par_map(cfg.replications, cfg.threads, |r| {
            let run = || -> anyhow::Result<Exp3Rep> {
                let s = generate_exp1(n, cfg.seed, stream_id(g, r), &cfg.mixture)?;
                let fit = solve_balanced(&s, &bcfg)?;
                let (se, lo, hi) = match &fit.inference {
                    Some(i) => (i.alpha_se, i.wald_interval.0, i.wald_interval.1),
                    None => (f64::NAN, f64::NAN, f64::NAN),
                };
                Ok(Exp3Rep {
                    alpha: fit.alpha_bal.value(),
                    se,
                    lo,
                    hi,
                    converged: fit.converged,
                    status: status_name(fit.status).into(),
                    error: String::new(),
                })
            };
            run().unwrap_or_else(|e| Exp3Rep {
                alpha: f64::NAN,
                se: f64::NAN,
                lo: f64::NAN,
                hi: f64::NAN,
                converged: false,
                status: "error".into(),
                error: e.to_string(),
            })
        })?;
        let covered = |x: &Exp3Rep| x.lo <= alpha0 && alpha0 <= x.hi;
        for (r, x) in reps.iter().enumerate() {
            log.push(vec![
                n.into(),
                r.into(),
                stream_id(g, r).into(),
                x.alpha.into(),
                x.se.into(),
                x.lo.into(),
                x.hi.into(),
                covered(x).into(),
                x.converged.into(),
                x.status.as_str().into(),
                x.error.as_str().into(),
            ]);
        }
        let ok: Vec<&Exp3Rep> = reps.iter().filter(|x| x.converged).collect();
        let alphas: Vec<f64> = ok.iter().map(|x| x.alpha).collect();
        let ses: Vec<f64> = ok.iter().map(|x| x.se).filter(|s| s.is_finite()).collect();
        let bias = mean(&alphas) - alpha0;
        let s = sd(&alphas);
        let rmse = mean(&alphas.iter().map(|a| (a - alpha0) * (a - alpha0)).collect::<Vec<_>>()).sqrt();
        summary.push(vec![
            n.into(),
            alpha0.into(),
            bias.into(),
            s.into(),
            (s * (n as f64).sqrt()).into(),
            rmse.into(),
            mean(&ses).into(),
            frac(ok.iter().filter(|x| covered(x)).count(), ok.len()).into(),
            frac(ok.len(), reps.len()).into(),
            reps.len().into(),
        ]);
    }
    Ok(ExperimentOutput {
        summaries: vec![summary],
        replications: vec![log],
        path: None,
        meta: json!({ "alpha0": alpha0, "alpha0_converged": target_converged }),
    })
}

// ---------------------------------------------------------------- experiment 4

pub const EXP4_SUMMARY_COLUMNS: [&str; 9] = [
    "n",
    "method",
    "alpha",
    "alpha_sd",
    "mean_displacement",
    "mean_displacement_sd",
    "covariance_displacement",
    "covariance_displacement_sd",
    "conv",
];
pub const EXP4_REPLICATION_COLUMNS: [&str; 8] =
    ["n", "rep", "method", "alpha", "mean_displacement", "covariance_displacement", "converged", "error"];

pub const EXP4_METHODS: [&str; 2] = ["balanced", "scale_calibrated"];

#[derive(Clone)]
struct Exp4Row {
    alpha: f64,
    mean_disp: f64,
    cov_disp: f64,
    converged: bool,
    error: String,
}

fn exp4_rep(cfg: &ExperimentConfig, n: usize, stream: u64) -> anyhow::Result<[Exp4Row; 2]> {
    let sample: ProductSample = generate_exp4_gaussians(n, cfg.seed, stream, &cfg.gaussian)?;
    let solver = SolverConfig::default();
    let one = product_weiszfeld(ScaleValue::with_epsilon(1.0, cfg.epsilon)?, &sample, None, &solver)?;
    let bal = solve_balanced(
        &sample,
        &BalancedConfig { epsilon: cfg.epsilon, inference: false, ..BalancedConfig::default() },
    )?;
    let cal = calibrate(&sample, &CalibrationConfig { epsilon: cfg.epsilon, ..CalibrationConfig::default() })?;
    let row = |alpha: f64, loc: &prodmed_core::metric::ProductPoint, conv: bool| -> anyhow::Result<Exp4Row> {
        Ok(Exp4Row {
            alpha,
            mean_disp: factor_distance(&one.location.p, &loc.p)?,
            cov_disp: factor_distance(&one.location.q, &loc.q)?,
            converged: conv && one.converged,
            error: String::new(),
        })
    };
    Ok([
        row(bal.alpha_bal.value(), &bal.location, bal.converged)?,
        row(cal.alpha_sc.value(), &cal.fit.location, cal.converged())?,
    ])
}

fn experiment4(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentOutput> {
    let mut summary = Table::new("bures_wasserstein", &EXP4_SUMMARY_COLUMNS);
    let mut log = Table::new("bures_wasserstein", &EXP4_REPLICATION_COLUMNS);
    for (g, &n) in cfg.sizes.iter().enumerate() {
        let reps = par_map(cfg.replications, cfg.threads, |r| {
            exp4_rep(cfg, n, stream_id(g, r)).unwrap_or_else(|e| {
                let bad = Exp4Row {
                    alpha: f64::NAN,
                    mean_disp: f64::NAN,
                    cov_disp: f64::NAN,
                    converged: false,
                    error: e.to_string(),
                };
                [bad.clone(), bad]
            })
        })?;
        for (r, pair) in reps.iter().enumerate() {
            for (k, x) in pair.iter().enumerate() {
                log.push(vec![
                    n.into(),
                    r.into(),
                    EXP4_METHODS[k].into(),
                    x.alpha.into(),
                    x.mean_disp.into(),
                    x.cov_disp.into(),
                    x.converged.into(),
                    x.error.as_str().into(),
                ]);
            }
        }
        for (k, method) in EXP4_METHODS.iter().enumerate() {
            let ok: Vec<&Exp4Row> = reps.iter().map(|p| &p[k]).filter(|x| x.converged).collect();
            let col = |f: fn(&Exp4Row) -> f64| ok.iter().map(|x| f(x)).collect::<Vec<_>>();
            let (a, md, cd) = (col(|x| x.alpha), col(|x| x.mean_disp), col(|x| x.cov_disp));
            summary.push(vec![
                n.into(),
                (*method).into(),
                mean(&a).into(),
                sd(&a).into(),
                mean(&md).into(),
                sd(&md).into(),
                mean(&cd).into(),
                sd(&cd).into(),
                frac(ok.len(), reps.len()).into(),
            ]);
        }
    }
    Ok(ExperimentOutput { summaries: vec![summary], replications: vec![log], path: None, meta: json!({}) })
}
