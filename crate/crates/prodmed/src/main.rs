use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use prodmed::config::ConfigFile;
use prodmed::experiments::{par_map, path_table, run_experiment, ExperimentConfig, GridSpec};
use prodmed::io::{point_columns, point_values, read_sample, InputError};
use prodmed::selftest;
use prodmed::table::{Cell, Table};
use prodmed_core::balanced::{solve_balanced, BalancedConfig, BisectStatus};
use prodmed_core::calibration::{calibrate, location_drift, CalibrationConfig, ScaleMethod};
use prodmed_core::metric::{ProductPoint, ProductSample, ScaleValue, DEFAULT_EPSILON};
use prodmed_core::path::{
    bands_from_replicates, bootstrap_replicate, solve_path, BandMethod, BootstrapConfig, PathConfig,
};
use prodmed_core::solver::{product_weiszfeld, SolverConfig};
use serde_json::{Map, Value};

#[derive(Parser, Debug)]
#[command(name = "prodmed", version, about = "Geometric medians on scaled product manifolds")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Factor weight α in (0, 2).
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Truncation width ε of the admissible interval [ε, 2 − ε].
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scale grid as lo:hi:steps.
    #[arg(long, global = true)]
    grid: Option<GridSpec>,
    /// Directory to write results into instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Flat key = value configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Scale {
    RadialMedian,
    Rms,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Product median at a fixed α (default 1).
    Median { data: PathBuf },
    /// Median path, profiled objective and sensitivity over the grid.
    Path {
        data: PathBuf,
        /// Bootstrap replicates for bands on the displacement from the α = 1 median.
        #[arg(long)]
        bootstrap: Option<usize>,
        /// Report symmetric bands around the estimate instead of percentile bands.
        #[arg(long)]
        symmetric: bool,
    },
    /// Scale-calibrated α and the median at that weight.
    Calibrate {
        data: PathBuf,
        #[arg(long, value_enum, default_value = "radial-median")]
        scale: Scale,
        /// Use per-dimension radial scales.
        #[arg(long)]
        dimension_adjusted: bool,
        /// Fit at the raw calibrated weight instead of truncating it.
        #[arg(long)]
        raw: bool,
    },
    /// Balanced α, location and Wald interval.
    Balance {
        data: PathBuf,
        #[arg(long)]
        dimension_adjusted: bool,
    },
    /// Run one of the four simulation studies.
    Experiment {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=4))]
        id: u8,
        /// Sample sizes, comma-separated.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        /// Use the full-scale replication counts and sample sizes.
        #[arg(long)]
        full: bool,
    },
    /// Property suites; exits 2 if any check fails.
    Selftest,
}

/// Exit status classes.
enum Failure {
    Usage(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<InputError> for Failure {
    fn from(e: InputError) -> Self {
        Failure::Usage(e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn numerical(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Numerical(e.into())
}

/// Flag values merged over the configuration file.
struct Settings {
    alpha: Option<f64>,
    epsilon: f64,
    seed: u64,
    grid: GridSpec,
    out: Option<PathBuf>,
    format: Option<Format>,
    file: ConfigFile,
}

fn settings(g: &Global) -> Result<Settings, Failure> {
    let file = match &g.config {
        Some(p) => ConfigFile::read(p)?,
        None => ConfigFile::default(),
    };
    let format = match (g.format, file.get_str("format")) {
        (Some(f), _) => Some(f),
        (None, Some(s)) => {
            Some(Format::from_str(s, true).map_err(|_| usage(anyhow!("invalid format '{s}' in config")))?)
        }
        (None, None) => None,
    };
    let grid = match (g.grid, file.get_str("grid")) {
        (Some(gs), _) => gs,
        (None, Some(s)) => s.parse().map_err(|e: String| usage(anyhow!(e)))?,
        (None, None) => GridSpec::default(),
    };
    Ok(Settings {
        alpha: g.alpha.or(file.get("alpha")?),
        epsilon: g.epsilon.or(file.get("epsilon")?).unwrap_or(DEFAULT_EPSILON),
        seed: g.seed.or(file.get("seed")?).unwrap_or(20_240_601),
        grid,
        out: g.out.clone().or_else(|| file.get_str("out").map(PathBuf::from)),
        format,
        file,
    })
}

fn location_fields(sample: &ProductSample, m: &ProductPoint) -> Vec<(String, Cell)> {
    let names = point_columns(sample.geometry_m(), sample.geometry_n());
    names.into_iter().zip(point_values(m)).map(|(k, v)| (k, Cell::Float(v))).collect()
}

/// Prints or writes one record.
fn emit_record(name: &str, fields: Vec<(String, Cell)>, s: &Settings) -> Result<(), Failure> {
    let body = match s.format.unwrap_or(Format::Json) {
        Format::Json => {
            let obj: Map<String, Value> = fields.iter().map(|(k, v)| (k.clone(), v.to_json())).collect();
            let mut text = serde_json::to_string_pretty(&Value::Object(obj)).map_err(usage)?;
            text.push('\n');
            (format!("{name}.json"), text)
        }
        Format::Csv => {
            let cols: Vec<&str> = fields.iter().map(|(k, _)| k.as_str()).collect();
            let mut t = Table::new(name, &cols);
            t.push(fields.iter().map(|(_, v)| v.clone()).collect());
            (format!("{name}.csv"), t.to_csv())
        }
    };
    write_files(&[body], s.out.as_deref())
}

fn write_files(files: &[(String, String)], out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(usage)?;
            for (name, body) in files {
                let p = dir.join(name);
                std::fs::write(&p, body).with_context(|| format!("writing {}", p.display())).map_err(usage)?;
            }
        }
        None => {
            for (i, (name, body)) in files.iter().enumerate() {
                if files.len() > 1 {
                    if i > 0 {
                        println!();
                    }
                    println!("# {name}");
                }
                print!("{body}");
            }
        }
    }
    Ok(())
}

fn scale(alpha: f64, eps: f64) -> Result<ScaleValue, Failure> {
    ScaleValue::with_epsilon(alpha, eps).map_err(usage)
}

fn require_converged(converged: bool, what: &str) -> Result<(), Failure> {
    if converged {
        Ok(())
    } else {
        Err(numerical(anyhow!("{what} did not converge")))
    }
}

fn cmd_median(data: &Path, s: &Settings) -> Result<(), Failure> {
    let sample = read_sample(data)?;
    let alpha = scale(s.alpha.unwrap_or(1.0), s.epsilon)?;
    let fit = product_weiszfeld(alpha, &sample, None, &SolverConfig::default()).map_err(numerical)?;
    let mut fields = vec![("alpha".to_string(), Cell::Float(alpha.value()))];
    fields.extend(location_fields(&sample, &fit.location));
    fields.push(("objective".into(), fit.objective.into()));
    fields.push(("iterations".into(), fit.iterations.into()));
    fields.push(("residual".into(), fit.residual.into()));
    fields.push(("converged".into(), fit.converged.into()));
    emit_record("median", fields, s)?;
    require_converged(fit.converged, "median")
}

fn cmd_path(data: &Path, bootstrap: Option<usize>, symmetric: bool, s: &Settings) -> Result<(), Failure> {
    let sample = read_sample(data)?;
    let grid = s.grid.build(s.epsilon).map_err(usage)?;
    let path = solve_path(&sample, &grid, &PathConfig::default()).map_err(numerical)?;
    let mut table = path_table(&path);
    if let Some(b) = bootstrap {
        let reference = path.reference.location.clone();
        let summary = move |m: &ProductPoint| location_drift(&reference, m).unwrap_or(f64::NAN);
        let estimate: Vec<f64> = path.fits.iter().map(|f| summary(&f.location)).collect();
        let solver = SolverConfig::default();
        let reps = par_map(b, None, |i| bootstrap_replicate(&sample, &grid, &summary, s.seed, i as u64, &solver))
            .map_err(numerical)?
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
            .map_err(numerical)?;
        let method = if symmetric { BandMethod::SymmetricPercentile } else { BandMethod::Percentile };
        let bcfg = BootstrapConfig { replicates: b, seed: s.seed, method, ..BootstrapConfig::default() };
        let bands = bands_from_replicates(&grid, estimate, &reps, &bcfg).map_err(numerical)?;
        let mut t = Table::new("path", &[]);
        t.columns = table
            .columns
            .iter()
            .cloned()
            .chain(["displacement", "band_lower", "band_upper"].map(String::from))
            .collect();
        for (i, mut row) in table.rows.into_iter().enumerate() {
            row.extend([bands.estimate[i].into(), bands.lower[i].into(), bands.upper[i].into()]);
            t.rows.push(row);
        }
        table = t;
        if bands.unreliable {
            eprintln!("warning: {} of {} bootstrap replicates dropped", bands.dropped, bands.replicates);
        }
    }
    let file = match s.format.unwrap_or(Format::Csv) {
        Format::Csv => ("path.csv".to_string(), table.to_csv()),
        Format::Json => {
            let mut text = serde_json::to_string_pretty(&table.to_json()).map_err(usage)?;
            text.push('\n');
            ("path.json".to_string(), text)
        }
    };
    write_files(&[file], s.out.as_deref())?;
    require_converged(path.all_converged(), "median path")
}

fn cmd_calibrate(data: &Path, method: Scale, dimension_adjusted: bool, raw: bool, s: &Settings) -> Result<(), Failure> {
    let sample = read_sample(data)?;
    let cfg = CalibrationConfig {
        epsilon: s.epsilon,
        method: match method {
            Scale::RadialMedian => ScaleMethod::RadialMedian,
            Scale::Rms => ScaleMethod::Rms,
        },
        dimension_adjusted,
        truncate: !raw,
        ..CalibrationConfig::default()
    };
    let r = calibrate(&sample, &cfg).map_err(numerical)?;
    let mut fields: Vec<(String, Cell)> = vec![
        ("alpha_raw".into(), r.alpha_raw.into()),
        ("alpha_sc".into(), r.alpha_sc.value().into()),
        ("truncation_binds".into(), r.truncation_binds.into()),
        ("s_m".into(), r.s_m.into()),
        ("s_n".into(), r.s_n.into()),
    ];
    fields.extend(location_fields(&sample, &r.fit.location));
    fields.push(("objective".into(), r.fit.objective.into()));
    fields.push(("converged".into(), r.converged().into()));
    emit_record("calibrate", fields, s)?;
    require_converged(r.converged(), "calibrated median")
}

fn status_name(s: BisectStatus) -> &'static str {
    match s {
        BisectStatus::Root => "root",
        BisectStatus::LowerBoundary => "lower_boundary",
        BisectStatus::UpperBoundary => "upper_boundary",
        BisectStatus::NonUnique => "non_unique",
    }
}

fn cmd_balance(data: &Path, dimension_adjusted: bool, s: &Settings) -> Result<(), Failure> {
    let sample = read_sample(data)?;
    let cfg = BalancedConfig {
        epsilon: s.epsilon,
        dimension_adjusted,
        init_alpha: s.alpha.unwrap_or(1.0),
        ..BalancedConfig::default()
    };
    let fit = solve_balanced(&sample, &cfg).map_err(numerical)?;
    let (se, lo, hi) = match &fit.inference {
        Some(i) => (i.alpha_se, i.wald_interval.0, i.wald_interval.1),
        None => (f64::NAN, f64::NAN, f64::NAN),
    };
    let mut fields: Vec<(String, Cell)> = vec![
        ("alpha".into(), fit.alpha_bal.value().into()),
        ("status".into(), status_name(fit.status).into()),
        ("se".into(), se.into()),
        ("wald_lower".into(), lo.into()),
        ("wald_upper".into(), hi.into()),
    ];
    fields.extend(location_fields(&sample, &fit.location));
    fields.push(("h_residual".into(), fit.h_residual.into()));
    fields.push(("outer_iterations".into(), fit.outer_iterations.into()));
    fields.push(("converged".into(), fit.converged.into()));
    emit_record("balance", fields, s)?;
    require_converged(fit.converged, "balanced estimator")
}

fn cmd_experiment(
    id: u8,
    n: Option<Vec<usize>>,
    reps: Option<usize>,
    threads: Option<usize>,
    full: bool,
    g: &Global,
    s: &Settings,
) -> Result<(), Failure> {
    let id = match s.file.get::<u8>("experiment")? {
        Some(c) if c != id => return Err(usage(anyhow!("config declares experiment {c}, command line asks for {id}"))),
        _ => id,
    };
    let mut cfg = ExperimentConfig::defaults(id).map_err(usage)?;
    if full {
        cfg = cfg.full_scale();
    }
    s.file.apply(&mut cfg)?;
    if let Some(v) = n {
        cfg.sizes = v;
    }
    if let Some(v) = reps {
        cfg.replications = v;
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
    if g.seed.is_some() {
        cfg.seed = s.seed;
    }
    if g.grid.is_some() {
        cfg.grid = s.grid;
    }
    if g.epsilon.is_some() {
        cfg.epsilon = s.epsilon;
    }
    cfg.validate().map_err(usage)?;
    let out = run_experiment(&cfg).map_err(numerical)?;
    let files = out.files(s.format == Some(Format::Json));
    match &s.out {
        Some(dir) => write_files(&files, Some(dir)),
        None => {
            let shown: Vec<(String, String)> = files.into_iter().filter(|(f, _)| f.starts_with("summary")).collect();
            write_files(&shown, None)
        }
    }
}

fn cmd_selftest(s: &Settings) -> Result<(), Failure> {
    let results = selftest::run_all(s.seed);
    let failed = results.iter().filter(|r| !r.passed).count();
    match s.format {
        Some(Format::Json) => {
            let mut text = serde_json::to_string_pretty(&results).map_err(usage)?;
            text.push('\n');
            write_files(&[("selftest.json".into(), text)], s.out.as_deref())?;
        }
        _ => {
            let mut t = Table::new("selftest", &["id", "name", "passed", "worst", "tolerance", "detail"]);
            for r in &results {
                t.push(vec![
                    Cell::Int(r.id as i64),
                    r.name.into(),
                    r.passed.into(),
                    r.worst.into(),
                    r.tolerance.into(),
                    r.detail.as_str().into(),
                ]);
            }
            write_files(&[("selftest.csv".into(), t.to_csv())], s.out.as_deref())?;
        }
    }
    if failed > 0 {
        return Err(numerical(anyhow!("{failed} property checks failed")));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let s = settings(&cli.global)?;
    match cli.command {
        Command::Median { data } => cmd_median(&data, &s),
        Command::Path { data, bootstrap, symmetric } => cmd_path(&data, bootstrap, symmetric, &s),
        Command::Calibrate { data, scale, dimension_adjusted, raw } => {
            cmd_calibrate(&data, scale, dimension_adjusted, raw, &s)
        }
        Command::Balance { data, dimension_adjusted } => cmd_balance(&data, dimension_adjusted, &s),
        Command::Experiment { id, n, reps, threads, full } => {
            cmd_experiment(id, n, reps, threads, full, &cli.global, &s)
        }
        Command::Selftest => cmd_selftest(&s),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(2)
        }
    }
}
