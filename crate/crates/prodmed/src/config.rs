//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated. Keys mirror [`ExperimentConfig`] plus the global CLI
//! options (`alpha`, `out`, `format`).

use std::path::Path;

use crate::experiments::{ExperimentConfig, GridSpec};
use crate::io::InputError;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    entries: Vec<(usize, String, String)>,
}

const KEYS: &[&str] = &[
    "experiment",
    "n",
    "reps",
    "seed",
    "grid",
    "epsilon",
    "weights",
    "shift_m",
    "shift_n",
    "noise_sd",
    "eta",
    "c",
    "d",
    "rho",
    "delta",
    "mean_noise",
    "cov_noise",
    "unit_epsilon",
    "reference_n",
    "reference_seed",
    "threads",
    "alpha",
    "out",
    "format",
];

fn bad(line: usize, message: impl Into<String>) -> InputError {
    InputError::Line { line, message: message.into() }
}

fn scalar<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, InputError> {
    v.parse().map_err(|_| bad(line, format!("invalid value '{v}' for '{key}'")))
}

fn list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>, InputError> {
    v.split(',').map(|x| scalar(line, key, x.trim())).collect()
}

fn fixed<const K: usize>(line: usize, key: &str, v: &str) -> Result<[f64; K], InputError> {
    let xs: Vec<f64> = list(line, key, v)?;
    xs.try_into().map_err(|_| bad(line, format!("'{key}' needs exactly {K} values")))
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, InputError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t.split_once('=').ok_or_else(|| bad(line, format!("expected key = value, got '{t}'")))?;
            let k = k.trim().to_ascii_lowercase();
            if !KEYS.contains(&k.as_str()) {
                return Err(bad(line, format!("unknown key '{k}'")));
            }
            entries.push((line, k, v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self, InputError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| InputError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    fn entry(&self, key: &str) -> Option<(usize, &str)> {
        self.entries.iter().rev().find(|(_, k, _)| k == key).map(|(l, _, v)| (*l, v.as_str()))
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, InputError> {
        self.entry(key).map(|(l, v)| scalar(l, key, v)).transpose()
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entry(key).map(|(_, v)| v)
    }

    /// Applies every experiment key present to `cfg`.
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), InputError> {
        for (line, key, v) in &self.entries {
            let (l, k, v) = (*line, key.as_str(), v.as_str());
            match k {
                "n" => cfg.sizes = list(l, k, v)?,
                "reps" => cfg.replications = scalar(l, k, v)?,
                "seed" => cfg.seed = scalar(l, k, v)?,
                "grid" => cfg.grid = v.parse::<GridSpec>().map_err(|e| bad(l, e))?,
                "epsilon" => cfg.epsilon = scalar(l, k, v)?,
                "weights" => {
                    let w = fixed::<3>(l, k, v)?;
                    cfg.mixture.weights = w;
                    cfg.gaussian.weights = w;
                }
                "shift_m" => cfg.mixture.shift_m = fixed::<2>(l, k, v)?,
                "shift_n" => cfg.mixture.shift_n = fixed::<2>(l, k, v)?,
                "noise_sd" => cfg.mixture.noise_sd = scalar(l, k, v)?,
                "eta" => cfg.etas = list(l, k, v)?,
                "c" => cfg.rescale = list(l, k, v)?,
                "d" => cfg.gaussian.d = scalar(l, k, v)?,
                "rho" => cfg.gaussian.rho = scalar(l, k, v)?,
                "delta" => cfg.gaussian.delta = scalar(l, k, v)?,
                "mean_noise" => cfg.gaussian.mean_noise = scalar(l, k, v)?,
                "cov_noise" => cfg.gaussian.cov_noise = scalar(l, k, v)?,
                "unit_epsilon" => cfg.unit_epsilon = scalar(l, k, v)?,
                "reference_n" => cfg.reference_n = scalar(l, k, v)?,
                "reference_seed" => cfg.reference_seed = scalar(l, k, v)?,
                "threads" => cfg.threads = Some(scalar(l, k, v)?),
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_applies() {
        let c = ConfigFile::parse("# exp\nn = 100, 200\nreps=7\nweights = 0.5,0.25,0.25\ngrid = 0.1:1.9:5\n").unwrap();
        let mut cfg = ExperimentConfig::defaults(1).unwrap();
        c.apply(&mut cfg).unwrap();
        assert_eq!(cfg.sizes, vec![100, 200]);
        assert_eq!(cfg.replications, 7);
        assert_eq!(cfg.mixture.weights, [0.5, 0.25, 0.25]);
        assert_eq!(cfg.grid.steps, 5);
    }

    #[test]
    fn reports_line_numbers() {
        let e = ConfigFile::parse("n = 1\n\nbogus = 2\n").unwrap_err().to_string();
        assert_eq!(e, "line 3: unknown key 'bogus'");
        let c = ConfigFile::parse("reps = x\n").unwrap();
        let mut cfg = ExperimentConfig::defaults(1).unwrap();
        assert!(c.apply(&mut cfg).unwrap_err().to_string().starts_with("line 1:"));
    }
}
