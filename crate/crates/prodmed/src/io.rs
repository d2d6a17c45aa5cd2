//! Sample files: CSV with a geometry declaration line.
//!
//! ```text
//! #geometry M=euclidean:2 N=spd:2
//! m_1,m_2,n_11,n_12,n_22
//! 0.1,0.2,1.0,0.1,2.0
//! ```
//!
//! Euclidean factors are flat coordinates; SPD factors are the row-major upper
//! triangle. Values are written with shortest round-trip formatting, so a
//! write/read cycle is lossless.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use prodmed_core::manifold::{FactorPoint, Geometry};
use prodmed_core::metric::{ProductPoint, ProductSample};

/// Malformed input, reported with a 1-based line number where one applies.
#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Other(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn at(line: usize, message: impl Into<String>) -> InputError {
    InputError::Line { line, message: message.into() }
}

fn parse_geometry(spec: &str, line: usize) -> Result<(char, Geometry), InputError> {
    let (name, rest) =
        spec.split_once('=').ok_or_else(|| at(line, format!("expected FACTOR=kind:dim, got '{spec}'")))?;
    let factor = match name.trim() {
        "M" => 'M',
        "N" => 'N',
        other => return Err(at(line, format!("unknown factor '{other}' (expected M or N)"))),
    };
    let (kind, dim) = rest.split_once(':').ok_or_else(|| at(line, format!("expected kind:dim, got '{rest}'")))?;
    let dim: usize = dim.trim().parse().map_err(|_| at(line, format!("invalid dimension '{dim}'")))?;
    if dim == 0 {
        return Err(at(line, "dimension must be positive"));
    }
    let g = match kind.trim().to_ascii_lowercase().as_str() {
        "euclidean" => Geometry::Euclidean { dim },
        "spd" | "bw" | "bures-wasserstein" => Geometry::BuresWasserstein { dim },
        other => return Err(at(line, format!("unknown geometry '{other}'"))),
    };
    Ok((factor, g))
}

fn width(g: Geometry) -> usize {
    match g {
        Geometry::Euclidean { dim } => dim,
        Geometry::BuresWasserstein { dim } => dim * (dim + 1) / 2,
    }
}

fn column_names(prefix: char, g: Geometry) -> Vec<String> {
    match g {
        Geometry::Euclidean { dim } => (1..=dim).map(|i| format!("{prefix}_{i}")).collect(),
        Geometry::BuresWasserstein { dim } => {
            let mut out = Vec::new();
            for i in 1..=dim {
                for j in i..=dim {
                    out.push(if dim < 10 { format!("{prefix}_{i}{j}") } else { format!("{prefix}_{i}.{j}") });
                }
            }
            out
        }
    }
}

fn geometry_tag(g: Geometry) -> String {
    match g {
        Geometry::Euclidean { dim } => format!("euclidean:{dim}"),
        Geometry::BuresWasserstein { dim } => format!("spd:{dim}"),
    }
}

fn build_factor(g: Geometry, vals: &[f64], line: usize) -> Result<FactorPoint, InputError> {
    match g {
        Geometry::Euclidean { .. } => Ok(FactorPoint::Euclidean(DVector::from_row_slice(vals))),
        Geometry::BuresWasserstein { dim } => {
            let mut m = DMatrix::zeros(dim, dim);
            let mut k = 0;
            for i in 0..dim {
                for j in i..dim {
                    m[(i, j)] = vals[k];
                    m[(j, i)] = vals[k];
                    k += 1;
                }
            }
            FactorPoint::spd(m).map_err(|e| at(line, format!("covariance factor rejected: {e}")))
        }
    }
}

/// Parses a sample from text.
pub fn parse_sample(text: &str) -> Result<ProductSample, InputError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let (gl, decl) = lines.next().ok_or_else(|| InputError::Other("empty input".into()))?;
    let body =
        decl.strip_prefix("#geometry").ok_or_else(|| at(gl, "first line must be '#geometry M=kind:dim N=kind:dim'"))?;
    let mut gm = None;
    let mut gn = None;
    for tok in body.split_whitespace() {
        match parse_geometry(tok, gl)? {
            ('M', g) => gm = Some(g),
            (_, g) => gn = Some(g),
        }
    }
    let (gm, gn) = match (gm, gn) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(at(gl, "geometry line must declare both M and N")),
    };
    let (hl, header) = lines.next().ok_or_else(|| at(gl + 1, "missing column header"))?;
    let expected: Vec<String> = column_names('m', gm).into_iter().chain(column_names('n', gn)).collect();
    let found: Vec<&str> = header.split(',').map(str::trim).collect();
    if found.len() != expected.len() {
        return Err(at(hl, format!("header has {} columns, geometry implies {}", found.len(), expected.len())));
    }
    for (f, e) in found.iter().zip(&expected) {
        if f != e {
            return Err(at(hl, format!("column '{f}' where '{e}' was expected")));
        }
    }
    let (wm, wn) = (width(gm), width(gn));
    let mut points = Vec::new();
    for (ln, row) in lines {
        if row.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = row
            .split(',')
            .enumerate()
            .map(|(k, s)| {
                let v: f64 =
                    s.trim().parse().map_err(|_| at(ln, format!("field {} is not a number: '{}'", k + 1, s.trim())))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(at(ln, format!("field {} is not finite", k + 1)))
                }
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != wm + wn {
            return Err(at(ln, format!("expected {} fields, found {}", wm + wn, vals.len())));
        }
        let p = build_factor(gm, &vals[..wm], ln)?;
        let q = build_factor(gn, &vals[wm..], ln)?;
        points.push(ProductPoint::new(p, q));
    }
    if points.is_empty() {
        return Err(InputError::Other("no observations".into()));
    }
    ProductSample::new(points).map_err(|e| InputError::Other(e.to_string()))
}

pub fn read_sample(path: &Path) -> Result<ProductSample, InputError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| InputError::Io { path: path.display().to_string(), source })?;
    parse_sample(&text)
}

fn factor_values(f: &FactorPoint) -> Vec<f64> {
    match f {
        FactorPoint::Euclidean(v) => v.iter().copied().collect(),
        FactorPoint::Spd(m) => {
            let d = m.nrows();
            let mut out = Vec::with_capacity(d * (d + 1) / 2);
            for i in 0..d {
                for j in i..d {
                    out.push(m[(i, j)]);
                }
            }
            out
        }
    }
}

/// Flat values of a product point in file column order.
pub fn point_values(p: &ProductPoint) -> Vec<f64> {
    let mut v = factor_values(&p.p);
    v.extend(factor_values(&p.q));
    v
}

/// Column names for a geometry pair, in file order.
pub fn point_columns(gm: Geometry, gn: Geometry) -> Vec<String> {
    column_names('m', gm).into_iter().chain(column_names('n', gn)).collect()
}

pub fn format_sample(sample: &ProductSample) -> String {
    let (gm, gn) = (sample.geometry_m(), sample.geometry_n());
    let mut out = format!("#geometry M={} N={}\n", geometry_tag(gm), geometry_tag(gn));
    out.push_str(&point_columns(gm, gn).join(","));
    out.push('\n');
    for p in sample.points() {
        let row: Vec<String> = point_values(p).iter().map(|x| format!("{x:?}")).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn write_sample(path: &Path, sample: &ProductSample) -> std::io::Result<()> {
    std::fs::write(path, format_sample(sample))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_mixed_geometry() {
        let text = "#geometry M=euclidean:2 N=spd:2\nm_1,m_2,n_11,n_12,n_22\n0.1,-2.5,2,0.3,1.5\n1e-3,4,1,0,1\n";
        let s = parse_sample(text).unwrap();
        assert_eq!(s.len(), 2);
        let again = parse_sample(&format_sample(&s)).unwrap();
        assert_eq!(again.points(), s.points());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = "#geometry M=euclidean:1 N=euclidean:1\nm_1,n_1\n1,2\n3,x\n";
        let e = parse_sample(bad).unwrap_err().to_string();
        assert!(e.starts_with("line 4:"), "{e}");
        let bad = "#geometry M=euclidean:1 N=spd:2\nm_1,n_11,n_12,n_22\n1,1,2,1\n";
        assert!(parse_sample(bad).unwrap_err().to_string().starts_with("line 3:"));
        let bad = "m_1,n_1\n1,2\n";
        assert!(parse_sample(bad).unwrap_err().to_string().starts_with("line 1:"));
        let bad = "#geometry M=euclidean:1 N=euclidean:1\nm_1,n_2\n";
        assert!(parse_sample(bad).unwrap_err().to_string().starts_with("line 2:"));
    }
}
