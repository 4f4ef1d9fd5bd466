//! Plot data for chains and samples as comma-separated files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use paradram::refine::acf;
use paradram::spec::fmt_real;
use paradram::{Error, Result};

use crate::input::Table;

pub struct ExportOptions {
    pub max_lag: usize,
    pub bins: usize,
    /// 0-based variable indices of the histogram axes.
    pub pair: (usize, usize),
}

fn column_names(table: &Table) -> Vec<String> {
    std::iter::once("SampleLogFunc".to_string())
        .chain((1..=table.ndim()).map(|i| format!("SampleVariable{i}")))
        .collect()
}

fn series(table: &Table) -> impl Iterator<Item = &[f64]> {
    std::iter::once(table.log_func.as_slice()).chain(table.coords.iter().map(|c| c.as_slice()))
}

/// One line per row: index, weight, log-density and coordinates.
pub fn trace_csv(table: &Table) -> String {
    let mut out = String::from("Row,SampleWeight,");
    out += &column_names(table).join(",");
    out.push('\n');
    for i in 0..table.len() {
        let w = table.weights.as_ref().map_or(1, |w| w[i]);
        let _ = write!(out, "{},{w}", i + 1);
        for s in series(table) {
            let _ = write!(out, ",{}", fmt_real(s[i]));
        }
        out.push('\n');
    }
    out
}

/// Autocorrelation of every column of the weight-expanded series, lags
/// `0..=max_lag` (capped below the expanded length). Constant columns are
/// reported as empty cells.
pub fn acf_csv(table: &Table, max_lag: usize) -> Result<String> {
    let n: u64 = table.weights.as_ref().map_or(table.len() as u64, |w| w.iter().sum());
    if n < 2 {
        return Err(Error::TooShort {
            needed: 2,
            have: n as usize,
        });
    }
    let lags = max_lag.min(n as usize - 1);
    let weights = table.weights.as_deref();
    let columns = series(table)
        .map(|s| match acf(s, weights, lags) {
            Ok(v) => Ok(Some(v)),
            Err(Error::DegenerateSeries) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = String::from("Lag,");
    out += &column_names(table).join(",");
    out.push('\n');
    for lag in 0..=lags {
        let _ = write!(out, "{lag}");
        for c in &columns {
            match c {
                Some(v) => {
                    let _ = write!(out, ",{}", fmt_real(v[lag]));
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn adaptation_csv(measures: &[f64]) -> String {
    let mut out = String::from("Row,AdaptationMeasure\n");
    for (i, m) in measures.iter().enumerate() {
        let _ = writeln!(out, "{},{}", i + 1, fmt_real(*m));
    }
    out
}

/// Weighted counts on a `bins × bins` grid spanning the data range of the
/// two chosen variables. Points on the upper edge fall in the last bin.
pub fn histogram_csv(table: &Table, bins: usize, pair: (usize, usize)) -> Result<String> {
    let (a, b) = pair;
    if a >= table.ndim() || b >= table.ndim() || a == b {
        return Err(Error::DimensionMismatch(format!(
            "histogram pair ({}, {}) needs two distinct variables out of {}",
            a + 1,
            b + 1,
            table.ndim()
        )));
    }
    if bins == 0 || table.len() == 0 {
        return Err(Error::PreconditionViolation("histogram needs bins > 0 and data".into()));
    }
    let range = |c: &[f64]| {
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        }
    };
    let (xs, ys) = (&table.coords[a], &table.coords[b]);
    let ((x0, x1), (y0, y1)) = (range(xs), range(ys));
    let index = |v: f64, lo: f64, hi: f64| (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1);
    let mut counts = vec![0u64; bins * bins];
    for i in 0..table.len() {
        let w = table.weights.as_ref().map_or(1, |w| w[i]);
        counts[index(xs[i], x0, x1) * bins + index(ys[i], y0, y1)] += w;
    }
    let edge = |lo: f64, hi: f64, k: usize| lo + (hi - lo) * k as f64 / bins as f64;
    let mut out = format!(
        "SampleVariable{}Low,SampleVariable{}High,SampleVariable{}Low,SampleVariable{}High,Count\n",
        a + 1,
        a + 1,
        b + 1,
        b + 1
    );
    for i in 0..bins {
        for j in 0..bins {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt_real(edge(x0, x1, i)),
                fmt_real(edge(x0, x1, i + 1)),
                fmt_real(edge(y0, y1, j)),
                fmt_real(edge(y0, y1, j + 1)),
                counts[i * bins + j]
            );
        }
    }
    Ok(out)
}

/// Writes `<stem>_trace.csv`, `<stem>_acf.csv`, `<stem>_adaptation.csv`
/// (chains only) and `<stem>_hist2d.csv` (two or more variables) into `dir`.
pub fn export(table: &Table, dir: &Path, stem: &str, options: &ExportOptions) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| Error::DirectoryCreationFailed {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = vec![("trace", trace_csv(table)), ("acf", acf_csv(table, options.max_lag)?)];
    if let Some(m) = &table.adaptation {
        files.push(("adaptation", adaptation_csv(m)));
    }
    if table.ndim() >= 2 {
        files.push(("hist2d", histogram_csv(table, options.bins, options.pair)?));
    }
    let mut written = Vec::with_capacity(files.len());
    for (kind, text) in files {
        let path = dir.join(format!("{stem}_{kind}.csv"));
        std::fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}
