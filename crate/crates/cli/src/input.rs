//! Locating and loading existing output files.

use std::path::{Path, PathBuf};

use paradram::chainio::{read_chain, read_sample, ParsedReport};
use paradram::spec::ChainFileFormat;
use paradram::{ChainRow, Result};

/// Strips a `_chain.txt`, `_chain.bin`, `_sample.txt` or `_report.txt`
/// suffix, giving the shared file-set prefix.
pub fn file_set_prefix(path: &Path) -> Option<PathBuf> {
    let name = path.file_name()?.to_str()?;
    ["_chain.txt", "_chain.bin", "_sample.txt", "_report.txt"]
        .iter()
        .find_map(|suffix| name.strip_suffix(suffix))
        .map(|stem| path.with_file_name(stem))
}

fn sibling(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    prefix.with_file_name(name)
}

pub fn sample_path_for(chain: &Path) -> PathBuf {
    match file_set_prefix(chain) {
        Some(prefix) => sibling(&prefix, "_sample.txt"),
        None => {
            let mut name = chain.as_os_str().to_os_string();
            name.push(".sample.txt");
            PathBuf::from(name)
        }
    }
}

/// Chain format: the explicit choice, else `.bin` means binary, else the
/// `chainFileFormat` echoed in the sibling report, else compact.
pub fn chain_format(chain: &Path, explicit: Option<ChainFileFormat>) -> ChainFileFormat {
    if let Some(f) = explicit {
        return f;
    }
    if chain.extension().is_some_and(|e| e == "bin") {
        return ChainFileFormat::Binary;
    }
    file_set_prefix(chain)
        .map(|prefix| sibling(&prefix, "_report.txt"))
        .and_then(|report| ParsedReport::read(&report).ok())
        .and_then(|r| {
            r.value("specification", "chainFileFormat")
                .map(|v| v.trim_matches('"').to_string())
        })
        .and_then(|v| v.parse().ok())
        .unwrap_or(ChainFileFormat::Compact)
}

pub fn load_chain(chain: &Path, explicit: Option<ChainFileFormat>) -> Result<Vec<ChainRow>> {
    Ok(read_chain(chain, chain_format(chain, explicit))?.rows)
}

fn is_sample_file(path: &Path) -> bool {
    use std::io::BufRead;
    std::fs::File::open(path)
        .ok()
        .and_then(|f| std::io::BufReader::new(f).lines().next()?.ok())
        .is_some_and(|header| header.starts_with("SampleLogFunc"))
}

/// A chain or refined sample as weighted columns.
pub struct Table {
    pub log_func: Vec<f64>,
    /// One column per variable.
    pub coords: Vec<Vec<f64>>,
    /// `None` for a sample (every point has weight 1).
    pub weights: Option<Vec<u64>>,
    pub adaptation: Option<Vec<f64>>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.log_func.len()
    }

    pub fn ndim(&self) -> usize {
        self.coords.len()
    }

    fn from_points<'a>(ndim: usize, points: impl Iterator<Item = (f64, &'a [f64])>) -> Table {
        let mut log_func = Vec::new();
        let mut coords = vec![Vec::new(); ndim];
        for (logf, x) in points {
            log_func.push(logf);
            for (column, v) in coords.iter_mut().zip(x) {
                column.push(*v);
            }
        }
        Table {
            log_func,
            coords,
            weights: None,
            adaptation: None,
        }
    }
}

/// Loads a sample file (recognized by its header) or a chain file.
pub fn load_table(path: &Path, explicit: Option<ChainFileFormat>) -> Result<Table> {
    if explicit.is_none() && path.extension().is_none_or(|e| e != "bin") && is_sample_file(path) {
        let points = read_sample(path)?;
        let ndim = points.first().map_or(0, |p| p.coords.len());
        return Ok(Table::from_points(
            ndim,
            points.iter().map(|p| (p.log_func, p.coords.as_slice())),
        ));
    }
    let rows = load_chain(path, explicit)?;
    let ndim = rows.first().map_or(0, |r| r.coords.len());
    let mut table = Table::from_points(ndim, rows.iter().map(|r| (r.log_func, r.coords.as_slice())));
    table.weights = Some(rows.iter().map(|r| r.weight).collect());
    table.adaptation = Some(rows.iter().map(|r| r.adaptation_measure).collect());
    Ok(table)
}
