//! The report file: a fixed sequence of `[section]` blocks of `key = value`
//! lines. Lines that depend on wall-clock time start with [`TIMING_MARKER`]
//! so that reports of identical runs compare equal once those lines are
//! removed.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernel::{ChainRow, ChainStats};
use crate::parallel::{geometric_contribution, KsMatrix, ScalingReport};
use crate::refine::RefinedSample;
use crate::spec::{fmt_real, key_description, SpecSet};

pub const TIMING_MARKER: &str = "@timing";

/// Weighted summary of a compact chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub mode_log_func: f64,
    pub mode: Vec<f64>,
}

/// Weighted mean, standard deviation and covariance (denominator
/// `Σw - 1`) plus the highest-density state.
pub fn summarize_chain(rows: &[ChainRow]) -> Result<ChainSummary> {
    let first = rows
        .first()
        .ok_or_else(|| Error::DegenerateInput("chain holds no rows".into()))?;
    let ndim = first.coords.len();
    let total: f64 = rows.iter().map(|r| r.weight as f64).sum();
    let mut mean = vec![0.0; ndim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(&r.coords) {
            *m += r.weight as f64 * x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut covariance = vec![vec![0.0; ndim]; ndim];
    for r in rows {
        for i in 0..ndim {
            let di = r.coords[i] - mean[i];
            for j in 0..=i {
                covariance[i][j] += r.weight as f64 * di * (r.coords[j] - mean[j]);
            }
        }
    }
    let denom = if total > 1.0 { total - 1.0 } else { 1.0 };
    for i in 0..ndim {
        for j in 0..=i {
            covariance[i][j] /= denom;
            covariance[j][i] = covariance[i][j];
        }
    }
    let std = (0..ndim).map(|i| covariance[i][i].sqrt()).collect();
    let best = rows
        .iter()
        .fold(first, |best, r| if r.log_func > best.log_func { r } else { best });
    Ok(ChainSummary {
        mean,
        std,
        covariance,
        mode_log_func: best.log_func,
        mode: best.coords.clone(),
    })
}

/// Everything that goes into one report file.
pub struct ReportContent<'a> {
    pub spec: &'a SpecSet,
    pub warnings: &'a [String],
    pub rows: &'a [ChainRow],
    pub stats: &'a ChainStats,
    pub refined: Option<&'a RefinedSample>,
    /// Multi-chain runs only.
    pub ks: Option<&'a KsMatrix>,
    pub elapsed_seconds: f64,
    /// Fork-join runs only.
    pub scaling: Option<&'a ScalingReport>,
}

fn list(values: &[f64]) -> String {
    values.iter().map(|v| fmt_real(*v)).collect::<Vec<_>>().join(", ")
}

pub fn render_report(content: &ReportContent<'_>) -> Result<String> {
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "[version]");
    let _ = writeln!(w, "paradram = {}", crate::VERSION);

    let _ = writeln!(w, "\n[specification]");
    for (key, value) in content.spec.entries() {
        let _ = writeln!(w, "{key} = {value}");
        let _ = writeln!(w, "# {}", key_description(key).unwrap_or(""));
    }

    let _ = writeln!(w, "\n[warnings]");
    let _ = writeln!(w, "count = {}", content.warnings.len());
    for (i, msg) in content.warnings.iter().enumerate() {
        let _ = writeln!(w, "warning {} = {}", i + 1, msg.replace('\n', " "));
    }

    let stats = content.stats;
    let summary = summarize_chain(content.rows)?;
    let _ = writeln!(w, "\n[chain statistics]");
    let _ = writeln!(w, "numFuncCalls = {}", stats.num_func_calls);
    let _ = writeln!(w, "verboseLength = {}", stats.verbose_length);
    let _ = writeln!(w, "compactLength = {}", content.rows.len());
    let _ = writeln!(w, "meanAcceptanceRate = {}", fmt_real(stats.mean_acceptance_rate));
    let _ = writeln!(w, "mean = {}", list(&summary.mean));
    let _ = writeln!(w, "std = {}", list(&summary.std));
    for (i, row) in summary.covariance.iter().enumerate() {
        let _ = writeln!(w, "covariance {} = {}", i + 1, list(row));
    }
    let _ = writeln!(w, "modeLogFunc = {}", fmt_real(summary.mode_log_func));
    let _ = writeln!(w, "mode = {}", list(&summary.mode));

    let _ = writeln!(w, "\n[refinement]");
    match content.refined {
        Some(r) => {
            let _ = writeln!(w, "burninIndex = {}", r.burnin_index_compact);
            let _ = writeln!(w, "stage1IAC = {}", list(&r.stage1_iacs));
            let _ = writeln!(w, "stage2IAC = {}", list(&r.stage2_iacs));
            let _ = writeln!(w, "residualHalvings = {}", r.residual_halvings);
            let _ = writeln!(w, "exhausted = {}", r.exhausted);
            let _ = writeln!(w, "finalSize = {}", r.final_size);
        }
        None => {
            let _ = writeln!(w, "finalSize = 0");
        }
    }

    if let Some(ks) = content.ks {
        let _ = writeln!(w, "\n[ks test]");
        let _ = writeln!(w, "pairs = {}", ks.entries.len());
        for e in &ks.entries {
            let _ = writeln!(
                w,
                "ranks {} {} variable {} = {}, {}",
                e.rank_a,
                e.rank_b,
                e.coordinate,
                fmt_real(e.result.statistic),
                fmt_real(e.result.p_value)
            );
        }
    }

    let _ = writeln!(w, "\n[timing]");
    let _ = writeln!(
        w,
        "{TIMING_MARKER} elapsedSeconds = {}",
        fmt_real(content.elapsed_seconds)
    );

    if let Some(sc) = content.scaling.filter(|sc| sc.contribution_counts.len() >= 2) {
        let _ = writeln!(w, "\n[scaling]");
        let _ = writeln!(w, "processCount = {}", sc.contribution_counts.len());
        let _ = writeln!(
            w,
            "effectiveAcceptanceRate = {}",
            fmt_real(sc.effective_acceptance_rate)
        );
        let _ = writeln!(w, "{TIMING_MARKER} measuredTp = {}", fmt_real(sc.measured_tp));
        if let Some(to) = sc.measured_to {
            let _ = writeln!(w, "{TIMING_MARKER} measuredTo = {}", fmt_real(to));
        }
        let _ = writeln!(w, "{TIMING_MARKER} measuredTs = {}", fmt_real(sc.measured_ts));
        if let Some(p) = &sc.prediction {
            let _ = writeln!(w, "{TIMING_MARKER} predictedSpeedup = {}", list(&p.curve));
            let _ = writeln!(w, "{TIMING_MARKER} optimalNp = {}", p.optimal_np);
            let _ = writeln!(w, "{TIMING_MARKER} absoluteOptimalNp = {}", p.absolute_optimal_np);
        }

        let _ = writeln!(w, "\n[contributions]");
        let _ = writeln!(w, "# rank = count, observed fraction, predicted fraction");
        let total: u64 = sc.contribution_counts.iter().sum();
        let predicted = geometric_contribution(sc.effective_acceptance_rate, sc.contribution_counts.len())?;
        for (i, (c, p)) in sc.contribution_counts.iter().zip(&predicted).enumerate() {
            let _ = writeln!(
                w,
                "rank {} = {}, {}, {}",
                i + 1,
                c,
                fmt_real(*c as f64 / total as f64),
                fmt_real(*p)
            );
        }
    }
    Ok(s)
}

pub fn write_report(path: &Path, content: &ReportContent<'_>) -> Result<()> {
    std::fs::write(path, render_report(content)?)?;
    Ok(())
}

/// Placeholder written when a run starts, replaced on completion.
pub fn write_report_header(path: &Path, spec: &SpecSet) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "[version]");
    let _ = writeln!(s, "paradram = {}", crate::VERSION);
    let _ = writeln!(s, "\n[specification]");
    for (key, value) in spec.entries() {
        let _ = writeln!(s, "{key} = {value}");
        let _ = writeln!(s, "# {}", key_description(key).unwrap_or(""));
    }
    let _ = writeln!(s, "\n[status]");
    let _ = writeln!(s, "state = running");
    std::fs::write(path, s)?;
    Ok(())
}

/// Removes every timing line.
pub fn strip_timing(report: &str) -> String {
    report
        .lines()
        .filter(|l| !l.starts_with(TIMING_MARKER))
        .map(|l| format!("{l}\n"))
        .collect()
}

/// A report read back as `(section, [(key, value)])`, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedReport {
    pub sections: Vec<(String, Vec<(String, String)>)>,
}

impl ParsedReport {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut sections: Vec<(String, Vec<(String, String)>)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.strip_prefix(TIMING_MARKER).unwrap_or(raw).trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.push((name.to_string(), Vec::new()));
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("line {}: expected `key = value`", lineno + 1)))?;
            let section = sections
                .last_mut()
                .ok_or_else(|| Error::format(path, format!("line {}: entry outside a section", lineno + 1)))?;
            section.1.push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(ParsedReport { sections })
    }

    pub fn read(path: &Path) -> Result<Self> {
        ParsedReport::parse(&std::fs::read_to_string(path).map_err(Error::unreadable(path))?, path)
    }

    pub fn section(&self, name: &str) -> Option<&[(String, String)]> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, e)| e.as_slice())
    }

    pub fn value(&self, section: &str, key: &str) -> Option<&str> {
        self.section(section)?
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Per-rank counts from the contribution table.
    pub fn contribution_counts(&self) -> Option<Vec<u64>> {
        let entries = self.section("contributions")?;
        entries
            .iter()
            .map(|(_, v)| v.split(',').next()?.trim().parse().ok())
            .collect()
    }
}
