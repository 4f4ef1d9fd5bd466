//! The `run`, `refine`, `predict` and `export` subcommands.

use std::path::{Path, PathBuf};

use paradram::chainio::{write_sample, ParsedReport};
use paradram::parallel::{fit_effective_acceptance, predict_speedup, FabricKind};
use paradram::refine::refine_chain;
use paradram::spec::{parse_real, ChainFileFormat};
use paradram::target::builtin_target;
use paradram::{run_simulation, validate_spec, Error, Objective, RawSpec, Result, SimulationOptions};

use crate::export::{export, ExportOptions};
use crate::external::ExternalObjective;
use crate::input::{file_set_prefix, load_chain, load_table, sample_path_for};

/// Environment variable naming the directory of automatically named runs.
pub const OUT_DIR_VAR: &str = "PARADRAM_OUT_DIR";

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Himmelblau,
    Mvn(usize),
    Exec(PathBuf),
}

impl std::str::FromStr for Target {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("himmelblau") {
            return Ok(Target::Himmelblau);
        }
        if let Some(d) = s.strip_prefix("mvn:") {
            return match d.parse::<usize>() {
                Ok(d) if d > 0 => Ok(Target::Mvn(d)),
                _ => Err(format!("`{d}` is not a positive dimension")),
            };
        }
        if let Some(program) = s.strip_prefix("exec:").filter(|p| !p.is_empty()) {
            return Ok(Target::Exec(PathBuf::from(program)));
        }
        Err(format!(
            "unknown target `{s}`; expected himmelblau, mvn:<d> or exec:<program>"
        ))
    }
}

impl Target {
    fn implied_ndim(&self) -> Option<usize> {
        match self {
            Target::Himmelblau => Some(2),
            Target::Mvn(d) => Some(*d),
            Target::Exec(_) => None,
        }
    }

    fn objective(&self, ndim: usize) -> Result<Box<dyn Objective>> {
        match self {
            Target::Himmelblau => builtin_target("himmelblau", ndim, None),
            Target::Mvn(d) if *d != ndim => Err(Error::DimensionMismatch(format!(
                "target mvn:{d} conflicts with ndim = {ndim}"
            ))),
            Target::Mvn(_) => builtin_target("mvnStandard", ndim, None),
            Target::Exec(program) => Ok(Box::new(ExternalObjective::spawn(program, ndim)?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    SingleChain,
    MultiChain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fabric {
    Local,
    Threads,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Compact,
    Verbose,
    Binary,
}

impl From<Format> for ChainFileFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Compact => ChainFileFormat::Compact,
            Format::Verbose => ChainFileFormat::Verbose,
            Format::Binary => ChainFileFormat::Binary,
        }
    }
}

pub struct RunRequest {
    pub spec: Option<PathBuf>,
    pub target: Target,
    pub ndim: Option<usize>,
    pub np: Option<usize>,
    pub mode: Option<Mode>,
    pub out: Option<String>,
    pub seed: Option<u64>,
    pub fabric: Fabric,
    pub stop_after: Option<u64>,
}

/// Spec-file keys overridden by flags.
fn merged_spec(req: &RunRequest) -> Result<(RawSpec, usize)> {
    let mut raw = match &req.spec {
        Some(path) => RawSpec::from_file(path)?,
        None => RawSpec::new(),
    };
    if let Some(np) = req.np {
        raw.set("processCount", np.to_string());
    }
    if let Some(mode) = req.mode {
        let name = match mode {
            Mode::SingleChain => "singleChain",
            Mode::MultiChain => "multiChain",
        };
        raw.set("parallelismModel", name);
    }
    if let Some(out) = &req.out {
        raw.set("outputPrefix", out.as_str());
    }
    if let Some(seed) = req.seed {
        raw.set("randomSeed", seed.to_string());
    }
    let file_ndim = match raw.get("ndim") {
        Some(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidSpec(vec![format!("ndim: `{v}` is not a positive integer")]))?,
        ),
        None => None,
    };
    let ndim =
        req.ndim.or(file_ndim).or(req.target.implied_ndim()).ok_or_else(|| {
            Error::InvalidSpec(vec!["ndim: required for exec targets (--ndim or the spec file)".into()])
        })?;
    raw.set("ndim", ndim.to_string());
    Ok((raw, ndim))
}

pub fn run(req: &RunRequest) -> Result<()> {
    let (raw, ndim) = merged_spec(req)?;
    let validated = validate_spec(&raw, ndim)?;
    for w in &validated.warnings {
        eprintln!("warning: {w}");
    }
    if !matches!(req.target, Target::Exec(_)) {
        req.target.objective(ndim)?;
    }
    let options = SimulationOptions {
        default_dir: std::env::var_os(OUT_DIR_VAR).map(PathBuf::from).unwrap_or_default(),
        clock: None,
        fabric: match req.fabric {
            Fabric::Local => FabricKind::Local,
            Fabric::Threads => FabricKind::Threads,
        },
        seed_defaulted: validated.was_defaulted("randomSeed"),
        stop_after: req.stop_after,
        warnings: validated.warnings.clone(),
    };
    let mut factory = |_: usize| req.target.objective(ndim);
    let out = run_simulation(&validated.spec, &mut factory, &options)?;
    let verb = if out.resumed {
        "resumed and completed"
    } else {
        "completed"
    };
    for ((files, run), sample) in out.file_sets.iter().zip(&out.runs).zip(&out.samples) {
        println!(
            "{verb}: {} ({} verbose steps, {} accepted, refined sample of {})",
            files.prefix.display(),
            run.stats.verbose_length,
            run.stats.num_accepted,
            sample.final_size
        );
    }
    let mut printed = validated.warnings.clone();
    for w in out.warnings.iter().flatten() {
        if !printed.contains(w) {
            eprintln!("warning: {w}");
            printed.push(w.clone());
        }
    }
    Ok(())
}

pub fn refine(chain: &Path, format: Option<Format>, sample_size: Option<i64>, out: Option<PathBuf>) -> Result<()> {
    let rows = load_chain(chain, format.map(Into::into))?;
    let refined = refine_chain(&rows, sample_size.unwrap_or(-1))?;
    for w in &refined.warnings {
        eprintln!("warning: {w}");
    }
    let path = out.unwrap_or_else(|| sample_path_for(chain));
    write_sample(&path, rows[0].coords.len(), &refined.points, ',')?;
    println!("wrote {} points to {}", refined.final_size, path.display());
    Ok(())
}

pub struct Timing {
    pub tp: Option<f64>,
    pub to: Option<f64>,
    pub ts: Option<f64>,
}

fn is_report(path: &Path) -> bool {
    path.to_str().is_some_and(|p| p.ends_with("_report.txt"))
        || std::fs::read_to_string(path).is_ok_and(|t| t.trim_start().starts_with('['))
}

fn report_real(report: &ParsedReport, key: &str, path: &Path) -> Result<Option<f64>> {
    report
        .value("scaling", key)
        .map(|v| {
            parse_real(v).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: format!("{key}: {e}"),
            })
        })
        .transpose()
}

/// Contribution counts and timing from a fork-join report, or counts per
/// `ProcessID` from a chain file. Flags override measured timings.
pub fn predict(path: &Path, format: Option<Format>, timing: &Timing, np_max: Option<usize>) -> Result<()> {
    let (counts, tp, to, ts) = if is_report(path) {
        let report = ParsedReport::read(path)?;
        let counts = report.contribution_counts().ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            message: "no contribution table; predict needs a fork-join run with two or more ranks".into(),
        })?;
        (
            counts,
            report_real(&report, "measuredTp", path)?,
            report_real(&report, "measuredTo", path)?,
            report_real(&report, "measuredTs", path)?,
        )
    } else {
        let rows = load_chain(path, format.map(Into::into))?;
        let ranks = rows.iter().map(|r| r.proc_id as usize).max().unwrap_or(0);
        let mut counts = vec![0u64; ranks];
        for r in &rows {
            counts[r.proc_id as usize - 1] += 1;
        }
        (counts, None, None, None)
    };
    let tp = timing.tp.or(tp).unwrap_or(1.0);
    let to = timing.to.or(to).unwrap_or(0.0);
    let ts = timing.ts.or(ts).unwrap_or(0.0);
    let alpha = fit_effective_acceptance(&counts)?;
    let np_max = np_max.unwrap_or(64.max(2 * counts.len()));
    let p = predict_speedup(ts, tp, to, alpha, np_max)?;
    println!("processCount = {}", counts.len());
    println!(
        "contributionCounts = {}",
        counts.iter().map(u64::to_string).collect::<Vec<_>>().join(", ")
    );
    println!("effectiveAcceptanceRate = {alpha:.6}");
    println!("timing = Tp {tp:e} s, To {to:e} s, Ts {ts:e} s");
    println!("optimalNp = {}", p.optimal_np);
    println!("absoluteOptimalNp = {}", p.absolute_optimal_np);
    println!("# np, predicted speedup");
    for (i, s) in p.curve.iter().enumerate() {
        println!("{}, {s:.6}", i + 1);
    }
    Ok(())
}

pub fn export_plot_data(
    path: &Path,
    format: Option<Format>,
    dir: Option<PathBuf>,
    options: &ExportOptions,
) -> Result<()> {
    let table = load_table(path, format.map(Into::into))?;
    let stem = file_set_prefix(path)
        .as_deref()
        .and_then(Path::file_name)
        .or_else(|| path.file_stem())
        .and_then(|s| s.to_str())
        .unwrap_or("export")
        .to_string();
    let kind = if table.weights.is_some() { "chain" } else { "sample" };
    let dir = dir.unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
    let stem = format!("{stem}_{kind}");
    for file in export(&table, &dir, &stem, options)? {
        println!("{}", file.display());
    }
    Ok(())
}
