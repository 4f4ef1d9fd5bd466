//! File-backed simulations: output naming, run-mode detection, automatic
//! resumption and the five output files per chain.

use std::path::PathBuf;
use std::time::Instant;

use chrono::NaiveDateTime;

use crate::chainio::{
    detect_run_mode, make_output_prefix, read_chain_lenient, read_restart, write_report, write_report_header,
    write_sample, ChainWriter, OutputFileSet, ProgressWriter, ReportContent, RestartRecord, RestartWriter, RunMode,
};
use crate::error::{Error, Result};
use crate::kernel::{run_chain_serial, ChainRow, ChainRun, ProgressSnapshot, RunObserver};
use crate::parallel::{
    run_fork_join, run_multi_chain_sessions, FabricKind, KsMatrix, ObjectiveFactory, RankSession, ScalingReport,
};
use crate::refine::{refine_or_empty, RefinedSample};
use crate::spec::{ParallelismModel, SpecSet};

#[derive(Debug, Clone, Default)]
pub struct SimulationOptions {
    /// Directory of automatically named output prefixes.
    pub default_dir: PathBuf,
    /// Timestamp of automatic prefixes; the local time when `None`.
    pub clock: Option<NaiveDateTime>,
    pub fabric: FabricKind,
    /// The seed was not chosen by the user; a resumed run adopts the seed
    /// stored in its restart record.
    pub seed_defaulted: bool,
    /// Abort with [`Error::Interrupted`] once this many verbose steps exist.
    pub stop_after: Option<u64>,
    /// Diagnostics gathered before the run (for example from validation),
    /// echoed into every report.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    /// The configuration actually run (after seed adoption).
    pub spec: SpecSet,
    /// One file set, or one per rank in multi-chain mode.
    pub file_sets: Vec<OutputFileSet>,
    pub resumed: bool,
    pub runs: Vec<ChainRun>,
    pub samples: Vec<RefinedSample>,
    pub scaling: Option<ScalingReport>,
    pub ks: Option<KsMatrix>,
    /// Per-file-set warnings, as written into each report.
    pub warnings: Vec<Vec<String>>,
}

struct FileObserver {
    progress: ProgressWriter,
    restart: RestartWriter,
    stop_after: Option<u64>,
}

impl RunObserver for FileObserver {
    fn progress(&mut self, snapshot: &ProgressSnapshot) -> Result<()> {
        self.progress.write(snapshot)
    }
    fn checkpoint(&mut self, record: &RestartRecord) -> Result<()> {
        self.restart.write(record)
    }
    fn interrupt(&mut self, verbose_length: u64) -> bool {
        self.stop_after.is_some_and(|n| verbose_length >= n)
    }
}

struct Prepared {
    sink: ChainWriter,
    observer: FileObserver,
    restart: Option<(RestartRecord, Vec<ChainRow>)>,
    warnings: Vec<String>,
}

fn read_resume_state(files: &OutputFileSet) -> Result<(RestartRecord, Vec<String>)> {
    let read = read_restart(&files.restart(), files.restart_format)?;
    let mut warnings = Vec::new();
    if read.torn_tail {
        warnings.push(format!(
            "restart file {} ends with a partial record; resumed from the last complete one",
            files.restart().display()
        ));
    }
    Ok((read.record, warnings))
}

fn prepare(
    files: &OutputFileSet,
    spec: &SpecSet,
    resume: Option<(RestartRecord, Vec<String>)>,
    stop_after: Option<u64>,
) -> Result<Prepared> {
    let delimiter = spec.output_delimiter;
    match resume {
        None => {
            let sink = ChainWriter::create(&files.chain(), files.chain_format, spec.ndim, delimiter)?;
            let restart = RestartWriter::create(&files.restart(), files.restart_format)?;
            let progress = ProgressWriter::create(&files.progress(), delimiter)?;
            write_report_header(&files.report(), spec)?;
            Ok(Prepared {
                sink,
                observer: FileObserver {
                    progress,
                    restart,
                    stop_after,
                },
                restart: None,
                warnings: Vec::new(),
            })
        }
        Some((record, mut warnings)) => {
            let chain = read_chain_lenient(&files.chain(), files.chain_format)?;
            if chain.ndim != spec.ndim {
                return Err(Error::SpecMismatch(format!(
                    "chain file has {} dimensions, specification has {}",
                    chain.ndim, spec.ndim
                )));
            }
            let needed = record.compact_count as usize;
            if chain.rows.len() < needed {
                return Err(Error::SpecMismatch(format!(
                    "chain file holds {} rows but the restart record needs {needed}",
                    chain.rows.len()
                )));
            }
            if chain.truncated {
                warnings.push(format!(
                    "chain file {} ended with a partial record, which was discarded",
                    files.chain().display()
                ));
            }
            let mut rows = chain.rows;
            rows.truncate(needed);
            let sink = ChainWriter::rewrite(&files.chain(), files.chain_format, spec.ndim, delimiter, &rows)?;
            let restart = RestartWriter::append(&files.restart(), files.restart_format)?;
            let progress = ProgressWriter::append(&files.progress(), delimiter)?;
            Ok(Prepared {
                sink,
                observer: FileObserver {
                    progress,
                    restart,
                    stop_after,
                },
                restart: Some((record, rows)),
                warnings,
            })
        }
    }
}

/// Runs (or resumes) the simulation described by `spec` and writes its
/// output files.
///
/// A single chain with one rank runs serially, with several ranks in
/// fork-join mode; multi-chain mode runs one independent chain per rank,
/// each with its own file set. Existing output is classified first: a
/// complete file set is a clash (replaced only when `overwriteRequested`),
/// a set lacking only the sample file is resumed from its last restart
/// record, anything else is reported as incomplete unless overwriting.
pub fn run_simulation(
    spec: &SpecSet,
    factory: &mut ObjectiveFactory<'_>,
    options: &SimulationOptions,
) -> Result<SimulationResult> {
    let mut spec = spec.clone();
    let np = spec.process_count;
    let multi = spec.parallelism_model == ParallelismModel::MultiChain;
    let clock = options.clock.unwrap_or_else(|| chrono::Local::now().naive_local());
    let file_count = if multi { np } else { 1 };
    let file_sets = (1..=file_count)
        .map(|rank| make_output_prefix(&spec, clock, rank, &options.default_dir).map(|p| OutputFileSet::new(p, &spec)))
        .collect::<Result<Vec<_>>>()?;

    let mut modes = Vec::with_capacity(file_sets.len());
    for files in &file_sets {
        let mode = match detect_run_mode(files) {
            RunMode::Clash | RunMode::Corrupt if spec.overwrite_requested => {
                files.remove_all()?;
                RunMode::Fresh
            }
            RunMode::Clash => return Err(Error::Clash(files.prefix.display().to_string())),
            RunMode::Corrupt => return Err(Error::IncompleteOutput(files.prefix.display().to_string())),
            mode => mode,
        };
        modes.push(mode);
    }
    let resumed = modes[0] == RunMode::Restart;
    if modes.iter().any(|m| (*m == RunMode::Restart) != resumed) {
        return Err(Error::IncompleteOutput(format!(
            "{} (only some ranks can be resumed)",
            file_sets[0].prefix.display()
        )));
    }

    let mut resume_states = Vec::with_capacity(file_sets.len());
    if resumed {
        for files in &file_sets {
            resume_states.push(Some(read_resume_state(files)?));
        }
        if options.seed_defaulted {
            if let Some(Some((record, _))) = resume_states.first() {
                spec.random_seed = record.seed;
            }
        }
        let ranks_per_record = if multi { 1 } else { np };
        for (record, _) in resume_states.iter().flatten() {
            record.check_compatible(&spec, ranks_per_record)?;
        }
    } else {
        resume_states.resize_with(file_sets.len(), || None);
    }

    let started = Instant::now();
    let mut prepared = file_sets
        .iter()
        .zip(resume_states)
        .map(|(files, resume)| prepare(files, &spec, resume, options.stop_after))
        .collect::<Result<Vec<_>>>()?;

    let (runs, samples, scaling, ks, run_warnings) = if multi {
        let mut pre_warnings = Vec::with_capacity(prepared.len());
        let mut sessions = Vec::with_capacity(prepared.len());
        for (rank, p) in (1..=np).zip(prepared.drain(..)) {
            pre_warnings.push(p.warnings);
            sessions.push(RankSession {
                objective: factory(rank)?,
                sink: Box::new(p.sink),
                observer: Box::new(p.observer),
                restart: p.restart,
            });
        }
        let mc = run_multi_chain_sessions(&spec, sessions)?;
        let warnings = pre_warnings
            .into_iter()
            .zip(&mc.runs)
            .map(|(mut w, run)| {
                w.extend(run.warnings.iter().cloned());
                w.extend(mc.warnings.iter().cloned());
                w
            })
            .collect::<Vec<_>>();
        (mc.runs, mc.samples, None, Some(mc.ks), warnings)
    } else {
        let mut p = prepared.pop().expect("one file set");
        let restart = p.restart.as_ref().map(|(r, rows)| (r, rows.clone()));
        let (run, scaling) = if np == 1 {
            let mut objective = factory(1)?;
            let run = run_chain_serial(&spec, objective.as_mut(), &mut p.sink, &mut p.observer, restart)?;
            (run, None)
        } else {
            let fj = run_fork_join(
                &spec,
                np,
                options.fabric,
                factory,
                &mut p.sink,
                &mut p.observer,
                restart,
            )?;
            (fj.run, Some(fj.scaling))
        };
        let sample = refine_or_empty(&run.rows, spec.sample_size)?;
        let mut warnings = p.warnings;
        warnings.extend(run.warnings.iter().cloned());
        (vec![run], vec![sample], scaling, None, vec![warnings])
    };
    let elapsed = started.elapsed().as_secs_f64();

    let mut all_warnings = Vec::with_capacity(file_sets.len());
    for (((files, run), sample), rank_warnings) in file_sets.iter().zip(&runs).zip(&samples).zip(run_warnings) {
        let mut warnings = options.warnings.clone();
        warnings.extend(rank_warnings);
        warnings.extend(sample.warnings.iter().cloned());
        write_report(
            &files.report(),
            &ReportContent {
                spec: &spec,
                warnings: &warnings,
                rows: &run.rows,
                stats: &run.stats,
                refined: Some(sample),
                ks: ks.as_ref(),
                elapsed_seconds: elapsed,
                scaling: scaling.as_ref(),
            },
        )?;
        write_sample(&files.sample(), spec.ndim, &sample.points, spec.output_delimiter)?;
        all_warnings.push(warnings);
    }

    Ok(SimulationResult {
        spec,
        file_sets,
        resumed,
        runs,
        samples,
        scaling,
        ks,
        warnings: all_warnings,
    })
}
