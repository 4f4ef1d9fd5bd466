//! The serial delayed-rejection adaptive Metropolis loop.
//!
//! [`Engine`] owns the master-side bookkeeping shared by every execution
//! model: the live (still growing) compact row, the running moments, the
//! proposal and its adaptation schedule, progress and checkpoint emission.
//! [`run_chain_serial`] drives it with one random stream and inline objective
//! evaluation; the fork-join driver in [`crate::parallel`] drives the same
//! engine through a rank fabric.

use std::time::Instant;

use crate::chainio::restart::RestartRecord;
use crate::error::{Error, Result};
use crate::proposal::{adapt_proposal, ProposalState, RunningMoments};
use crate::rng::{RngState, RngStream};
use crate::spec::SpecSet;
use crate::target::Objective;

/// One uniquely accepted state of the compact chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRow {
    /// Rank (1-based) whose candidate was accepted.
    pub proc_id: u32,
    /// Delayed-rejection stage at which the state was accepted.
    pub dr_stage: u32,
    /// Running acceptance rate when the state was accepted.
    pub mean_acceptance_rate: f64,
    /// Latest adaptation measure when the state was accepted.
    pub adaptation_measure: f64,
    /// Number of consecutive verbose steps spent in this state.
    pub weight: u64,
    pub log_func: f64,
    pub coords: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainStats {
    pub num_func_calls: u64,
    pub num_accepted: u64,
    pub verbose_length: u64,
    pub mean_acceptance_rate: f64,
    pub per_rank_acceptances: Vec<u64>,
}

/// `min(1, f(y)/f(x))` for a symmetric proposal, in log space.
pub fn am_accept_prob(logf_current: f64, logf_candidate: f64) -> f64 {
    if logf_candidate == f64::NEG_INFINITY {
        return 0.0;
    }
    let diff = logf_candidate - logf_current;
    if diff >= 0.0 {
        1.0
    } else {
        diff.exp()
    }
}

/// Symmetric delayed-rejection acceptance probability
/// `min(1, max(0, f(y_j) - f(y*)) / (f(x) - f(y*)))`, `y*` being the best
/// candidate rejected so far in this step. Densities are shifted by
/// `ln f(y*)` before exponentiation.
pub fn dr_accept_prob_symmetric(logf_current: f64, logf_rejected: &[f64], logf_candidate: f64) -> Result<f64> {
    let best_rejected = logf_rejected
        .iter()
        .copied()
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .ok_or_else(|| Error::PreconditionViolation("no rejected candidate precedes this stage".into()))?;
    if best_rejected == f64::NEG_INFINITY {
        // Every earlier candidate had zero density: f(y*) = 0.
        return Ok(am_accept_prob(logf_current, logf_candidate));
    }
    if !(logf_current > best_rejected) {
        return Err(Error::PreconditionViolation(format!(
            "current log-density {logf_current} does not exceed rejected {best_rejected}"
        )));
    }
    if logf_candidate <= best_rejected {
        return Ok(0.0);
    }
    if logf_candidate >= logf_current {
        return Ok(1.0);
    }
    let a = logf_candidate - best_rejected;
    let b = logf_current - best_rejected;
    let ratio = if b > 1.0 {
        (a - b).exp() * (-(-a).exp_m1()) / (-(-b).exp_m1())
    } else {
        a.exp_m1() / b.exp_m1()
    };
    Ok(ratio.min(1.0))
}

/// Identifies one of the three states of a first-stage delayed rejection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage1Point {
    Current,
    First,
    Second,
}

/// Log-densities of the current state `x`, the rejected first candidate
/// `y0` and the second candidate `y1`.
#[derive(Debug, Clone, Copy)]
pub struct Stage1LogDensities {
    pub x: f64,
    pub y0: f64,
    pub y1: f64,
}

/// General (possibly asymmetric) first-stage delayed-rejection acceptance
/// probability. `proposal_log_pdf(stage, to, given)` returns the log density
/// of proposing `to` at `stage` conditioned on the states in `given` (most
/// recent first).
///
/// This is the reference the symmetric rule reduces to; the sampler itself
/// never calls it.
pub fn dr_accept_prob_stage1_general<F>(logf: Stage1LogDensities, proposal_log_pdf: F) -> Result<f64>
where
    F: Fn(usize, Stage1Point, &[Stage1Point]) -> f64,
{
    use Stage1Point::*;
    let alpha0_x_y0 = am_accept_prob(logf.x, logf.y0);
    if alpha0_x_y0 >= 1.0 {
        return Err(Error::DivisionByZero("first candidate would have been accepted".into()));
    }
    let alpha0_y1_y0 = am_accept_prob(logf.y1, logf.y0);
    let log_q = proposal_log_pdf(0, First, &[Second]) + proposal_log_pdf(1, Current, &[First, Second])
        - proposal_log_pdf(0, First, &[Current])
        - proposal_log_pdf(1, Second, &[First, Current]);
    let ratio = (logf.y1 - logf.x + log_q).exp() * (1.0 - alpha0_y1_y0) / (1.0 - alpha0_x_y0);
    Ok(ratio.min(1.0))
}

/// Destination of finalized compact rows.
pub trait ChainSink {
    fn write_row(&mut self, row: &ChainRow) -> Result<()>;
    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

impl ChainSink for Vec<ChainRow> {
    fn write_row(&mut self, row: &ChainRow) -> Result<()> {
        self.push(row.clone());
        Ok(())
    }
}

/// Discards rows.
pub struct NullSink;

impl ChainSink for NullSink {
    fn write_row(&mut self, _row: &ChainRow) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgressSnapshot {
    pub num_func_calls: u64,
    pub verbose_length: u64,
    pub chain_size: u64,
    pub overall_acceptance_rate: f64,
    pub window_acceptance_rate: f64,
    pub elapsed_seconds: f64,
    pub remaining_seconds_estimate: f64,
}

/// Side channel for progress, checkpoints and adaptation events.
pub trait RunObserver {
    fn progress(&mut self, _snapshot: &ProgressSnapshot) -> Result<()> {
        Ok(())
    }
    fn checkpoint(&mut self, _record: &RestartRecord) -> Result<()> {
        Ok(())
    }
    fn warning(&mut self, _message: &str) {}
    /// Polled after every verbose step; returning true aborts the run with
    /// [`Error::Interrupted`] without finalizing anything.
    fn interrupt(&mut self, _verbose_length: u64) -> bool {
        false
    }
}

pub struct NullObserver;
impl RunObserver for NullObserver {}

/// Everything a sampling run produces in memory.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub rows: Vec<ChainRow>,
    pub stats: ChainStats,
    pub proposal: ProposalState,
    /// Adaptation measure of every update performed in this session.
    pub adaptation_history: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Validates a log-density returned by an objective.
pub(crate) fn check_log_density(point: &[f64], value: f64) -> Result<f64> {
    if value.is_nan() || value == f64::INFINITY {
        return Err(Error::Objective {
            point: point.to_vec(),
            message: format!("returned {value}; expected a finite value or -inf"),
        });
    }
    Ok(value)
}

pub(crate) struct Engine<'a> {
    pub spec: &'a SpecSet,
    pub proposal: ProposalState,
    moments: RunningMoments,
    live: ChainRow,
    rows: Vec<ChainRow>,
    num_func_calls: u64,
    num_accepted: u64,
    verbose: u64,
    per_rank: Vec<u64>,
    /// Rank whose contribution is stored in `per_rank[0]`.
    first_rank: usize,
    adaptations_done: u64,
    window_verbose: u64,
    window_accepted: u64,
    next_progress_at: u64,
    progress_calls: u64,
    progress_accepted: u64,
    progress_verbose: u64,
    adaptation_history: Vec<f64>,
    warnings: Vec<String>,
    started: Instant,
    sink: &'a mut dyn ChainSink,
    observer: &'a mut dyn RunObserver,
}

impl<'a> Engine<'a> {
    /// Starts a fresh chain at `spec.start_point`, whose log-density
    /// `start_logf` the caller has already evaluated (one objective call).
    pub fn fresh(
        spec: &'a SpecSet,
        ranks: usize,
        start_logf: f64,
        sink: &'a mut dyn ChainSink,
        observer: &'a mut dyn RunObserver,
    ) -> Result<Self> {
        if !start_logf.is_finite() {
            return Err(Error::NonFiniteStart {
                point: spec.start_point.clone(),
                value: start_logf,
            });
        }
        let mut per_rank = vec![0; ranks];
        per_rank[0] = 1;
        let live = ChainRow {
            proc_id: 1,
            dr_stage: 0,
            mean_acceptance_rate: 1.0,
            adaptation_measure: 0.0,
            weight: 1,
            log_func: start_logf,
            coords: spec.start_point.clone(),
        };
        Ok(Engine {
            spec,
            proposal: ProposalState::from_spec(spec),
            moments: RunningMoments::new(spec.ndim),
            live,
            rows: Vec::new(),
            num_func_calls: 1,
            num_accepted: 1,
            verbose: 1,
            per_rank,
            first_rank: 1,
            adaptations_done: 0,
            window_verbose: 0,
            window_accepted: 0,
            next_progress_at: spec.progress_report_period,
            progress_calls: 0,
            progress_accepted: 0,
            progress_verbose: 0,
            adaptation_history: Vec::new(),
            warnings: Vec::new(),
            started: Instant::now(),
            sink,
            observer,
        })
    }

    /// Rebuilds the engine from a restart record and the finalized rows that
    /// precede it. Rows are not re-emitted to the sink.
    pub fn resume(
        spec: &'a SpecSet,
        record: &RestartRecord,
        rows: Vec<ChainRow>,
        sink: &'a mut dyn ChainSink,
        observer: &'a mut dyn RunObserver,
    ) -> Result<Self> {
        if rows.len() as u64 != record.compact_count {
            return Err(Error::SpecMismatch(format!(
                "restart record expects {} finalized rows, chain holds {}",
                record.compact_count,
                rows.len()
            )));
        }
        let weight_sum: u64 = rows.iter().map(|r| r.weight).sum::<u64>() + record.live_row.weight;
        if weight_sum != record.verbose_count {
            return Err(Error::SpecMismatch(format!(
                "chain weights sum to {weight_sum} but the restart record holds {} steps",
                record.verbose_count
            )));
        }
        Ok(Engine {
            spec,
            proposal: record.proposal.clone(),
            moments: record.moments.clone(),
            live: record.live_row.clone(),
            rows,
            num_func_calls: record.num_func_calls,
            num_accepted: record.compact_count + 1,
            verbose: record.verbose_count,
            per_rank: record.per_rank_acceptances.clone(),
            first_rank: 1,
            adaptations_done: record.adaptations_done,
            window_verbose: record.window_verbose,
            window_accepted: record.window_accepted,
            next_progress_at: record.next_progress_at,
            progress_calls: record.num_func_calls,
            progress_accepted: record.compact_count + 1,
            progress_verbose: record.verbose_count,
            adaptation_history: Vec::new(),
            warnings: Vec::new(),
            started: Instant::now(),
            sink,
            observer,
        })
    }

    pub fn current(&self) -> (&[f64], f64) {
        (&self.live.coords, self.live.log_func)
    }

    pub fn done(&self) -> bool {
        self.verbose >= self.spec.chain_size
    }

    pub fn count_calls(&mut self, n: u64) {
        self.num_func_calls += n;
    }

    pub fn accept(&mut self, coords: Vec<f64>, log_func: f64, rank: usize, stage: usize) -> Result<()> {
        self.num_accepted += 1;
        self.verbose += 1;
        self.per_rank[rank - self.first_rank] += 1;
        let row = ChainRow {
            proc_id: rank as u32,
            dr_stage: stage as u32,
            mean_acceptance_rate: self.num_accepted as f64 / self.verbose as f64,
            adaptation_measure: self.proposal.last_adaptation_measure,
            weight: 1,
            log_func,
            coords,
        };
        let finished = std::mem::replace(&mut self.live, row);
        self.sink.write_row(&finished)?;
        self.moments.update(&finished.coords, finished.weight);
        self.rows.push(finished);
        Ok(())
    }

    pub fn reject(&mut self) {
        self.verbose += 1;
        self.live.weight += 1;
    }

    /// Adaptation, progress and checkpoint duties after one verbose step.
    /// `rng_states` is only called when a checkpoint is due. Returns whether
    /// the proposal changed.
    pub fn end_step(&mut self, rng_states: &mut dyn FnMut() -> Result<Vec<RngState>>) -> Result<bool> {
        let mut checkpoint = false;
        let mut proposal_changed = false;
        let spec = self.spec;
        let limit_ok = spec.adaptation_count < 0 || self.adaptations_done < spec.adaptation_count as u64;
        if self.verbose.is_multiple_of(spec.adaptation_period) && limit_ok && !self.done() {
            let window = self.verbose - self.window_verbose;
            let recent = if window > 0 {
                (self.num_accepted - self.window_accepted) as f64 / window as f64
            } else {
                0.0
            };
            let mut moments = self.moments.clone();
            moments.update(&self.live.coords, self.live.weight);
            let adaptation = adapt_proposal(&self.proposal, &moments, spec, recent);
            if adaptation.attempted {
                self.adaptations_done += 1;
                self.window_verbose = self.verbose;
                self.window_accepted = self.num_accepted;
                if let Some(w) = adaptation.warning {
                    self.observer.warning(&w);
                    self.warnings.push(w);
                } else {
                    self.adaptation_history.push(adaptation.state.last_adaptation_measure);
                }
                proposal_changed = adaptation.state != self.proposal;
                self.proposal = adaptation.state;
                checkpoint = true;
            }
        }

        if self.num_func_calls >= self.next_progress_at || self.done() {
            while self.next_progress_at <= self.num_func_calls {
                self.next_progress_at += spec.progress_report_period;
            }
            let snapshot = self.progress_snapshot();
            self.progress_calls = self.num_func_calls;
            self.progress_accepted = self.num_accepted;
            self.progress_verbose = self.verbose;
            self.observer.progress(&snapshot)?;
            checkpoint = true;
        }

        if checkpoint && !self.done() {
            self.sink.flush()?;
            let record = self.restart_record(rng_states()?);
            self.observer.checkpoint(&record)?;
        }
        if self.observer.interrupt(self.verbose) {
            self.sink.flush()?;
            return Err(Error::Interrupted(self.verbose));
        }
        Ok(proposal_changed)
    }

    fn progress_snapshot(&self) -> ProgressSnapshot {
        let elapsed = self.started.elapsed().as_secs_f64();
        let window = self.verbose - self.progress_verbose;
        let window_rate = if window > 0 {
            (self.num_accepted - self.progress_accepted) as f64 / window as f64
        } else {
            0.0
        };
        let remaining = if self.done() {
            0.0
        } else {
            elapsed * (self.spec.chain_size - self.verbose) as f64 / self.verbose as f64
        };
        ProgressSnapshot {
            num_func_calls: self.num_func_calls,
            verbose_length: self.verbose,
            chain_size: self.spec.chain_size,
            overall_acceptance_rate: self.num_accepted as f64 / self.verbose as f64,
            window_acceptance_rate: window_rate,
            elapsed_seconds: elapsed,
            remaining_seconds_estimate: remaining,
        }
    }

    pub fn restart_record(&self, rng_states: Vec<RngState>) -> RestartRecord {
        RestartRecord {
            ndim: self.spec.ndim,
            process_count: self.per_rank.len(),
            chain_size: self.spec.chain_size,
            seed: self.spec.random_seed,
            verbose_count: self.verbose,
            compact_count: self.rows.len() as u64,
            num_func_calls: self.num_func_calls,
            adaptations_done: self.adaptations_done,
            window_verbose: self.window_verbose,
            window_accepted: self.window_accepted,
            next_progress_at: self.next_progress_at,
            proposal: self.proposal.clone(),
            moments: self.moments.clone(),
            rng_states,
            per_rank_acceptances: self.per_rank.clone(),
            live_row: self.live.clone(),
        }
    }

    /// Flushes the live row and returns the finished run.
    pub fn finish(mut self) -> Result<ChainRun> {
        self.sink.write_row(&self.live)?;
        self.sink.flush()?;
        let live = self.live.clone();
        self.rows.push(live);
        Ok(ChainRun {
            stats: ChainStats {
                num_func_calls: self.num_func_calls,
                num_accepted: self.num_accepted,
                verbose_length: self.verbose,
                mean_acceptance_rate: self.num_accepted as f64 / self.verbose as f64,
                per_rank_acceptances: self.per_rank,
            },
            rows: self.rows,
            proposal: self.proposal,
            adaptation_history: self.adaptation_history,
            warnings: self.warnings,
        })
    }
}

/// Runs the serial chain on stream `(seed, 1)`; see [`run_chain_on_rank`].
pub fn run_chain_serial(
    spec: &SpecSet,
    objective: &mut dyn Objective,
    sink: &mut dyn ChainSink,
    observer: &mut dyn RunObserver,
    restart: Option<(&RestartRecord, Vec<ChainRow>)>,
) -> Result<ChainRun> {
    run_chain_on_rank(spec, 1, objective, sink, observer, restart)
}

/// Serial DRAM chain driven by stream `(seed, rank)`, rows attributed to
/// `rank`.
///
/// Each verbose step proposes from the current state and accepts with the
/// Metropolis probability; after a rejection up to
/// `delayedRejectionCount` further candidates are drawn, stage `j` centered
/// on the candidate rejected at stage `j - 1` with the proposal rescaled by
/// `s_1 ⋯ s_j`. Every candidate consumes `ndim` Gaussians and then one
/// uniform. Candidates outside the domain cube are rejected without calling
/// the objective.
pub fn run_chain_on_rank(
    spec: &SpecSet,
    rank: usize,
    objective: &mut dyn Objective,
    sink: &mut dyn ChainSink,
    observer: &mut dyn RunObserver,
    restart: Option<(&RestartRecord, Vec<ChainRow>)>,
) -> Result<ChainRun> {
    if objective.ndim() != spec.ndim {
        return Err(Error::DimensionMismatch(format!(
            "objective has {} dimensions, specification has {}",
            objective.ndim(),
            spec.ndim
        )));
    }
    let (mut engine, mut stream) = match restart {
        Some((record, rows)) => {
            let state = *record
                .rng_states
                .first()
                .ok_or_else(|| Error::SpecMismatch("restart record has no random stream".into()))?;
            if record.rng_states.len() != 1 {
                return Err(Error::SpecMismatch(format!(
                    "restart record holds {} ranks, serial run needs 1",
                    record.rng_states.len()
                )));
            }
            (
                Engine::resume(spec, record, rows, sink, observer)?,
                RngStream::restore(state),
            )
        }
        None => {
            let start = check_log_density(&spec.start_point, objective.log_density(&spec.start_point)?)?;
            let mut engine = Engine::fresh(spec, 1, start, sink, observer)?;
            engine.live.proc_id = rank as u32;
            (engine, RngStream::new(spec.random_seed, rank as u64))
        }
    };
    engine.first_rank = rank;

    let stages = spec.delayed_rejection_count;
    let scales = &spec.delayed_rejection_scale_factors;
    let mut rejected: Vec<f64> = Vec::with_capacity(stages + 1);
    while !engine.done() {
        let (current, logf_current) = engine.current();
        let current = current.to_vec();
        rejected.clear();
        let mut center = current;
        let mut accepted = false;
        for stage in 0..=stages {
            let candidate = engine.proposal.propose(&center, stage, scales, &mut stream);
            let u = stream.uniform();
            let logf = if spec.in_domain(&candidate) {
                engine.count_calls(1);
                check_log_density(&candidate, objective.log_density(&candidate)?)?
            } else {
                f64::NEG_INFINITY
            };
            let alpha = if stage == 0 {
                am_accept_prob(logf_current, logf)
            } else {
                dr_accept_prob_symmetric(logf_current, &rejected, logf)?
            };
            if u < alpha {
                engine.accept(candidate, logf, rank, stage)?;
                accepted = true;
                break;
            }
            debug_assert!(logf < logf_current);
            rejected.push(logf);
            center = candidate;
        }
        if !accepted {
            engine.reject();
        }
        let snapshot = stream.state();
        engine.end_step(&mut || Ok(vec![snapshot]))?;
    }
    engine.finish()
}
