//! Single-chain fork-join sampling: every rank proposes each round, the
//! master commits the first acceptance in rank order.

use std::time::Instant;

use crate::chainio::RestartRecord;
use crate::error::{Error, Result};
use crate::kernel::{am_accept_prob, dr_accept_prob_symmetric, ChainRow, ChainRun, ChainSink, Engine, RunObserver};
use crate::spec::SpecSet;

use super::fabric::{Fabric, LocalFabric, ObjectiveFactory, ThreadFabric};
use super::model::{fit_effective_acceptance, predict_speedup, SpeedupPrediction};

/// How ranks are mapped onto the machine. Results do not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FabricKind {
    /// All ranks run inline on the calling thread.
    #[default]
    Local,
    /// One thread per rank.
    Threads,
}

/// Per-rank contributions, fitted effective acceptance and predicted speedup.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    /// Accepted states attributed to each rank; the start point counts for
    /// rank 1.
    pub contribution_counts: Vec<u64>,
    pub effective_acceptance_rate: f64,
    /// Mean wall time of one objective call, seconds.
    pub measured_tp: f64,
    /// Per-rank communication overhead, seconds; `None` for one rank.
    pub measured_to: Option<f64>,
    /// Master-only time per verbose step, seconds.
    pub measured_ts: f64,
    /// `None` when the timings do not admit a prediction.
    pub prediction: Option<SpeedupPrediction>,
}

#[derive(Debug, Clone)]
pub struct ForkJoinRun {
    pub run: ChainRun,
    pub scaling: ScalingReport,
}

#[derive(Default)]
struct Timing {
    eval_seconds: f64,
    evaluations: u64,
    round_seconds: f64,
    rounds: u64,
    master_seconds: f64,
    steps: u64,
}

/// Fork-join chain over `np` ranks; rank `r` owns stream `(seed, r)` and the
/// objective `factory(r)`.
///
/// Each verbose step every rank draws a candidate around the current state
/// and the master scans the results in rank order; the first acceptance is
/// committed and attributed to its rank. When all reject, each rank takes a
/// delayed-rejection step against its own rejected candidates, again scanned
/// in rank order. With `np = 1` the chain equals the serial chain bit for
/// bit.
pub fn run_fork_join(
    spec: &SpecSet,
    np: usize,
    fabric: FabricKind,
    factory: &mut ObjectiveFactory<'_>,
    sink: &mut dyn ChainSink,
    observer: &mut dyn RunObserver,
    restart: Option<(&RestartRecord, Vec<ChainRow>)>,
) -> Result<ForkJoinRun> {
    if np == 0 {
        return Err(Error::Domain("rank count must be positive".into()));
    }
    let states = restart.as_ref().map(|(r, _)| r.rng_states.as_slice());
    let mut fabric: Box<dyn Fabric> = match fabric {
        FabricKind::Local => Box::new(LocalFabric::new(spec, np, factory, states)?),
        FabricKind::Threads => Box::new(ThreadFabric::new(spec, np, factory, states)?),
    };
    let mut engine = match restart {
        Some((record, rows)) => {
            if record.per_rank_acceptances.len() != np {
                return Err(Error::SpecMismatch(format!(
                    "restart record was written by {} ranks, run uses {np}",
                    record.per_rank_acceptances.len()
                )));
            }
            Engine::resume(spec, record, rows, sink, observer)?
        }
        None => {
            let start = fabric.evaluate_start(&spec.start_point)?;
            let start = crate::kernel::check_log_density(&spec.start_point, start)?;
            Engine::fresh(spec, np, start, sink, observer)?
        }
    };
    fabric.install_proposal(&engine.proposal)?;

    let stages = spec.delayed_rejection_count;
    let mut timing = Timing::default();
    let mut histories: Vec<Vec<f64>> = vec![Vec::with_capacity(stages + 1); np];
    while !engine.done() {
        let step_started = Instant::now();
        let mut fabric_seconds = 0.0;
        let (current, logf_current) = engine.current();
        let mut centers = vec![current.to_vec(); np];
        histories.iter_mut().for_each(Vec::clear);
        let mut accepted = false;
        for stage in 0..=stages {
            let round_started = Instant::now();
            let evaluations = fabric.propose(&centers, stage)?;
            let round = round_started.elapsed().as_secs_f64();
            fabric_seconds += round;
            timing.round_seconds += round;
            timing.rounds += 1;
            let evaluated = evaluations.iter().filter(|e| e.evaluated).count() as u64;
            timing.evaluations += evaluated;
            timing.eval_seconds += evaluations
                .iter()
                .filter(|e| e.evaluated)
                .map(|e| e.eval_seconds)
                .sum::<f64>();
            engine.count_calls(evaluated);

            let mut winner = None;
            for (r, e) in evaluations.iter().enumerate() {
                let alpha = if stage == 0 {
                    am_accept_prob(logf_current, e.logf)
                } else {
                    dr_accept_prob_symmetric(logf_current, &histories[r], e.logf)?
                };
                if e.uniform < alpha {
                    winner = Some(r);
                    break;
                }
            }
            if let Some(r) = winner {
                let e = evaluations.into_iter().nth(r).expect("winner index in range");
                engine.accept(e.candidate, e.logf, r + 1, stage)?;
                accepted = true;
                break;
            }
            for (r, e) in evaluations.into_iter().enumerate() {
                histories[r].push(e.logf);
                centers[r] = e.candidate;
            }
        }
        if !accepted {
            engine.reject();
        }
        let fabric_ref = &mut fabric;
        let changed = engine.end_step(&mut || fabric_ref.rng_states())?;
        if changed {
            fabric.install_proposal(&engine.proposal)?;
        }
        timing.master_seconds += step_started.elapsed().as_secs_f64() - fabric_seconds;
        timing.steps += 1;
    }
    let run = engine.finish()?;
    let scaling = scaling_report(&run, np, &timing)?;
    Ok(ForkJoinRun { run, scaling })
}

fn scaling_report(run: &ChainRun, np: usize, timing: &Timing) -> Result<ScalingReport> {
    let counts = run.stats.per_rank_acceptances.clone();
    let alpha = fit_effective_acceptance(&counts)?;
    let tp = if timing.evaluations > 0 {
        timing.eval_seconds / timing.evaluations as f64
    } else {
        0.0
    };
    let to = if np >= 2 && timing.rounds > 0 {
        let round = timing.round_seconds / timing.rounds as f64;
        Some(((round - tp) / (np - 1) as f64).max(0.0))
    } else {
        None
    };
    let ts = if timing.steps > 0 {
        (timing.master_seconds / timing.steps as f64).max(0.0)
    } else {
        0.0
    };
    let prediction = if tp > 0.0 {
        Some(predict_speedup(ts, tp, to.unwrap_or(0.0), alpha, (2 * np).max(64))?)
    } else {
        None
    };
    Ok(ScalingReport {
        contribution_counts: counts,
        effective_acceptance_rate: alpha,
        measured_tp: tp,
        measured_to: to,
        measured_ts: ts,
        prediction,
    })
}
