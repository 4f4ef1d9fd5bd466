//! Independent chains, one per rank, cross-checked with two-sample
//! Kolmogorov-Smirnov tests on their refined samples.

use crate::chainio::RestartRecord;
use crate::error::{Error, Result};
use crate::kernel::{run_chain_on_rank, ChainRow, ChainRun, ChainSink, NullObserver, NullSink, RunObserver};
use crate::refine::{ks_two_sample, refine_or_empty, KsResult, RefinedSample};
use crate::spec::SpecSet;
use crate::target::Objective;

use super::fabric::ObjectiveFactory;

/// Pairs whose p-value falls below this are reported as warnings.
pub const KS_WARNING_LEVEL: f64 = 0.01;

/// Two-sample test of coordinate `coordinate` between ranks `rank_a < rank_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsEntry {
    pub rank_a: usize,
    pub rank_b: usize,
    pub coordinate: usize,
    pub result: KsResult,
}

/// All pairwise per-coordinate tests, ordered by `(rank_a, rank_b,
/// coordinate)`. Empty for a single rank.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KsMatrix {
    pub entries: Vec<KsEntry>,
}

impl KsMatrix {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, rank_a: usize, rank_b: usize, coordinate: usize) -> Option<&KsResult> {
        let (a, b) = if rank_a <= rank_b {
            (rank_a, rank_b)
        } else {
            (rank_b, rank_a)
        };
        self.entries
            .iter()
            .find(|e| e.rank_a == a && e.rank_b == b && e.coordinate == coordinate)
            .map(|e| &e.result)
    }

    pub fn min_p_value(&self) -> Option<f64> {
        self.entries.iter().map(|e| e.result.p_value).reduce(f64::min)
    }
}

/// Everything one rank needs to run its chain.
pub struct RankSession<'a> {
    pub objective: Box<dyn Objective>,
    pub sink: Box<dyn ChainSink + Send + 'a>,
    pub observer: Box<dyn RunObserver + Send + 'a>,
    pub restart: Option<(RestartRecord, Vec<ChainRow>)>,
}

#[derive(Debug, Clone)]
pub struct MultiChainRun {
    pub runs: Vec<ChainRun>,
    pub samples: Vec<RefinedSample>,
    pub ks: KsMatrix,
    pub warnings: Vec<String>,
}

/// Pairwise per-coordinate tests between refined samples. Pairs involving a
/// sample too small to test are left out.
pub fn ks_matrix(samples: &[RefinedSample], ndim: usize) -> Result<KsMatrix> {
    let mut entries = Vec::new();
    for a in 0..samples.len() {
        for b in a + 1..samples.len() {
            for coordinate in 0..ndim {
                let column =
                    |s: &RefinedSample| -> Vec<f64> { s.points.iter().map(|p| p.coords[coordinate]).collect() };
                let result = match ks_two_sample(&column(&samples[a]), &column(&samples[b])) {
                    Err(Error::TooShort { .. }) => continue,
                    other => other?,
                };
                entries.push(KsEntry {
                    rank_a: a + 1,
                    rank_b: b + 1,
                    coordinate: coordinate + 1,
                    result,
                });
            }
        }
    }
    Ok(KsMatrix { entries })
}

/// Runs one independent chain per session on its own thread; session `i`
/// is rank `i + 1` and uses stream `(seed, i + 1)`. Each chain is refined
/// and every pair of refined samples is compared coordinate by coordinate.
pub fn run_multi_chain_sessions(spec: &SpecSet, sessions: Vec<RankSession<'_>>) -> Result<MultiChainRun> {
    if sessions.is_empty() {
        return Err(Error::Domain("rank count must be positive".into()));
    }
    let outcomes: Vec<Result<(ChainRun, RefinedSample)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sessions
            .into_iter()
            .enumerate()
            .map(|(i, mut session)| {
                scope.spawn(move || {
                    let restart = session.restart.take();
                    let run = run_chain_on_rank(
                        spec,
                        i + 1,
                        session.objective.as_mut(),
                        session.sink.as_mut(),
                        session.observer.as_mut(),
                        restart.as_ref().map(|(r, rows)| (r, rows.clone())),
                    )?;
                    let sample = refine_or_empty(&run.rows, spec.sample_size)?;
                    Ok((run, sample))
                })
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(i, h)| {
                h.join().unwrap_or_else(|_| {
                    Err(Error::WorkerFailure {
                        rank: i + 1,
                        message: "rank thread panicked".into(),
                    })
                })
            })
            .collect()
    });
    let mut runs = Vec::with_capacity(outcomes.len());
    let mut samples = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        let (run, sample) = outcome?;
        runs.push(run);
        samples.push(sample);
    }
    let ks = ks_matrix(&samples, spec.ndim)?;
    let mut warnings: Vec<String> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| samples.len() > 1 && s.points.len() < 5)
        .map(|(i, s)| {
            format!(
                "rank {} refined sample has {} points; excluded from KS tests",
                i + 1,
                s.points.len()
            )
        })
        .collect();
    warnings.extend(
        ks.entries
            .iter()
            .filter(|e| e.result.p_value < KS_WARNING_LEVEL)
            .map(|e| {
                format!(
                    "refined samples of ranks {} and {} differ in variable {} (KS p-value {:.3e})",
                    e.rank_a, e.rank_b, e.coordinate, e.result.p_value
                )
            }),
    );
    Ok(MultiChainRun {
        runs,
        samples,
        ks,
        warnings,
    })
}

/// In-memory multi-chain run over `np` ranks with objectives from `factory`.
pub fn run_multi_chain(spec: &SpecSet, np: usize, factory: &mut ObjectiveFactory<'_>) -> Result<MultiChainRun> {
    let sessions = (1..=np)
        .map(|rank| {
            Ok(RankSession {
                objective: factory(rank)?,
                sink: Box::new(NullSink),
                observer: Box::new(NullObserver),
                restart: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_multi_chain_sessions(spec, sessions)
}
