//! Rank fabrics: how the master reaches the ranks that draw candidates and
//! evaluate the objective.
//!
//! Every rank owns its random stream and its objective; the master only sees
//! [`Evaluation`]s. Two fabrics implement the same contract, one running the
//! ranks inline and one on dedicated threads, and they produce identical
//! results for the same seed.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread::JoinHandle;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::kernel::check_log_density;
use crate::proposal::ProposalState;
use crate::rng::{RngState, RngStream};
use crate::spec::SpecSet;
use crate::target::Objective;

/// One candidate drawn and evaluated by a rank.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub candidate: Vec<f64>,
    /// `-inf` for candidates outside the domain (not evaluated).
    pub logf: f64,
    pub uniform: f64,
    pub evaluated: bool,
    pub eval_seconds: f64,
}

/// Objectives are created per rank by a factory so that each rank may own a
/// separate evaluator (for example its own child process).
pub type ObjectiveFactory<'a> = dyn FnMut(usize) -> Result<Box<dyn Objective>> + 'a;

pub trait Fabric {
    fn ranks(&self) -> usize;
    fn install_proposal(&mut self, proposal: &ProposalState) -> Result<()>;
    /// Every rank draws one candidate around `centers[rank - 1]` at DR
    /// `stage`; results come back in rank order.
    fn propose(&mut self, centers: &[Vec<f64>], stage: usize) -> Result<Vec<Evaluation>>;
    /// Log-density of the start point, evaluated on rank 1.
    fn evaluate_start(&mut self, point: &[f64]) -> Result<f64>;
    fn rng_states(&mut self) -> Result<Vec<RngState>>;
}

struct RankWorker {
    stream: RngStream,
    objective: Box<dyn Objective>,
    proposal: ProposalState,
    lower: Vec<f64>,
    upper: Vec<f64>,
    dr_scales: Vec<f64>,
}

impl RankWorker {
    fn new(spec: &SpecSet, rank: usize, objective: Box<dyn Objective>, state: Option<RngState>) -> Result<Self> {
        if objective.ndim() != spec.ndim {
            return Err(Error::DimensionMismatch(format!(
                "objective has {} dimensions, specification has {}",
                objective.ndim(),
                spec.ndim
            )));
        }
        Ok(RankWorker {
            stream: match state {
                Some(s) => RngStream::restore(s),
                None => RngStream::new(spec.random_seed, rank as u64),
            },
            objective,
            proposal: ProposalState::from_spec(spec),
            lower: spec.domain_lower.clone(),
            upper: spec.domain_upper.clone(),
            dr_scales: spec.delayed_rejection_scale_factors.clone(),
        })
    }

    fn step(&mut self, center: &[f64], stage: usize) -> Result<Evaluation> {
        let candidate = self.proposal.propose(center, stage, &self.dr_scales, &mut self.stream);
        let uniform = self.stream.uniform();
        let inside = candidate
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi);
        let started = Instant::now();
        let logf = if inside {
            check_log_density(&candidate, self.objective.log_density(&candidate)?)?
        } else {
            f64::NEG_INFINITY
        };
        Ok(Evaluation {
            candidate,
            logf,
            uniform,
            evaluated: inside,
            eval_seconds: started.elapsed().as_secs_f64(),
        })
    }
}

fn rng_states_for(restart: Option<&[RngState]>, np: usize) -> Result<Vec<Option<RngState>>> {
    match restart {
        None => Ok(vec![None; np]),
        Some(states) if states.len() == np => Ok(states.iter().copied().map(Some).collect()),
        Some(states) => Err(Error::SpecMismatch(format!(
            "restart record holds {} rank streams, run uses {np} ranks",
            states.len()
        ))),
    }
}

/// Runs all ranks inline on the calling thread, in rank order.
pub struct LocalFabric {
    workers: Vec<RankWorker>,
}

impl LocalFabric {
    pub fn new(
        spec: &SpecSet,
        np: usize,
        factory: &mut ObjectiveFactory<'_>,
        restart: Option<&[RngState]>,
    ) -> Result<Self> {
        let states = rng_states_for(restart, np)?;
        let workers = (1..=np)
            .zip(states)
            .map(|(rank, state)| RankWorker::new(spec, rank, factory(rank)?, state))
            .collect::<Result<Vec<_>>>()?;
        Ok(LocalFabric { workers })
    }
}

impl Fabric for LocalFabric {
    fn ranks(&self) -> usize {
        self.workers.len()
    }
    fn install_proposal(&mut self, proposal: &ProposalState) -> Result<()> {
        for w in &mut self.workers {
            w.proposal = proposal.clone();
        }
        Ok(())
    }
    fn propose(&mut self, centers: &[Vec<f64>], stage: usize) -> Result<Vec<Evaluation>> {
        self.workers
            .iter_mut()
            .zip(centers)
            .map(|(w, c)| w.step(c, stage))
            .collect()
    }
    fn evaluate_start(&mut self, point: &[f64]) -> Result<f64> {
        self.workers[0].objective.log_density(point)
    }
    fn rng_states(&mut self) -> Result<Vec<RngState>> {
        Ok(self.workers.iter().map(|w| w.stream.state()).collect())
    }
}

enum Command {
    Install(ProposalState),
    Propose(Vec<f64>, usize),
    Evaluate(Vec<f64>),
    State,
}

enum Reply {
    Evaluation(Result<Evaluation>),
    Value(Result<f64>),
    State(RngState),
}

struct RankHandle {
    commands: Sender<Command>,
    replies: Receiver<Reply>,
    thread: Option<JoinHandle<()>>,
}

/// One OS thread per rank, driven by message passing.
pub struct ThreadFabric {
    ranks: Vec<RankHandle>,
}

impl ThreadFabric {
    pub fn new(
        spec: &SpecSet,
        np: usize,
        factory: &mut ObjectiveFactory<'_>,
        restart: Option<&[RngState]>,
    ) -> Result<Self> {
        let states = rng_states_for(restart, np)?;
        let mut ranks = Vec::with_capacity(np);
        for (rank, state) in (1..=np).zip(states) {
            let mut worker = RankWorker::new(spec, rank, factory(rank)?, state)?;
            let (command_tx, command_rx) = channel::<Command>();
            let (reply_tx, reply_rx) = channel::<Reply>();
            let thread = std::thread::Builder::new()
                .name(format!("rank-{rank}"))
                .spawn(move || {
                    for command in command_rx {
                        let reply = match command {
                            Command::Install(p) => {
                                worker.proposal = p;
                                continue;
                            }
                            Command::Propose(center, stage) => Reply::Evaluation(worker.step(&center, stage)),
                            Command::Evaluate(point) => Reply::Value(worker.objective.log_density(&point)),
                            Command::State => Reply::State(worker.stream.state()),
                        };
                        if reply_tx.send(reply).is_err() {
                            break;
                        }
                    }
                })?;
            ranks.push(RankHandle {
                commands: command_tx,
                replies: reply_rx,
                thread: Some(thread),
            });
        }
        Ok(ThreadFabric { ranks })
    }

    fn send(&self, rank: usize, command: Command) -> Result<()> {
        self.ranks[rank]
            .commands
            .send(command)
            .map_err(|_| Error::WorkerFailure {
                rank: rank + 1,
                message: "rank thread is gone".into(),
            })
    }

    fn receive(&self, rank: usize) -> Result<Reply> {
        self.ranks[rank].replies.recv().map_err(|_| Error::WorkerFailure {
            rank: rank + 1,
            message: "rank thread stopped without replying".into(),
        })
    }
}

impl Drop for ThreadFabric {
    fn drop(&mut self) {
        for r in &mut self.ranks {
            // Closing the command channel ends the worker loop.
            let (tx, _) = channel();
            drop(std::mem::replace(&mut r.commands, tx));
            if let Some(t) = r.thread.take() {
                let _ = t.join();
            }
        }
    }
}

impl Fabric for ThreadFabric {
    fn ranks(&self) -> usize {
        self.ranks.len()
    }
    fn install_proposal(&mut self, proposal: &ProposalState) -> Result<()> {
        for r in 0..self.ranks.len() {
            self.send(r, Command::Install(proposal.clone()))?;
        }
        Ok(())
    }
    fn propose(&mut self, centers: &[Vec<f64>], stage: usize) -> Result<Vec<Evaluation>> {
        for (r, c) in centers.iter().enumerate() {
            self.send(r, Command::Propose(c.clone(), stage))?;
        }
        let mut out = Vec::with_capacity(centers.len());
        let mut first_error = None;
        for r in 0..centers.len() {
            match self.receive(r)? {
                Reply::Evaluation(Ok(e)) => out.push(e),
                Reply::Evaluation(Err(e)) => {
                    first_error.get_or_insert(e);
                }
                _ => {
                    return Err(Error::WorkerFailure {
                        rank: r + 1,
                        message: "unexpected reply".into(),
                    })
                }
            }
        }
        match first_error {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
    fn evaluate_start(&mut self, point: &[f64]) -> Result<f64> {
        self.send(0, Command::Evaluate(point.to_vec()))?;
        match self.receive(0)? {
            Reply::Value(v) => v,
            _ => Err(Error::WorkerFailure {
                rank: 1,
                message: "unexpected reply".into(),
            }),
        }
    }
    fn rng_states(&mut self) -> Result<Vec<RngState>> {
        (0..self.ranks.len())
            .map(|r| {
                self.send(r, Command::State)?;
                match self.receive(r)? {
                    Reply::State(s) => Ok(s),
                    _ => Err(Error::WorkerFailure {
                        rank: r + 1,
                        message: "unexpected reply".into(),
                    }),
                }
            })
            .collect()
    }
}
