//! Restart records: everything needed to continue a run bitwise-identically.
//!
//! Both encodings append one record per checkpoint; the last complete record
//! wins and a torn tail is ignored.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::ChainRow;
use crate::proposal::{ProposalState, RunningMoments};
use crate::rng::RngState;
use crate::spec::{fmt_real, parse_real, RestartFileFormat, SpecSet};

const MAGIC: &[u8; 4] = b"PDRS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RestartRecord {
    pub ndim: usize,
    pub process_count: usize,
    pub chain_size: u64,
    pub seed: u64,
    pub verbose_count: u64,
    /// Number of finalized rows (the live row excluded).
    pub compact_count: u64,
    pub num_func_calls: u64,
    pub adaptations_done: u64,
    /// Verbose and accepted counters when the current adaptation window began.
    pub window_verbose: u64,
    pub window_accepted: u64,
    pub next_progress_at: u64,
    pub proposal: ProposalState,
    pub moments: RunningMoments,
    pub rng_states: Vec<RngState>,
    pub per_rank_acceptances: Vec<u64>,
    pub live_row: ChainRow,
}

impl RestartRecord {
    /// Rejects a record written under a different configuration.
    pub fn check_compatible(&self, spec: &SpecSet, process_count: usize) -> Result<()> {
        let mut problems = Vec::new();
        if self.ndim != spec.ndim {
            problems.push(format!("ndim {} vs {}", self.ndim, spec.ndim));
        }
        if self.chain_size != spec.chain_size {
            problems.push(format!("chainSize {} vs {}", self.chain_size, spec.chain_size));
        }
        if self.seed != spec.random_seed {
            problems.push(format!("randomSeed {} vs {}", self.seed, spec.random_seed));
        }
        if self.process_count != process_count {
            problems.push(format!("processCount {} vs {process_count}", self.process_count));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::SpecMismatch(format!(
                "restart record disagrees with the current run: {}",
                problems.join(", ")
            )))
        }
    }
}

/// Outcome of reading a restart file.
#[derive(Debug, Clone)]
pub struct RestartRead {
    pub record: RestartRecord,
    /// Number of complete records in the file.
    pub records: usize,
    /// A partial trailing record was skipped.
    pub torn_tail: bool,
}

/// Appends checkpoints to a restart file.
pub struct RestartWriter {
    path: PathBuf,
    format: RestartFileFormat,
    out: BufWriter<File>,
}

impl RestartWriter {
    /// Creates the file, truncating any previous content.
    pub fn create(path: &Path, format: RestartFileFormat) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        if format == RestartFileFormat::Binary {
            out.write_all(MAGIC)?;
            out.write_all(&VERSION.to_le_bytes())?;
        }
        out.flush()?;
        Ok(RestartWriter {
            path: path.to_path_buf(),
            format,
            out,
        })
    }

    /// Opens an existing file for further checkpoints, dropping any torn tail.
    pub fn append(path: &Path, format: RestartFileFormat) -> Result<Self> {
        let valid = match format {
            RestartFileFormat::Binary => binary_valid_length(&std::fs::read(path)?, path)?,
            RestartFileFormat::Ascii => ascii_valid_length(&std::fs::read_to_string(path)?),
        };
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(valid as u64)?;
        let mut file = OpenOptions::new().append(true).open(path)?;
        file.flush()?;
        Ok(RestartWriter {
            path: path.to_path_buf(),
            format,
            out: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, record: &RestartRecord) -> Result<()> {
        match self.format {
            RestartFileFormat::Binary => {
                let payload = encode_binary(record);
                let len = (payload.len() as u64).to_le_bytes();
                self.out.write_all(&len)?;
                self.out.write_all(&payload)?;
                self.out.write_all(&len)?;
            }
            RestartFileFormat::Ascii => self.out.write_all(encode_ascii(record).as_bytes())?,
        }
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_restart(path: &Path, format: RestartFileFormat) -> Result<RestartRead> {
    match format {
        RestartFileFormat::Binary => {
            let mut bytes = Vec::new();
            File::open(path)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(Error::unreadable(path))?;
            read_binary(&bytes, path)
        }
        RestartFileFormat::Ascii => read_ascii(&std::fs::read_to_string(path).map_err(Error::unreadable(path))?, path),
    }
}

struct Encoder(Vec<u8>);

impl Encoder {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }
}

fn encode_binary(r: &RestartRecord) -> Vec<u8> {
    let mut e = Encoder(Vec::new());
    for v in [
        r.ndim as u64,
        r.process_count as u64,
        r.chain_size,
        r.seed,
        r.verbose_count,
        r.compact_count,
        r.num_func_calls,
        r.adaptations_done,
        r.window_verbose,
        r.window_accepted,
        r.next_progress_at,
    ] {
        e.u64(v);
    }
    e.f64(r.proposal.scale);
    e.u64(r.proposal.version);
    e.f64(r.proposal.last_adaptation_measure);
    e.f64s(r.proposal.chol.as_slice());
    e.u64(r.moments.total_weight);
    e.f64s(&r.moments.mean);
    e.f64s(r.moments.scatter.as_slice());
    e.u64(r.rng_states.len() as u64);
    for s in &r.rng_states {
        e.u64(s.seed);
        e.u64(s.stream_id);
        e.u128(s.counter);
    }
    e.u64(r.per_rank_acceptances.len() as u64);
    for c in &r.per_rank_acceptances {
        e.u64(*c);
    }
    let row = &r.live_row;
    e.u64(row.proc_id as u64);
    e.u64(row.dr_stage as u64);
    e.f64(row.mean_acceptance_rate);
    e.f64(row.adaptation_measure);
    e.u64(row.weight);
    e.f64(row.log_func);
    e.f64s(&row.coords);
    e.0
}

struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(out)
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn u128(&mut self) -> Option<u128> {
        Some(u128::from_le_bytes(self.take(16)?.try_into().ok()?))
    }
    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn count(&mut self) -> Option<usize> {
        let n = self.u64()? as usize;
        // Each counted item occupies at least eight bytes.
        (n <= (self.bytes.len() - self.pos) / 8).then_some(n)
    }
}

fn decode_binary(payload: &[u8]) -> Option<RestartRecord> {
    let mut d = Decoder { bytes: payload, pos: 0 };
    let ndim = d.count()?;
    let process_count = d.u64()? as usize;
    let chain_size = d.u64()?;
    let seed = d.u64()?;
    let verbose_count = d.u64()?;
    let compact_count = d.u64()?;
    let num_func_calls = d.u64()?;
    let adaptations_done = d.u64()?;
    let window_verbose = d.u64()?;
    let window_accepted = d.u64()?;
    let next_progress_at = d.u64()?;
    let scale = d.f64()?;
    let version = d.u64()?;
    let last_adaptation_measure = d.f64()?;
    let chol = DMatrix::from_column_slice(ndim, ndim, &d.f64s(ndim * ndim)?);
    let total_weight = d.u64()?;
    let mean = d.f64s(ndim)?;
    let scatter = DMatrix::from_column_slice(ndim, ndim, &d.f64s(ndim * ndim)?);
    let nstates = d.count()?;
    let mut rng_states = Vec::with_capacity(nstates);
    for _ in 0..nstates {
        rng_states.push(RngState {
            seed: d.u64()?,
            stream_id: d.u64()?,
            counter: d.u128()?,
        });
    }
    let nranks = d.count()?;
    let per_rank_acceptances = (0..nranks).map(|_| d.u64()).collect::<Option<Vec<_>>>()?;
    let live_row = ChainRow {
        proc_id: d.u64()? as u32,
        dr_stage: d.u64()? as u32,
        mean_acceptance_rate: d.f64()?,
        adaptation_measure: d.f64()?,
        weight: d.u64()?,
        log_func: d.f64()?,
        coords: d.f64s(ndim)?,
    };
    (d.pos == payload.len()).then_some(RestartRecord {
        ndim,
        process_count,
        chain_size,
        seed,
        verbose_count,
        compact_count,
        num_func_calls,
        adaptations_done,
        window_verbose,
        window_accepted,
        next_progress_at,
        proposal: ProposalState {
            ndim,
            chol,
            scale,
            version,
            last_adaptation_measure,
        },
        moments: RunningMoments {
            total_weight,
            mean,
            scatter,
        },
        rng_states,
        per_rank_acceptances,
        live_row,
    })
}

/// Walks the framed records; returns the byte offset after the last complete
/// one, the payloads and whether trailing bytes were left over.
fn binary_frames<'a>(bytes: &'a [u8], path: &Path) -> Result<(usize, Vec<&'a [u8]>, bool)> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "missing restart file magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported restart version {version}")));
    }
    let mut pos = 8;
    let mut frames = Vec::new();
    loop {
        let Some(head) = bytes.get(pos..pos + 8) else { break };
        let len = u64::from_le_bytes(head.try_into().unwrap()) as usize;
        let end = pos.saturating_add(16).saturating_add(len);
        let Some(frame) = bytes.get(pos..end) else { break };
        let tail = u64::from_le_bytes(frame[8 + len..].try_into().unwrap()) as usize;
        if tail != len {
            break;
        }
        frames.push(&frame[8..8 + len]);
        pos = end;
    }
    Ok((pos, frames, pos != bytes.len()))
}

fn binary_valid_length(bytes: &[u8], path: &Path) -> Result<usize> {
    Ok(binary_frames(bytes, path)?.0)
}

fn read_binary(bytes: &[u8], path: &Path) -> Result<RestartRead> {
    let (_, frames, torn_tail) = binary_frames(bytes, path)?;
    let records = frames.len();
    let record = frames
        .last()
        .and_then(|p| decode_binary(p))
        .ok_or_else(|| Error::Corrupt(path.to_path_buf()))?;
    Ok(RestartRead {
        record,
        records,
        torn_tail,
    })
}

const BEGIN: &str = "BEGIN RESTART RECORD";
const END: &str = "END RESTART RECORD";

fn join_reals(v: &[f64]) -> String {
    v.iter().map(|x| fmt_real(*x)).collect::<Vec<_>>().join(" ")
}

fn encode_ascii(r: &RestartRecord) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v);
        s.push('\n');
    };
    kv("ndim", r.ndim.to_string());
    kv("processCount", r.process_count.to_string());
    kv("chainSize", r.chain_size.to_string());
    kv("randomSeed", r.seed.to_string());
    kv("verboseCount", r.verbose_count.to_string());
    kv("compactCount", r.compact_count.to_string());
    kv("numFuncCalls", r.num_func_calls.to_string());
    kv("adaptationsDone", r.adaptations_done.to_string());
    kv("windowVerbose", r.window_verbose.to_string());
    kv("windowAccepted", r.window_accepted.to_string());
    kv("nextProgressAt", r.next_progress_at.to_string());
    kv("proposalVersion", r.proposal.version.to_string());
    kv("proposalScale", fmt_real(r.proposal.scale));
    kv("adaptationMeasure", fmt_real(r.proposal.last_adaptation_measure));
    kv("proposalMean", join_reals(&r.moments.mean));
    let cov = r.proposal.covariance() * (r.proposal.scale * r.proposal.scale);
    kv("proposalCovariance", join_reals(cov.transpose().as_slice()));
    kv("proposalCholesky", join_reals(r.proposal.chol.as_slice()));
    kv("momentsWeight", r.moments.total_weight.to_string());
    kv("momentsMean", join_reals(&r.moments.mean));
    kv("momentsScatter", join_reals(r.moments.scatter.as_slice()));
    kv(
        "rngStates",
        r.rng_states
            .iter()
            .map(|s| format!("{}:{}:{}", s.seed, s.stream_id, s.counter))
            .collect::<Vec<_>>()
            .join(" "),
    );
    kv(
        "perRankAcceptances",
        r.per_rank_acceptances
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(" "),
    );
    let row = &r.live_row;
    kv("liveProcessID", row.proc_id.to_string());
    kv("liveDelayedRejectionStage", row.dr_stage.to_string());
    kv("liveMeanAcceptanceRate", fmt_real(row.mean_acceptance_rate));
    kv("liveAdaptationMeasure", fmt_real(row.adaptation_measure));
    kv("liveSampleWeight", row.weight.to_string());
    kv("liveSampleLogFunc", fmt_real(row.log_func));
    kv("liveSampleVariables", join_reals(&row.coords));
    format!("{BEGIN}\n{s}{END}\n")
}

fn ascii_valid_length(text: &str) -> usize {
    let mut valid = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        offset += line.len();
        if line.trim_end() == END && line.ends_with('\n') {
            valid = offset;
        }
    }
    valid
}

fn decode_ascii(block: &str) -> std::result::Result<RestartRecord, String> {
    let mut map = std::collections::HashMap::new();
    for line in block.lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim(), v.trim());
        }
    }
    let get = |k: &str| map.get(k).copied().ok_or(format!("missing key `{k}`"));
    let int =
        |k: &str| -> std::result::Result<u64, String> { get(k)?.parse::<u64>().map_err(|e| format!("`{k}`: {e}")) };
    let real = |k: &str| parse_real(get(k)?);
    let reals = |k: &str, n: usize| -> std::result::Result<Vec<f64>, String> {
        let v = get(k)?
            .split_whitespace()
            .map(parse_real)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if v.len() != n {
            return Err(format!("`{k}` holds {} values, expected {n}", v.len()));
        }
        Ok(v)
    };
    let ndim = int("ndim")? as usize;
    let rng_states = get("rngStates")?
        .split_whitespace()
        .map(|t| {
            let parts: Vec<&str> = t.split(':').collect();
            match parts.as_slice() {
                [a, b, c] => Ok(RngState {
                    seed: a.parse().map_err(|_| format!("bad rng state `{t}`"))?,
                    stream_id: b.parse().map_err(|_| format!("bad rng state `{t}`"))?,
                    counter: c.parse().map_err(|_| format!("bad rng state `{t}`"))?,
                }),
                _ => Err(format!("bad rng state `{t}`")),
            }
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let per_rank_acceptances = get("perRankAcceptances")?
        .split_whitespace()
        .map(|t| t.parse::<u64>().map_err(|_| format!("bad count `{t}`")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(RestartRecord {
        ndim,
        process_count: int("processCount")? as usize,
        chain_size: int("chainSize")?,
        seed: int("randomSeed")?,
        verbose_count: int("verboseCount")?,
        compact_count: int("compactCount")?,
        num_func_calls: int("numFuncCalls")?,
        adaptations_done: int("adaptationsDone")?,
        window_verbose: int("windowVerbose")?,
        window_accepted: int("windowAccepted")?,
        next_progress_at: int("nextProgressAt")?,
        proposal: ProposalState {
            ndim,
            chol: DMatrix::from_column_slice(ndim, ndim, &reals("proposalCholesky", ndim * ndim)?),
            scale: real("proposalScale")?,
            version: int("proposalVersion")?,
            last_adaptation_measure: real("adaptationMeasure")?,
        },
        moments: RunningMoments {
            total_weight: int("momentsWeight")?,
            mean: reals("momentsMean", ndim)?,
            scatter: DMatrix::from_column_slice(ndim, ndim, &reals("momentsScatter", ndim * ndim)?),
        },
        rng_states,
        per_rank_acceptances,
        live_row: ChainRow {
            proc_id: int("liveProcessID")? as u32,
            dr_stage: int("liveDelayedRejectionStage")? as u32,
            mean_acceptance_rate: real("liveMeanAcceptanceRate")?,
            adaptation_measure: real("liveAdaptationMeasure")?,
            weight: int("liveSampleWeight")?,
            log_func: real("liveSampleLogFunc")?,
            coords: reals("liveSampleVariables", ndim)?,
        },
    })
}

fn read_ascii(text: &str, path: &Path) -> Result<RestartRead> {
    let valid = ascii_valid_length(text);
    let torn_tail = !text[valid..].trim().is_empty();
    let mut blocks = Vec::new();
    let mut current: Option<String> = None;
    for line in text[..valid].lines() {
        match line.trim_end() {
            BEGIN => current = Some(String::new()),
            END => {
                if let Some(b) = current.take() {
                    blocks.push(b);
                }
            }
            other => {
                if let Some(b) = current.as_mut() {
                    b.push_str(other);
                    b.push('\n');
                }
            }
        }
    }
    let records = blocks.len();
    let last = blocks.last().ok_or_else(|| Error::Corrupt(path.to_path_buf()))?;
    let record = decode_ascii(last).map_err(|m| Error::format(path, m))?;
    Ok(RestartRead {
        record,
        records,
        torn_tail,
    })
}
