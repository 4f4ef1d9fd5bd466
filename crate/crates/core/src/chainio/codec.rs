//! Chain, sample and progress file codecs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kernel::{ChainRow, ChainSink, ProgressSnapshot};
use crate::spec::{fmt_real, parse_real, ChainFileFormat};

const CHAIN_MAGIC: &[u8; 4] = b"PDCH";
const CHAIN_VERSION: u32 = 1;
const CHAIN_COLUMNS: [&str; 6] = [
    "ProcessID",
    "DelayedRejectionStage",
    "MeanAcceptanceRate",
    "AdaptationMeasure",
    "SampleWeight",
    "SampleLogFunc",
];

pub fn chain_header(ndim: usize, delimiter: char) -> String {
    let mut cols: Vec<String> = CHAIN_COLUMNS.iter().map(|s| s.to_string()).collect();
    cols.extend((1..=ndim).map(|i| format!("SampleVariable{i}")));
    cols.join(&delimiter.to_string())
}

pub fn sample_header(ndim: usize, delimiter: char) -> String {
    let mut cols = vec!["SampleLogFunc".to_string()];
    cols.extend((1..=ndim).map(|i| format!("SampleVariable{i}")));
    cols.join(&delimiter.to_string())
}

fn binary_record_len(ndim: usize) -> usize {
    4 + 4 + 8 + 8 + 4 + 8 + 8 * ndim
}

fn text_line(row: &ChainRow, weight: u64, delimiter: char) -> String {
    let mut line = String::with_capacity(32 * (6 + row.coords.len()));
    let d = delimiter;
    line.push_str(&format!(
        "{}{d}{}{d}{}{d}{}{d}{}{d}{}",
        row.proc_id,
        row.dr_stage,
        fmt_real(row.mean_acceptance_rate),
        fmt_real(row.adaptation_measure),
        weight,
        fmt_real(row.log_func)
    ));
    for x in &row.coords {
        line.push(d);
        line.push_str(&fmt_real(*x));
    }
    line.push('\n');
    line
}

fn encode_binary_row(row: &ChainRow, out: &mut Vec<u8>) -> Result<()> {
    let weight = i32::try_from(row.weight)
        .map_err(|_| Error::PreconditionViolation(format!("weight {} overflows i32", row.weight)))?;
    out.extend_from_slice(&(row.proc_id as i32).to_le_bytes());
    out.extend_from_slice(&(row.dr_stage as i32).to_le_bytes());
    out.extend_from_slice(&row.mean_acceptance_rate.to_le_bytes());
    out.extend_from_slice(&row.adaptation_measure.to_le_bytes());
    out.extend_from_slice(&weight.to_le_bytes());
    out.extend_from_slice(&row.log_func.to_le_bytes());
    for x in &row.coords {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(())
}

/// Streams chain rows to a file in any of the three formats.
pub struct ChainWriter {
    format: ChainFileFormat,
    delimiter: char,
    ndim: usize,
    out: BufWriter<File>,
    buf: Vec<u8>,
}

impl ChainWriter {
    pub fn create(path: &Path, format: ChainFileFormat, ndim: usize, delimiter: char) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        match format {
            ChainFileFormat::Binary => {
                out.write_all(CHAIN_MAGIC)?;
                out.write_all(&CHAIN_VERSION.to_le_bytes())?;
                out.write_all(&(ndim as u32).to_le_bytes())?;
            }
            _ => writeln!(out, "{}", chain_header(ndim, delimiter))?,
        }
        Ok(ChainWriter {
            format,
            delimiter,
            ndim,
            out,
            buf: Vec::new(),
        })
    }

    /// Writes a fresh file holding `rows`.
    pub fn rewrite(
        path: &Path,
        format: ChainFileFormat,
        ndim: usize,
        delimiter: char,
        rows: &[ChainRow],
    ) -> Result<Self> {
        let mut w = ChainWriter::create(path, format, ndim, delimiter)?;
        for row in rows {
            w.write_row(row)?;
        }
        w.flush()?;
        Ok(w)
    }
}

impl ChainSink for ChainWriter {
    fn write_row(&mut self, row: &ChainRow) -> Result<()> {
        if row.coords.len() != self.ndim {
            return Err(Error::DimensionMismatch(format!(
                "row has {} coordinates, chain has {}",
                row.coords.len(),
                self.ndim
            )));
        }
        match self.format {
            ChainFileFormat::Compact => self
                .out
                .write_all(text_line(row, row.weight, self.delimiter).as_bytes())?,
            ChainFileFormat::Verbose => {
                let line = text_line(row, 1, self.delimiter);
                for _ in 0..row.weight {
                    self.out.write_all(line.as_bytes())?;
                }
            }
            ChainFileFormat::Binary => {
                self.buf.clear();
                encode_binary_row(row, &mut self.buf)?;
                self.out.write_all(&self.buf)?;
            }
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Rows read back from a chain file.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRead {
    pub ndim: usize,
    pub rows: Vec<ChainRow>,
    /// A partial trailing record or line was ignored.
    pub truncated: bool,
}

/// Reads a chain file, failing on any partial trailing record.
pub fn read_chain(path: &Path, format: ChainFileFormat) -> Result<ChainRead> {
    let read = read_chain_lenient(path, format)?;
    if read.truncated {
        return Err(Error::TruncatedFile(path.to_path_buf()));
    }
    Ok(read)
}

/// Reads a chain file, ignoring a partial trailing record.
pub fn read_chain_lenient(path: &Path, format: ChainFileFormat) -> Result<ChainRead> {
    match format {
        ChainFileFormat::Binary => {
            let mut bytes = Vec::new();
            File::open(path)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(Error::unreadable(path))?;
            read_binary_chain(&bytes, path)
        }
        ChainFileFormat::Compact => read_text_chain(path, false),
        ChainFileFormat::Verbose => read_text_chain(path, true),
    }
}

fn read_binary_chain(bytes: &[u8], path: &Path) -> Result<ChainRead> {
    if bytes.len() < 12 || &bytes[..4] != CHAIN_MAGIC {
        return Err(Error::format(path, "missing binary chain magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHAIN_VERSION {
        return Err(Error::format(path, format!("unsupported chain version {version}")));
    }
    let ndim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let len = binary_record_len(ndim);
    let body = &bytes[12..];
    let f = |b: &[u8], at: usize| f64::from_le_bytes(b[at..at + 8].try_into().unwrap());
    let i = |b: &[u8], at: usize| i32::from_le_bytes(b[at..at + 4].try_into().unwrap());
    let mut rows = Vec::with_capacity(body.len() / len);
    for rec in body.chunks_exact(len) {
        let weight = i(rec, 24);
        if weight < 1 || i(rec, 0) < 1 || i(rec, 4) < 0 {
            return Err(Error::format(path, "invalid binary chain record"));
        }
        rows.push(ChainRow {
            proc_id: i(rec, 0) as u32,
            dr_stage: i(rec, 4) as u32,
            mean_acceptance_rate: f(rec, 8),
            adaptation_measure: f(rec, 16),
            weight: weight as u64,
            log_func: f(rec, 28),
            coords: (0..ndim).map(|k| f(rec, 36 + 8 * k)).collect(),
        });
    }
    Ok(ChainRead {
        ndim,
        rows,
        truncated: !body.len().is_multiple_of(len),
    })
}

/// Infers the delimiter from a header starting with `first_column`.
fn header_delimiter(header: &str, first_column: &str, path: &Path) -> Result<char> {
    header
        .strip_prefix(first_column)
        .and_then(|rest| rest.chars().next())
        .ok_or_else(|| Error::format(path, format!("header must start with `{first_column}`")))
}

fn read_text_chain(path: &Path, merge: bool) -> Result<ChainRead> {
    let text = std::fs::read_to_string(path).map_err(Error::unreadable(path))?;
    let mut lines = text.split_inclusive('\n');
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty chain file"))?
        .trim_end_matches(['\n', '\r']);
    let delimiter = header_delimiter(header, CHAIN_COLUMNS[0], path)?;
    let cols: Vec<&str> = header.split(delimiter).collect();
    if cols.len() < 7 || cols[..6] != CHAIN_COLUMNS {
        return Err(Error::format(path, "unexpected chain header"));
    }
    let ndim = cols.len() - 6;
    if chain_header(ndim, delimiter) != header {
        return Err(Error::format(path, "unexpected chain header"));
    }
    let mut rows: Vec<ChainRow> = Vec::new();
    let mut truncated = false;
    let mut pending = lines.peekable();
    let mut lineno = 1;
    while let Some(line) = pending.next() {
        lineno += 1;
        let complete = line.ends_with('\n');
        let parsed = parse_chain_line(line.trim_end_matches(['\n', '\r']), delimiter, ndim);
        let row = match (parsed, complete, pending.peek().is_none()) {
            (Ok(row), true, _) => row,
            (_, false, true) => {
                truncated = true;
                break;
            }
            (Ok(_), false, false) => unreachable!("only the final line can lack a newline"),
            (Err(m), _, _) => return Err(Error::format(path, format!("line {lineno}: {m}"))),
        };
        if merge {
            if let Some(last) = rows.last_mut() {
                if same_state(last, &row) {
                    last.weight += row.weight;
                    continue;
                }
            }
        }
        rows.push(row);
    }
    Ok(ChainRead { ndim, rows, truncated })
}

fn same_state(a: &ChainRow, b: &ChainRow) -> bool {
    a.proc_id == b.proc_id
        && a.dr_stage == b.dr_stage
        && a.mean_acceptance_rate.to_bits() == b.mean_acceptance_rate.to_bits()
        && a.adaptation_measure.to_bits() == b.adaptation_measure.to_bits()
        && a.log_func.to_bits() == b.log_func.to_bits()
        && a.coords.iter().zip(&b.coords).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn parse_chain_line(line: &str, delimiter: char, ndim: usize) -> std::result::Result<ChainRow, String> {
    let fields: Vec<&str> = line.split(delimiter).collect();
    if fields.len() != 6 + ndim {
        return Err(format!("expected {} fields, found {}", 6 + ndim, fields.len()));
    }
    let int = |s: &str| s.trim().parse::<u64>().map_err(|_| format!("`{s}` is not a count"));
    let weight = int(fields[4])?;
    if weight == 0 {
        return Err("zero weight".into());
    }
    Ok(ChainRow {
        proc_id: int(fields[0])? as u32,
        dr_stage: int(fields[1])? as u32,
        mean_acceptance_rate: parse_real(fields[2])?,
        adaptation_measure: parse_real(fields[3])?,
        weight,
        log_func: parse_real(fields[5])?,
        coords: fields[6..]
            .iter()
            .map(|s| parse_real(s))
            .collect::<std::result::Result<_, _>>()?,
    })
}

/// One point of a refined sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub log_func: f64,
    pub coords: Vec<f64>,
}

pub fn write_sample(path: &Path, ndim: usize, points: &[SamplePoint], delimiter: char) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", sample_header(ndim, delimiter))?;
    for p in points {
        let mut line = fmt_real(p.log_func);
        for x in &p.coords {
            line.push(delimiter);
            line.push_str(&fmt_real(*x));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sample(path: &Path) -> Result<Vec<SamplePoint>> {
    let file = BufReader::new(File::open(path).map_err(Error::unreadable(path))?);
    let mut lines = file.lines();
    let header = lines.next().ok_or_else(|| Error::format(path, "empty sample file"))??;
    let delimiter = if header == "SampleLogFunc" {
        ','
    } else {
        header_delimiter(&header, "SampleLogFunc", path)?
    };
    let ndim = header.split(delimiter).count() - 1;
    if sample_header(ndim, delimiter) != header {
        return Err(Error::format(path, "unexpected sample header"));
    }
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let values = line
            .split(delimiter)
            .map(parse_real)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|m| Error::format(path, format!("line {}: {m}", i + 2)))?;
        if values.len() != ndim + 1 {
            return Err(Error::format(path, format!("line {}: wrong field count", i + 2)));
        }
        points.push(SamplePoint {
            log_func: values[0],
            coords: values[1..].to_vec(),
        });
    }
    Ok(points)
}

pub const PROGRESS_COLUMNS: [&str; 5] = [
    "NumFuncCallTotal",
    "OverallAcceptanceRate",
    "WindowAcceptanceRate",
    "ElapsedSeconds",
    "RemainingSecondsEstimate",
];

/// Appends progress rows.
pub struct ProgressWriter {
    path: PathBuf,
    delimiter: char,
    out: BufWriter<File>,
}

impl ProgressWriter {
    pub fn create(path: &Path, delimiter: char) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", PROGRESS_COLUMNS.join(&delimiter.to_string()))?;
        out.flush()?;
        Ok(ProgressWriter {
            path: path.to_path_buf(),
            delimiter,
            out,
        })
    }

    pub fn append(path: &Path, delimiter: char) -> Result<Self> {
        let file = std::fs::OpenOptions::new().append(true).open(path)?;
        Ok(ProgressWriter {
            path: path.to_path_buf(),
            delimiter,
            out: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, s: &ProgressSnapshot) -> Result<()> {
        let d = self.delimiter;
        writeln!(
            self.out,
            "{}{d}{}{d}{}{d}{}{d}{}",
            s.num_func_calls,
            fmt_real(s.overall_acceptance_rate),
            fmt_real(s.window_acceptance_rate),
            fmt_real(s.elapsed_seconds),
            fmt_real(s.remaining_seconds_estimate)
        )?;
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(i: u64, ndim: usize) -> ChainRow {
        ChainRow {
            proc_id: 1 + (i % 3) as u32,
            dr_stage: (i % 2) as u32,
            mean_acceptance_rate: 1.0 / (i as f64 + 1.5),
            adaptation_measure: (i as f64 * 0.37).fract(),
            weight: 1 + i % 4,
            log_func: -(i as f64).sqrt() - 0.1,
            coords: (0..ndim).map(|k| (i as f64 + 0.1) * (k as f64 - 0.7)).collect(),
        }
    }

    fn write_all(path: &Path, format: ChainFileFormat, rows: &[ChainRow], delimiter: char) {
        let ndim = rows.first().map_or(1, |r| r.coords.len());
        ChainWriter::rewrite(path, format, ndim, delimiter, rows).unwrap();
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            chain_header(2, ','),
            "ProcessID,DelayedRejectionStage,MeanAcceptanceRate,AdaptationMeasure,SampleWeight,SampleLogFunc,SampleVariable1,SampleVariable2"
        );
        assert_eq!(sample_header(1, '\t'), "SampleLogFunc\tSampleVariable1");
    }

    #[test]
    fn verbose_repeats_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        let mut r = row(0, 2);
        r.weight = 5;
        write_all(&path, ChainFileFormat::Verbose, &[r.clone()], ',');
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(lines.len(), 5);
        assert!(lines.iter().all(|l| *l == lines[0]));
        assert_eq!(read_chain(&path, ChainFileFormat::Verbose).unwrap().rows, vec![r]);
    }

    #[test]
    fn compact_expands_to_verbose() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<ChainRow> = (0..20).map(|i| row(i, 3)).collect();
        let c = dir.path().join("c.txt");
        let v = dir.path().join("v.txt");
        write_all(&c, ChainFileFormat::Compact, &rows, ',');
        write_all(&v, ChainFileFormat::Verbose, &rows, ',');
        let compact = std::fs::read_to_string(&c).unwrap();
        let mut expanded = Vec::new();
        for line in compact.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let w: usize = f[4].parse().unwrap();
            let mut g = f.clone();
            g[4] = "1";
            for _ in 0..w {
                expanded.push(g.join(","));
            }
        }
        let verbose: Vec<String> = std::fs::read_to_string(&v)
            .unwrap()
            .lines()
            .skip(1)
            .map(String::from)
            .collect();
        assert_eq!(expanded, verbose);
    }

    #[test]
    fn truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<ChainRow> = (0..5).map(|i| row(i, 2)).collect();
        for format in [ChainFileFormat::Binary, ChainFileFormat::Compact] {
            let path = dir.path().join(format!("c.{}", format.extension()));
            write_all(&path, format, &rows, ',');
            let len = std::fs::metadata(&path).unwrap().len();
            std::fs::OpenOptions::new()
                .write(true)
                .open(&path)
                .unwrap()
                .set_len(len - 3)
                .unwrap();
            assert!(matches!(read_chain(&path, format), Err(Error::TruncatedFile(_))));
            let lenient = read_chain_lenient(&path, format).unwrap();
            assert!(lenient.truncated);
            assert_eq!(lenient.rows, rows[..4]);
        }
    }

    #[test]
    fn bad_magic_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        std::fs::write(&path, b"XXXX\x01\0\0\0\x01\0\0\0").unwrap();
        assert!(matches!(
            read_chain(&path, ChainFileFormat::Binary),
            Err(Error::Format { .. })
        ));
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "a,b,c\n").unwrap();
        assert!(matches!(
            read_chain(&path, ChainFileFormat::Compact),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn sample_round_trip_with_tab() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        let pts: Vec<SamplePoint> = (0..3)
            .map(|i| SamplePoint {
                log_func: -0.1 * i as f64,
                coords: vec![i as f64 / 3.0, -1e-300],
            })
            .collect();
        write_sample(&path, 2, &pts, '\t').unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("SampleLogFunc\tSampleVariable1\tSampleVariable2\n"));
        assert_eq!(read_sample(&path).unwrap(), pts);
        write_sample(&path, 2, &[], ',').unwrap();
        assert!(read_sample(&path).unwrap().is_empty());
    }

    fn arb_row(ndim: usize) -> impl Strategy<Value = ChainRow> {
        (
            1u32..64,
            0u32..5,
            0.0f64..=1.0,
            0.0f64..=1.0,
            1u64..1000,
            -1e300f64..1e3,
            prop::collection::vec(-1e200f64..1e200, ndim),
        )
            .prop_map(|(p, s, m, a, w, l, c)| ChainRow {
                proc_id: p,
                dr_stage: s,
                mean_acceptance_rate: m,
                adaptation_measure: a,
                weight: w,
                log_func: l,
                coords: c,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn codecs_invert(rows in (1usize..4).prop_flat_map(|d| prop::collection::vec(arb_row(d), 0..20))) {
            let dir = tempfile::tempdir().unwrap();
            let ndim = rows.first().map_or(1, |r| r.coords.len());
            let mut distinct: Vec<ChainRow> = Vec::new();
            for r in rows {
                if distinct.last().is_none_or(|l| !same_state(l, &r)) {
                    distinct.push(r);
                }
            }
            for format in [ChainFileFormat::Compact, ChainFileFormat::Verbose, ChainFileFormat::Binary] {
                let path = dir.path().join(format!("c_{}.{}", format.name(), format.extension()));
                ChainWriter::rewrite(&path, format, ndim, ';', &distinct).unwrap();
                let read = read_chain(&path, format).unwrap();
                prop_assert_eq!(read.ndim, ndim);
                prop_assert_eq!(&read.rows, &distinct);
            }
        }
    }
}
