//! Objective functions served by a child process over a line protocol.
//!
//! The parent writes one line per evaluation holding the point as
//! tab-separated reals with 17 significant digits. The child answers one
//! line with the natural log of the density, either a decimal number or the
//! token `-inf`. Closing the child's input ends the session.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::time::{Duration, Instant};

use paradram::{Error, Objective, Result};

pub struct ExternalObjective {
    ndim: usize,
    program: PathBuf,
    child: Child,
    input: Option<BufWriter<ChildStdin>>,
    output: BufReader<ChildStdout>,
    line: String,
    request: String,
}

/// Formats one request line (without the newline).
pub fn encode_point(point: &[f64], out: &mut String) {
    use std::fmt::Write as _;
    out.clear();
    for (i, x) in point.iter().enumerate() {
        if i > 0 {
            out.push('\t');
        }
        let _ = write!(out, "{x:.16e}");
    }
}

/// Parses one reply line.
pub fn decode_reply(reply: &str) -> std::result::Result<f64, String> {
    let t = reply.trim();
    if t == "-inf" {
        return Ok(f64::NEG_INFINITY);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!(
            "protocol violation: reply `{t}` is neither a finite number nor `-inf`"
        )),
    }
}

impl ExternalObjective {
    pub fn spawn(program: &Path, ndim: usize) -> Result<Self> {
        let mut child = Command::new(program)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Objective {
                point: Vec::new(),
                message: format!("cannot start `{}`: {e}", program.display()),
            })?;
        let input = child.stdin.take().map(BufWriter::new);
        let output = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ExternalObjective {
            ndim,
            program: program.to_path_buf(),
            child,
            input,
            output,
            line: String::new(),
            request: String::new(),
        })
    }

    /// Waits up to one second for the child to exit so its status can be
    /// reported.
    fn crashed(&mut self, point: &[f64]) -> Error {
        let deadline = Instant::now() + Duration::from_secs(1);
        let status = loop {
            match self.child.try_wait() {
                Ok(Some(status)) => break status.to_string(),
                Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(5)),
                _ => break "closed its output".to_string(),
            }
        };
        Error::Objective {
            point: point.to_vec(),
            message: format!("child process `{}` {status}", self.program.display()),
        }
    }
}

impl Objective for ExternalObjective {
    fn ndim(&self) -> usize {
        self.ndim
    }

    fn log_density(&mut self, point: &[f64]) -> Result<f64> {
        encode_point(point, &mut self.request);
        self.request.push('\n');
        let sent = match self.input.as_mut() {
            Some(w) => w.write_all(self.request.as_bytes()).and_then(|_| w.flush()).is_ok(),
            None => false,
        };
        if !sent {
            return Err(self.crashed(point));
        }
        self.line.clear();
        match self.output.read_line(&mut self.line) {
            Ok(0) | Err(_) => Err(self.crashed(point)),
            Ok(_) => decode_reply(&self.line).map_err(|message| Error::Objective {
                point: point.to_vec(),
                message,
            }),
        }
    }
}

impl Drop for ExternalObjective {
    fn drop(&mut self) {
        drop(self.input.take());
        let _ = self.child.wait();
    }
}
