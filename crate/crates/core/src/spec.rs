//! Simulation specification: parsing, defaults and validation.
//!
//! The on-disk form is one `key = value` pair per line. `#` starts a comment
//! (outside double quotes), keys are case-insensitive and vectors are lists
//! separated by commas and/or whitespace. A single-element vector is
//! broadcast to every dimension. Reals are written with 17 significant
//! digits so a serialized specification parses back to identical bits.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainFileFormat {
    Compact,
    Verbose,
    Binary,
}

impl ChainFileFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ChainFileFormat::Binary => "bin",
            _ => "txt",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChainFileFormat::Compact => "compact",
            ChainFileFormat::Verbose => "verbose",
            ChainFileFormat::Binary => "binary",
        }
    }
}

impl FromStr for ChainFileFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "compact" => Ok(ChainFileFormat::Compact),
            "verbose" => Ok(ChainFileFormat::Verbose),
            "binary" => Ok(ChainFileFormat::Binary),
            other => Err(format!("unknown chain file format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestartFileFormat {
    Binary,
    Ascii,
}

impl RestartFileFormat {
    pub fn extension(self) -> &'static str {
        match self {
            RestartFileFormat::Binary => "bin",
            RestartFileFormat::Ascii => "txt",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RestartFileFormat::Binary => "binary",
            RestartFileFormat::Ascii => "ascii",
        }
    }
}

impl FromStr for RestartFileFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(RestartFileFormat::Binary),
            "ascii" => Ok(RestartFileFormat::Ascii),
            other => Err(format!("unknown restart file format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParallelismModel {
    SingleChain,
    MultiChain,
}

impl ParallelismModel {
    pub fn name(self) -> &'static str {
        match self {
            ParallelismModel::SingleChain => "singleChain",
            ParallelismModel::MultiChain => "multiChain",
        }
    }
}

impl FromStr for ParallelismModel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "singlechain" => Ok(ParallelismModel::SingleChain),
            "multichain" => Ok(ParallelismModel::MultiChain),
            other => Err(format!("unknown parallelism model `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleRefinementMethod {
    BatchMeans,
}

impl FromStr for SampleRefinementMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "batchmeans" => Ok(SampleRefinementMethod::BatchMeans),
            other => Err(format!("unknown sample refinement method `{other}`")),
        }
    }
}

/// Validated simulation configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecSet {
    pub description: String,
    /// Empty means "generate a timestamped prefix".
    pub output_prefix: String,
    pub ndim: usize,
    pub chain_size: u64,
    /// `-1` lets refinement decide the final sample size.
    pub sample_size: i64,
    pub random_seed: u64,
    pub start_point: Vec<f64>,
    pub domain_lower: Vec<f64>,
    pub domain_upper: Vec<f64>,
    pub proposal_start_std: Vec<f64>,
    pub scale_factor: f64,
    pub adaptation_period: u64,
    /// `-1` means unlimited.
    pub adaptation_count: i64,
    pub delayed_rejection_count: usize,
    pub delayed_rejection_scale_factors: Vec<f64>,
    pub target_acceptance_rate: Option<f64>,
    pub chain_file_format: ChainFileFormat,
    pub restart_file_format: RestartFileFormat,
    pub output_delimiter: char,
    pub parallelism_model: ParallelismModel,
    pub process_count: usize,
    pub sample_refinement_method: SampleRefinementMethod,
    pub progress_report_period: u64,
    pub overwrite_requested: bool,
}

/// Result of [`validate_spec`]: the configuration plus diagnostics.
#[derive(Debug, Clone)]
pub struct ValidatedSpec {
    pub spec: SpecSet,
    pub warnings: Vec<String>,
    /// Canonical names of keys that were filled in with defaults.
    pub defaulted: Vec<&'static str>,
}

impl ValidatedSpec {
    pub fn was_defaulted(&self, key: &str) -> bool {
        self.defaulted.iter().any(|k| k.eq_ignore_ascii_case(key))
    }
}

/// Recognized keys and the one-line description echoed into reports.
pub const KEYS: &[(&str, &str)] = &[
    ("description", "free-form description of the simulation"),
    ("outputPrefix", "path prefix shared by the five output files"),
    ("ndim", "number of dimensions of the objective function domain"),
    ("chainSize", "number of verbose Markov chain steps to generate"),
    ("sampleSize", "final refined sample size (-1: set by refinement)"),
    ("randomSeed", "seed of the random number streams"),
    ("startPoint", "initial state of the chain"),
    ("domainLower", "lower corners of the domain cube"),
    ("domainUpper", "upper corners of the domain cube"),
    ("proposalStartStd", "initial proposal standard deviations"),
    ("scaleFactor", "multiplier of the proposal standard deviation"),
    ("adaptationPeriod", "verbose steps between proposal adaptations"),
    (
        "adaptationCount",
        "maximum number of proposal adaptations (-1: unlimited)",
    ),
    ("delayedRejectionCount", "number of delayed-rejection stages"),
    ("delayedRejectionScaleFactors", "per-stage rescaling of the proposal"),
    (
        "targetAcceptanceRate",
        "acceptance rate the proposal scale is tuned toward",
    ),
    ("chainFileFormat", "compact, verbose or binary"),
    ("restartFileFormat", "binary or ascii"),
    ("outputDelimiter", "column delimiter of text output files"),
    ("parallelismModel", "singleChain (fork-join) or multiChain (perfect)"),
    ("processCount", "number of ranks"),
    (
        "sampleRefinementMethod",
        "autocorrelation estimator used for refinement",
    ),
    ("progressReportPeriod", "objective calls between progress records"),
    ("overwriteRequested", "replace an existing output file set"),
];

pub fn key_description(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _)| k.eq_ignore_ascii_case(key)).map(|(_, d)| *d)
}

fn canonical_key(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _)| k.eq_ignore_ascii_case(key)).map(|(k, _)| *k)
}

/// Ordered key-value pairs as read from a spec file or assembled by a caller.
/// Later assignments to the same key (compared case-insensitively) win.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawSpec {
    entries: Vec<(String, String)>,
}

impl RawSpec {
    pub fn new() -> Self {
        RawSpec::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawSpec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = strip_comment(line);
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidSpec(vec![format!(
                    "line {}: expected `key = value`, found `{line}`",
                    lineno + 1
                )]));
            };
            raw.set(key.trim(), unquote(value.trim()));
        }
        Ok(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        RawSpec::parse(&std::fs::read_to_string(path).map_err(Error::unreadable(path))?)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        if let Some(slot) = self.entries.iter_mut().find(|(k, _)| k.eq_ignore_ascii_case(key)) {
            slot.1 = value;
        } else {
            self.entries.push((key.to_string(), value));
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        let pos = self.entries.iter().position(|(k, _)| k.eq_ignore_ascii_case(key))?;
        Some(self.entries.remove(pos).1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            '\\' if in_quotes && !escaped => {
                escaped = true;
                continue;
            }
            '"' if !escaped => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
        escaped = false;
    }
    line
}

fn unquote(value: &str) -> String {
    let Some(inner) = value.strip_prefix('"').and_then(|v| v.strip_suffix('"')) else {
        return value.to_string();
    };
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn quote(value: &str) -> String {
    let mut out = String::from("\"");
    for c in value.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Formats a real with 17 significant digits (exact `f64` round trip).
pub fn fmt_real(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "+inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_real(s: &str) -> std::result::Result<f64, String> {
    let t = s.trim();
    let lower = t.to_ascii_lowercase();
    let value = match lower.trim_start_matches('+') {
        "inf" | "infinity" => f64::INFINITY,
        "-inf" | "-infinity" => f64::NEG_INFINITY,
        _ => t.parse::<f64>().map_err(|_| format!("`{t}` is not a real number"))?,
    };
    if value.is_nan() {
        return Err(format!("`{t}` is not a number"));
    }
    Ok(value)
}

fn parse_vector(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(|c: char| c == ',' || c == ';' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(parse_real)
        .collect()
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "t" | "yes" | "1" => Ok(true),
        "false" | "f" | "no" | "0" => Ok(false),
        other => Err(format!("`{other}` is not a boolean")),
    }
}

fn parse_delimiter(s: &str) -> std::result::Result<char, String> {
    let resolved = match s {
        "\\t" | "tab" => "\t",
        "space" => " ",
        other => other,
    };
    let mut chars = resolved.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(format!("delimiter must be a single character, got `{s}`")),
    }
}

fn clock_seed() -> u64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    (nanos as u64) ^ ((nanos >> 64) as u64)
}

/// Fills defaults and checks every invariant. All violations are reported
/// together; unrecognized keys become warnings.
pub fn validate_spec(raw: &RawSpec, ndim: usize) -> Result<ValidatedSpec> {
    let mut errors: Vec<String> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut defaulted: Vec<&'static str> = Vec::new();

    for (key, _) in raw.iter() {
        if canonical_key(key).is_none() {
            warnings.push(format!("unknown specification key `{key}` ignored"));
        }
    }
    if ndim == 0 {
        errors.push("ndim must be a positive integer".to_string());
    }

    macro_rules! field {
        ($key:literal, $parse:expr, $default:expr) => {{
            match raw.get($key) {
                Some(text) => match $parse(text) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        errors.push(format!("{}: {}", $key, e));
                        None
                    }
                },
                None => {
                    defaulted.push($key);
                    Some($default)
                }
            }
        }};
    }

    fn int<T: FromStr>(s: &str) -> std::result::Result<T, String> {
        s.trim()
            .parse::<T>()
            .map_err(|_| format!("`{}` is not a valid integer", s.trim()))
    }

    let vec_field =
        |key: &'static str, errors: &mut Vec<String>, defaulted: &mut Vec<&'static str>| -> Option<Vec<f64>> {
            let text = match raw.get(key) {
                Some(t) => t,
                None => {
                    defaulted.push(key);
                    return None;
                }
            };
            match parse_vector(text) {
                Ok(v) if v.len() == ndim => Some(v),
                Ok(v) if v.len() == 1 => Some(vec![v[0]; ndim]),
                Ok(v) => {
                    errors.push(format!("{key}: expected {ndim} values, found {}", v.len()));
                    None
                }
                Err(e) => {
                    errors.push(format!("{key}: {e}"));
                    None
                }
            }
        };

    if let Some(text) = raw.get("ndim") {
        match int::<usize>(text) {
            Ok(n) if n == ndim => {}
            Ok(n) => errors.push(format!(
                "ndim: the specification file sets {n} but the objective has {ndim} dimensions"
            )),
            Err(e) => errors.push(format!("ndim: {e}")),
        }
    }

    let description = field!("description", |s: &str| Ok::<_, String>(s.to_string()), String::new());
    let output_prefix = field!("outputPrefix", |s: &str| Ok::<_, String>(s.to_string()), String::new());
    let chain_size = field!("chainSize", int::<u64>, 10_000);
    let sample_size = field!("sampleSize", int::<i64>, -1);
    let random_seed = field!("randomSeed", int::<u64>, clock_seed());
    let scale_factor = field!("scaleFactor", parse_real, 2.38 / (ndim.max(1) as f64).sqrt());
    let adaptation_period = field!("adaptationPeriod", int::<u64>, 100);
    let adaptation_count = field!("adaptationCount", int::<i64>, -1);
    let dr_count = field!("delayedRejectionCount", int::<usize>, 0);
    let target_acceptance_rate = field!("targetAcceptanceRate", |s: &str| parse_real(s).map(Some), None);
    let chain_file_format = field!("chainFileFormat", str::parse, ChainFileFormat::Compact);
    let restart_file_format = field!("restartFileFormat", str::parse, RestartFileFormat::Binary);
    let output_delimiter = field!("outputDelimiter", parse_delimiter, ',');
    let parallelism_model = field!("parallelismModel", str::parse, ParallelismModel::SingleChain);
    let process_count = field!("processCount", int::<usize>, 1);
    let sample_refinement_method = field!("sampleRefinementMethod", str::parse, SampleRefinementMethod::BatchMeans);
    let progress_report_period = field!("progressReportPeriod", int::<u64>, 1000);
    let overwrite_requested = field!("overwriteRequested", parse_bool, false);

    let domain_lower =
        vec_field("domainLower", &mut errors, &mut defaulted).unwrap_or_else(|| vec![f64::NEG_INFINITY; ndim]);
    let domain_upper =
        vec_field("domainUpper", &mut errors, &mut defaulted).unwrap_or_else(|| vec![f64::INFINITY; ndim]);
    let start_point = vec_field("startPoint", &mut errors, &mut defaulted).unwrap_or_else(|| {
        domain_lower
            .iter()
            .zip(&domain_upper)
            .map(|(&lo, &hi)| {
                if lo.is_finite() && hi.is_finite() {
                    0.5 * (lo + hi)
                } else {
                    0.0f64.clamp(lo.min(hi), hi.max(lo))
                }
            })
            .collect()
    });
    let proposal_start_std = vec_field("proposalStartStd", &mut errors, &mut defaulted).unwrap_or_else(|| {
        domain_lower
            .iter()
            .zip(&domain_upper)
            .map(|(&lo, &hi)| {
                let width = hi - lo;
                if width.is_finite() && width > 0.0 {
                    width / 100.0
                } else {
                    1.0
                }
            })
            .collect()
    });

    let dr_scale_factors = match (raw.get("delayedRejectionScaleFactors"), dr_count) {
        (Some(text), _) => match parse_vector(text) {
            Ok(v) => Some(v),
            Err(e) => {
                errors.push(format!("delayedRejectionScaleFactors: {e}"));
                None
            }
        },
        (None, Some(m)) => {
            defaulted.push("delayedRejectionScaleFactors");
            Some((1..=m).map(|j| 0.5f64.powi(j as i32)).collect())
        }
        (None, None) => None,
    };

    // Cross-field invariants.
    for i in 0..ndim.min(domain_lower.len()).min(domain_upper.len()) {
        if !(domain_lower[i] < domain_upper[i]) {
            errors.push(format!(
                "domain dimension {}: lower limit {} must be below upper limit {}",
                i + 1,
                domain_lower[i],
                domain_upper[i]
            ));
        }
    }
    if start_point.len() == ndim {
        for i in 0..ndim {
            let x = start_point[i];
            if !x.is_finite() {
                errors.push(format!("startPoint[{}] = {x} is not finite", i + 1));
            } else if x < domain_lower[i] || x > domain_upper[i] {
                errors.push(format!(
                    "startPoint[{}] = {x} lies outside the domain [{}, {}]",
                    i + 1,
                    domain_lower[i],
                    domain_upper[i]
                ));
            }
        }
    }
    for (i, s) in proposal_start_std.iter().enumerate() {
        if !(s.is_finite() && *s > 0.0) {
            errors.push(format!("proposalStartStd[{}] = {s} must be positive", i + 1));
        }
    }
    if let Some(s) = scale_factor {
        if !(s.is_finite() && s > 0.0) {
            errors.push(format!("scaleFactor = {s} must be positive"));
        }
    }
    if chain_size == Some(0) {
        errors.push("chainSize must be at least 1".to_string());
    }
    if let Some(n) = sample_size {
        if n == 0 || n < -1 {
            errors.push(format!("sampleSize = {n} must be positive or -1"));
        }
    }
    if adaptation_period == Some(0) {
        errors.push("adaptationPeriod must be at least 1".to_string());
    }
    if let Some(n) = adaptation_count {
        if n < -1 {
            errors.push(format!("adaptationCount = {n} must be non-negative or -1"));
        }
    }
    if let (Some(m), Some(factors)) = (dr_count, &dr_scale_factors) {
        if factors.len() != m {
            errors.push(format!(
                "delayedRejectionScaleFactors has {} entries but delayedRejectionCount is {m}",
                factors.len()
            ));
        }
        for (j, s) in factors.iter().enumerate() {
            if !(s.is_finite() && *s > 0.0) {
                errors.push(format!(
                    "delayedRejectionScaleFactors[{}] = {s} must be positive",
                    j + 1
                ));
            }
        }
    }
    if let Some(Some(rate)) = target_acceptance_rate {
        if !(rate > 0.0 && rate < 1.0) {
            errors.push(format!("targetAcceptanceRate = {rate} must lie in (0, 1)"));
        }
    }
    if process_count == Some(0) {
        errors.push("processCount must be at least 1".to_string());
    }
    if progress_report_period == Some(0) {
        errors.push("progressReportPeriod must be at least 1".to_string());
    }

    if !errors.is_empty() {
        return Err(Error::InvalidSpec(errors));
    }

    // Every Option below is Some when no error was recorded.
    let spec = SpecSet {
        description: description.unwrap(),
        output_prefix: output_prefix.unwrap(),
        ndim,
        chain_size: chain_size.unwrap(),
        sample_size: sample_size.unwrap(),
        random_seed: random_seed.unwrap(),
        start_point,
        domain_lower,
        domain_upper,
        proposal_start_std,
        scale_factor: scale_factor.unwrap(),
        adaptation_period: adaptation_period.unwrap(),
        adaptation_count: adaptation_count.unwrap(),
        delayed_rejection_count: dr_count.unwrap(),
        delayed_rejection_scale_factors: dr_scale_factors.unwrap(),
        target_acceptance_rate: target_acceptance_rate.unwrap(),
        chain_file_format: chain_file_format.unwrap(),
        restart_file_format: restart_file_format.unwrap(),
        output_delimiter: output_delimiter.unwrap(),
        parallelism_model: parallelism_model.unwrap(),
        process_count: process_count.unwrap(),
        sample_refinement_method: sample_refinement_method.unwrap(),
        progress_report_period: progress_report_period.unwrap(),
        overwrite_requested: overwrite_requested.unwrap(),
    };
    Ok(ValidatedSpec {
        spec,
        warnings,
        defaulted,
    })
}

impl SpecSet {
    /// Configuration with every default filled in.
    pub fn with_defaults(ndim: usize, seed: u64) -> Result<SpecSet> {
        let mut raw = RawSpec::new();
        raw.set("randomSeed", seed.to_string());
        Ok(validate_spec(&raw, ndim)?.spec)
    }

    pub fn in_domain(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(self.domain_lower.iter().zip(&self.domain_upper))
            .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }

    /// `(key, value)` pairs in canonical key order, values in spec-file syntax.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let vec = |v: &[f64]| v.iter().map(|x| fmt_real(*x)).collect::<Vec<_>>().join(", ");
        let mut out = vec![
            ("description", quote(&self.description)),
            ("outputPrefix", quote(&self.output_prefix)),
            ("ndim", self.ndim.to_string()),
            ("chainSize", self.chain_size.to_string()),
            ("sampleSize", self.sample_size.to_string()),
            ("randomSeed", self.random_seed.to_string()),
            ("startPoint", vec(&self.start_point)),
            ("domainLower", vec(&self.domain_lower)),
            ("domainUpper", vec(&self.domain_upper)),
            ("proposalStartStd", vec(&self.proposal_start_std)),
            ("scaleFactor", fmt_real(self.scale_factor)),
            ("adaptationPeriod", self.adaptation_period.to_string()),
            ("adaptationCount", self.adaptation_count.to_string()),
            ("delayedRejectionCount", self.delayed_rejection_count.to_string()),
            (
                "delayedRejectionScaleFactors",
                vec(&self.delayed_rejection_scale_factors),
            ),
        ];
        if let Some(rate) = self.target_acceptance_rate {
            out.push(("targetAcceptanceRate", fmt_real(rate)));
        }
        out.extend([
            ("chainFileFormat", self.chain_file_format.name().to_string()),
            ("restartFileFormat", self.restart_file_format.name().to_string()),
            ("outputDelimiter", quote(&self.output_delimiter.to_string())),
            ("parallelismModel", self.parallelism_model.name().to_string()),
            ("processCount", self.process_count.to_string()),
            ("sampleRefinementMethod", "batchMeans".to_string()),
            ("progressReportPeriod", self.progress_report_period.to_string()),
            ("overwriteRequested", self.overwrite_requested.to_string()),
        ]);
        out
    }

    /// Serializes to the spec-file format; `validate_spec` inverts it exactly.
    pub fn to_spec_string(&self) -> String {
        let mut s = String::new();
        for (key, value) in self.entries() {
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }
}
