//! Output files: naming, codecs, reports and restart records.

pub mod codec;
pub mod files;
pub mod report;
pub mod restart;

pub use codec::{
    chain_header, read_chain, read_chain_lenient, read_sample, sample_header, write_sample, ChainRead, ChainWriter,
    ProgressWriter, SamplePoint,
};
pub use files::{detect_run_mode, make_output_prefix, FileRole, OutputFileSet, RunMode};
pub use report::{
    render_report, strip_timing, summarize_chain, write_report, write_report_header, ChainSummary, ParsedReport,
    ReportContent, TIMING_MARKER,
};
pub use restart::{read_restart, RestartRead, RestartRecord, RestartWriter};
