//! Output file naming and run-mode detection.

use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;

use crate::error::{Error, Result};
use crate::spec::{ChainFileFormat, ParallelismModel, RestartFileFormat, SpecSet};

/// Builds the output prefix for `rank`.
///
/// A user prefix is used verbatim, with `_process_<rank>` appended in
/// multi-chain mode. Otherwise the prefix is
/// `<dir>/ParaDRAM_run_yyyymmdd_hhmmss_mmm_process_<rank>`. The parent
/// directory is created when missing.
pub fn make_output_prefix(spec: &SpecSet, clock: NaiveDateTime, rank: usize, default_dir: &Path) -> Result<PathBuf> {
    assert!(rank >= 1, "ranks are 1-based");
    let prefix = if spec.output_prefix.is_empty() {
        default_dir.join(format!(
            "ParaDRAM_run_{}_process_{rank}",
            clock.format("%Y%m%d_%H%M%S_%3f")
        ))
    } else if spec.parallelism_model == ParallelismModel::MultiChain {
        PathBuf::from(format!("{}_process_{rank}", spec.output_prefix))
    } else {
        PathBuf::from(&spec.output_prefix)
    };
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::DirectoryCreationFailed {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    Ok(prefix)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileRole {
    Chain,
    Sample,
    Report,
    Progress,
    Restart,
}

impl FileRole {
    pub const ALL: [FileRole; 5] = [
        FileRole::Chain,
        FileRole::Sample,
        FileRole::Report,
        FileRole::Progress,
        FileRole::Restart,
    ];
}

/// The five output files of one run (one rank in multi-chain mode).
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFileSet {
    pub prefix: PathBuf,
    pub chain_format: ChainFileFormat,
    pub restart_format: RestartFileFormat,
}

impl OutputFileSet {
    pub fn new(prefix: impl Into<PathBuf>, spec: &SpecSet) -> Self {
        OutputFileSet {
            prefix: prefix.into(),
            chain_format: spec.chain_file_format,
            restart_format: spec.restart_file_format,
        }
    }

    pub fn path(&self, role: FileRole) -> PathBuf {
        let suffix = match role {
            FileRole::Chain => format!("_chain.{}", self.chain_format.extension()),
            FileRole::Sample => "_sample.txt".to_string(),
            FileRole::Report => "_report.txt".to_string(),
            FileRole::Progress => "_progress.txt".to_string(),
            FileRole::Restart => format!("_restart.{}", self.restart_format.extension()),
        };
        let mut name = self.prefix.as_os_str().to_owned();
        name.push(suffix);
        PathBuf::from(name)
    }

    pub fn chain(&self) -> PathBuf {
        self.path(FileRole::Chain)
    }
    pub fn sample(&self) -> PathBuf {
        self.path(FileRole::Sample)
    }
    pub fn report(&self) -> PathBuf {
        self.path(FileRole::Report)
    }
    pub fn progress(&self) -> PathBuf {
        self.path(FileRole::Progress)
    }
    pub fn restart(&self) -> PathBuf {
        self.path(FileRole::Restart)
    }

    pub fn existing(&self) -> Vec<FileRole> {
        FileRole::ALL.into_iter().filter(|r| self.path(*r).exists()).collect()
    }

    pub fn remove_all(&self) -> Result<()> {
        for role in FileRole::ALL {
            let p = self.path(role);
            if p.exists() {
                std::fs::remove_file(p)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Fresh,
    Restart,
    Clash,
    Corrupt,
}

/// Classifies what is already on disk for `files`.
pub fn detect_run_mode(files: &OutputFileSet) -> RunMode {
    let present = files.existing();
    match present.len() {
        0 => RunMode::Fresh,
        5 => RunMode::Clash,
        4 if !present.contains(&FileRole::Sample) => RunMode::Restart,
        _ => RunMode::Corrupt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn clock() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2020, 1, 1)
            .unwrap()
            .and_hms_milli_opt(20, 54, 58, 278)
            .unwrap()
    }

    #[test]
    fn automatic_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let spec = SpecSet::with_defaults(1, 1).unwrap();
        let p = make_output_prefix(&spec, clock(), 1, &out).unwrap();
        assert_eq!(p, out.join("ParaDRAM_run_20200101_205458_278_process_1"));
        assert!(out.is_dir());
        let p = make_output_prefix(&spec, clock(), 1, Path::new("./out")).unwrap();
        assert_eq!(p.to_str().unwrap(), "./out/ParaDRAM_run_20200101_205458_278_process_1");
        std::fs::remove_dir("./out").ok();
    }

    #[test]
    fn user_prefix() {
        let mut spec = SpecSet::with_defaults(1, 1).unwrap();
        spec.output_prefix = "mysim".into();
        assert_eq!(
            make_output_prefix(&spec, clock(), 1, Path::new(".")).unwrap(),
            PathBuf::from("mysim")
        );
        spec.parallelism_model = ParallelismModel::MultiChain;
        assert_eq!(
            make_output_prefix(&spec, clock(), 3, Path::new(".")).unwrap(),
            PathBuf::from("mysim_process_3")
        );
    }

    #[test]
    fn directory_creation_failure() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "").unwrap();
        let mut spec = SpecSet::with_defaults(1, 1).unwrap();
        spec.output_prefix = blocker.join("sub").join("run").to_string_lossy().into_owned();
        assert!(matches!(
            make_output_prefix(&spec, clock(), 1, Path::new(".")),
            Err(Error::DirectoryCreationFailed { .. })
        ));
    }

    #[test]
    fn run_modes() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SpecSet::with_defaults(1, 1).unwrap();
        let files = OutputFileSet::new(dir.path().join("run"), &spec);
        assert_eq!(detect_run_mode(&files), RunMode::Fresh);
        for role in FileRole::ALL {
            std::fs::write(files.path(role), "").unwrap();
        }
        assert_eq!(detect_run_mode(&files), RunMode::Clash);
        std::fs::remove_file(files.sample()).unwrap();
        assert_eq!(detect_run_mode(&files), RunMode::Restart);
        std::fs::remove_file(files.progress()).unwrap();
        assert_eq!(detect_run_mode(&files), RunMode::Corrupt);
        assert!(files.chain().to_str().unwrap().ends_with("run_chain.txt"));
        assert!(files.restart().to_str().unwrap().ends_with("run_restart.bin"));
    }
}
