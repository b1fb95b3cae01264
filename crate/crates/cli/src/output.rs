//! Artifact files: each is written to a temporary name and renamed into place,
//! so an interrupted stage leaves earlier files intact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use embedlab_core::csv::fmt_f64;

pub const SUMMARY: &str = "summary.csv";
pub const FAILED_MARKER: &str = "FAILED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Info,
}

impl Status {
    fn name(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Info => "info",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub stage: String,
    pub check: String,
    pub value: f64,
    pub status: Status,
}

pub struct OutputDir {
    dir: PathBuf,
    summary: Vec<SummaryRow>,
    written: Vec<String>,
}

impl OutputDir {
    /// Creates the directory and clears a marker left by an earlier failed run.
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let marker = dir.join(FAILED_MARKER);
        if marker.exists() {
            fs::remove_file(&marker)?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            summary: Vec::new(),
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn summary(&self) -> &[SummaryRow] {
        &self.summary
    }

    /// Writes `name` through a callback, atomically.
    pub fn write_with(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>,
    ) -> anyhow::Result<()> {
        atomic_write(&self.dir.join(name), body)?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    /// Appends rows for one stage and rewrites `summary.csv`.
    pub fn record(&mut self, rows: Vec<SummaryRow>) -> anyhow::Result<()> {
        self.summary.extend(rows);
        let rows = &self.summary;
        atomic_write(&self.dir.join(SUMMARY), |out| {
            writeln!(out, "stage,check,value,status")?;
            for r in rows {
                writeln!(out, "{},{},{},{}", r.stage, r.check, fmt_f64(r.value), r.status.name())?;
            }
            Ok(())
        })
    }

    pub fn mark_failed(&self, stage: &str, err: &anyhow::Error) {
        let text = format!("stage {stage} failed: {err:#}\n");
        if let Err(e) = fs::write(self.dir.join(FAILED_MARKER), text) {
            log::error!("could not write failure marker: {e}");
        }
    }
}

fn atomic_write(path: &Path, body: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        let mut out = std::io::BufWriter::new(file);
        body(&mut out)?;
        out.flush()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}
