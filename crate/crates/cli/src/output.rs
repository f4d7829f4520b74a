//! CSV / JSON writers. CSV is the contract for time series; JSON for summaries.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::ValueEnum;
use fairway_core::Trajectory;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Destination directory and series format of one command invocation.
pub struct Sink {
    pub dir: Option<PathBuf>,
    pub format: Format,
}

impl Sink {
    fn path(&self, stem: &str, ext: &str) -> anyhow::Result<Option<PathBuf>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Some(dir.join(format!("{stem}.{ext}"))))
    }

    /// Writes a table as `<stem>.csv` (or `<stem>.json`); a no-op without an output directory.
    pub fn table(&self, stem: &str, columns: &[String], rows: &[Vec<f64>]) -> anyhow::Result<()> {
        let ext = match self.format {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        let Some(path) = self.path(stem, ext)? else { return Ok(()) };
        match self.format {
            Format::Csv => write_csv(&path, columns, rows),
            Format::Json => write_json(&path, &Trajectory { columns: columns.to_vec(), rows: rows.to_vec() }),
        }
    }

    pub fn trajectory(&self, stem: &str, t: &Trajectory) -> anyhow::Result<()> {
        self.table(stem, &t.columns, &t.rows)
    }

    /// Writes `<stem>.json` when an output directory is set.
    pub fn summary<T: Serialize>(&self, stem: &str, value: &T) -> anyhow::Result<()> {
        match self.path(stem, "json")? {
            Some(path) => write_json(&path, value),
            None => Ok(()),
        }
    }
}

pub fn write_csv(path: &Path, columns: &[String], rows: &[Vec<f64>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(columns)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

/// Renders a table as CSV text (for stdout).
pub fn csv_string(columns: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}
