//! Merges per-seed metrics streams into one CSV table.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use super::io::{write_atomic, MetricsRow};
use super::train::METRICS_FILE;
use crate::error::{Error, Result};

pub const EXPORT_COLUMNS: [&str; 8] = [
    "method",
    "seed",
    "env_steps",
    "success_rate",
    "mean_return",
    "disc_loss",
    "reward_mean",
    "reg_loss",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExportSummary {
    pub files: usize,
    pub rows: usize,
    pub skipped: usize,
}

fn collect_metric_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_metric_files(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == METRICS_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Walks `metrics_dir` (sorted, recursive) and writes every parseable row of
/// every metrics stream to `out`. Unparseable lines are counted and skipped.
pub fn cmd_export(metrics_dir: &Path, out: &Path) -> Result<ExportSummary> {
    let mut files = Vec::new();
    collect_metric_files(metrics_dir, &mut files)?;
    if files.is_empty() {
        return Err(Error::Usage(format!("no {METRICS_FILE} under {}", metrics_dir.display())));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Data(format!("csv: {e}"));
    w.write_record(EXPORT_COLUMNS).map_err(csv_err)?;
    let mut rows = 0;
    let mut skipped = 0;
    for f in &files {
        let file = std::fs::File::open(f).map_err(|e| Error::io(f, e))?;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(f, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<MetricsRow>(&line) {
                Ok(r) => {
                    w.write_record([
                        r.method.clone(),
                        r.seed.to_string(),
                        r.env_steps.to_string(),
                        cell(r.success_rate),
                        cell(r.mean_return),
                        cell(r.disc_loss),
                        cell(r.reward_mean),
                        cell(r.reg_loss),
                    ])
                    .map_err(csv_err)?;
                    rows += 1;
                }
                Err(e) => {
                    log::warn!("{}: skipping malformed row: {e}", f.display());
                    skipped += 1;
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))?;
    write_atomic(out, &bytes)?;
    Ok(ExportSummary {
        files: files.len(),
        rows,
        skipped,
    })
}
