//! Per-file timing in the layout of the reference benchmark table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fogspeech_core::dsp::{FrameConfig, LoudnessSettings};
use fogspeech_core::gateway::{analyze, AnalysisError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Column headers of the printed table, in order.
pub const COLUMNS: [&str; 5] = [
    "Speech Tasks",
    "Processing Time(s)",
    "File Duration(s)",
    "Size (kB)",
    "Realtime Factor",
];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("repeats must be at least 1")]
    NoRepeats,
    #[error("no valid input files")]
    NoValidFiles,
    #[error("cannot write {path}: {message}")]
    Write { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub task_label: String,
    /// Median over repeats of decode + extract + summarize wall time.
    pub processing_time_s: f64,
    pub file_duration_s: f64,
    /// File size in 1000-byte kB.
    pub size_kb: f64,
    /// File size in 1024-byte KiB.
    pub size_kib: f64,
    pub realtime_factor: f64,
    pub repeats: usize,
}

impl BenchRow {
    fn new(task_label: String, times: &mut [f64], duration: f64, size_bytes: u64) -> Self {
        let processing_time_s = median(times);
        Self {
            task_label,
            processing_time_s,
            file_duration_s: duration,
            size_kb: size_bytes as f64 / 1000.0,
            size_kib: size_bytes as f64 / 1024.0,
            realtime_factor: processing_time_s / duration,
            repeats: times.len(),
        }
    }
}

/// Files that could not be benchmarked, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub skipped: Vec<Skipped>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn label_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Runs the analysis `repeats` times per file, sequentially and in the
/// given order, and reports the median time.
pub fn cmd_bench(
    paths: &[PathBuf],
    frame: &FrameConfig,
    loudness: &LoudnessSettings,
    repeats: usize,
) -> Result<BenchReport, BenchError> {
    if repeats == 0 {
        return Err(BenchError::NoRepeats);
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for path in paths {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) => {
                skipped.push(Skipped { path: path.clone(), reason: e.to_string() });
                continue;
            }
        };
        let mut times = Vec::with_capacity(repeats);
        let mut duration = 0.0;
        let result: Result<(), AnalysisError> = (0..repeats).try_for_each(|_| {
            let a = analyze(&bytes, frame, loudness)?;
            duration = a.clip.duration_s();
            times.push(a.processing_time_s);
            Ok(())
        });
        match result {
            Ok(()) => rows.push(BenchRow::new(label_of(path), &mut times, duration, bytes.len() as u64)),
            Err(e) => skipped.push(Skipped { path: path.clone(), reason: e.to_string() }),
        }
    }
    if rows.is_empty() {
        return Err(BenchError::NoValidFiles);
    }
    Ok(BenchReport { rows, skipped })
}

/// Aligned plain-text table.
pub fn render_table(rows: &[BenchRow]) -> String {
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.task_label.clone(),
                format!("{:.4}", r.processing_time_s),
                format!("{:.2}", r.file_duration_s),
                format!("{:.1}", r.size_kb),
                format!("{:.4}", r.realtime_factor),
            ]
        })
        .collect();
    let mut widths = COLUMNS.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[&str]| {
        let parts: Vec<String> = row
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &COLUMNS);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for row in &cells {
        line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

pub fn write_json(report: &BenchReport, path: &Path) -> Result<(), BenchError> {
    let fail = |message: String| BenchError::Write { path: path.to_path_buf(), message };
    let text = serde_json::to_string_pretty(report).map_err(|e| fail(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| fail(e.to_string()))
}
