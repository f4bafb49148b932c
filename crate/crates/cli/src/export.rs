//! Plot-ready CSV: per-frame contours or per-file averages.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fogspeech_core::dsp::{
    extract_features, summarize_features, DspError, FeatureSeries, FeatureSummary,
};
use fogspeech_core::gateway::{analyze, AnalysisError, GatewayConfig};
use fogspeech_core::ingest::decode_wav;
use fogspeech_core::ingest::IngestError;
use fogspeech_core::record::FeatureRecord;
use fogspeech_core::store::RecordStore;
use thiserror::Error;

pub const SERIES_COLUMNS: [&str; 5] = ["time_s", "loudness_phon", "sc_hz", "zcr", "ste"];
pub const SUMMARY_COLUMNS: [&str; 7] = [
    "task_label",
    "mean_zcr",
    "mean_sc_hz",
    "mean_ste",
    "mean_loudness_phon",
    "frame_count",
    "duration_s",
];

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{0:?} is neither a readable file nor a stored record id")]
    UnknownTarget(String),
    #[error("record id prefix {0:?} is ambiguous")]
    Ambiguous(String),
    #[error("record {0} was stored without a series and its source file is not available")]
    NoSeries(String),
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Decode(#[from] IngestError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

/// Features for one export target.
#[derive(Debug, Clone, PartialEq)]
pub struct Exported {
    pub label: String,
    pub series: FeatureSeries,
    pub summary: FeatureSummary,
}

fn label_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read(path: &Path) -> Result<Vec<u8>, ExportError> {
    std::fs::read(path).map_err(|e| ExportError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn find_record(store: &RecordStore, id: &str) -> Result<Option<FeatureRecord>, ExportError> {
    if let Some(r) = store.get(id) {
        return Ok(Some(r));
    }
    if id.len() < 6 || !id.chars().all(|c| c.is_ascii_hexdigit()) {
        return Ok(None);
    }
    let mut hits = store.records().into_iter().filter(|r| r.record_id.starts_with(id));
    match (hits.next(), hits.next()) {
        (Some(r), None) => Ok(Some(r)),
        (Some(_), Some(_)) => Err(ExportError::Ambiguous(id.to_owned())),
        _ => Ok(None),
    }
}

/// Stored series of a record, or a re-extraction from its source file in
/// the inbox using the record's own settings.
pub fn from_record(record: &FeatureRecord, inbox: &Path) -> Result<Exported, ExportError> {
    let label = record
        .task_label
        .clone()
        .unwrap_or_else(|| record.source_name.clone());
    if let Some(series) = &record.series {
        return Ok(Exported {
            label,
            series: series.clone(),
            summary: record.summary.clone(),
        });
    }
    let source = inbox.join(&record.source_name);
    if !source.is_file() {
        return Err(ExportError::NoSeries(record.record_id.clone()));
    }
    let (clip, _) = decode_wav(&read(&source)?)?;
    let snap = &record.config_snapshot;
    let series = extract_features(&clip, &snap.frame, &snap.loudness)?;
    let summary = summarize_features(&series)?;
    Ok(Exported { label, series, summary })
}

/// Analyses a raw file on the fly with the current settings.
pub fn from_file(path: &Path, config: &GatewayConfig) -> Result<Exported, ExportError> {
    let a = analyze(&read(path)?, &config.frame, &config.loudness)?;
    Ok(Exported {
        label: label_of(path),
        series: a.series,
        summary: a.summary,
    })
}

/// Resolves `target` as a file path first, then as a record id (or unique
/// id prefix) in `store`.
pub fn resolve(
    target: &str,
    config: &GatewayConfig,
    store: Option<&RecordStore>,
) -> Result<Exported, ExportError> {
    let path = Path::new(target);
    if path.is_file() {
        return from_file(path, config);
    }
    match store.map(|s| find_record(s, target)).transpose()?.flatten() {
        Some(rec) => from_record(&rec, &config.inbox_dir),
        None => Err(ExportError::UnknownTarget(target.to_owned())),
    }
}

/// One row per frame. Values use the shortest representation that parses
/// back to the same `f64`.
pub fn series_csv(series: &FeatureSeries) -> String {
    let mut out = SERIES_COLUMNS.join(",");
    out.push('\n');
    for m in 0..series.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            series.frame_times_s[m],
            series.loudness_phon[m],
            series.sc_hz[m],
            series.zcr[m],
            series.ste[m]
        );
    }
    out
}

/// One row per file with the per-file averages.
pub fn summary_csv(items: &[Exported]) -> String {
    let mut out = SUMMARY_COLUMNS.join(",");
    out.push('\n');
    for e in items {
        let s = &e.summary;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_field(&e.label),
            s.mean_zcr,
            s.mean_sc_hz,
            s.mean_ste,
            s.mean_loudness_phon,
            s.frame_count,
            s.duration_s
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
