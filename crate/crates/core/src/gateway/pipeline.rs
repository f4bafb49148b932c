use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::GatewayConfig;
use crate::dsp::{
    extract_features, summarize_features, AudioClip, DspError, FeatureSeries, FeatureSummary,
    FrameConfig, LoudnessParams, LoudnessSettings,
};
use crate::ingest::{compute_file_id, decode_wav, InboxEvent, IngestError, PcmFormat};
use crate::record::{ConfigSnapshot, FeatureRecord, SyncState};
use crate::store::{Persisted, RecordStore, StoreError};
use crate::util::now_utc;

/// Environment variable read by [`CrashPlan::from_env`], formatted
/// `<point>[:<n>]`, e.g. `after_persist:2` aborts the second time the
/// pipeline reaches that point.
pub const CRASH_ENV: &str = "FOGSPEECH_CRASH_AT";

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Decode(#[from] IngestError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IngestError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot move {path} to rejects: {message}")]
    Reject { path: PathBuf, message: String },
    #[error("injected crash at {0:?}")]
    Crashed(CrashPoint),
}

/// Decoded clip plus everything extracted from it.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub clip: AudioClip,
    pub format: PcmFormat,
    pub loudness: LoudnessParams,
    pub series: FeatureSeries,
    pub summary: FeatureSummary,
    /// Wall-clock seconds spent decoding, extracting and summarizing.
    pub processing_time_s: f64,
}

/// Decode, extract and summarize one WAV file held in memory.
pub fn analyze(
    bytes: &[u8],
    frame: &FrameConfig,
    loudness: &LoudnessSettings,
) -> Result<Analysis, AnalysisError> {
    let t0 = Instant::now();
    let (clip, format) = decode_wav(bytes)?;
    frame.validate(clip.sample_rate_hz())?;
    let params = loudness.resolve(frame, clip.sample_rate_hz())?;
    let series = extract_features(&clip, frame, &params)?;
    let summary = summarize_features(&series)?;
    let processing_time_s = t0.elapsed().as_secs_f64();
    Ok(Analysis {
        clip,
        format,
        loudness: params,
        series,
        summary,
        processing_time_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashPoint {
    AfterRead,
    AfterAnalysis,
    AfterPersist,
    AfterRejectReason,
}

impl CrashPoint {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "after_read" => Self::AfterRead,
            "after_analysis" => Self::AfterAnalysis,
            "after_persist" => Self::AfterPersist,
            "after_reject_reason" => Self::AfterRejectReason,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashMode {
    /// Return [`PipelineError::Crashed`]; for in-process tests.
    Error,
    /// Abort the process without unwinding.
    Abort,
}

/// Test hook that simulates the gateway dying between pipeline stages.
#[derive(Debug)]
pub struct CrashPlan {
    point: CrashPoint,
    nth: u32,
    hits: AtomicU32,
    mode: CrashMode,
}

impl CrashPlan {
    /// Fires the `nth` time `point` is reached (1-based).
    pub fn new(point: CrashPoint, nth: u32, mode: CrashMode) -> Self {
        Self {
            point,
            nth: nth.max(1),
            hits: AtomicU32::new(0),
            mode,
        }
    }

    pub fn from_env() -> Option<Self> {
        let raw = std::env::var(CRASH_ENV).ok()?;
        let (name, nth) = match raw.split_once(':') {
            Some((n, k)) => (n, k.parse().ok()?),
            None => (raw.as_str(), 1),
        };
        Some(Self::new(CrashPoint::parse(name)?, nth, CrashMode::Abort))
    }

    fn check(&self, at: CrashPoint) -> Result<(), PipelineError> {
        if at != self.point || self.hits.fetch_add(1, Ordering::SeqCst) + 1 != self.nth {
            return Ok(());
        }
        match self.mode {
            CrashMode::Error => Err(PipelineError::Crashed(at)),
            CrashMode::Abort => {
                tracing::error!(point = ?at, "injected crash");
                std::process::abort()
            }
        }
    }
}

/// Counters reported by the health endpoint.
#[derive(Debug, Default)]
pub struct PipelineStats {
    persisted: AtomicU64,
    rejected: AtomicU64,
    duplicates: AtomicU64,
    errors: AtomicU64,
    last_error: Mutex<Option<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    /// Files that reached a final outcome: persisted or rejected.
    pub processed: u64,
    pub persisted: u64,
    pub rejected: u64,
    pub duplicates: u64,
    pub errors: u64,
    pub last_error: Option<String>,
}

impl PipelineStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        let persisted = self.persisted.load(Ordering::SeqCst);
        let rejected = self.rejected.load(Ordering::SeqCst);
        StatsSnapshot {
            processed: persisted + rejected,
            persisted,
            rejected,
            duplicates: self.duplicates.load(Ordering::SeqCst),
            errors: self.errors.load(Ordering::SeqCst),
            last_error: self.last_error.lock().unwrap().clone(),
        }
    }

    pub fn note_error(&self, message: impl Into<String>) {
        self.errors.fetch_add(1, Ordering::SeqCst);
        *self.last_error.lock().unwrap() = Some(message.into());
    }

    fn note(&self, outcome: &ProcessOutcome) {
        let counter = match outcome {
            ProcessOutcome::Persisted(_) => &self.persisted,
            ProcessOutcome::Duplicate(_) => &self.duplicates,
            ProcessOutcome::Rejected { reason, .. } => {
                *self.last_error.lock().unwrap() = Some(reason.clone());
                &self.rejected
            }
        };
        counter.fetch_add(1, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProcessOutcome {
    Persisted(FeatureRecord),
    /// Content already has a record; nothing was written.
    Duplicate(FeatureRecord),
    /// Not analysable; moved aside with a reason file.
    Rejected { reason: String, moved_to: PathBuf },
}

/// Turns inbox files into persisted records.
#[derive(Debug)]
pub struct Pipeline {
    store: Arc<RecordStore>,
    stats: Arc<PipelineStats>,
    crash: Option<CrashPlan>,
}

impl Pipeline {
    pub fn new(store: Arc<RecordStore>) -> Self {
        Self {
            store,
            stats: Arc::new(PipelineStats::default()),
            crash: None,
        }
    }

    pub fn with_crash_plan(mut self, plan: Option<CrashPlan>) -> Self {
        self.crash = plan;
        self
    }

    pub fn store(&self) -> &Arc<RecordStore> {
        &self.store
    }

    pub fn stats(&self) -> &Arc<PipelineStats> {
        &self.stats
    }

    fn crash_check(&self, at: CrashPoint) -> Result<(), PipelineError> {
        match &self.crash {
            Some(plan) => plan.check(at),
            None => Ok(()),
        }
    }

    /// Processes one file under `config`, which the caller snapshots when
    /// the file is picked up.
    pub fn process(
        &self,
        event: &InboxEvent,
        config: &GatewayConfig,
    ) -> Result<ProcessOutcome, PipelineError> {
        let result = self.process_inner(event, config);
        match &result {
            Ok(outcome) => self.stats.note(outcome),
            Err(PipelineError::Crashed(_)) => {}
            Err(e) => self.stats.note_error(format!("{}: {e}", event.file_name())),
        }
        result
    }

    fn process_inner(
        &self,
        event: &InboxEvent,
        config: &GatewayConfig,
    ) -> Result<ProcessOutcome, PipelineError> {
        let bytes = fs::read(&event.path).map_err(|e| IngestError::io(&event.path, e))?;
        // the file may have changed since it was observed; trust what we read
        let record_id = compute_file_id(&bytes);
        if let Some(existing) = self.store.get(&record_id) {
            return Ok(ProcessOutcome::Duplicate(existing));
        }
        self.crash_check(CrashPoint::AfterRead)?;

        let analysis = match analyze(&bytes, &config.frame, &config.loudness) {
            Ok(a) => a,
            Err(e) => {
                let reason = e.to_string();
                tracing::warn!(file = %event.file_name(), %reason, "rejecting file");
                let moved_to = self.reject(&event.path, &record_id, &reason, config)?;
                return Ok(ProcessOutcome::Rejected { reason, moved_to });
            }
        };
        self.crash_check(CrashPoint::AfterAnalysis)?;

        let record = build_record(record_id, event, bytes.len() as u64, &analysis, config);
        let persisted = self.store.persist_record(&record)?;
        self.crash_check(CrashPoint::AfterPersist)?;
        tracing::info!(
            file = %event.file_name(),
            record_id = %record.record_id,
            processing_time_s = analysis.processing_time_s,
            "record persisted"
        );
        Ok(match persisted {
            Persisted::Inserted(r) => ProcessOutcome::Persisted(r),
            Persisted::Existing(r) => ProcessOutcome::Duplicate(r),
        })
    }

    /// Writes the reason file first, then moves the source. A crash in
    /// between leaves the file in the inbox to be rejected again.
    fn reject(
        &self,
        path: &Path,
        file_id: &str,
        reason: &str,
        config: &GatewayConfig,
    ) -> Result<PathBuf, PipelineError> {
        let fail = |e: std::io::Error| PipelineError::Reject {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let dir = config.rejects_dir();
        fs::create_dir_all(&dir).map_err(fail)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "unnamed.wav".into());
        let mut target = dir.join(&name);
        if target.exists() {
            target = dir.join(format!("{}-{name}", &file_id[..12.min(file_id.len())]));
        }
        let mut reason_path = target.clone().into_os_string();
        reason_path.push(".reason");
        fs::write(&reason_path, format!("{reason}\n")).map_err(fail)?;
        self.crash_check(CrashPoint::AfterRejectReason)?;
        if fs::rename(path, &target).is_err() {
            fs::copy(path, &target).map_err(fail)?;
            fs::remove_file(path).map_err(fail)?;
        }
        Ok(target)
    }
}

fn build_record(
    record_id: String,
    event: &InboxEvent,
    size_bytes: u64,
    analysis: &Analysis,
    config: &GatewayConfig,
) -> FeatureRecord {
    let captured_at: DateTime<Utc> = fs::metadata(&event.path)
        .and_then(|m| m.modified())
        .map(DateTime::<Utc>::from)
        .unwrap_or(event.observed_at);
    let task_label = event
        .path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned());
    FeatureRecord {
        record_id,
        source_name: event.file_name(),
        task_label,
        captured_at,
        processed_at: now_utc(),
        duration_s: analysis.clip.duration_s(),
        size_bytes,
        processing_time_s: analysis.processing_time_s,
        config_snapshot: ConfigSnapshot {
            sample_rate_hz: analysis.clip.sample_rate_hz(),
            frame: config.frame.clone(),
            loudness: analysis.loudness.clone(),
        },
        summary: analysis.summary.clone(),
        series_included: config.store_series,
        series: config.store_series.then(|| analysis.series.clone()),
        sync_state: SyncState::Pending,
    }
}

/// One-shot form of [`Pipeline::process`].
pub fn process_file(
    event: &InboxEvent,
    config: &GatewayConfig,
    store: Arc<RecordStore>,
) -> Result<ProcessOutcome, PipelineError> {
    Pipeline::new(store).process(event, config)
}
