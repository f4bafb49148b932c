use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::dsp::{FeatureSeries, FeatureSummary, FrameConfig, LoudnessParams};

/// Delivery state of a record. Transitions only move forward:
/// `pending -> synced` or `pending -> dead_letter`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncState {
    Pending,
    Synced,
    DeadLetter,
}

/// Analysis settings that produced a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub sample_rate_hz: u32,
    pub frame: FrameConfig,
    pub loudness: LoudnessParams,
}

/// Features extracted from one source file, plus provenance and timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    /// Content hash of the source file.
    pub record_id: String,
    pub source_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_label: Option<String>,
    pub captured_at: DateTime<Utc>,
    pub processed_at: DateTime<Utc>,
    pub duration_s: f64,
    pub size_bytes: u64,
    /// Wall-clock decode + extract + summarize time.
    pub processing_time_s: f64,
    pub config_snapshot: ConfigSnapshot,
    pub summary: FeatureSummary,
    pub series_included: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<FeatureSeries>,
    pub sync_state: SyncState,
}

impl FeatureRecord {
    /// Copy without the per-frame series, as sent upstream by default.
    pub fn summary_only(&self) -> Self {
        Self {
            series_included: false,
            series: None,
            ..self.clone()
        }
    }
}
