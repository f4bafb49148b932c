//! Upstream delivery of feature records.
//!
//! Batches of pending records are POSTed as a [`SyncEnvelope`]. The cloud
//! answers with the ids it accepted; those records become synced. Transport
//! failures leave the batch pending and back off exponentially, and a
//! permanent rejection parks the batch in the dead-letter state. Delivery is
//! at-least-once; `record_id` lets the receiver drop duplicates.

mod backoff;
pub mod mock;
mod transport;

use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backoff::Backoff;
pub use transport::{CloudTransport, HttpTransport};

use crate::record::{FeatureRecord, SyncState};
use crate::store::{RecordStore, StoreError};
use crate::util::now_utc;

pub const SCHEMA_VERSION: u32 = 1;

/// Wire body of one upload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncEnvelope {
    pub gateway_id: String,
    pub schema_version: u32,
    pub records: Vec<FeatureRecord>,
    pub sent_at: DateTime<Utc>,
}

impl SyncEnvelope {
    /// Builds an envelope from pending records, stripping per-frame series
    /// unless `include_series` is set.
    pub fn new(
        gateway_id: &str,
        records: Vec<FeatureRecord>,
        max_batch: usize,
        include_series: bool,
    ) -> Result<Self, SyncError> {
        if records.is_empty() || records.len() > max_batch {
            return Err(SyncError::BatchSize {
                len: records.len(),
                max: max_batch,
            });
        }
        if let Some(r) = records.iter().find(|r| r.sync_state != SyncState::Pending) {
            return Err(SyncError::NotPending(r.record_id.clone()));
        }
        let records = if include_series {
            records
        } else {
            records.iter().map(FeatureRecord::summary_only).collect()
        };
        Ok(Self {
            gateway_id: gateway_id.to_owned(),
            schema_version: SCHEMA_VERSION,
            records,
            sent_at: now_utc(),
        })
    }

    pub fn record_ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.record_id.clone()).collect()
    }
}

/// Successful response body: the ids the receiver has durably accepted,
/// including ones it had already seen.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncAck {
    pub accepted: Vec<String>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SendError {
    /// Worth retrying: network failure, timeout, 5xx, 408, 429.
    #[error("transient upload failure: {0}")]
    Transient(String),
    /// The receiver refused the payload itself (schema mismatch and other 4xx).
    #[error("upload rejected: {0}")]
    Permanent(String),
}

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("batch of {len} records outside [1, {max}]")]
    BatchSize { len: usize, max: usize },
    #[error("record {0} is not pending")]
    NotPending(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Send(#[from] SendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordOutcome {
    Synced,
    /// Still pending; a later pass retries it.
    Retry,
    DeadLetter,
}

/// Per-record result of one upload attempt.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchReport {
    pub outcomes: Vec<(String, RecordOutcome)>,
    pub error: Option<SendError>,
}

impl BatchReport {
    pub fn count(&self, outcome: RecordOutcome) -> usize {
        self.outcomes.iter().filter(|(_, o)| *o == outcome).count()
    }
}

/// Sends one envelope and applies the resulting state transitions.
pub async fn sync_batch<T: CloudTransport>(
    store: &RecordStore,
    transport: &T,
    envelope: &SyncEnvelope,
) -> Result<BatchReport, StoreError> {
    let ids = envelope.record_ids();
    match transport.send(envelope).await {
        Ok(ack) => {
            let accepted: Vec<String> = ids
                .iter()
                .filter(|id| ack.accepted.contains(id))
                .cloned()
                .collect();
            store.mark_synced(&accepted)?;
            let outcomes = ids
                .into_iter()
                .map(|id| {
                    let o = if accepted.contains(&id) {
                        RecordOutcome::Synced
                    } else {
                        RecordOutcome::Retry
                    };
                    (id, o)
                })
                .collect();
            Ok(BatchReport {
                outcomes,
                error: None,
            })
        }
        Err(SendError::Permanent(reason)) => {
            store.mark_dead_letter(&ids, &reason)?;
            Ok(BatchReport {
                outcomes: ids
                    .into_iter()
                    .map(|id| (id, RecordOutcome::DeadLetter))
                    .collect(),
                error: Some(SendError::Permanent(reason)),
            })
        }
        Err(e) => Ok(BatchReport {
            outcomes: ids.into_iter().map(|id| (id, RecordOutcome::Retry)).collect(),
            error: Some(e),
        }),
    }
}

/// Settings read at the start of every sync pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncSettings {
    pub gateway_id: String,
    pub max_batch: usize,
    pub include_series: bool,
}

/// Summary of a drain pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PassReport {
    pub synced: usize,
    pub dead_lettered: usize,
    /// Set when the pass stopped on a transient failure; the worker's
    /// backoff delay says when to try again.
    pub retry_after: Option<Duration>,
    pub last_error: Option<String>,
}

/// Background uploader: drains pending records batch by batch and tracks
/// consecutive failures for backoff.
pub struct SyncWorker {
    store: Arc<RecordStore>,
    backoff: Backoff,
    failures: u32,
    rng: StdRng,
}

impl SyncWorker {
    pub fn new(store: Arc<RecordStore>, backoff: Backoff) -> Self {
        Self {
            store,
            backoff,
            failures: 0,
            rng: StdRng::from_os_rng(),
        }
    }

    pub fn with_seed(store: Arc<RecordStore>, backoff: Backoff, seed: u64) -> Self {
        Self {
            store,
            backoff,
            failures: 0,
            rng: StdRng::seed_from_u64(seed),
        }
    }

    pub fn consecutive_failures(&self) -> u32 {
        self.failures
    }

    /// Uploads pending records until none remain or an attempt fails.
    pub async fn drain<T: CloudTransport>(
        &mut self,
        transport: &T,
        settings: &SyncSettings,
    ) -> Result<PassReport, StoreError> {
        let mut pass = PassReport::default();
        let max_batch = settings.max_batch.max(1);
        loop {
            let batch = self.store.load_pending(max_batch);
            if batch.is_empty() {
                return Ok(pass);
            }
            let envelope = SyncEnvelope::new(
                &settings.gateway_id,
                batch,
                max_batch,
                settings.include_series,
            )
            .expect("pending batch within bounds");
            let report = sync_batch(&self.store, transport, &envelope).await?;
            pass.synced += report.count(RecordOutcome::Synced);
            pass.dead_lettered += report.count(RecordOutcome::DeadLetter);
            match report.error {
                Some(SendError::Transient(msg)) => {
                    pass.retry_after = Some(self.backoff.delay(self.failures, &mut self.rng));
                    self.failures = self.failures.saturating_add(1);
                    tracing::warn!(error = %msg, attempt = self.failures, "sync attempt failed");
                    pass.last_error = Some(msg);
                    return Ok(pass);
                }
                Some(SendError::Permanent(msg)) => {
                    tracing::error!(error = %msg, "batch rejected upstream; dead-lettered");
                    self.failures = 0;
                    pass.last_error = Some(msg);
                }
                None => {
                    self.failures = 0;
                    if report.count(RecordOutcome::Synced) == 0 {
                        // acked without accepting anything; avoid spinning
                        pass.retry_after = Some(self.backoff.delay(0, &mut self.rng));
                        return Ok(pass);
                    }
                }
            }
        }
    }
}
