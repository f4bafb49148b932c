//! Durable local record store.
//!
//! Two append-only newline-delimited JSON files live under the data
//! directory: `records.jsonl` holds one [`FeatureRecord`] per line, written
//! once, and `sync_state.jsonl` holds state transitions keyed by record id.
//! Every append is flushed to disk before the call returns. On open, lines
//! that fail to parse (typically a torn final write) are moved to a
//! `.quarantine` side file and the log is rewritten without them.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ProcessedLedger;
use crate::record::{FeatureRecord, SyncState};
use crate::util::now_utc;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const STATE_FILE: &str = "sync_state.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("record serialization failed: {0}")]
    Encode(#[from] serde_json::Error),
    #[error("injected write failure")]
    Injected,
    #[error("store is unusable after a torn write; reopen it")]
    Poisoned,
    #[error("invalid record: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Failure to inject into the next append, for crash testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreFault {
    /// The append fails cleanly; nothing reaches the file.
    FailNextWrite,
    /// Half the line reaches the file and the store then behaves like a
    /// crashed process: every later call fails until it is reopened.
    TornNextWrite,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Persisted {
    Inserted(FeatureRecord),
    /// The id was already stored; this is the stored copy.
    Existing(FeatureRecord),
}

impl Persisted {
    pub fn record(&self) -> &FeatureRecord {
        match self {
            Persisted::Inserted(r) | Persisted::Existing(r) => r,
        }
    }

    pub fn is_new(&self) -> bool {
        matches!(self, Persisted::Inserted(_))
    }
}

/// Outcome of a batch state transition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransitionReport {
    pub applied: Vec<String>,
    /// Ids already in the target state.
    pub unchanged: Vec<String>,
    /// Ids in a state the transition may not leave (e.g. dead-letter to synced).
    pub refused: Vec<String>,
    pub unknown: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreCounts {
    pub pending: usize,
    pub synced: usize,
    pub dead_letter: usize,
}

impl StoreCounts {
    pub fn total(&self) -> usize {
        self.pending + self.synced + self.dead_letter
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StateEntry {
    record_id: String,
    state: SyncState,
    at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

struct AppendLog {
    path: PathBuf,
    file: File,
    len: u64,
}

impl AppendLog {
    fn append(&mut self, bytes: &[u8], fault: Option<StoreFault>) -> Result<(), StoreError> {
        match fault {
            Some(StoreFault::FailNextWrite) => return Err(StoreError::Injected),
            Some(StoreFault::TornNextWrite) => {
                let half = &bytes[..bytes.len() / 2];
                self.file.write_all(half).map_err(io_err(&self.path))?;
                self.file.sync_data().map_err(io_err(&self.path))?;
                return Err(StoreError::Injected);
            }
            None => {}
        }
        let result = self
            .file
            .write_all(bytes)
            .and_then(|_| self.file.sync_data());
        if let Err(e) = result {
            // drop whatever part of the line made it out
            let _ = self.file.set_len(self.len);
            let _ = self.file.seek(SeekFrom::End(0));
            return Err(StoreError::Io {
                path: self.path.clone(),
                source: e,
            });
        }
        self.len += bytes.len() as u64;
        Ok(())
    }
}

struct Inner {
    records: Vec<FeatureRecord>,
    index: HashMap<String, usize>,
    records_log: AppendLog,
    state_log: AppendLog,
    fault: Option<StoreFault>,
    poisoned: bool,
}

impl Inner {
    fn take_fault(&mut self) -> Result<Option<StoreFault>, StoreError> {
        if self.poisoned {
            return Err(StoreError::Poisoned);
        }
        Ok(self.fault.take())
    }

    fn after_append(&mut self, fault: Option<StoreFault>, result: Result<(), StoreError>) -> Result<(), StoreError> {
        if result.is_err() && fault == Some(StoreFault::TornNextWrite) {
            self.poisoned = true;
        }
        result
    }

    fn transition(
        &mut self,
        ids: &[String],
        target: SyncState,
        reason: Option<&str>,
    ) -> Result<TransitionReport, StoreError> {
        let fault = self.take_fault()?;
        let mut report = TransitionReport::default();
        let mut lines = Vec::new();
        let at = now_utc();
        let mut staged: Vec<usize> = Vec::new();
        for id in ids {
            let Some(&idx) = self.index.get(id) else {
                report.unknown.push(id.clone());
                continue;
            };
            let current = self.records[idx].sync_state;
            if current == target || staged.contains(&idx) {
                report.unchanged.push(id.clone());
            } else if current == SyncState::Pending {
                let entry = StateEntry {
                    record_id: id.clone(),
                    state: target,
                    at,
                    reason: reason.map(str::to_owned),
                };
                serde_json::to_writer(&mut lines, &entry)?;
                lines.push(b'\n');
                staged.push(idx);
                report.applied.push(id.clone());
            } else {
                report.refused.push(id.clone());
            }
        }
        if !lines.is_empty() {
            let result = self.state_log.append(&lines, fault);
            self.after_append(fault, result)?;
            for idx in staged {
                self.records[idx].sync_state = target;
            }
        } else if fault.is_some() {
            // nothing written; keep the fault armed for the next append
            self.fault = fault;
        }
        Ok(report)
    }
}

/// Append-only feature record store with a durable sync-state index.
///
/// All mutation goes through one internal lock, so a single `RecordStore`
/// (typically behind an `Arc`) is the serialized writer for the gateway.
pub struct RecordStore {
    dir: PathBuf,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for RecordStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecordStore").field("dir", &self.dir).finish()
    }
}

impl RecordStore {
    /// Opens (creating if needed) the store under `dir`, recovering from any
    /// torn or corrupt lines.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;

        let records_path = dir.join(RECORDS_FILE);
        let lines = recover_log::<FeatureRecord>(&records_path)?;
        let mut records: Vec<FeatureRecord> = Vec::with_capacity(lines.len());
        let mut index = HashMap::new();
        for line in lines {
            // recover_log already proved each line parses
            let mut rec: FeatureRecord = serde_json::from_str(&line)?;
            if index.contains_key(&rec.record_id) {
                continue;
            }
            rec.sync_state = SyncState::Pending;
            index.insert(rec.record_id.clone(), records.len());
            records.push(rec);
        }
        let records_log = open_append(&records_path)?;

        let state_path = dir.join(STATE_FILE);
        let lines = recover_log::<StateEntry>(&state_path)?;
        for line in lines {
            let entry: StateEntry = serde_json::from_str(&line)?;
            if let Some(&idx) = index.get(&entry.record_id) {
                let rec = &mut records[idx];
                if rec.sync_state == SyncState::Pending {
                    rec.sync_state = entry.state;
                }
            }
        }
        let state_log = open_append(&state_path)?;

        Ok(Self {
            dir,
            inner: Mutex::new(Inner {
                records,
                index,
                records_log,
                state_log,
                fault: None,
                poisoned: false,
            }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Arms a fault for the next append to either log.
    pub fn inject_fault(&self, fault: StoreFault) {
        self.lock().fault = Some(fault);
    }

    /// Durably appends a new record in the pending state. Persisting an id
    /// that is already stored is a no-op returning the stored copy.
    pub fn persist_record(&self, record: &FeatureRecord) -> Result<Persisted, StoreError> {
        if record.duration_s.is_nan()
            || record.duration_s <= 0.0
            || record.processing_time_s.is_nan()
            || record.processing_time_s < 0.0
        {
            return Err(StoreError::Invalid(format!(
                "record {} has duration {} and processing time {}",
                record.record_id, record.duration_s, record.processing_time_s
            )));
        }
        let mut inner = self.lock();
        if let Some(&idx) = inner.index.get(&record.record_id) {
            return Ok(Persisted::Existing(inner.records[idx].clone()));
        }
        let fault = inner.take_fault()?;
        let mut stored = record.clone();
        stored.sync_state = SyncState::Pending;
        let mut line = serde_json::to_vec(&stored)?;
        line.push(b'\n');
        let result = inner.records_log.append(&line, fault);
        inner.after_append(fault, result)?;
        let idx = inner.records.len();
        inner.index.insert(stored.record_id.clone(), idx);
        inner.records.push(stored.clone());
        Ok(Persisted::Inserted(stored))
    }

    /// Up to `limit` pending records, oldest `processed_at` first.
    pub fn load_pending(&self, limit: usize) -> Vec<FeatureRecord> {
        let inner = self.lock();
        let mut pending: Vec<(usize, &FeatureRecord)> = inner
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.sync_state == SyncState::Pending)
            .collect();
        pending.sort_by(|a, b| a.1.processed_at.cmp(&b.1.processed_at).then(a.0.cmp(&b.0)));
        pending
            .into_iter()
            .take(limit)
            .map(|(_, r)| r.clone())
            .collect()
    }

    pub fn mark_synced(&self, ids: &[String]) -> Result<TransitionReport, StoreError> {
        self.lock().transition(ids, SyncState::Synced, None)
    }

    /// Parks pending records after a permanent upstream rejection.
    pub fn mark_dead_letter(&self, ids: &[String], reason: &str) -> Result<TransitionReport, StoreError> {
        self.lock().transition(ids, SyncState::DeadLetter, Some(reason))
    }

    pub fn get(&self, record_id: &str) -> Option<FeatureRecord> {
        let inner = self.lock();
        inner.index.get(record_id).map(|&i| inner.records[i].clone())
    }

    pub fn contains(&self, record_id: &str) -> bool {
        self.lock().index.contains_key(record_id)
    }

    pub fn state_of(&self, record_id: &str) -> Option<SyncState> {
        let inner = self.lock();
        inner.index.get(record_id).map(|&i| inner.records[i].sync_state)
    }

    /// Every record in insertion order.
    pub fn records(&self) -> Vec<FeatureRecord> {
        self.lock().records.clone()
    }

    pub fn len(&self) -> usize {
        self.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> StoreCounts {
        let inner = self.lock();
        let mut c = StoreCounts::default();
        for r in &inner.records {
            match r.sync_state {
                SyncState::Pending => c.pending += 1,
                SyncState::Synced => c.synced += 1,
                SyncState::DeadLetter => c.dead_letter += 1,
            }
        }
        c
    }
}

impl ProcessedLedger for RecordStore {
    fn is_processed(&self, file_id: &str) -> bool {
        self.contains(file_id)
    }
}

/// Reads a JSONL log, returning the lines that parse as `T`. Anything else is appended to `<path>.quarantine` and
/// the log is rewritten with only the good lines.
fn recover_log<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<String>, StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut good = Vec::new();
    let mut bad: Vec<&[u8]> = Vec::new();
    let mut rest = &bytes[..];
    while !rest.is_empty() {
        let (line, complete, next) = match rest.iter().position(|&b| b == b'\n') {
            Some(i) => (&rest[..i], true, &rest[i + 1..]),
            None => (rest, false, &[][..]),
        };
        rest = next;
        if line.iter().all(u8::is_ascii_whitespace) && complete {
            continue;
        }
        let parsed = std::str::from_utf8(line)
            .ok()
            .filter(|s| complete && serde_json::from_str::<T>(s).is_ok());
        match parsed {
            Some(s) => good.push(s.to_owned()),
            None => bad.push(line),
        }
    }

    if !bad.is_empty() {
        let qpath = quarantine_path(path);
        let mut q = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&qpath)
            .map_err(io_err(&qpath))?;
        for line in &bad {
            q.write_all(line).and_then(|_| q.write_all(b"\n")).map_err(io_err(&qpath))?;
        }
        q.sync_data().map_err(io_err(&qpath))?;

        let tmp = path.with_extension("jsonl.tmp");
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        for line in &good {
            f.write_all(line.as_bytes())
                .and_then(|_| f.write_all(b"\n"))
                .map_err(io_err(&tmp))?;
        }
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))?;
        tracing::warn!(
            path = %path.display(),
            quarantined = bad.len(),
            "recovered store log"
        );
    }
    Ok(good)
}

fn quarantine_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".quarantine");
    path.with_file_name(name)
}

fn open_append(path: &Path) -> Result<AppendLog, StoreError> {
    let mut file = OpenOptions::new()
        .create(true)
        .read(true)
        .write(true)
        .truncate(false)
        .open(path)
        .map_err(io_err(path))?;
    let len = file.seek(SeekFrom::End(0)).map_err(io_err(path))?;
    Ok(AppendLog {
        path: path.to_path_buf(),
        file,
        len,
    })
}
