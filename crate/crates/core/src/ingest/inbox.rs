//! Inbox directory scanning and polling watcher.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::mpsc;

use super::IngestError;
use crate::util::now_utc;

/// A `.wav` file found in the inbox.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InboxEvent {
    pub path: PathBuf,
    /// SHA-256 of the file bytes, lowercase hex.
    pub file_id: String,
    pub observed_at: DateTime<Utc>,
    pub size_bytes: u64,
}

impl InboxEvent {
    /// Builds an event for an arbitrary file, hashing its current contents.
    pub fn from_path(path: impl Into<PathBuf>) -> Result<Self, IngestError> {
        let path = path.into();
        let bytes = fs::read(&path).map_err(|e| IngestError::io(&path, e))?;
        Ok(Self {
            file_id: compute_file_id(&bytes),
            size_bytes: bytes.len() as u64,
            observed_at: now_utc(),
            path,
        })
    }

    pub fn file_name(&self) -> String {
        self.path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Content identity of a file: SHA-256 as lowercase hex.
pub fn compute_file_id(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Lookup of file ids that already have a persisted record.
pub trait ProcessedLedger {
    fn is_processed(&self, file_id: &str) -> bool;
}

impl ProcessedLedger for HashSet<String> {
    fn is_processed(&self, file_id: &str) -> bool {
        self.contains(file_id)
    }
}

impl<T: ProcessedLedger + ?Sized> ProcessedLedger for &T {
    fn is_processed(&self, file_id: &str) -> bool {
        (**self).is_processed(file_id)
    }
}

impl<T: ProcessedLedger + ?Sized> ProcessedLedger for std::sync::Arc<T> {
    fn is_processed(&self, file_id: &str) -> bool {
        (**self).is_processed(file_id)
    }
}

/// Non-recursive `.wav` listing (case-insensitive), sorted by file name,
/// with the current size of each file.
fn list_wavs(dir: &Path) -> Result<Vec<(PathBuf, u64)>, IngestError> {
    let entries = fs::read_dir(dir).map_err(|e| IngestError::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| IngestError::io(dir, e))?;
        let path = entry.path();
        let is_wav = path
            .extension()
            .is_some_and(|ext| ext.eq_ignore_ascii_case("wav"));
        if !is_wav {
            continue;
        }
        // follows symlinks; files vanishing mid-listing are skipped
        match fs::metadata(&path) {
            Ok(meta) if meta.is_file() => found.push((path, meta.len())),
            _ => continue,
        }
    }
    found.sort_by(|a, b| a.0.file_name().cmp(&b.0.file_name()));
    Ok(found)
}

fn event_for(path: PathBuf) -> Result<Option<InboxEvent>, IngestError> {
    match fs::read(&path) {
        Ok(bytes) => Ok(Some(InboxEvent {
            file_id: compute_file_id(&bytes),
            size_bytes: bytes.len() as u64,
            observed_at: now_utc(),
            path,
        })),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(IngestError::io(&path, e)),
    }
}

/// Lists unprocessed `.wav` files in `dir`, sorted lexicographically.
pub fn scan_inbox(dir: &Path, ledger: &dyn ProcessedLedger) -> Result<Vec<InboxEvent>, IngestError> {
    let mut events = Vec::new();
    for (path, _) in list_wavs(dir)? {
        if let Some(ev) = event_for(path)? {
            if !ledger.is_processed(&ev.file_id) {
                events.push(ev);
            }
        }
    }
    Ok(events)
}

/// Polling watcher. A file is emitted once its size has been the same on two
/// consecutive polls, and each file id is emitted at most once per watcher.
#[derive(Debug)]
pub struct InboxWatcher {
    dir: PathBuf,
    last_sizes: HashMap<PathBuf, u64>,
    emitted_paths: HashMap<PathBuf, u64>,
    emitted_ids: HashSet<String>,
}

impl InboxWatcher {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            last_sizes: HashMap::new(),
            emitted_paths: HashMap::new(),
            emitted_ids: HashSet::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Runs one poll and returns the files that became stable.
    pub fn poll(&mut self, ledger: &dyn ProcessedLedger) -> Result<Vec<InboxEvent>, IngestError> {
        let listing = list_wavs(&self.dir)?;
        let mut sizes = HashMap::with_capacity(listing.len());
        let mut out = Vec::new();
        for (path, size) in listing {
            sizes.insert(path.clone(), size);
            // unchanged since it was emitted; skip re-hashing
            if self.emitted_paths.get(&path) == Some(&size) {
                continue;
            }
            if self.last_sizes.get(&path) != Some(&size) {
                continue;
            }
            let Some(ev) = event_for(path.clone())? else {
                continue;
            };
            if ev.size_bytes != size {
                // grew between listing and read; wait for the next poll
                sizes.insert(path, ev.size_bytes);
                continue;
            }
            self.emitted_paths.insert(path, size);
            if ledger.is_processed(&ev.file_id) || !self.emitted_ids.insert(ev.file_id.clone()) {
                continue;
            }
            out.push(ev);
        }
        self.emitted_paths.retain(|p, _| sizes.contains_key(p));
        self.last_sizes = sizes;
        Ok(out)
    }
}

/// Polls `dir` every `poll_interval` and streams stable files. The stream
/// ends after the first error (for example the directory disappearing),
/// which is delivered as the final item.
pub fn watch_inbox<L>(
    dir: impl Into<PathBuf>,
    poll_interval: Duration,
    ledger: L,
) -> mpsc::Receiver<Result<InboxEvent, IngestError>>
where
    L: ProcessedLedger + Send + 'static,
{
    let (tx, rx) = mpsc::channel(64);
    let mut watcher = InboxWatcher::new(dir);
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(poll_interval);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            ticker.tick().await;
            match watcher.poll(&ledger) {
                Ok(events) => {
                    for ev in events {
                        if tx.send(Ok(ev)).await.is_err() {
                            return;
                        }
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e)).await;
                    return;
                }
            }
        }
    });
    rx
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn none() -> HashSet<String> {
        HashSet::new()
    }

    fn names(events: &[InboxEvent]) -> Vec<String> {
        events.iter().map(|e| e.file_name()).collect()
    }

    #[test]
    fn file_id_properties() {
        assert_eq!(compute_file_id(b"abc"), compute_file_id(b"abc"));
        assert_ne!(compute_file_id(b"abc"), compute_file_id(b"abd"));
        assert_eq!(
            compute_file_id(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn scan_empty_dir() {
        let dir = tempfile::tempdir().unwrap();
        assert!(scan_inbox(dir.path(), &none()).unwrap().is_empty());
    }

    #[test]
    fn scan_filters_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.wav"), b"bbb").unwrap();
        fs::write(dir.path().join("a.wav"), b"aaa").unwrap();
        fs::write(dir.path().join("notes.txt"), b"x").unwrap();
        fs::write(dir.path().join("C.WAV"), b"ccc").unwrap();
        fs::create_dir(dir.path().join("sub.wav")).unwrap();
        let events = scan_inbox(dir.path(), &none()).unwrap();
        assert_eq!(names(&events), vec!["C.WAV", "a.wav", "b.wav"]);
        assert_eq!(events[1].file_id, compute_file_id(b"aaa"));
        assert_eq!(events[1].size_bytes, 3);
    }

    #[test]
    fn scan_skips_processed_ids() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.wav"), b"aaa").unwrap();
        fs::write(dir.path().join("b.wav"), b"bbb").unwrap();
        let done: HashSet<String> = [compute_file_id(b"aaa")].into_iter().collect();
        assert_eq!(names(&scan_inbox(dir.path(), &done).unwrap()), vec!["b.wav"]);
    }

    #[test]
    fn scan_missing_dir_errors() {
        let dir = tempfile::tempdir().unwrap();
        let gone = dir.path().join("nope");
        assert!(matches!(scan_inbox(&gone, &none()), Err(IngestError::Io { .. })));
    }

    #[test]
    fn watcher_emits_after_two_stable_polls() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = InboxWatcher::new(dir.path());
        fs::write(dir.path().join("a.wav"), b"aaaa").unwrap();
        assert!(w.poll(&none()).unwrap().is_empty());
        let ev = w.poll(&none()).unwrap();
        assert_eq!(names(&ev), vec!["a.wav"]);
        assert!(w.poll(&none()).unwrap().is_empty());
        assert!(w.poll(&none()).unwrap().is_empty());
    }

    #[test]
    fn watcher_waits_for_growing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let mut w = InboxWatcher::new(dir.path());
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(b"aa").unwrap();
        assert!(w.poll(&none()).unwrap().is_empty());
        f.write_all(b"bb").unwrap();
        assert!(w.poll(&none()).unwrap().is_empty());
        f.write_all(b"cc").unwrap();
        assert!(w.poll(&none()).unwrap().is_empty());
        assert_eq!(w.poll(&none()).unwrap().len(), 1);
    }

    #[test]
    fn watcher_orders_files_within_a_poll() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = InboxWatcher::new(dir.path());
        fs::write(dir.path().join("z.wav"), b"z").unwrap();
        fs::write(dir.path().join("m.wav"), b"m").unwrap();
        w.poll(&none()).unwrap();
        assert_eq!(names(&w.poll(&none()).unwrap()), vec!["m.wav", "z.wav"]);
    }

    #[test]
    fn watcher_never_repeats_an_id() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = InboxWatcher::new(dir.path());
        fs::write(dir.path().join("a.wav"), b"same").unwrap();
        w.poll(&none()).unwrap();
        assert_eq!(w.poll(&none()).unwrap().len(), 1);
        // identical content under a new name
        fs::write(dir.path().join("b.wav"), b"same").unwrap();
        w.poll(&none()).unwrap();
        assert!(w.poll(&none()).unwrap().is_empty());
        // removed and re-dropped
        fs::remove_file(dir.path().join("a.wav")).unwrap();
        w.poll(&none()).unwrap();
        fs::write(dir.path().join("a.wav"), b"same").unwrap();
        w.poll(&none()).unwrap();
        assert!(w.poll(&none()).unwrap().is_empty());
    }

    #[test]
    fn watcher_reports_vanished_dir() {
        let dir = tempfile::tempdir().unwrap();
        let inbox = dir.path().join("inbox");
        fs::create_dir(&inbox).unwrap();
        let mut w = InboxWatcher::new(&inbox);
        w.poll(&none()).unwrap();
        fs::remove_dir_all(&inbox).unwrap();
        assert!(w.poll(&none()).is_err());
    }

    #[tokio::test]
    async fn watch_stream_emits_once_then_ends_on_error() {
        let dir = tempfile::tempdir().unwrap();
        let inbox = dir.path().join("inbox");
        fs::create_dir(&inbox).unwrap();
        fs::write(inbox.join("a.wav"), b"aaaa").unwrap();
        let mut rx = watch_inbox(&inbox, Duration::from_millis(10), none());
        let first = rx.recv().await.unwrap().unwrap();
        assert_eq!(first.file_name(), "a.wav");
        tokio::time::sleep(Duration::from_millis(50)).await;
        fs::remove_dir_all(&inbox).unwrap();
        let next = rx.recv().await.unwrap();
        assert!(next.is_err());
        assert!(rx.recv().await.is_none());
    }
}
