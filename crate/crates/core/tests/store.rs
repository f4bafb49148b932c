mod common;

use std::fs;

use common::record;
use fogspeech_core::record::SyncState;
use fogspeech_core::store::{RecordStore, StoreError, StoreFault, RECORDS_FILE, STATE_FILE};

fn ids(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn empty_store_has_nothing_pending() {
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::open(dir.path()).unwrap();
    assert!(store.load_pending(10).is_empty());
    assert!(store.is_empty());
}

#[test]
fn persisted_record_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    {
        let store = RecordStore::open(dir.path()).unwrap();
        assert!(store.persist_record(&record("a", 0)).unwrap().is_new());
    }
    let store = RecordStore::open(dir.path()).unwrap();
    let pending = store.load_pending(10);
    assert_eq!(pending.len(), 1);
    assert_eq!(pending[0], record("a", 0));
}

#[test]
fn persisting_twice_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::open(dir.path()).unwrap();
    store.persist_record(&record("a", 0)).unwrap();
    let mut changed = record("a", 5);
    changed.source_name = "other.wav".into();
    let second = store.persist_record(&changed).unwrap();
    assert!(!second.is_new());
    assert_eq!(second.record().source_name, "a.wav");
    assert_eq!(store.len(), 1);
    let lines = fs::read_to_string(dir.path().join(RECORDS_FILE)).unwrap();
    assert_eq!(lines.lines().count(), 1);
}

#[test]
fn pending_excludes_synced_and_is_oldest_first() {
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::open(dir.path()).unwrap();
    for (id, minute) in [("c", 3), ("a", 1), ("s1", 0), ("b", 2), ("s2", 4)] {
        store.persist_record(&record(id, minute)).unwrap();
    }
    store.mark_synced(&ids(&["s1", "s2"])).unwrap();
    let pending: Vec<_> = store.load_pending(10).into_iter().map(|r| r.record_id).collect();
    assert_eq!(pending, ids(&["a", "b", "c"]));
    assert_eq!(store.load_pending(2).len(), 2);
}

#[test]
fn mark_synced_reports_each_id() {
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::open(dir.path()).unwrap();
    store.persist_record(&record("a", 0)).unwrap();
    store.persist_record(&record("b", 1)).unwrap();

    let r = store.mark_synced(&ids(&["a"])).unwrap();
    assert_eq!(r.applied, ids(&["a"]));
    assert!(store.load_pending(10).iter().all(|x| x.record_id != "a"));

    let r = store.mark_synced(&ids(&["a"])).unwrap();
    assert!(r.applied.is_empty());
    assert_eq!(r.unchanged, ids(&["a"]));

    let r = store.mark_synced(&ids(&["b", "zzz"])).unwrap();
    assert_eq!(r.applied, ids(&["b"]));
    assert_eq!(r.unknown, ids(&["zzz"]));
    assert_eq!(store.state_of("b"), Some(SyncState::Synced));
}

#[test]
fn synced_state_is_durable_and_monotone() {
    let dir = tempfile::tempdir().unwrap();
    {
        let store = RecordStore::open(dir.path()).unwrap();
        store.persist_record(&record("a", 0)).unwrap();
        store.persist_record(&record("b", 1)).unwrap();
        store.mark_synced(&ids(&["a"])).unwrap();
        store.mark_dead_letter(&ids(&["b"]), "schema mismatch").unwrap();
        // neither terminal state may be left
        let r = store.mark_synced(&ids(&["b"])).unwrap();
        assert_eq!(r.refused, ids(&["b"]));
        let r = store.mark_dead_letter(&ids(&["a"]), "late").unwrap();
        assert_eq!(r.refused, ids(&["a"]));
        // re-persisting a synced record does not make it pending again
        store.persist_record(&record("a", 0)).unwrap();
    }
    let store = RecordStore::open(dir.path()).unwrap();
    assert_eq!(store.state_of("a"), Some(SyncState::Synced));
    assert_eq!(store.state_of("b"), Some(SyncState::DeadLetter));
    assert!(store.load_pending(10).is_empty());
    let c = store.counts();
    assert_eq!((c.pending, c.synced, c.dead_letter), (0, 1, 1));
}

#[test]
fn injected_write_failure_leaves_no_trace() {
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::open(dir.path()).unwrap();
    store.persist_record(&record("a", 0)).unwrap();
    store.inject_fault(StoreFault::FailNextWrite);
    assert!(matches!(
        store.persist_record(&record("b", 1)),
        Err(StoreError::Injected)
    ));
    assert!(!store.contains("b"));
    assert_eq!(store.load_pending(10).len(), 1);
    // the store keeps working and the retry succeeds
    store.persist_record(&record("b", 1)).unwrap();
    drop(store);
    let store = RecordStore::open(dir.path()).unwrap();
    assert_eq!(store.len(), 2);
}

#[test]
fn torn_write_is_quarantined_on_reopen() {
    let dir = tempfile::tempdir().unwrap();
    {
        let store = RecordStore::open(dir.path()).unwrap();
        store.persist_record(&record("a", 0)).unwrap();
        store.persist_record(&record("b", 1)).unwrap();
        store.inject_fault(StoreFault::TornNextWrite);
        assert!(store.persist_record(&record("c", 2)).is_err());
        assert!(matches!(
            store.persist_record(&record("d", 3)),
            Err(StoreError::Poisoned)
        ));
    }
    let store = RecordStore::open(dir.path()).unwrap();
    let pending: Vec<_> = store.load_pending(10).into_iter().map(|r| r.record_id).collect();
    assert_eq!(pending, ids(&["a", "b"]));
    let q = fs::read_to_string(dir.path().join(format!("{RECORDS_FILE}.quarantine"))).unwrap();
    assert_eq!(q.lines().count(), 1);
    // appends after recovery land on a clean line boundary
    store.persist_record(&record("c", 2)).unwrap();
    drop(store);
    let store = RecordStore::open(dir.path()).unwrap();
    assert_eq!(store.len(), 3);
}

#[test]
fn corrupt_lines_anywhere_are_quarantined() {
    let dir = tempfile::tempdir().unwrap();
    {
        let store = RecordStore::open(dir.path()).unwrap();
        store.persist_record(&record("a", 0)).unwrap();
        store.persist_record(&record("b", 1)).unwrap();
        store.mark_synced(&ids(&["a"])).unwrap();
    }
    let path = dir.path().join(RECORDS_FILE);
    let content = fs::read_to_string(&path).unwrap();
    fs::write(&path, format!("{{not json\n{content}garbage-tail")).unwrap();
    let state_path = dir.path().join(STATE_FILE);
    let mut state = fs::read_to_string(&state_path).unwrap();
    state.push_str("{\"record_id\":\"b\",\"sta");
    fs::write(&state_path, state).unwrap();

    let store = RecordStore::open(dir.path()).unwrap();
    assert_eq!(store.len(), 2);
    assert_eq!(store.state_of("a"), Some(SyncState::Synced));
    assert_eq!(store.state_of("b"), Some(SyncState::Pending));
    let q = fs::read_to_string(dir.path().join(format!("{RECORDS_FILE}.quarantine"))).unwrap();
    assert_eq!(q.lines().collect::<Vec<_>>(), vec!["{not json", "garbage-tail"]);
    assert!(dir.path().join(format!("{STATE_FILE}.quarantine")).exists());
}

#[test]
fn failed_state_write_keeps_record_pending() {
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::open(dir.path()).unwrap();
    store.persist_record(&record("a", 0)).unwrap();
    store.inject_fault(StoreFault::FailNextWrite);
    assert!(store.mark_synced(&ids(&["a"])).is_err());
    assert_eq!(store.state_of("a"), Some(SyncState::Pending));
}

#[test]
fn rejects_records_with_impossible_timings() {
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::open(dir.path()).unwrap();
    let mut r = record("a", 0);
    r.duration_s = 0.0;
    assert!(matches!(store.persist_record(&r), Err(StoreError::Invalid(_))));
    r.duration_s = 1.0;
    r.processing_time_s = -1.0;
    assert!(store.persist_record(&r).is_err());
}
