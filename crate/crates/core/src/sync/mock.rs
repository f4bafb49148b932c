//! In-process stand-in for the cloud endpoint, with fault injection.
//!
//! It deduplicates by `record_id`, so at-least-once delivery from the
//! gateway shows up as exactly one entry per record in its commit log.

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::{SyncAck, SyncEnvelope, SCHEMA_VERSION};

pub const INGEST_PATH: &str = "/ingest";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockFaults {
    /// Probability of answering 503 without committing anything.
    pub drop_before_commit: f64,
    /// Probability of committing the batch and then answering 503, as if the
    /// ack were lost on the way back.
    pub drop_ack_after_commit: f64,
    /// Sleep between commit and response.
    pub ack_delay: Duration,
    /// The next `fail_next` requests get 503 before commit, regardless of
    /// the probabilities above.
    pub fail_next: u32,
    /// Answer 422 to every request, as for a schema the server refuses.
    pub reject_all: bool,
    /// When set, requests must carry this bearer token.
    pub require_token: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MockStats {
    pub requests: usize,
    /// Record ids in first-commit order; each id appears once.
    pub commit_log: Vec<String>,
    /// Deliveries of ids that were already committed.
    pub duplicate_deliveries: usize,
    /// How many times each id arrived in a request that reached commit.
    pub delivery_counts: HashMap<String, usize>,
}

struct Inner {
    faults: MockFaults,
    rng: StdRng,
    dedupe: HashSet<String>,
    stats: MockStats,
}

type Shared = Arc<Mutex<Inner>>;

pub struct MockCloud {
    addr: SocketAddr,
    state: Shared,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl MockCloud {
    /// Binds an ephemeral loopback port and starts serving.
    pub async fn start(faults: MockFaults, seed: u64) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let state: Shared = Arc::new(Mutex::new(Inner {
            faults,
            rng: StdRng::seed_from_u64(seed),
            dedupe: HashSet::new(),
            stats: MockStats::default(),
        }));
        let app = Router::new()
            .route(INGEST_PATH, post(ingest))
            .with_state(state.clone());
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(Self {
            addr,
            state,
            shutdown: Some(tx),
            task,
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}{INGEST_PATH}", self.addr)
    }

    pub fn set_faults(&self, faults: MockFaults) {
        self.state.lock().unwrap().faults = faults;
    }

    pub fn stats(&self) -> MockStats {
        self.state.lock().unwrap().stats.clone()
    }

    pub fn committed(&self) -> HashSet<String> {
        self.state.lock().unwrap().dedupe.clone()
    }
}

impl Drop for MockCloud {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.task.abort();
    }
}

enum Plan {
    Refuse(StatusCode, String),
    Commit { lose_ack: bool, delay: Duration },
}

async fn ingest(State(state): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    let plan = {
        let mut inner = state.lock().unwrap();
        inner.stats.requests += 1;
        plan_request(&mut inner, &headers)
    };
    let (lose_ack, delay) = match plan {
        Plan::Refuse(code, msg) => return (code, msg).into_response(),
        Plan::Commit { lose_ack, delay } => (lose_ack, delay),
    };

    let envelope: SyncEnvelope = match serde_json::from_slice(&body) {
        Ok(e) => e,
        Err(e) => {
            // distinguish a wrong schema version from garbage
            let version = serde_json::from_slice::<serde_json::Value>(&body)
                .ok()
                .and_then(|v| v.get("schema_version").and_then(|s| s.as_u64()));
            return match version {
                Some(v) if v != u64::from(SCHEMA_VERSION) => {
                    (StatusCode::UNPROCESSABLE_ENTITY, format!("unsupported schema_version {v}")).into_response()
                }
                _ => (StatusCode::BAD_REQUEST, format!("malformed envelope: {e}")).into_response(),
            };
        }
    };
    if envelope.schema_version != SCHEMA_VERSION {
        return (
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("unsupported schema_version {}", envelope.schema_version),
        )
            .into_response();
    }

    let accepted = {
        let mut inner = state.lock().unwrap();
        let mut accepted = Vec::with_capacity(envelope.records.len());
        for rec in &envelope.records {
            let id = rec.record_id.clone();
            *inner.stats.delivery_counts.entry(id.clone()).or_default() += 1;
            if inner.dedupe.insert(id.clone()) {
                inner.stats.commit_log.push(id.clone());
            } else {
                inner.stats.duplicate_deliveries += 1;
            }
            accepted.push(id);
        }
        accepted
    };

    if !delay.is_zero() {
        tokio::time::sleep(delay).await;
    }
    if lose_ack {
        return (StatusCode::SERVICE_UNAVAILABLE, "ack lost").into_response();
    }
    (StatusCode::OK, Json(SyncAck { accepted })).into_response()
}

fn plan_request(inner: &mut Inner, headers: &HeaderMap) -> Plan {
    if let Some(token) = &inner.faults.require_token {
        let expected = format!("Bearer {token}");
        let ok = headers
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            == Some(expected.as_str());
        if !ok {
            return Plan::Refuse(StatusCode::UNAUTHORIZED, "missing or wrong token".into());
        }
    }
    if inner.faults.reject_all {
        return Plan::Refuse(StatusCode::UNPROCESSABLE_ENTITY, "schema rejected".into());
    }
    if inner.faults.fail_next > 0 {
        inner.faults.fail_next -= 1;
        return Plan::Refuse(StatusCode::SERVICE_UNAVAILABLE, "injected failure".into());
    }
    let drop_p = inner.faults.drop_before_commit;
    if drop_p > 0.0 && inner.rng.random_bool(drop_p.min(1.0)) {
        return Plan::Refuse(StatusCode::SERVICE_UNAVAILABLE, "dropped".into());
    }
    let lose_p = inner.faults.drop_ack_after_commit;
    let lose_ack = lose_p > 0.0 && inner.rng.random_bool(lose_p.min(1.0));
    Plan::Commit {
        lose_ack,
        delay: inner.faults.ack_delay,
    }
}
