use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch, Semaphore};
use tokio::task::JoinSet;

use super::admin::{serve_admin_endpoint, AdminState};
use super::config::{ConfigError, ConfigHandle, GatewayConfig};
use super::pipeline::{CrashPlan, Pipeline, PipelineError, PipelineStats};
use crate::ingest::{InboxEvent, InboxWatcher};
use crate::store::{RecordStore, StoreError};
use crate::sync::{HttpTransport, SyncWorker};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot prepare {path}: {source}")]
    Dir {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("cannot bind admin endpoint on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("admin endpoint failed: {0}")]
    Serve(std::io::Error),
}

/// A running gateway's shared parts: effective config, record store and
/// pipeline counters.
#[derive(Debug, Clone)]
pub struct Gateway {
    config: ConfigHandle,
    pipeline: Arc<Pipeline>,
    started: Instant,
}

impl Gateway {
    /// Validates `config`, creates the inbox and data directories and opens
    /// the store.
    pub fn open(config: GatewayConfig, crash: Option<CrashPlan>) -> Result<Self, GatewayError> {
        config.validate()?;
        for dir in [&config.inbox_dir, &config.data_dir] {
            std::fs::create_dir_all(dir).map_err(|source| GatewayError::Dir {
                path: dir.clone(),
                source,
            })?;
        }
        let store = Arc::new(RecordStore::open(&config.data_dir)?);
        Ok(Self {
            config: ConfigHandle::new(config),
            pipeline: Arc::new(Pipeline::new(store).with_crash_plan(crash)),
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &ConfigHandle {
        &self.config
    }

    pub fn store(&self) -> &Arc<RecordStore> {
        self.pipeline.store()
    }

    pub fn stats(&self) -> &Arc<PipelineStats> {
        self.pipeline.stats()
    }

    pub fn pipeline(&self) -> &Arc<Pipeline> {
        &self.pipeline
    }

    pub fn admin_state(&self) -> AdminState {
        AdminState {
            config: self.config.clone(),
            store: self.store().clone(),
            stats: self.stats().clone(),
            started: self.started,
        }
    }

    /// Runs watcher, pipeline workers and sync worker until `shutdown`
    /// turns true. In-flight files finish before this returns.
    pub async fn run(&self, shutdown: watch::Receiver<bool>) -> Result<(), GatewayError> {
        let (tx, rx) = mpsc::channel::<InboxEvent>(64);
        let watcher = tokio::spawn(watch_loop(self.clone(), tx, shutdown.clone()));
        let sync = tokio::spawn(sync_loop(self.clone(), shutdown.clone()));
        let workers = self.dispatch(rx, shutdown).await;
        let _ = watcher.await;
        let _ = sync.await;
        workers
    }

    /// Like [`Gateway::run`], plus the admin endpoint on `admin_bind`.
    pub async fn serve(&self, shutdown: watch::Receiver<bool>) -> Result<(), GatewayError> {
        let addr = self.config.snapshot().admin_bind.clone();
        let listener = TcpListener::bind(&addr)
            .await
            .map_err(|source| GatewayError::Bind { addr, source })?;
        self.serve_on(listener, shutdown).await
    }

    pub async fn serve_on(
        &self,
        listener: TcpListener,
        shutdown: watch::Receiver<bool>,
    ) -> Result<(), GatewayError> {
        if let Ok(addr) = listener.local_addr() {
            tracing::info!(%addr, "admin endpoint listening");
        }
        let mut stop = shutdown.clone();
        let admin = tokio::spawn(serve_admin_endpoint(listener, self.admin_state(), async move {
            let _ = stop.wait_for(|s| *s).await;
        }));
        let run = self.run(shutdown).await;
        let served = admin.await.unwrap_or(Ok(()));
        run?;
        served.map_err(GatewayError::Serve)
    }

    async fn dispatch(
        &self,
        mut rx: mpsc::Receiver<InboxEvent>,
        mut shutdown: watch::Receiver<bool>,
    ) -> Result<(), GatewayError> {
        let parallelism = self.config.snapshot().parallelism;
        let permits = Arc::new(Semaphore::new(parallelism));
        let mut running = JoinSet::new();
        loop {
            let event = tokio::select! {
                _ = shutdown.wait_for(|s| *s) => break,
                ev = rx.recv() => match ev {
                    Some(ev) => ev,
                    None => break,
                },
            };
            let permit = tokio::select! {
                _ = shutdown.wait_for(|s| *s) => break,
                p = permits.clone().acquire_owned() => p.expect("semaphore open"),
            };
            // file boundary: the config in force now is the one this file uses
            let config = self.config.snapshot();
            let pipeline = self.pipeline.clone();
            running.spawn_blocking(move || {
                let outcome = pipeline.process(&event, &config);
                drop(permit);
                if let Err(e) = &outcome {
                    if !matches!(e, PipelineError::Crashed(_)) {
                        tracing::error!(file = %event.file_name(), error = %e, "processing failed");
                    }
                }
            });
            while running.try_join_next().is_some() {}
        }
        while running.join_next().await.is_some() {}
        Ok(())
    }
}

async fn watch_loop(gw: Gateway, tx: mpsc::Sender<InboxEvent>, mut shutdown: watch::Receiver<bool>) {
    let mut watcher = InboxWatcher::new(gw.config.snapshot().inbox_dir.clone());
    let mut failing = false;
    loop {
        match watcher.poll(gw.store().as_ref()) {
            Ok(events) => {
                failing = false;
                for ev in events {
                    if tx.send(ev).await.is_err() {
                        return;
                    }
                }
            }
            Err(e) => {
                if !failing {
                    tracing::error!(error = %e, "inbox poll failed");
                    gw.stats().note_error(format!("inbox: {e}"));
                }
                failing = true;
            }
        }
        let interval = gw.config.snapshot().poll_interval();
        tokio::select! {
            _ = shutdown.wait_for(|s| *s) => return,
            _ = tokio::time::sleep(interval) => {}
        }
    }
}

async fn sync_loop(gw: Gateway, mut shutdown: watch::Receiver<bool>) {
    let initial = gw.config.snapshot();
    let mut worker = SyncWorker::new(gw.store().clone(), initial.backoff());
    let mut transport: Option<(String, Option<String>, Duration, HttpTransport)> = None;
    loop {
        let cfg = gw.config.snapshot();
        let delay = if cfg.cloud_url.is_empty() {
            cfg.sync_interval()
        } else {
            let key = (cfg.cloud_url.clone(), cfg.cloud_token.clone(), cfg.upload_timeout());
            let stale = !matches!(&transport, Some((u, t, d, _)) if (u, t, d) == (&key.0, &key.1, &key.2));
            if stale {
                let http = HttpTransport::new(key.0.clone(), key.1.clone(), key.2);
                transport = Some((key.0, key.1, key.2, http));
            }
            let http = &transport.as_ref().expect("transport set above").3;
            let settings = cfg.sync_settings();
            let pass = tokio::select! {
                _ = shutdown.wait_for(|s| *s) => return,
                p = worker.drain(http, &settings) => p,
            };
            match pass {
                Ok(pass) => {
                    if pass.synced > 0 {
                        tracing::info!(synced = pass.synced, "records synced");
                    }
                    if let Some(e) = pass.last_error {
                        gw.stats().note_error(format!("sync: {e}"));
                    }
                    pass.retry_after.unwrap_or_else(|| cfg.sync_interval())
                }
                Err(e) => {
                    tracing::error!(error = %e, "sync pass failed");
                    gw.stats().note_error(format!("sync: {e}"));
                    cfg.sync_interval()
                }
            }
        };
        tokio::select! {
            _ = shutdown.wait_for(|s| *s) => return,
            _ = tokio::time::sleep(delay) => {}
        }
    }
}
