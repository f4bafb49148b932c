use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{FrameConfig, LoudnessSettings, WindowFunction};
use crate::sync::{Backoff, SyncSettings};
use crate::util::now_utc;

/// Sample rate the frame settings are validated against before any file
/// has been seen. Each file is re-checked against its own rate.
pub const NOMINAL_SAMPLE_RATE_HZ: u32 = 44_100;

/// Prefix of environment variables that override config file values.
pub const ENV_PREFIX: &str = "FIT_";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config file {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("cannot parse configuration: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub gateway_id: String,
    pub inbox_dir: PathBuf,
    pub data_dir: PathBuf,
    /// Upload endpoint. Empty disables syncing; records stay pending.
    pub cloud_url: String,
    /// Sent as a bearer token on uploads when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cloud_token: Option<String>,
    pub sync_interval_s: f64,
    pub upload_timeout_s: f64,
    pub poll_interval_ms: u64,
    pub frame: FrameConfig,
    pub loudness: LoudnessSettings,
    /// Keep per-frame series in the local record.
    pub store_series: bool,
    /// Include per-frame series in uploads.
    pub sync_series: bool,
    /// First retry delay after a failed upload; doubles per failure.
    pub retry_base_s: f64,
    pub retry_cap_s: f64,
    pub max_batch: usize,
    pub admin_bind: String,
    /// Files analysed concurrently by the daemon.
    pub parallelism: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            gateway_id: "fog-gateway".into(),
            inbox_dir: PathBuf::from("inbox"),
            data_dir: PathBuf::from("data"),
            cloud_url: String::new(),
            cloud_token: None,
            sync_interval_s: 30.0,
            upload_timeout_s: 10.0,
            poll_interval_ms: 1000,
            frame: FrameConfig::default(),
            loudness: LoudnessSettings::default(),
            store_series: true,
            sync_series: false,
            retry_base_s: 1.0,
            retry_cap_s: 300.0,
            max_batch: 16,
            admin_bind: "127.0.0.1:8080".into(),
            parallelism: 1,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.gateway_id.trim().is_empty() {
            return invalid("gateway_id must not be empty".into());
        }
        if self.inbox_dir == self.data_dir {
            return invalid(format!(
                "inbox_dir and data_dir must differ (both {})",
                self.inbox_dir.display()
            ));
        }
        if self.rejects_dir() == self.inbox_dir {
            return invalid("rejects directory may not be the inbox".into());
        }
        if !(self.sync_interval_s.is_finite() && self.sync_interval_s > 0.0) {
            return invalid(format!("sync_interval_s must be positive, got {}", self.sync_interval_s));
        }
        if !(self.upload_timeout_s.is_finite() && self.upload_timeout_s > 0.0) {
            return invalid(format!("upload_timeout_s must be positive, got {}", self.upload_timeout_s));
        }
        if !(self.retry_base_s.is_finite() && self.retry_base_s > 0.0) {
            return invalid(format!("retry_base_s must be positive, got {}", self.retry_base_s));
        }
        if !(self.retry_cap_s.is_finite() && self.retry_cap_s >= self.retry_base_s) {
            return invalid(format!(
                "retry_cap_s must be at least retry_base_s, got {}",
                self.retry_cap_s
            ));
        }
        if self.poll_interval_ms == 0 {
            return invalid("poll_interval_ms must be positive".into());
        }
        if self.max_batch == 0 {
            return invalid("max_batch must be at least 1".into());
        }
        if self.parallelism == 0 {
            return invalid("parallelism must be at least 1".into());
        }
        if self.admin_bind.parse::<SocketAddr>().is_err() {
            return invalid(format!("admin_bind {:?} is not host:port", self.admin_bind));
        }
        if !(self.cloud_url.is_empty()
            || self.cloud_url.starts_with("http://")
            || self.cloud_url.starts_with("https://"))
        {
            return invalid(format!("cloud_url {:?} is not an http(s) URL", self.cloud_url));
        }
        self.frame
            .validate(NOMINAL_SAMPLE_RATE_HZ)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.loudness
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn rejects_dir(&self) -> PathBuf {
        self.data_dir.join("rejects")
    }

    pub fn poll_interval(&self) -> Duration {
        Duration::from_millis(self.poll_interval_ms)
    }

    pub fn sync_interval(&self) -> Duration {
        Duration::from_secs_f64(self.sync_interval_s)
    }

    pub fn upload_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.upload_timeout_s)
    }

    pub fn backoff(&self) -> Backoff {
        Backoff {
            base: Duration::from_secs_f64(self.retry_base_s),
            cap: Duration::from_secs_f64(self.retry_cap_s),
            ..Backoff::default()
        }
    }

    pub fn sync_settings(&self) -> SyncSettings {
        SyncSettings {
            gateway_id: self.gateway_id.clone(),
            max_batch: self.max_batch,
            include_series: self.sync_series,
        }
    }

    /// Copy safe to show over the admin endpoint.
    pub fn redacted(&self) -> Self {
        Self {
            cloud_token: self.cloud_token.as_ref().map(|_| "***".into()),
            ..self.clone()
        }
    }

    /// [`GatewayConfig::layered`] followed by validation.
    pub fn load<I>(path: Option<&Path>, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let cfg = Self::layered(path, env)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults, then the TOML file at `path` (if any), then `FIT_*`
    /// variables from `env`. Nested fields use a double underscore, e.g.
    /// `FIT_FRAME__WINDOW_MS=30`. Not validated, so callers can layer
    /// further overrides first.
    pub fn layered<I>(path: Option<&Path>, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Read {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })?;
                let file: GatewayConfig =
                    toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
                to_table(&file)?
            }
            None => to_table(&GatewayConfig::default())?,
        };
        for (key, value) in env {
            let Some(rest) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let path: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
            set_path(&mut table, &path, &value)
                .map_err(|m| ConfigError::Parse(format!("{key}: {m}")))?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }
}

fn to_table(cfg: &GatewayConfig) -> Result<toml::Table, ConfigError> {
    toml::Table::try_from(cfg).map_err(|e| ConfigError::Parse(e.to_string()))
}

fn set_path(table: &mut toml::Table, path: &[String], raw: &str) -> Result<(), String> {
    let (last, parents) = path.split_last().ok_or("empty key")?;
    let mut cursor = table;
    for p in parents {
        cursor = cursor
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("{p} is not a section"))?;
    }
    let value = match cursor.get(last) {
        // keep string fields as strings even when they look like numbers
        Some(toml::Value::String(_)) => toml::Value::String(raw.to_owned()),
        _ => parse_scalar(raw),
    };
    cursor.insert(last.clone(), value);
    Ok(())
}

fn parse_scalar(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

/// Partial frame settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramePatch {
    pub window_ms: Option<f64>,
    pub hop_ms: Option<f64>,
    pub fft_size: Option<usize>,
    pub silence_floor: Option<f64>,
    pub window: Option<WindowFunction>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoudnessPatch {
    pub calibration_db_spl: Option<f64>,
    pub n_bark_bands: Option<usize>,
    pub compress_exponent: Option<f64>,
    pub reference_energy: Option<f64>,
}

/// A remote change request. Only the fields below may be changed at run
/// time; paths and the admin bind address need a restart.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigUpdate {
    pub update_id: Option<String>,
    pub received_at: Option<DateTime<Utc>>,
    pub cloud_url: Option<String>,
    pub sync_interval_s: Option<f64>,
    pub upload_timeout_s: Option<f64>,
    pub poll_interval_ms: Option<u64>,
    pub store_series: Option<bool>,
    pub sync_series: Option<bool>,
    pub max_batch: Option<usize>,
    pub frame: Option<FramePatch>,
    pub loudness: Option<LoudnessPatch>,
}

fn merge<T>(slot: &mut T, value: &Option<T>)
where
    T: Clone,
{
    if let Some(v) = value {
        *slot = v.clone();
    }
}

/// Merges `update` into `current` and validates the result. On failure the
/// caller's config is untouched and the reason is returned.
pub fn apply_config_update(
    current: &GatewayConfig,
    update: &ConfigUpdate,
) -> Result<GatewayConfig, ConfigError> {
    let mut next = current.clone();
    merge(&mut next.cloud_url, &update.cloud_url);
    merge(&mut next.sync_interval_s, &update.sync_interval_s);
    merge(&mut next.upload_timeout_s, &update.upload_timeout_s);
    merge(&mut next.poll_interval_ms, &update.poll_interval_ms);
    merge(&mut next.store_series, &update.store_series);
    merge(&mut next.sync_series, &update.sync_series);
    merge(&mut next.max_batch, &update.max_batch);
    if let Some(f) = &update.frame {
        merge(&mut next.frame.window_ms, &f.window_ms);
        merge(&mut next.frame.hop_ms, &f.hop_ms);
        merge(&mut next.frame.fft_size, &f.fft_size);
        merge(&mut next.frame.silence_floor, &f.silence_floor);
        merge(&mut next.frame.window, &f.window);
    }
    if let Some(l) = &update.loudness {
        merge(&mut next.loudness.calibration_db_spl, &l.calibration_db_spl);
        merge(&mut next.loudness.n_bark_bands, &l.n_bark_bands);
        merge(&mut next.loudness.compress_exponent, &l.compress_exponent);
        if l.reference_energy.is_some() {
            next.loudness.reference_energy = l.reference_energy;
        }
    }
    next.validate()?;
    Ok(next)
}

/// Shared, versioned view of the effective configuration. Updates are
/// serialized: each one is validated against the state the previous one
/// left behind.
#[derive(Debug, Clone)]
pub struct ConfigHandle {
    inner: Arc<Mutex<(u64, Arc<GatewayConfig>)>>,
}

impl ConfigHandle {
    pub fn new(config: GatewayConfig) -> Self {
        Self {
            inner: Arc::new(Mutex::new((0, Arc::new(config)))),
        }
    }

    pub fn snapshot(&self) -> Arc<GatewayConfig> {
        self.inner.lock().unwrap().1.clone()
    }

    pub fn version(&self) -> u64 {
        self.inner.lock().unwrap().0
    }

    pub fn submit(&self, mut update: ConfigUpdate) -> Result<Arc<GatewayConfig>, ConfigError> {
        update.received_at.get_or_insert_with(now_utc);
        let mut guard = self.inner.lock().unwrap();
        let next = Arc::new(apply_config_update(&guard.1, &update)?);
        tracing::info!(update_id = ?update.update_id, version = guard.0 + 1, "config updated");
        *guard = (guard.0 + 1, next.clone());
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn update_window(ms: f64) -> ConfigUpdate {
        ConfigUpdate {
            frame: Some(FramePatch {
                window_ms: Some(ms),
                ..FramePatch::default()
            }),
            ..ConfigUpdate::default()
        }
    }

    #[test]
    fn defaults_are_valid() {
        GatewayConfig::default().validate().unwrap();
    }

    #[test]
    fn empty_update_is_identity() {
        let cfg = GatewayConfig::default();
        assert_eq!(apply_config_update(&cfg, &ConfigUpdate::default()).unwrap(), cfg);
    }

    #[test]
    fn window_update_is_applied() {
        let cfg = GatewayConfig::default();
        let next = apply_config_update(&cfg, &update_window(30.0)).unwrap();
        assert_eq!(next.frame.window_ms, 30.0);
        assert_eq!(next.frame.hop_ms, cfg.frame.hop_ms);
    }

    #[test]
    fn hop_beyond_window_is_rejected() {
        let cfg = apply_config_update(&GatewayConfig::default(), &update_window(30.0)).unwrap();
        let bad = ConfigUpdate {
            frame: Some(FramePatch {
                hop_ms: Some(40.0),
                ..FramePatch::default()
            }),
            ..ConfigUpdate::default()
        };
        assert!(matches!(apply_config_update(&cfg, &bad), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn handle_serializes_against_latest_state() {
        let handle = ConfigHandle::new(GatewayConfig::default());
        // window 20 then hop 22: the second is checked against window 20
        handle.submit(update_window(20.0)).unwrap();
        let hop = ConfigUpdate {
            frame: Some(FramePatch {
                hop_ms: Some(22.0),
                ..FramePatch::default()
            }),
            ..ConfigUpdate::default()
        };
        assert!(handle.submit(hop).is_err());
        assert_eq!(handle.snapshot().frame.window_ms, 20.0);
        assert_eq!(handle.snapshot().frame.hop_ms, 10.0);
        assert_eq!(handle.version(), 1);
    }

    #[test]
    fn validation_catches_each_field() {
        let base = GatewayConfig::default();
        let cases: [fn(&mut GatewayConfig); 11] = [
            |c| c.data_dir = c.inbox_dir.clone(),
            |c| c.sync_interval_s = 0.0,
            |c| c.poll_interval_ms = 0,
            |c| c.max_batch = 0,
            |c| c.parallelism = 0,
            |c| c.admin_bind = "nowhere".into(),
            |c| c.cloud_url = "ftp://x".into(),
            |c| c.frame.fft_size = 1000,
            |c| c.frame.window_ms = 100.0,
            |c| c.loudness.compress_exponent = 1.5,
            |c| c.gateway_id = " ".into(),
        ];
        for (i, mutate) in cases.iter().enumerate() {
            let mut c = base.clone();
            mutate(&mut c);
            assert!(c.validate().is_err(), "case {i} should fail");
        }
    }

    #[test]
    fn unknown_update_fields_are_refused() {
        let r: Result<ConfigUpdate, _> = serde_json::from_str(r#"{"inbox_dir": "/tmp"}"#);
        assert!(r.is_err());
        let ok: ConfigUpdate =
            serde_json::from_str(r#"{"update_id": "u1", "frame": {"window_ms": 30}}"#).unwrap();
        assert_eq!(ok, ConfigUpdate { update_id: Some("u1".into()), ..update_window(30.0) });
    }

    #[test]
    fn load_layers_file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gw.toml");
        std::fs::write(
            &path,
            "inbox_dir = \"/srv/inbox\"\nmax_batch = 4\n[frame]\nwindow_ms = 30.0\n",
        )
        .unwrap();
        let env = vec![
            ("FIT_MAX_BATCH".to_string(), "8".to_string()),
            ("FIT_FRAME__HOP_MS".to_string(), "15".to_string()),
            ("FIT_GATEWAY_ID".to_string(), "1234".to_string()),
            ("FIT_CLOUD_URL".to_string(), "http://cloud:9000/ingest".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let cfg = GatewayConfig::load(Some(&path), env).unwrap();
        assert_eq!(cfg.inbox_dir, PathBuf::from("/srv/inbox"));
        assert_eq!(cfg.max_batch, 8);
        assert_eq!(cfg.frame.window_ms, 30.0);
        assert_eq!(cfg.frame.hop_ms, 15.0);
        assert_eq!(cfg.gateway_id, "1234");
        assert_eq!(cfg.cloud_url, "http://cloud:9000/ingest");
    }

    #[test]
    fn load_rejects_invalid_results() {
        let env = vec![("FIT_FRAME__HOP_MS".to_string(), "50".to_string())];
        assert!(matches!(
            GatewayConfig::load(None, env),
            Err(ConfigError::Invalid(_))
        ));
        let env = vec![("FIT_BOGUS".to_string(), "1".to_string())];
        assert!(matches!(GatewayConfig::load(None, env), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn redaction_hides_token() {
        let cfg = GatewayConfig {
            cloud_token: Some("secret".into()),
            ..GatewayConfig::default()
        };
        assert_eq!(cfg.redacted().cloud_token.as_deref(), Some("***"));
    }
}
