//! Pipeline orchestration: inbox events in, persisted and synced records
//! out, with a local admin endpoint for runtime reconfiguration.

pub mod admin;
pub mod config;
mod daemon;
pub mod pipeline;

pub use admin::{serve_admin_endpoint, AdminState, Health};
pub use config::{
    apply_config_update, ConfigError, ConfigHandle, ConfigUpdate, FramePatch, GatewayConfig,
    LoudnessPatch,
};
pub use daemon::{Gateway, GatewayError};
pub use pipeline::{
    analyze, process_file, Analysis, AnalysisError, CrashMode, CrashPlan, CrashPoint, Pipeline,
    PipelineError, PipelineStats, ProcessOutcome, StatsSnapshot,
};
