//! WAV decoding and the inbox directory that upstream devices drop
//! recordings into.

mod inbox;
mod wav;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use inbox::{
    compute_file_id, scan_inbox, watch_inbox, InboxEvent, InboxWatcher, ProcessedLedger,
};
pub use wav::{decode_wav, encode_wav, quantize, PcmFormat};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("malformed WAV: {0}")]
    Malformed(String),
    #[error("unsupported WAV format: {field} = {value} (need 16-bit mono linear PCM)")]
    Unsupported { field: &'static str, value: u32 },
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

impl IngestError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }
}
