//! Command implementations behind the `fogspeech` binary.

pub mod bench;
pub mod export;
pub mod fixtures;
