//! Short-time speech analysis: framing, zero-crossing rate, short-time
//! energy, spectral centroid and a Bark-band perceptual loudness model.
//!
//! Everything here is a pure function over immutable inputs, so clips can be
//! analysed from any number of worker threads at once.

mod extract;
mod framing;
mod loudness;
mod spectrum;
mod temporal;

pub use extract::{extract_features, summarize_features, FeatureSeries, FeatureSummary};
pub use framing::{frame_signal, Frame, FrameConfig, WindowFunction};
pub use loudness::{
    bark_band_energies, hz_to_bark, loudness_level_phon, specific_loudness, total_loudness_sone,
    LoudnessParams, LoudnessSettings, PHON_FLOOR, SONE_FLOOR,
};
pub use spectrum::{magnitude_spectrum, spectral_centroid, SpectrumAnalyzer, SpectrumFrame};
pub use temporal::{short_time_energy, zero_crossing_rate};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("invalid analysis configuration: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("value out of domain: {0}")]
    Domain(String),
    #[error("invalid audio clip: {0}")]
    Clip(String),
    #[error("feature series is empty")]
    EmptySeries,
}

/// Decoded mono PCM audio with amplitudes normalized to `[-1.0, 1.0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self, DspError> {
        if sample_rate_hz == 0 {
            return Err(DspError::Clip("sample rate must be positive".into()));
        }
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && (-1.0..=1.0).contains(*s)))
        {
            return Err(DspError::Clip(format!("sample {i} = {s} outside [-1, 1]")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    /// Returns a copy with every sample multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Result<Self, DspError> {
        Self::new(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate_hz,
        )
    }
}
