use serde::{Deserialize, Serialize};

use super::{AudioClip, DspError};

/// Taper applied before the FFT. Zero-crossing rate and energy always see the
/// raw samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowFunction {
    #[default]
    Hann,
    Rectangular,
}

/// Short-time analysis parameters shared by every per-frame feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    /// Mean-square level below which a frame is flagged silent.
    pub silence_floor: f64,
    pub window: WindowFunction,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            hop_ms: 10.0,
            fft_size: 2048,
            silence_floor: 1e-6,
            window: WindowFunction::Hann,
        }
    }
}

impl FrameConfig {
    /// Window length in samples, `round(window_ms * fs / 1000)`.
    pub fn window_samples(&self, sample_rate_hz: u32) -> usize {
        ms_to_samples(self.window_ms, sample_rate_hz)
    }

    pub fn hop_samples(&self, sample_rate_hz: u32) -> usize {
        ms_to_samples(self.hop_ms, sample_rate_hz)
    }

    /// Checks the invariants that do not depend on the sample rate.
    pub fn validate_shape(&self) -> Result<(), DspError> {
        if !(self.window_ms.is_finite() && self.window_ms > 0.0) {
            return Err(DspError::Config(format!(
                "window_ms must be positive, got {}",
                self.window_ms
            )));
        }
        if !(self.hop_ms.is_finite() && self.hop_ms > 0.0) {
            return Err(DspError::Config(format!(
                "hop_ms must be positive, got {}",
                self.hop_ms
            )));
        }
        if self.hop_ms > self.window_ms {
            return Err(DspError::Config(format!(
                "hop_ms ({}) exceeds window_ms ({})",
                self.hop_ms, self.window_ms
            )));
        }
        if self.fft_size == 0 || !self.fft_size.is_power_of_two() {
            return Err(DspError::Config(format!(
                "fft_size must be a positive power of two, got {}",
                self.fft_size
            )));
        }
        if !(self.silence_floor.is_finite() && self.silence_floor >= 0.0) {
            return Err(DspError::Config(format!(
                "silence_floor must be >= 0, got {}",
                self.silence_floor
            )));
        }
        Ok(())
    }

    /// Full validation against a concrete sample rate.
    pub fn validate(&self, sample_rate_hz: u32) -> Result<(), DspError> {
        self.validate_shape()?;
        let n = self.window_samples(sample_rate_hz);
        let h = self.hop_samples(sample_rate_hz);
        if n < 2 {
            return Err(DspError::Config(format!(
                "window of {} ms is {n} samples at {sample_rate_hz} Hz; need at least 2",
                self.window_ms
            )));
        }
        if h == 0 {
            return Err(DspError::Config(format!(
                "hop of {} ms rounds to zero samples at {sample_rate_hz} Hz",
                self.hop_ms
            )));
        }
        if self.fft_size < n {
            return Err(DspError::Config(format!(
                "fft_size {} is shorter than the {n}-sample window",
                self.fft_size
            )));
        }
        Ok(())
    }
}

fn ms_to_samples(ms: f64, sample_rate_hz: u32) -> usize {
    (ms * f64::from(sample_rate_hz) / 1000.0).round() as usize
}

/// One analysis frame: `len` samples starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame {
    pub start: usize,
    pub len: usize,
}

impl Frame {
    pub fn samples<'a>(&self, clip: &'a AudioClip) -> &'a [f64] {
        &clip.samples()[self.start..self.start + self.len]
    }
}

/// Splits a clip into overlapping frames. Frame `m` covers `[m*H, m*H + N)`;
/// a trailing partial window is dropped, so a clip shorter than one window
/// yields no frames.
pub fn frame_signal(clip: &AudioClip, cfg: &FrameConfig) -> Result<Vec<Frame>, DspError> {
    cfg.validate(clip.sample_rate_hz())?;
    let n = cfg.window_samples(clip.sample_rate_hz());
    let h = cfg.hop_samples(clip.sample_rate_hz());
    Ok(frame_positions(clip.len(), n, h))
}

pub(crate) fn frame_positions(len: usize, n: usize, h: usize) -> Vec<Frame> {
    if len < n {
        return Vec::new();
    }
    (0..=(len - n) / h)
        .map(|m| Frame { start: m * h, len: n })
        .collect()
}
