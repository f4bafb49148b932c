use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{DspError, FrameConfig, WindowFunction};

/// One-sided magnitude spectrum of a single frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumFrame {
    /// `fft_size / 2 + 1` non-negative magnitudes, DC first.
    pub magnitudes: Vec<f64>,
    /// Frequency spacing between bins, `sample_rate / fft_size`.
    pub bin_hz: f64,
}

impl SpectrumFrame {
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.bin_hz
    }
}

/// Reusable FFT state for one `(fft_size, window)` pair. Extracting features
/// from a whole clip plans the transform once and reuses its buffers.
pub struct SpectrumAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    fft_size: usize,
    window: WindowFunction,
    sample_rate_hz: u32,
    coeffs: Vec<f64>,
    buffer: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl SpectrumAnalyzer {
    pub fn new(cfg: &FrameConfig, sample_rate_hz: u32) -> Result<Self, DspError> {
        if cfg.fft_size == 0 || !cfg.fft_size.is_power_of_two() {
            return Err(DspError::Config(format!(
                "fft_size must be a positive power of two, got {}",
                cfg.fft_size
            )));
        }
        if sample_rate_hz == 0 {
            return Err(DspError::Config("sample rate must be positive".into()));
        }
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Ok(Self {
            fft,
            fft_size: cfg.fft_size,
            window: cfg.window,
            sample_rate_hz,
            coeffs: Vec::new(),
            buffer: vec![Complex::default(); cfg.fft_size],
            scratch,
        })
    }

    /// Windows `frame`, zero-pads it to `fft_size` and returns the one-sided
    /// magnitude spectrum.
    pub fn analyze(&mut self, frame: &[f64]) -> Result<SpectrumFrame, DspError> {
        self.transform(frame)?;
        let magnitudes = self.buffer[..=self.fft_size / 2]
            .iter()
            .map(|c| c.norm())
            .collect();
        Ok(SpectrumFrame {
            magnitudes,
            bin_hz: f64::from(self.sample_rate_hz) / self.fft_size as f64,
        })
    }

    /// Full complex spectrum of the windowed, zero-padded frame.
    pub fn full_spectrum(&mut self, frame: &[f64]) -> Result<Vec<Complex<f64>>, DspError> {
        self.transform(frame)?;
        Ok(self.buffer.clone())
    }

    fn transform(&mut self, frame: &[f64]) -> Result<(), DspError> {
        if frame.len() > self.fft_size {
            return Err(DspError::Config(format!(
                "frame of {} samples exceeds fft_size {}",
                frame.len(),
                self.fft_size
            )));
        }
        if self.coeffs.len() != frame.len() {
            self.coeffs = window_coefficients(self.window, frame.len());
        }
        for (slot, (x, w)) in self.buffer.iter_mut().zip(frame.iter().zip(&self.coeffs)) {
            *slot = Complex::new(x * w, 0.0);
        }
        for slot in &mut self.buffer[frame.len()..] {
            *slot = Complex::default();
        }
        self.fft
            .process_with_scratch(&mut self.buffer, &mut self.scratch);
        Ok(())
    }
}

fn window_coefficients(window: WindowFunction, len: usize) -> Vec<f64> {
    match window {
        WindowFunction::Rectangular => vec![1.0; len],
        // periodic Hann
        WindowFunction::Hann if len > 1 => (0..len)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
            .collect(),
        WindowFunction::Hann => vec![1.0; len],
    }
}

/// One-shot convenience over [`SpectrumAnalyzer`].
pub fn magnitude_spectrum(
    frame: &[f64],
    sample_rate_hz: u32,
    cfg: &FrameConfig,
) -> Result<SpectrumFrame, DspError> {
    SpectrumAnalyzer::new(cfg, sample_rate_hz)?.analyze(frame)
}

/// Magnitude-weighted mean frequency in Hz. An all-zero spectrum has a
/// centroid of 0.
pub fn spectral_centroid(spec: &SpectrumFrame) -> f64 {
    let (weighted, total) = spec
        .magnitudes
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(w, t), (k, m)| (w + spec.bin_frequency(k) * m, t + m));
    if total > 0.0 {
        weighted / total
    } else {
        0.0
    }
}
