//! Simplified Zwicker loudness.
//!
//! The magnitude spectrum is partitioned into unit-width Bark bands, each
//! band's power is compressed with a power law into specific loudness
//! (sone/Bark), and the bands are summed into total loudness. Threshold in
//! quiet, masking and temporal integration are not modelled.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{DspError, FrameConfig, SpectrumAnalyzer, SpectrumFrame};

/// Lowest reported loudness, 1/64 sone.
pub const SONE_FLOOR: f64 = 1.0 / 64.0;
/// `loudness_level_phon(SONE_FLOOR)`.
pub const PHON_FLOOR: f64 = -20.0;

const CALIBRATION_TONE_HZ: f64 = 1000.0;
/// Level of a 1 kHz tone that is, by definition, 1 sone.
const ONE_SONE_DB_SPL: f64 = 40.0;

/// Loudness settings as configured. `reference_energy` may be left unset, in
/// which case it is derived from the calibration anchor for whatever frame
/// configuration and sample rate are in force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoudnessSettings {
    pub calibration_db_spl: f64,
    pub n_bark_bands: usize,
    pub compress_exponent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_energy: Option<f64>,
}

impl Default for LoudnessSettings {
    fn default() -> Self {
        Self {
            calibration_db_spl: 94.0,
            n_bark_bands: 24,
            compress_exponent: 0.23,
            reference_energy: None,
        }
    }
}

impl LoudnessSettings {
    pub fn validate(&self) -> Result<(), DspError> {
        check_common(
            self.calibration_db_spl,
            self.n_bark_bands,
            self.compress_exponent,
        )?;
        if let Some(e) = self.reference_energy {
            check_reference(e)?;
        }
        Ok(())
    }

    /// Fixes `reference_energy` for a concrete analysis setup.
    pub fn resolve(&self, frame: &FrameConfig, sample_rate_hz: u32) -> Result<LoudnessParams, DspError> {
        self.validate()?;
        let reference_energy = match self.reference_energy {
            Some(e) => e,
            None => calibrated_reference_energy(
                frame,
                sample_rate_hz,
                self.calibration_db_spl,
                self.n_bark_bands,
                self.compress_exponent,
            )?,
        };
        let params = LoudnessParams {
            calibration_db_spl: self.calibration_db_spl,
            n_bark_bands: self.n_bark_bands,
            compress_exponent: self.compress_exponent,
            reference_energy,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Fully resolved loudness model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoudnessParams {
    /// SPL assigned to a full-scale sine.
    pub calibration_db_spl: f64,
    pub n_bark_bands: usize,
    pub compress_exponent: f64,
    /// Band power that maps to one sone/Bark.
    pub reference_energy: f64,
}

impl LoudnessParams {
    pub fn validate(&self) -> Result<(), DspError> {
        check_common(
            self.calibration_db_spl,
            self.n_bark_bands,
            self.compress_exponent,
        )?;
        check_reference(self.reference_energy)
    }
}

fn check_common(calibration: f64, bands: usize, exponent: f64) -> Result<(), DspError> {
    if !calibration.is_finite() {
        return Err(DspError::Config("calibration_db_spl must be finite".into()));
    }
    if bands == 0 {
        return Err(DspError::Config("n_bark_bands must be at least 1".into()));
    }
    if !(exponent > 0.0 && exponent < 1.0) {
        return Err(DspError::Config(format!(
            "compress_exponent must lie in (0, 1), got {exponent}"
        )));
    }
    Ok(())
}

fn check_reference(e: f64) -> Result<(), DspError> {
    if e.is_finite() && e > 0.0 {
        Ok(())
    } else {
        Err(DspError::Config(format!(
            "reference_energy must be positive, got {e}"
        )))
    }
}

/// Reference band power that makes a 40 dB SPL 1 kHz tone integrate to
/// exactly 1 sone, with a full-scale sine taken to be `calibration_db_spl`.
///
/// Window leakage spreads the tone over neighbouring bands, so the reference
/// solves `sum_b (E_b / E_ref)^alpha = 1` rather than matching the band power.
fn calibrated_reference_energy(
    frame: &FrameConfig,
    sample_rate_hz: u32,
    calibration_db_spl: f64,
    n_bark_bands: usize,
    compress_exponent: f64,
) -> Result<f64, DspError> {
    frame.validate(sample_rate_hz)?;
    if f64::from(sample_rate_hz) <= 2.0 * CALIBRATION_TONE_HZ {
        return Err(DspError::Config(format!(
            "sample rate {sample_rate_hz} Hz cannot represent the 1 kHz calibration tone"
        )));
    }
    let n = frame.window_samples(sample_rate_hz);
    let tone: Vec<f64> = (0..n)
        .map(|i| (2.0 * PI * CALIBRATION_TONE_HZ * i as f64 / f64::from(sample_rate_hz)).sin())
        .collect();
    let spec = SpectrumAnalyzer::new(frame, sample_rate_hz)?.analyze(&tone)?;
    let gain = 10f64.powf((ONE_SONE_DB_SPL - calibration_db_spl) / 10.0);
    let compressed: f64 = band_energies(&spec, n_bark_bands)
        .iter()
        .map(|e| (e * gain).powf(compress_exponent))
        .sum();
    Ok(compressed.powf(1.0 / compress_exponent))
}

/// Bark value of a frequency, `13 atan(0.00076 f) + 3.5 atan((f / 7500)^2)`.
pub fn hz_to_bark(hz: f64) -> Result<f64, DspError> {
    if hz.is_nan() || hz < 0.0 {
        return Err(DspError::Domain(format!(
            "frequency must be non-negative, got {hz}"
        )));
    }
    Ok(bark(hz))
}

fn bark(hz: f64) -> f64 {
    13.0 * (0.00076 * hz).atan() + 3.5 * (hz / 7500.0).powi(2).atan()
}

/// Spectral power `|X_k|^2` accumulated into unit-width Bark bands. Bins at
/// or above `n_bark_bands` Bark are discarded.
pub fn bark_band_energies(spec: &SpectrumFrame, params: &LoudnessParams) -> Vec<f64> {
    band_energies(spec, params.n_bark_bands)
}

fn band_of(spec: &SpectrumFrame, k: usize, n_bands: usize) -> Option<usize> {
    let b = bark(spec.bin_frequency(k)).floor() as usize;
    (b < n_bands).then_some(b)
}

fn band_energies(spec: &SpectrumFrame, n_bands: usize) -> Vec<f64> {
    let mut bands = vec![0.0; n_bands];
    for (k, m) in spec.magnitudes.iter().enumerate() {
        if let Some(b) = band_of(spec, k, n_bands) {
            bands[b] += m * m;
        }
    }
    bands
}

/// Bin-to-band lookup for a fixed bin spacing, so a clip's frames skip the
/// per-bin Bark conversion. Gives the same sums as [`bark_band_energies`].
#[derive(Debug, Clone)]
pub(crate) struct BandMap {
    bin_hz: f64,
    bands: Vec<Option<usize>>,
    n_bands: usize,
}

impl BandMap {
    pub(crate) fn new(spec: &SpectrumFrame, n_bands: usize) -> Self {
        Self {
            bin_hz: spec.bin_hz,
            bands: (0..spec.magnitudes.len())
                .map(|k| band_of(spec, k, n_bands))
                .collect(),
            n_bands,
        }
    }

    pub(crate) fn energies(&self, spec: &SpectrumFrame) -> Vec<f64> {
        if spec.bin_hz != self.bin_hz || spec.magnitudes.len() != self.bands.len() {
            return band_energies(spec, self.n_bands);
        }
        let mut bands = vec![0.0; self.n_bands];
        for (m, b) in spec.magnitudes.iter().zip(&self.bands) {
            if let Some(b) = b {
                bands[*b] += m * m;
            }
        }
        bands
    }
}

/// Per-band loudness density `(E / E_ref)^alpha`, zero for empty bands.
pub fn specific_loudness(band_energies: &[f64], params: &LoudnessParams) -> Vec<f64> {
    band_energies
        .iter()
        .map(|&e| {
            if e > 0.0 {
                (e / params.reference_energy).powf(params.compress_exponent)
            } else {
                0.0
            }
        })
        .collect()
}

/// Integral of specific loudness over Bark with unit-width bands.
pub fn total_loudness_sone(specific: &[f64]) -> f64 {
    specific.iter().sum()
}

/// Loudness level in phon, `40 + 10 log2(N)`, clamped below at 1/64 sone.
pub fn loudness_level_phon(sone: f64) -> f64 {
    if sone >= SONE_FLOOR {
        40.0 + 10.0 * sone.log2()
    } else {
        PHON_FLOOR
    }
}
