use serde::{Deserialize, Serialize};

use super::loudness::BandMap;
use super::{
    frame_signal, loudness_level_phon, short_time_energy, specific_loudness,
    spectral_centroid, total_loudness_sone, zero_crossing_rate, AudioClip, DspError, FrameConfig,
    LoudnessParams, SpectrumAnalyzer,
};

/// Per-frame feature contours. All sequences have one entry per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeries {
    /// Frame-centre times in seconds.
    pub frame_times_s: Vec<f64>,
    pub zcr: Vec<f64>,
    pub ste: Vec<f64>,
    pub sc_hz: Vec<f64>,
    pub loudness_sone: Vec<f64>,
    pub loudness_phon: Vec<f64>,
    pub silent_flags: Vec<bool>,
    /// Duration of the analysed clip.
    pub duration_s: f64,
}

impl FeatureSeries {
    fn with_capacity(n: usize, duration_s: f64) -> Self {
        Self {
            frame_times_s: Vec::with_capacity(n),
            zcr: Vec::with_capacity(n),
            ste: Vec::with_capacity(n),
            sc_hz: Vec::with_capacity(n),
            loudness_sone: Vec::with_capacity(n),
            loudness_phon: Vec::with_capacity(n),
            silent_flags: Vec::with_capacity(n),
            duration_s,
        }
    }

    pub fn len(&self) -> usize {
        self.frame_times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_times_s.is_empty()
    }

    /// True when all per-frame sequences have the same length.
    pub fn is_aligned(&self) -> bool {
        let n = self.len();
        [
            self.zcr.len(),
            self.ste.len(),
            self.sc_hz.len(),
            self.loudness_sone.len(),
            self.loudness_phon.len(),
            self.silent_flags.len(),
        ]
        .iter()
        .all(|&l| l == n)
    }
}

/// Per-file averages of the frame features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub mean_zcr: f64,
    pub mean_sc_hz: f64,
    pub mean_ste: f64,
    pub mean_loudness_phon: f64,
    pub frame_count: usize,
    pub duration_s: f64,
    /// Set when every frame was silent and the means cover all frames.
    #[serde(default)]
    pub all_silent: bool,
}

/// Runs the full per-frame analysis over a clip.
///
/// ZCR and STE are computed on raw samples; the spectral features use the
/// configured window. A frame is silent when its energy is below
/// `cfg.silence_floor` or its spectrum is identically zero.
pub fn extract_features(
    clip: &AudioClip,
    cfg: &FrameConfig,
    params: &LoudnessParams,
) -> Result<FeatureSeries, DspError> {
    params.validate()?;
    let frames = frame_signal(clip, cfg)?;
    let fs = f64::from(clip.sample_rate_hz());
    let mut series = FeatureSeries::with_capacity(frames.len(), clip.duration_s());
    if frames.is_empty() {
        return Ok(series);
    }
    let mut analyzer = SpectrumAnalyzer::new(cfg, clip.sample_rate_hz())?;
    let mut band_map: Option<BandMap> = None;

    for frame in frames {
        let x = frame.samples(clip);
        let zcr = zero_crossing_rate(x)?;
        let ste = short_time_energy(x)?;
        let spec = analyzer.analyze(x)?;
        let spectrum_empty = spec.magnitudes.iter().all(|m| *m == 0.0);
        let sc = spectral_centroid(&spec);
        let map = band_map.get_or_insert_with(|| BandMap::new(&spec, params.n_bark_bands));
        let sone = total_loudness_sone(&specific_loudness(&map.energies(&spec), params));

        series
            .frame_times_s
            .push((frame.start as f64 + frame.len as f64 / 2.0) / fs);
        series.zcr.push(zcr);
        series.ste.push(ste);
        series.sc_hz.push(sc);
        series.loudness_sone.push(sone);
        series.loudness_phon.push(loudness_level_phon(sone));
        series
            .silent_flags
            .push(ste < cfg.silence_floor || spectrum_empty);
    }
    Ok(series)
}

/// Averages each feature over the non-silent frames, or over every frame
/// when all of them are silent.
pub fn summarize_features(series: &FeatureSeries) -> Result<FeatureSummary, DspError> {
    if series.is_empty() {
        return Err(DspError::EmptySeries);
    }
    if !series.is_aligned() {
        return Err(DspError::Degenerate(
            "feature sequences have mismatched lengths".into(),
        ));
    }
    let voiced: Vec<usize> = (0..series.len())
        .filter(|&m| !series.silent_flags[m])
        .collect();
    let all_silent = voiced.is_empty();
    let picked: Vec<usize> = if all_silent {
        (0..series.len()).collect()
    } else {
        voiced
    };
    let mean = |values: &[f64]| picked.iter().map(|&m| values[m]).sum::<f64>() / picked.len() as f64;
    Ok(FeatureSummary {
        mean_zcr: mean(&series.zcr),
        mean_sc_hz: mean(&series.sc_hz),
        mean_ste: mean(&series.ste),
        mean_loudness_phon: mean(&series.loudness_phon),
        frame_count: series.len(),
        duration_s: series.duration_s,
        all_silent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{LoudnessSettings, PHON_FLOOR};
    use std::f64::consts::PI;

    fn tone(freq: f64, amp: f64, secs: f64, fs: u32) -> AudioClip {
        let n = (secs * f64::from(fs)) as usize;
        AudioClip::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / f64::from(fs)).sin())
                .collect(),
            fs,
        )
        .unwrap()
    }

    fn series_of(zcr: Vec<f64>, silent: Vec<bool>) -> FeatureSeries {
        let n = zcr.len();
        FeatureSeries {
            frame_times_s: (0..n).map(|i| i as f64 * 0.01).collect(),
            ste: zcr.iter().map(|z| z * 2.0).collect(),
            sc_hz: zcr.iter().map(|z| z * 1000.0).collect(),
            loudness_sone: vec![1.0; n],
            loudness_phon: zcr.iter().map(|z| z * 100.0).collect(),
            zcr,
            silent_flags: silent,
            duration_s: n as f64 * 0.01,
        }
    }

    #[test]
    fn six_second_clip_has_598_aligned_frames() {
        let clip = tone(440.0, 0.5, 6.0, 44100);
        let cfg = FrameConfig::default();
        let params = LoudnessSettings::default().resolve(&cfg, 44100).unwrap();
        let s = extract_features(&clip, &cfg, &params).unwrap();
        assert_eq!(s.len(), 598);
        assert!(s.is_aligned());
        let step = 441.0 / 44100.0;
        for w in s.frame_times_s.windows(2) {
            assert!((w[1] - w[0] - step).abs() < 1e-12);
        }
    }

    #[test]
    fn one_khz_tone_features() {
        let fs = 44100;
        let clip = tone(1000.0, 0.5, 1.0, fs);
        let cfg = FrameConfig::default();
        let params = LoudnessSettings::default().resolve(&cfg, fs).unwrap();
        let s = extract_features(&clip, &cfg, &params).unwrap();
        let bin_hz = f64::from(fs) / cfg.fft_size as f64;
        for m in 0..s.len() {
            assert!((s.sc_hz[m] - 1000.0).abs() <= bin_hz, "frame {m}: {}", s.sc_hz[m]);
            // one crossing of slack over the 1102 sample pairs
            assert!((s.zcr[m] - 2000.0 / 44100.0).abs() <= 1.0 / 1102.0);
            assert!(!s.silent_flags[m]);
        }
    }

    #[test]
    fn silence_is_flagged_and_floored() {
        let clip = AudioClip::new(vec![0.0; 44100], 44100).unwrap();
        let cfg = FrameConfig::default();
        let params = LoudnessSettings::default().resolve(&cfg, 44100).unwrap();
        let s = extract_features(&clip, &cfg, &params).unwrap();
        assert!(!s.is_empty());
        assert!(s.silent_flags.iter().all(|f| *f));
        assert!(s.sc_hz.iter().all(|v| *v == 0.0));
        assert!(s.loudness_phon.iter().all(|v| *v == PHON_FLOOR));
        let summary = summarize_features(&s).unwrap();
        assert!(summary.all_silent);
        assert_eq!(summary.mean_loudness_phon, PHON_FLOOR);
    }

    #[test]
    fn short_clip_gives_empty_series() {
        let clip = AudioClip::new(vec![0.1; 100], 44100).unwrap();
        let cfg = FrameConfig::default();
        let params = LoudnessSettings::default().resolve(&cfg, 44100).unwrap();
        let s = extract_features(&clip, &cfg, &params).unwrap();
        assert!(s.is_empty());
        assert_eq!(summarize_features(&s), Err(DspError::EmptySeries));
    }

    #[test]
    fn summary_two_frame_mean() {
        let s = summarize_features(&series_of(vec![0.2, 0.4], vec![false, false])).unwrap();
        assert!((s.mean_zcr - 0.3).abs() < 1e-15);
        assert_eq!(s.frame_count, 2);
        assert!(!s.all_silent);
    }

    #[test]
    fn summary_skips_silent_frames() {
        let s = summarize_features(&series_of(vec![0.1, 0.9, 0.3], vec![false, true, false])).unwrap();
        assert!((s.mean_zcr - 0.2).abs() < 1e-15);
        assert!((s.mean_sc_hz - 200.0).abs() < 1e-12);
        assert_eq!(s.frame_count, 3);
    }

    #[test]
    fn summary_of_single_frame_is_that_frame() {
        let series = series_of(vec![0.37], vec![false]);
        let s = summarize_features(&series).unwrap();
        assert_eq!(s.mean_zcr, series.zcr[0]);
        assert_eq!(s.mean_ste, series.ste[0]);
        assert_eq!(s.mean_sc_hz, series.sc_hz[0]);
        assert_eq!(s.mean_loudness_phon, series.loudness_phon[0]);
    }
}
