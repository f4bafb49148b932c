#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use chrono::{Duration, TimeZone, Utc};
use fogspeech_core::dsp::{FeatureSummary, FrameConfig, LoudnessSettings};
use fogspeech_core::ingest::{encode_wav, quantize};
use fogspeech_core::record::{ConfigSnapshot, FeatureRecord, SyncState};

pub fn record(id: &str, minute: i64) -> FeatureRecord {
    let frame = FrameConfig::default();
    let loudness = LoudnessSettings::default().resolve(&frame, 44100).unwrap();
    let t = Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap() + Duration::minutes(minute);
    FeatureRecord {
        record_id: id.to_owned(),
        source_name: format!("{id}.wav"),
        task_label: Some(id.to_owned()),
        captured_at: t,
        processed_at: t,
        duration_s: 6.24,
        size_bytes: 550_412,
        processing_time_s: 0.05,
        config_snapshot: ConfigSnapshot {
            sample_rate_hz: 44100,
            frame,
            loudness,
        },
        summary: FeatureSummary {
            mean_zcr: 0.1,
            mean_sc_hz: 1500.0,
            mean_ste: 0.01,
            mean_loudness_phon: 60.0,
            frame_count: 622,
            duration_s: 6.24,
            all_silent: false,
        },
        series_included: false,
        series: None,
        sync_state: SyncState::Pending,
    }
}

/// Writes a tone-plus-harmonics WAV of `secs` seconds; `seed` varies pitch
/// so that different seeds give different content hashes.
pub fn write_voice_wav(path: &Path, secs: f64, seed: u32) -> PathBuf {
    let fs = 44100u32;
    let n = (secs * f64::from(fs)).round() as usize;
    let f0 = 110.0 + f64::from(seed % 97);
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(fs);
            let env = 0.5 + 0.5 * (2.0 * PI * 3.0 * t).sin().abs();
            0.3 * env
                * ((2.0 * PI * f0 * t).sin()
                    + 0.5 * (2.0 * PI * 2.0 * f0 * t).sin()
                    + 0.25 * (2.0 * PI * 3.0 * f0 * t).sin())
                / 1.75
        })
        .collect();
    std::fs::write(path, encode_wav(&quantize(&samples), fs)).unwrap();
    path.to_path_buf()
}
