//! Synthetic speech-like recordings with the durations of the reference
//! benchmark set, so benchmarks run without clinical data.

use std::f64::consts::PI;
use std::io;
use std::path::{Path, PathBuf};

use fogspeech_core::ingest::{encode_wav, quantize};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FIXTURE_SAMPLE_RATE_HZ: u32 = 44_100;

/// Task labels and durations of the reference set.
pub const TABLE_ONE: [(&str, f64); 5] = [
    ("S1", 6.24),
    ("S2", 6.18),
    ("S3", 5.62),
    ("S4", 6.08),
    ("S5", 4.96),
];

/// Two-pole resonator with unit gain near its centre frequency.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, fs: f64) -> Self {
        let r = (-PI * bandwidth / fs).exp();
        let theta = 2.0 * PI * freq / fs;
        Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            gain: 1.0 - r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Syllable-like bursts of formant-filtered pulse trains and noise,
/// separated by near-silent gaps. Deterministic for a given seed.
pub fn synth_speech(duration_s: f64, sample_rate_hz: u32, seed: u64) -> Vec<f64> {
    let fs = f64::from(sample_rate_hz);
    let n = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n];
    let mut pos = (rng.random_range(0.02..0.1) * fs) as usize;
    let base_f0 = rng.random_range(95.0..210.0);

    while pos < n {
        let len = ((rng.random_range(0.12..0.35) * fs) as usize).min(n - pos);
        let voiced = rng.random_bool(0.8);
        let mut filters: Vec<Resonator> = if voiced {
            vec![
                Resonator::new(rng.random_range(300.0..850.0), 90.0, fs),
                Resonator::new(rng.random_range(900.0..2300.0), 130.0, fs),
                Resonator::new(rng.random_range(2300.0..3300.0), 180.0, fs),
            ]
        } else {
            vec![Resonator::new(rng.random_range(3500.0..6500.0), 1500.0, fs)]
        };
        let f0 = base_f0 * rng.random_range(0.85..1.2);
        let glide = rng.random_range(-0.25..0.25);
        let level = rng.random_range(0.4..1.0);
        let mut phase = 0.0;
        for i in 0..len {
            let u = i as f64 / len as f64;
            let env = level * (PI * u).sin().powi(2);
            let noise = rng.random_range(-1.0..1.0);
            let excitation = if voiced {
                phase += f0 * (1.0 + glide * u) / fs;
                let pulse = if phase >= 1.0 {
                    phase -= 1.0;
                    1.0
                } else {
                    0.0
                };
                40.0 * pulse + 0.3 * noise
            } else {
                noise
            };
            let y: f64 = filters.iter_mut().map(|f| f.step(excitation)).sum();
            out[pos + i] = env * y;
        }
        pos += len + (rng.random_range(0.03..0.25) * fs) as usize;
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 0.6 / peak } else { 0.0 };
    for v in &mut out {
        // faint floor so gaps are quiet rather than digitally silent
        *v = *v * scale + 1e-4 * rng.random_range(-1.0..1.0);
    }
    out
}

/// Writes one 16-bit mono fixture and returns its size in bytes.
pub fn write_fixture(path: &Path, duration_s: f64, seed: u64) -> io::Result<u64> {
    let samples = synth_speech(duration_s, FIXTURE_SAMPLE_RATE_HZ, seed);
    let bytes = encode_wav(&quantize(&samples), FIXTURE_SAMPLE_RATE_HZ);
    std::fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

/// Writes `S1.wav` .. `S5.wav` into `dir`.
pub fn make_fixtures(dir: &Path, seed: u64) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    TABLE_ONE
        .iter()
        .enumerate()
        .map(|(i, (label, secs))| {
            let path = dir.join(format!("{label}.wav"));
            write_fixture(&path, *secs, seed.wrapping_add(i as u64))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use fogspeech_core::ingest::decode_wav;

    #[test]
    fn deterministic_and_in_range() {
        let a = synth_speech(0.5, 44_100, 7);
        assert_eq!(a, synth_speech(0.5, 44_100, 7));
        assert_ne!(a, synth_speech(0.5, 44_100, 8));
        assert_eq!(a.len(), 22_050);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn fixture_sizes_follow_the_byte_rate() {
        let dir = tempfile::tempdir().unwrap();
        let paths = make_fixtures(dir.path(), 1).unwrap();
        let expected_kb = [551.0, 545.0, 496.0, 537.0, 438.0];
        for ((path, (_, secs)), kb) in paths.iter().zip(TABLE_ONE).zip(expected_kb) {
            let bytes = std::fs::read(path).unwrap();
            assert!((bytes.len() as f64 / 1000.0 - kb).abs() <= 1.0);
            let (clip, fmt) = decode_wav(&bytes).unwrap();
            assert_eq!(fmt.byte_rate, 88_200);
            assert!((clip.duration_s() - secs).abs() < 1e-9);
        }
    }
}
