//! Minimal RIFF/WAVE reader and writer for 16-bit mono linear PCM.

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::dsp::AudioClip;

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Format header of an accepted file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcmFormat {
    pub sample_rate_hz: u32,
    pub bits_per_sample: u16,
    pub channels: u16,
    pub byte_rate: u32,
}

impl PcmFormat {
    pub fn mono16(sample_rate_hz: u32) -> Self {
        Self {
            sample_rate_hz,
            bits_per_sample: 16,
            channels: 1,
            byte_rate: sample_rate_hz * 2,
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IngestError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| IngestError::Malformed(format!("truncated {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, IngestError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, IngestError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Decodes a RIFF/WAVE byte stream into normalized samples (`s / 32768`).
pub fn decode_wav(bytes: &[u8]) -> Result<(AudioClip, PcmFormat), IngestError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "RIFF tag")? != b"RIFF" {
        return Err(IngestError::Malformed("missing RIFF tag".into()));
    }
    let _riff_len = r.u32("RIFF length")?;
    if r.take(4, "WAVE tag")? != b"WAVE" {
        return Err(IngestError::Malformed("missing WAVE tag".into()));
    }

    let mut format: Option<PcmFormat> = None;
    let mut data: Option<&[u8]> = None;
    while r.remaining() >= 8 && data.is_none() {
        let id: [u8; 4] = r.take(4, "chunk id")?.try_into().unwrap();
        let len = r.u32("chunk length")? as usize;
        match &id {
            b"fmt " => {
                let body = r.take(len, "fmt chunk")?;
                format = Some(parse_fmt(body)?);
            }
            b"data" => {
                if format.is_none() {
                    return Err(IngestError::Malformed("data chunk precedes fmt chunk".into()));
                }
                data = Some(r.take(len, "data chunk")?);
            }
            _ => {
                r.take(len, "chunk")?;
            }
        }
        if len % 2 == 1 && data.is_none() && r.remaining() > 0 {
            r.take(1, "chunk padding")?;
        }
    }

    let format = format.ok_or_else(|| IngestError::Malformed("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| IngestError::Malformed("no data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(IngestError::Malformed(format!(
            "data chunk length {} is not a whole number of 16-bit samples",
            data.len()
        )));
    }
    let samples = data
        .chunks_exact(2)
        .map(|b| f64::from(i16::from_le_bytes([b[0], b[1]])) / 32768.0)
        .collect();
    let clip = AudioClip::new(samples, format.sample_rate_hz)
        .map_err(|e| IngestError::Malformed(e.to_string()))?;
    Ok((clip, format))
}

fn parse_fmt(body: &[u8]) -> Result<PcmFormat, IngestError> {
    let mut r = Reader { bytes: body, pos: 0 };
    let tag = r.u16("format tag")?;
    let channels = r.u16("channel count")?;
    let sample_rate_hz = r.u32("sample rate")?;
    let byte_rate = r.u32("byte rate")?;
    let block_align = r.u16("block align")?;
    let bits_per_sample = r.u16("bits per sample")?;

    let effective_tag = if tag == FORMAT_EXTENSIBLE {
        // cbSize, valid bits, channel mask, then the sub-format GUID whose
        // first two bytes carry the real format tag
        let _cb = r.u16("extension size")?;
        let _valid = r.u16("valid bits")?;
        let _mask = r.u32("channel mask")?;
        r.u16("sub-format")?
    } else {
        tag
    };

    if effective_tag != FORMAT_PCM {
        return Err(IngestError::Unsupported {
            field: "format_tag",
            value: u32::from(effective_tag),
        });
    }
    if channels != 1 {
        return Err(IngestError::Unsupported {
            field: "channels",
            value: u32::from(channels),
        });
    }
    if bits_per_sample != 16 {
        return Err(IngestError::Unsupported {
            field: "bits_per_sample",
            value: u32::from(bits_per_sample),
        });
    }
    if sample_rate_hz == 0 {
        return Err(IngestError::Malformed("sample rate is zero".into()));
    }
    let expected_rate = sample_rate_hz as u64 * u64::from(channels) * u64::from(bits_per_sample) / 8;
    if u64::from(byte_rate) != expected_rate {
        return Err(IngestError::Malformed(format!(
            "byte rate {byte_rate} inconsistent with {sample_rate_hz} Hz 16-bit mono ({expected_rate})"
        )));
    }
    if block_align != 2 {
        return Err(IngestError::Malformed(format!(
            "block align {block_align} inconsistent with 16-bit mono"
        )));
    }
    Ok(PcmFormat {
        sample_rate_hz,
        bits_per_sample,
        channels,
        byte_rate,
    })
}

/// Writes 16-bit mono PCM with a canonical 44-byte header.
pub fn encode_wav(samples: &[i16], sample_rate_hz: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

/// Quantizes normalized samples to 16-bit, clipping at full scale.
pub fn quantize(samples: &[f64]) -> Vec<i16> {
    samples
        .iter()
        .map(|s| (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(tag: u16, channels: u16, rate: u32, bits: u16, data_len: u32) -> Vec<u8> {
        let block = channels * bits / 8;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data_len).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * u32::from(block)).to_le_bytes());
        out.extend_from_slice(&block.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&data_len.to_le_bytes());
        out
    }

    #[test]
    fn table_one_shaped_header() {
        let mut bytes = header(1, 1, 44100, 16, 550_368);
        bytes.resize(bytes.len() + 550_368, 0);
        let (clip, fmt) = decode_wav(&bytes).unwrap();
        assert_eq!(fmt, PcmFormat::mono16(44100));
        assert_eq!(fmt.byte_rate, 88_200);
        assert!((clip.duration_s() - 6.24).abs() < 1.0 / 44100.0);
        // 551 kB column of the S1 row
        assert!(((bytes.len() as f64 / 1000.0) - 551.0).abs() <= 1.0);
    }

    #[test]
    fn sample_scaling_extremes() {
        let (clip, _) = decode_wav(&encode_wav(&[32767, -32768, 0], 8000)).unwrap();
        assert_eq!(clip.samples()[0], 32767.0 / 32768.0);
        assert_eq!(clip.samples()[1], -1.0);
        assert_eq!(clip.samples()[2], 0.0);
    }

    #[test]
    fn rejects_unsupported_formats_by_field() {
        let mut eight_bit = header(1, 1, 8000, 8, 4);
        eight_bit.extend_from_slice(&[0; 4]);
        assert_eq!(
            decode_wav(&eight_bit).unwrap_err(),
            IngestError::Unsupported { field: "bits_per_sample", value: 8 }
        );

        let mut stereo = header(1, 2, 8000, 16, 8);
        stereo.extend_from_slice(&[0; 8]);
        assert_eq!(
            decode_wav(&stereo).unwrap_err(),
            IngestError::Unsupported { field: "channels", value: 2 }
        );

        let mut float = header(3, 1, 8000, 32, 8);
        float.extend_from_slice(&[0; 8]);
        assert_eq!(
            decode_wav(&float).unwrap_err(),
            IngestError::Unsupported { field: "format_tag", value: 3 }
        );
    }

    #[test]
    fn rejects_malformed_streams() {
        assert!(matches!(decode_wav(b""), Err(IngestError::Malformed(_))));
        assert!(matches!(decode_wav(b"RIFX\0\0\0\0WAVE"), Err(IngestError::Malformed(_))));
        let full = encode_wav(&[1, 2, 3, 4], 8000);
        // data chunk cut short
        assert!(matches!(
            decode_wav(&full[..full.len() - 3]),
            Err(IngestError::Malformed(_))
        ));
        // header only, no data chunk
        assert!(matches!(decode_wav(&full[..36]), Err(IngestError::Malformed(_))));
        let mut bad_rate = full.clone();
        bad_rate[28..32].copy_from_slice(&1234u32.to_le_bytes());
        assert!(matches!(decode_wav(&bad_rate), Err(IngestError::Malformed(_))));
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut bytes = header(1, 1, 8000, 16, 0);
        // splice a LIST chunk with odd length (padded) before data
        let data_at = bytes.len() - 8;
        let mut list = b"LIST".to_vec();
        list.extend_from_slice(&3u32.to_le_bytes());
        list.extend_from_slice(b"abc\0");
        bytes.splice(data_at..data_at, list);
        let len = bytes.len();
        bytes[len - 4..].copy_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[0x10, 0x00, 0xF0, 0xFF]);
        let (clip, _) = decode_wav(&bytes).unwrap();
        assert_eq!(clip.len(), 2);
        assert_eq!(clip.samples()[1], -16.0 / 32768.0);
    }

    proptest! {
        #[test]
        fn encode_then_decode_reproduces_samples(
            samples in proptest::collection::vec(-1.0f64..1.0, 0..512),
            rate in 1000u32..96000,
        ) {
            let bytes = encode_wav(&quantize(&samples), rate);
            let (clip, fmt) = decode_wav(&bytes).unwrap();
            prop_assert_eq!(fmt.sample_rate_hz, rate);
            prop_assert_eq!(clip.len(), samples.len());
            for (a, b) in clip.samples().iter().zip(&samples) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
            // data length = duration * byte rate
            let data_len = (bytes.len() - 44) as f64;
            prop_assert!((data_len - clip.duration_s() * f64::from(fmt.byte_rate)).abs() < 1e-6);
        }
    }
}
