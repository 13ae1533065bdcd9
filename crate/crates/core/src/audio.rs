//! WAV decoding and encoding for the PCM subset used by the toolkit.
//!
//! Reads mono or stereo integer PCM (16/24/32-bit) at any sample rate;
//! writes 16-bit mono. Stereo input is downmixed by averaging channels.

use std::fs;
use std::path::Path;

use crate::error::{AmtError, Result};

/// Mono audio in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn read_u16(bytes: &[u8], at: usize) -> Option<u16> {
    Some(u16::from_le_bytes(bytes.get(at..at + 2)?.try_into().ok()?))
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    Some(u32::from_le_bytes(bytes.get(at..at + 4)?.try_into().ok()?))
}

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

/// Load a PCM WAV file as a mono buffer scaled to `[-1, 1]`.
pub fn load_audio(path: &Path) -> Result<AudioBuffer> {
    let bytes = fs::read(path).map_err(|e| AmtError::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let unreadable = |reason: &str| AmtError::UnreadableFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let unsupported = |reason: String| AmtError::UnsupportedEncoding {
        path: path.to_path_buf(),
        reason,
    };

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(unreadable("not a RIFF/WAVE file"));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12usize;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = read_u32(&bytes, at + 4).ok_or_else(|| unreadable("truncated chunk header"))? as usize;
        let body_start = at + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            return Err(unreadable("truncated chunk body"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(unreadable("fmt chunk too small"));
                }
                fmt = Some(FmtChunk {
                    format: read_u16(&bytes, body_start).unwrap(),
                    channels: read_u16(&bytes, body_start + 2).unwrap(),
                    sample_rate: read_u32(&bytes, body_start + 4).unwrap(),
                    bits_per_sample: read_u16(&bytes, body_start + 14).unwrap(),
                });
            }
            b"data" => data = Some(&bytes[body_start..body_end]),
            _ => {}
        }
        // chunks are word-aligned
        at = body_end + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| unreadable("missing fmt chunk"))?;
    let data = data.ok_or_else(|| unreadable("missing data chunk"))?;

    if fmt.format != 1 {
        return Err(unsupported(format!("audio format tag {} (only integer PCM supported)", fmt.format)));
    }
    if !matches!(fmt.bits_per_sample, 16 | 24 | 32) {
        return Err(unsupported(format!("{}-bit PCM", fmt.bits_per_sample)));
    }
    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(unsupported(format!("{} channels (mono or stereo only)", fmt.channels)));
    }
    if fmt.sample_rate == 0 {
        return Err(unreadable("zero sample rate"));
    }

    let bytes_per_sample = fmt.bits_per_sample as usize / 8;
    let stride = bytes_per_sample * fmt.channels as usize;
    let n_frames = data.len() / stride;
    if n_frames == 0 {
        return Err(AmtError::EmptyAudio);
    }

    let full_scale = (1i64 << (fmt.bits_per_sample - 1)) as f64;
    let mut samples = Vec::with_capacity(n_frames);
    for frame in 0..n_frames {
        let mut acc = 0.0;
        for ch in 0..fmt.channels as usize {
            let s = frame * stride + ch * bytes_per_sample;
            let raw = match fmt.bits_per_sample {
                16 => i16::from_le_bytes(data[s..s + 2].try_into().unwrap()) as i64,
                24 => {
                    let v = (data[s] as i64) | ((data[s + 1] as i64) << 8) | ((data[s + 2] as i64) << 16);
                    // sign-extend from 24 bits
                    (v << 40) >> 40
                }
                32 => i32::from_le_bytes(data[s..s + 4].try_into().unwrap()) as i64,
                _ => unreachable!(),
            };
            acc += raw as f64 / full_scale;
        }
        samples.push(acc / fmt.channels as f64);
    }

    Ok(AudioBuffer {
        samples,
        sample_rate: fmt.sample_rate,
    })
}

/// Write a mono buffer as 16-bit PCM. Samples are clamped to `[-1, 1]`.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let n = audio.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &audio.samples {
        let clamped = s.clamp(-1.0, 1.0);
        out.extend_from_slice(&((clamped * 32767.0).round() as i16).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn write_raw_wav(path: &Path, format: u16, channels: u16, bits: u16, sr: u32, data: &[u8]) {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&format.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&sr.to_le_bytes());
        out.extend_from_slice(&(sr * channels as u32 * bits as u32 / 8).to_le_bytes());
        out.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        fs::write(path, out).unwrap();
    }

    #[test]
    fn full_scale_sine_peak() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sine.wav");
        let sr = 44100u32;
        let mut data = Vec::new();
        for n in 0..sr {
            let x = (TAU * 440.0 * n as f64 / sr as f64).sin();
            data.extend_from_slice(&((x * 32767.0).round() as i16).to_le_bytes());
        }
        write_raw_wav(&path, 1, 1, 16, sr, &data);

        let audio = load_audio(&path).unwrap();
        assert_eq!(audio.samples.len(), 44100);
        assert_eq!(audio.sample_rate, 44100);
        let peak = audio.samples.iter().cloned().fold(0.0, f64::max);
        assert!((peak - 32767.0 / 32768.0).abs() < 2e-4, "peak {peak}");
    }

    #[test]
    fn opposite_channels_cancel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let mut data = Vec::new();
        for n in 0..100i16 {
            data.extend_from_slice(&(n * 100).to_le_bytes());
            data.extend_from_slice(&(-(n * 100)).to_le_bytes());
        }
        write_raw_wav(&path, 1, 2, 16, 8000, &data);

        let audio = load_audio(&path).unwrap();
        assert!(audio.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn zero_length_data_is_empty_audio() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.wav");
        write_raw_wav(&path, 1, 1, 16, 44100, &[]);
        assert!(matches!(load_audio(&path), Err(AmtError::EmptyAudio)));
    }

    #[test]
    fn float_format_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("float.wav");
        write_raw_wav(&path, 3, 1, 32, 44100, &[0; 8]);
        assert!(matches!(
            load_audio(&path),
            Err(AmtError::UnsupportedEncoding { .. })
        ));
    }

    #[test]
    fn garbage_is_unreadable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("garbage.wav");
        fs::write(&path, b"definitely not a wav").unwrap();
        assert!(matches!(load_audio(&path), Err(AmtError::UnreadableFile { .. })));
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.wav");
        let audio = AudioBuffer {
            samples: (0..500).map(|n| (TAU * n as f64 / 50.0).sin() * 0.5).collect(),
            sample_rate: 22050,
        };
        write_wav(&path, &audio).unwrap();
        let back = load_audio(&path).unwrap();
        assert_eq!(back.sample_rate, 22050);
        assert_eq!(back.samples.len(), 500);
        for (a, b) in audio.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn reads_24_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s24.wav");
        // two samples: +half scale, -half scale
        let data = [0x00, 0x00, 0x40, 0x00, 0x00, 0xC0];
        write_raw_wav(&path, 1, 1, 24, 48000, &data);
        let audio = load_audio(&path).unwrap();
        assert!((audio.samples[0] - 0.5).abs() < 1e-6);
        assert!((audio.samples[1] + 0.5).abs() < 1e-6);
    }
}
