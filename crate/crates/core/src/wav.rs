//! RIFF/WAVE reader and writer restricted to 16-bit PCM, mono, 16 kHz.

use std::fs;
use std::path::Path;

use crate::dsp::{Waveform, SAMPLE_RATE_HZ};
use crate::{Error, Result};

const PCM_FORMAT: u16 = 1;

fn wav_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Wav { path: path.to_path_buf(), reason: reason.into() }
}

struct Header {
    data_offset: usize,
    data_len: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(wav_err(path, "not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut fmt_seen = false;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            if len < 16 || body + 16 > bytes.len() {
                return Err(wav_err(path, "truncated fmt chunk"));
            }
            let f = &bytes[body..body + 16];
            let format = u16::from_le_bytes([f[0], f[1]]);
            let channels = u16::from_le_bytes([f[2], f[3]]);
            let rate = u32::from_le_bytes([f[4], f[5], f[6], f[7]]);
            let bits = u16::from_le_bytes([f[14], f[15]]);
            if format != PCM_FORMAT {
                return Err(wav_err(path, format!("format tag {format} is not PCM")));
            }
            if channels != 1 {
                return Err(wav_err(path, format!("{channels} channels, expected mono")));
            }
            if bits != 16 {
                return Err(wav_err(path, format!("{bits}-bit samples, expected 16-bit")));
            }
            if rate != SAMPLE_RATE_HZ {
                return Err(wav_err(path, format!("sample rate {rate} Hz, expected 16000 Hz")));
            }
            fmt_seen = true;
        } else if id == b"data" {
            if !fmt_seen {
                return Err(wav_err(path, "data chunk before fmt chunk"));
            }
            let data_len = len.min(bytes.len() - body);
            if data_len % 2 != 0 {
                return Err(wav_err(path, "odd data length for 16-bit samples"));
            }
            return Ok(Header { data_offset: body, data_len });
        }
        pos = body + len + (len & 1);
    }
    Err(wav_err(path, if fmt_seen { "missing data chunk" } else { "missing fmt chunk" }))
}

/// Reads a WAV file into a waveform with samples scaled to [-1, 1).
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let header = parse_header(path, &bytes)?;
    let samples = bytes[header.data_offset..header.data_offset + header.data_len]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Waveform::new(samples, SAMPLE_RATE_HZ)
}

/// Duration in seconds from the header alone.
pub fn wav_duration_s(path: impl AsRef<Path>) -> Result<f64> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let header = parse_header(path, &bytes)?;
    Ok((header.data_len / 2) as f64 / SAMPLE_RATE_HZ as f64)
}

/// Encodes a waveform as 16-bit PCM; samples are clipped to [-1, 1].
pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let n = w.samples().len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate_hz().to_le_bytes());
    out.extend_from_slice(&(w.sample_rate_hz() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in w.samples() {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    if w.sample_rate_hz() != SAMPLE_RATE_HZ {
        return Err(Error::UnsupportedSampleRate(w.sample_rate_hz()));
    }
    fs::write(path, encode_wav(w))?;
    Ok(())
}
