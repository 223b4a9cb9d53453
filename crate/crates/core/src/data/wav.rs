//! RIFF/WAVE reading and writing.
//!
//! Reads integer PCM (8, 16, 24 and 32 bit) and IEEE float (32 and 64 bit),
//! including the extensible format tag, with any channel count. Channels are
//! averaged to mono and integer samples are scaled by `2^(bits-1)`, so
//! PCM16 maps to `[-1, 32767/32768]`. Errors carry the byte offset and the
//! name of the offending header field.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::frontend::Waveform;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn wav_err(offset: usize, field: &'static str, msg: impl Into<String>) -> Error {
    Error::Wav {
        offset,
        field,
        msg: msg.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take(&self, offset: usize, len: usize, field: &'static str) -> Result<&[u8]> {
        self.bytes.get(offset..offset + len).ok_or_else(|| {
            wav_err(
                offset,
                field,
                format!("file ends after {} bytes", self.bytes.len()),
            )
        })
    }

    fn u16(&self, offset: usize, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(offset, 2, field)?.try_into().unwrap(),
        ))
    }

    fn u32(&self, offset: usize, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(offset, 4, field)?.try_into().unwrap(),
        ))
    }

    fn tag(&self, offset: usize, field: &'static str, want: &[u8; 4]) -> Result<()> {
        let got = self.take(offset, 4, field)?;
        if got != want {
            return Err(wav_err(
                offset,
                field,
                format!(
                    "expected '{}', found '{}'",
                    String::from_utf8_lossy(want),
                    String::from_utf8_lossy(got)
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Format {
    float: bool,
    channels: usize,
    sample_rate: u32,
    bits: usize,
}

fn parse_fmt(r: &Reader<'_>, start: usize, size: usize) -> Result<Format> {
    if size < 16 {
        return Err(wav_err(
            start - 4,
            "fmt_size",
            format!("fmt chunk has {size} bytes, need 16"),
        ));
    }
    let mut tag = r.u16(start, "audio_format")?;
    let channels = r.u16(start + 2, "num_channels")? as usize;
    let sample_rate = r.u32(start + 4, "sample_rate")?;
    let block_align = r.u16(start + 12, "block_align")? as usize;
    let bits = r.u16(start + 14, "bits_per_sample")? as usize;
    if tag == FORMAT_EXTENSIBLE {
        if size < 40 {
            return Err(wav_err(
                start - 4,
                "fmt_size",
                "extensible fmt chunk shorter than 40 bytes",
            ));
        }
        tag = r.u16(start + 24, "sub_format")?;
    }
    let float = match tag {
        FORMAT_PCM => false,
        FORMAT_FLOAT => true,
        other => {
            return Err(wav_err(
                start,
                "audio_format",
                format!("unsupported codec tag {other:#06x}; only PCM and IEEE float are read"),
            ))
        }
    };
    if channels == 0 {
        return Err(wav_err(start + 2, "num_channels", "zero channels"));
    }
    if sample_rate == 0 {
        return Err(wav_err(start + 4, "sample_rate", "zero sample rate"));
    }
    let ok_bits = if float {
        matches!(bits, 32 | 64)
    } else {
        matches!(bits, 8 | 16 | 24 | 32)
    };
    if !ok_bits {
        return Err(wav_err(
            start + 14,
            "bits_per_sample",
            format!(
                "{bits}-bit {} samples are not supported",
                if float { "float" } else { "PCM" }
            ),
        ));
    }
    if block_align != channels * bits / 8 {
        return Err(wav_err(
            start + 12,
            "block_align",
            format!("{block_align} does not match {channels} channels of {bits} bits"),
        ));
    }
    Ok(Format {
        float,
        channels,
        sample_rate,
        bits,
    })
}

fn decode_sample(b: &[u8], fmt: &Format) -> f64 {
    match (fmt.float, fmt.bits) {
        (true, 32) => f32::from_le_bytes(b.try_into().unwrap()) as f64,
        (true, _) => f64::from_le_bytes(b.try_into().unwrap()),
        (false, 8) => (b[0] as f64 - 128.0) / 128.0,
        (false, 16) => i16::from_le_bytes(b.try_into().unwrap()) as f64 / 32_768.0,
        (false, 24) => {
            let v = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
            v as f64 / 8_388_608.0
        }
        (false, _) => i32::from_le_bytes(b.try_into().unwrap()) as f64 / 2_147_483_648.0,
    }
}

/// Parses an in-memory WAV file into a mono waveform at its native rate.
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    let r = Reader { bytes };
    r.tag(0, "riff_id", b"RIFF")?;
    r.u32(4, "riff_size")?;
    r.tag(8, "wave_id", b"WAVE")?;
    let mut pos = 12;
    let mut fmt = None;
    loop {
        if pos + 8 > bytes.len() {
            return Err(wav_err(pos, "data", "no data chunk found"));
        }
        let id = r.take(pos, 4, "chunk_id")?;
        let size = r.u32(pos + 4, "chunk_size")? as usize;
        let body = pos + 8;
        match id {
            b"fmt " => fmt = Some(parse_fmt(&r, body, size)?),
            b"data" => {
                let fmt = fmt.ok_or_else(|| wav_err(pos, "fmt", "data chunk before fmt chunk"))?;
                let data = r.take(body, size, "data_size")?;
                let width = fmt.bits / 8;
                let frame = width * fmt.channels;
                if !size.is_multiple_of(frame) {
                    return Err(wav_err(
                        pos + 4,
                        "data_size",
                        format!("{size} bytes is not a whole number of {frame}-byte frames"),
                    ));
                }
                let samples: Vec<f32> = data
                    .chunks_exact(frame)
                    .map(|f| {
                        let sum: f64 = f.chunks_exact(width).map(|s| decode_sample(s, &fmt)).sum();
                        (sum / fmt.channels as f64) as f32
                    })
                    .collect();
                if samples.is_empty() {
                    return Err(wav_err(pos + 4, "data_size", "no audio frames"));
                }
                return Waveform::new(samples, fmt.sample_rate);
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
}

/// Loads `path`, averaging channels to mono and resampling to `target_rate`
/// when it differs from the file's rate.
pub fn load_wav(path: &Path, target_rate: u32) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let w = parse_wav(&bytes).map_err(|e| match e {
        Error::Wav { offset, field, msg } => Error::Wav {
            offset,
            field,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })?;
    resample_linear(&w, target_rate)
}

/// Linear-interpolation resampling. Output length is
/// `round(len * to / from)`.
pub fn resample_linear(w: &Waveform, to: u32) -> Result<Waveform> {
    if to == 0 {
        return Err(Error::Config("target sample rate must be positive".into()));
    }
    if w.sample_rate == to {
        return Ok(w.clone());
    }
    let ratio = w.sample_rate as f64 / to as f64;
    let n_out = ((w.len() as f64 / ratio).round() as usize).max(1);
    let last = w.len() - 1;
    let samples = (0..n_out)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = (pos.floor() as usize).min(last);
            let frac = pos - j as f64;
            let a = w.samples[j] as f64;
            let b = w.samples[(j + 1).min(last)] as f64;
            (a + (b - a) * frac) as f32
        })
        .collect();
    Waveform::new(samples, to)
}

/// Encodes mono PCM16. Samples are clamped to `[-1, 1)`.
pub fn encode_wav_pcm16(w: &Waveform) -> Vec<u8> {
    let data_len = w.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &w.samples {
        let q = (s as f64 * 32_768.0).round().clamp(-32_768.0, 32_767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn save_wav(path: &Path, w: &Waveform) -> Result<()> {
    fs::write(path, encode_wav_pcm16(w)).map_err(|e| Error::io(path, e))
}
