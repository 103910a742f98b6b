//! Minimal mono WAV (16-bit PCM / 32-bit float) and raw float32 I/O.

use std::io::{Read, Write};

use super::PcmFrame;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Parses a mono WAV file.
pub fn read_wav<R: Read>(mut input: R) -> Result<PcmFrame> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Wav("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(&bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = (body + size).min(bytes.len());
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Wav("short fmt chunk".into()));
                }
                let mut format = u16_at(&bytes, body);
                if format == FORMAT_EXTENSIBLE && size >= 26 {
                    format = u16_at(&bytes, body + 24);
                }
                fmt = Some((
                    format,
                    u16_at(&bytes, body + 2),
                    u32_at(&bytes, body + 4),
                    u16_at(&bytes, body + 14),
                ));
            }
            b"data" => data = Some(&bytes[body..end]),
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or_else(|| Error::Wav("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Wav("missing data chunk".into()))?;
    if channels != 1 {
        return Err(Error::Wav(format!("expected mono, got {channels} channels")));
    }
    let samples: Vec<f64> = match (format, bits) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (FORMAT_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        _ => return Err(Error::Wav(format!("unsupported encoding: format {format}, {bits} bits"))),
    };
    PcmFrame::new(samples, rate, 0.0)
}

/// Writes a mono 32-bit float WAV file.
pub fn write_wav_f32<W: Write>(mut out: W, frame: &PcmFrame) -> Result<()> {
    let data_len = (frame.len() * 4) as u32;
    let rate = frame.sample_rate();
    out.write_all(b"RIFF")?;
    out.write_all(&(36 + data_len).to_le_bytes())?;
    out.write_all(b"WAVEfmt ")?;
    out.write_all(&16u32.to_le_bytes())?;
    out.write_all(&FORMAT_FLOAT.to_le_bytes())?;
    out.write_all(&1u16.to_le_bytes())?;
    out.write_all(&rate.to_le_bytes())?;
    out.write_all(&(rate * 4).to_le_bytes())?;
    out.write_all(&4u16.to_le_bytes())?;
    out.write_all(&32u16.to_le_bytes())?;
    out.write_all(b"data")?;
    out.write_all(&data_len.to_le_bytes())?;
    for s in frame.samples() {
        out.write_all(&(*s as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Writes a mono 16-bit PCM WAV file.
pub fn write_wav_i16<W: Write>(mut out: W, frame: &PcmFrame) -> Result<()> {
    let data_len = (frame.len() * 2) as u32;
    let rate = frame.sample_rate();
    out.write_all(b"RIFF")?;
    out.write_all(&(36 + data_len).to_le_bytes())?;
    out.write_all(b"WAVEfmt ")?;
    out.write_all(&16u32.to_le_bytes())?;
    out.write_all(&FORMAT_PCM.to_le_bytes())?;
    out.write_all(&1u16.to_le_bytes())?;
    out.write_all(&rate.to_le_bytes())?;
    out.write_all(&(rate * 2).to_le_bytes())?;
    out.write_all(&2u16.to_le_bytes())?;
    out.write_all(&16u16.to_le_bytes())?;
    out.write_all(b"data")?;
    out.write_all(&data_len.to_le_bytes())?;
    for s in frame.samples() {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads headerless little-endian float32 samples.
pub fn read_raw_f32<R: Read>(mut input: R, sample_rate: u32) -> Result<PcmFrame> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Wav("raw float32 stream length is not a multiple of 4".into()));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    PcmFrame::new(samples, sample_rate, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_wav_round_trip() {
        let frame = PcmFrame::new(vec![0.0, 0.25, -0.5, 1.0], 16_000, 0.0).unwrap();
        let mut buf = Vec::new();
        write_wav_f32(&mut buf, &frame).unwrap();
        let back = read_wav(&buf[..]).unwrap();
        assert_eq!(back.sample_rate(), 16_000);
        assert_eq!(back.samples(), frame.samples());
    }

    #[test]
    fn pcm16_wav_round_trip() {
        let frame = PcmFrame::new(vec![0.0, 0.5, -0.5, -1.0], 8_000, 0.0).unwrap();
        let mut buf = Vec::new();
        write_wav_i16(&mut buf, &frame).unwrap();
        let back = read_wav(&buf[..]).unwrap();
        assert_eq!(back.samples(), frame.samples());
    }

    #[test]
    fn raw_float_stream() {
        let bytes: Vec<u8> = [0.5f32, -0.25].iter().flat_map(|v| v.to_le_bytes()).collect();
        let frame = read_raw_f32(&bytes[..], 16_000).unwrap();
        assert_eq!(frame.samples(), &[0.5, -0.25]);
        assert!(read_raw_f32(&bytes[..3], 16_000).is_err());
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_wav(&b"not a wav file"[..]).is_err());
    }
}
