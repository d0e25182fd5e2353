//! Minimal RIFF/WAVE reader and 16-bit PCM writer.
//!
//! The reader accepts integer PCM (8, 16, 24, 32 bit), IEEE float (32, 64 bit)
//! and WAVE_FORMAT_EXTENSIBLE wrapping either, and downmixes to mono by
//! averaging channels. Samples come back as `f64` in `[-1, 1)`.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::AudioBuffer;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy)]
struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn header_err(e: std::io::Error) -> Error {
    Error::CorruptHeader(e.to_string())
}

fn parse_fmt(chunk: &[u8]) -> Result<Format> {
    if chunk.len() < 16 {
        return Err(Error::CorruptHeader("fmt chunk shorter than 16 bytes".into()));
    }
    let mut r = chunk;
    let mut tag = r.read_u16::<LittleEndian>().map_err(header_err)?;
    let channels = r.read_u16::<LittleEndian>().map_err(header_err)?;
    let sample_rate = r.read_u32::<LittleEndian>().map_err(header_err)?;
    let _byte_rate = r.read_u32::<LittleEndian>().map_err(header_err)?;
    let _block_align = r.read_u16::<LittleEndian>().map_err(header_err)?;
    let bits = r.read_u16::<LittleEndian>().map_err(header_err)?;
    if tag == FORMAT_EXTENSIBLE {
        // cbSize, valid bits, channel mask, then the sub-format GUID whose
        // first two bytes carry the real format tag.
        if chunk.len() < 26 {
            return Err(Error::CorruptHeader("extensible fmt chunk too short".into()));
        }
        tag = u16::from_le_bytes([chunk[24], chunk[25]]);
    }
    if channels == 0 {
        return Err(Error::CorruptHeader("zero channels".into()));
    }
    if sample_rate == 0 {
        return Err(Error::CorruptHeader("zero sample rate".into()));
    }
    Ok(Format { tag, channels, sample_rate, bits })
}

fn decode(fmt: Format, data: &[u8]) -> Result<Vec<f64>> {
    let width = match (fmt.tag, fmt.bits) {
        (FORMAT_PCM, 8 | 16 | 24 | 32) | (FORMAT_FLOAT, 32 | 64) => fmt.bits as usize / 8,
        (FORMAT_PCM | FORMAT_FLOAT, b) => {
            return Err(Error::UnsupportedFormat(format!("{b}-bit samples with format tag {}", fmt.tag)))
        }
        (t, _) => return Err(Error::UnsupportedFormat(format!("format tag {t:#06x}"))),
    };
    let frame = width * fmt.channels as usize;
    let frames = data.len() / frame;
    let mut out = Vec::with_capacity(frames);
    for f in data.chunks_exact(frame) {
        let mut acc = 0.0;
        for s in f.chunks_exact(width) {
            acc += match (fmt.tag, width) {
                (FORMAT_PCM, 1) => (s[0] as f64 - 128.0) / 128.0,
                (FORMAT_PCM, 2) => i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0,
                (FORMAT_PCM, 3) => (i32::from_le_bytes([0, s[0], s[1], s[2]]) >> 8) as f64 / 8_388_608.0,
                (FORMAT_PCM, 4) => i32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64 / 2_147_483_648.0,
                (_, 4) => f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64,
                _ => f64::from_le_bytes(s.try_into().expect("8-byte sample")),
            };
        }
        out.push(acc / fmt.channels as f64);
    }
    Ok(out)
}

pub fn read_wav<R: Read>(mut r: R) -> Result<AudioBuffer> {
    let mut riff = [0u8; 12];
    r.read_exact(&mut riff).map_err(header_err)?;
    if &riff[0..4] != b"RIFF" || &riff[8..12] != b"WAVE" {
        return Err(Error::CorruptHeader("missing RIFF/WAVE signature".into()));
    }
    let mut fmt: Option<Format> = None;
    loop {
        let mut id = [0u8; 4];
        r.read_exact(&mut id).map_err(|_| Error::CorruptHeader("no data chunk".into()))?;
        let size = r.read_u32::<LittleEndian>().map_err(header_err)? as usize;
        if &id == b"data" {
            let fmt = fmt.ok_or_else(|| Error::CorruptHeader("data chunk before fmt chunk".into()))?;
            let mut data = Vec::new();
            // Tolerate streams whose data size field is a placeholder.
            r.take(size as u64).read_to_end(&mut data)?;
            return Ok(AudioBuffer { sample_rate: fmt.sample_rate, samples: decode(fmt, &data)? });
        }
        let mut body = vec![0u8; size + size % 2];
        r.read_exact(&mut body).map_err(header_err)?;
        if &id == b"fmt " {
            fmt = Some(parse_fmt(&body[..size])?);
        }
    }
}

/// Quantizes to 16-bit integer PCM: `round(x * 32768)` clamped to the i16 range.
pub fn quantize_i16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav<W: Write>(mut w: W, sample_rate: u32, samples: &[f64]) -> Result<()> {
    let data_len = (samples.len() * 2) as u32;
    w.write_all(b"RIFF")?;
    w.write_u32::<LittleEndian>(36 + data_len)?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_u32::<LittleEndian>(16)?;
    w.write_u16::<LittleEndian>(FORMAT_PCM)?;
    w.write_u16::<LittleEndian>(1)?;
    w.write_u32::<LittleEndian>(sample_rate)?;
    w.write_u32::<LittleEndian>(sample_rate * 2)?;
    w.write_u16::<LittleEndian>(2)?;
    w.write_u16::<LittleEndian>(16)?;
    w.write_all(b"data")?;
    w.write_u32::<LittleEndian>(data_len)?;
    for &s in samples {
        w.write_i16::<LittleEndian>(quantize_i16(s))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_wav_file(path: impl AsRef<std::path::Path>) -> Result<AudioBuffer> {
    read_wav(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn write_wav_file(path: impl AsRef<std::path::Path>, sample_rate: u32, samples: &[f64]) -> Result<()> {
    write_wav(std::io::BufWriter::new(std::fs::File::create(path)?), sample_rate, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode(tag: u16, channels: u16, bits: u16, payload: &[u8], extensible: bool) -> Vec<u8> {
        let mut fmt = Vec::new();
        let outer = if extensible { FORMAT_EXTENSIBLE } else { tag };
        fmt.extend(outer.to_le_bytes());
        fmt.extend(channels.to_le_bytes());
        fmt.extend(16000u32.to_le_bytes());
        fmt.extend((16000 * channels as u32 * bits as u32 / 8).to_le_bytes());
        fmt.extend((channels * bits / 8).to_le_bytes());
        fmt.extend(bits.to_le_bytes());
        if extensible {
            fmt.extend(22u16.to_le_bytes());
            fmt.extend(bits.to_le_bytes());
            fmt.extend(0u32.to_le_bytes());
            fmt.extend(tag.to_le_bytes());
            fmt.extend([0u8; 14]);
        }
        let mut out = Vec::new();
        out.extend(b"RIFF");
        out.extend((4 + 8 + fmt.len() as u32 + 8 + payload.len() as u32).to_le_bytes());
        out.extend(b"WAVE");
        out.extend(b"fmt ");
        out.extend((fmt.len() as u32).to_le_bytes());
        out.extend(&fmt);
        out.extend(b"LIST");
        out.extend(3u32.to_le_bytes());
        out.extend([1u8, 2, 3, 0]);
        out.extend(b"data");
        out.extend((payload.len() as u32).to_le_bytes());
        out.extend(payload);
        out
    }

    #[test]
    fn sixteen_bit_round_trip() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).sin() * 0.9).collect();
        let mut buf = Vec::new();
        write_wav(&mut buf, 16000, &x).unwrap();
        let back = read_wav(&buf[..]).unwrap();
        assert_eq!(back.sample_rate, 16000);
        for (a, b) in x.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12);
        }
    }

    #[test]
    fn clamps_full_scale() {
        assert_eq!(quantize_i16(1.0), 32767);
        assert_eq!(quantize_i16(-1.0), -32768);
        assert_eq!(quantize_i16(-2.0), -32768);
    }

    #[test]
    fn stereo_float_is_downmixed() {
        let mut payload = Vec::new();
        for (l, r) in [(0.5f32, -0.5f32), (1.0, 0.0)] {
            payload.extend(l.to_le_bytes());
            payload.extend(r.to_le_bytes());
        }
        let wav = read_wav(&encode(FORMAT_FLOAT, 2, 32, &payload, false)[..]).unwrap();
        assert_eq!(wav.samples, vec![0.0, 0.5]);
        let ext = read_wav(&encode(FORMAT_FLOAT, 2, 32, &payload, true)[..]).unwrap();
        assert_eq!(ext.samples, vec![0.0, 0.5]);
    }

    #[test]
    fn integer_widths() {
        let w8 = read_wav(&encode(FORMAT_PCM, 1, 8, &[0, 128, 192], false)[..]).unwrap();
        assert_eq!(w8.samples, vec![-1.0, 0.0, 0.5]);
        let w24 = read_wav(&encode(FORMAT_PCM, 1, 24, &[0, 0, 0xC0], false)[..]).unwrap();
        assert_eq!(w24.samples, vec![-0.5]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(read_wav(&b"RIFX0000WAVE"[..]), Err(Error::CorruptHeader(_))));
        assert!(matches!(read_wav(&b"RIF"[..]), Err(Error::CorruptHeader(_))));
        assert!(matches!(
            read_wav(&encode(6, 1, 8, &[0], false)[..]),
            Err(Error::UnsupportedFormat(_))
        ));
        assert!(matches!(
            read_wav(&encode(FORMAT_PCM, 1, 12, &[0, 0], false)[..]),
            Err(Error::UnsupportedFormat(_))
        ));
    }
}
