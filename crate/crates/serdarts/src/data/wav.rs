//! Minimal WAV IO: 16-bit PCM mono only. Anything else is an error, not a
//! conversion.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Decode a PCM16 mono WAV file into `[-1, 1)` samples and its sample rate.
pub fn read_wav_pcm16_mono(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 12];
    r.read_exact(&mut head).map_err(|_| Error::WavFormat("file too short".into()))?;
    if &head[0..4] != b"RIFF" || &head[8..12] != b"WAVE" {
        return Err(Error::WavFormat("not a RIFF/WAVE file".into()));
    }

    let mut sample_rate = None;
    let mut data: Option<Vec<u8>> = None;
    loop {
        let mut chunk = [0u8; 8];
        match r.read_exact(&mut chunk) {
            Ok(()) => {}
            Err(_) => break,
        }
        let size = u32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]) as usize;
        match &chunk[0..4] {
            b"fmt " => {
                let mut fmt = vec![0u8; size];
                r.read_exact(&mut fmt).map_err(|_| Error::WavFormat("truncated fmt chunk".into()))?;
                let format = u16::from_le_bytes([fmt[0], fmt[1]]);
                let channels = u16::from_le_bytes([fmt[2], fmt[3]]);
                let rate = u32::from_le_bytes([fmt[4], fmt[5], fmt[6], fmt[7]]);
                let bits = u16::from_le_bytes([fmt[14], fmt[15]]);
                if format != 1 || bits != 16 {
                    return Err(Error::WavFormat(format!(
                        "only PCM 16-bit supported, got format {format} with {bits} bits"
                    )));
                }
                if channels != 1 {
                    return Err(Error::WavFormat(format!("only mono supported, got {channels} channels")));
                }
                sample_rate = Some(rate);
            }
            b"data" => {
                let mut payload = vec![0u8; size];
                r.read_exact(&mut payload).map_err(|_| Error::WavFormat("truncated data chunk".into()))?;
                data = Some(payload);
            }
            _ => {
                // skip unknown chunk (word-aligned)
                let mut skip = vec![0u8; size + (size & 1)];
                r.read_exact(&mut skip).map_err(|_| Error::WavFormat("truncated chunk".into()))?;
            }
        }
        if sample_rate.is_some() && data.is_some() {
            break;
        }
    }
    let rate = sample_rate.ok_or_else(|| Error::WavFormat("missing fmt chunk".into()))?;
    let payload = data.ok_or_else(|| Error::WavFormat("missing data chunk".into()))?;
    let samples = payload
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
        .collect();
    Ok((samples, rate))
}

/// Write a PCM16 mono WAV; samples are clamped to `[-1, 1]`.
pub fn write_wav_pcm16_mono(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let data_len = samples.len() * 2;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_len as u32).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&sample_rate.to_le_bytes())?;
    w.write_all(&(sample_rate * 2).to_le_bytes())?; // byte rate
    w.write_all(&2u16.to_le_bytes())?; // block align
    w.write_all(&16u16.to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&(data_len as u32).to_le_bytes())?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f32> = (0..1600).map(|i| ((i as f32) * 0.02).sin() * 0.5).collect();
        write_wav_pcm16_mono(&path, &samples, 16000).unwrap();
        let (back, rate) = read_wav_pcm16_mono(&path).unwrap();
        assert_eq!(rate, 16000);
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        // hand-build a stereo header
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&40u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes()); // stereo
        bytes.extend_from_slice(&16000u32.to_le_bytes());
        bytes.extend_from_slice(&64000u32.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = read_wav_pcm16_mono(&path).unwrap_err().to_string();
        assert!(err.contains("mono"), "{err}");
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.wav");
        std::fs::write(&path, b"definitely not a wav").unwrap();
        assert!(matches!(read_wav_pcm16_mono(&path), Err(Error::WavFormat(_))));
    }
}
