//! WAV file boundary and resampling.
//!
//! Audio is written as mono 16-bit signed little-endian PCM. Reading accepts
//! any integer or float PCM layout `hound` understands and downmixes
//! multichannel files to mono.

use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::plant::AudioBuffer;

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path.as_ref(), spec)?;
    for &s in &audio.samples {
        w.write_sample(quantize(s))?;
    }
    w.finalize()?;
    Ok(())
}

/// Like [`write_wav`], with `comment` stored in a trailing `LIST/INFO`
/// `ICMT` chunk that ordinary readers ignore.
pub fn write_wav_with_comment(path: impl AsRef<Path>, audio: &AudioBuffer, comment: &str) -> Result<()> {
    let path = path.as_ref();
    write_wav(path, audio)?;
    let mut bytes = std::fs::read(path)?;
    let mut text = comment.as_bytes().to_vec();
    text.push(0);
    if text.len() % 2 == 1 {
        text.push(0);
    }
    let mut list = b"LIST".to_vec();
    list.extend_from_slice(&((4 + 8 + text.len()) as u32).to_le_bytes());
    list.extend_from_slice(b"INFOICMT");
    list.extend_from_slice(&(text.len() as u32).to_le_bytes());
    list.extend_from_slice(&text);
    bytes.extend_from_slice(&list);
    let riff = (bytes.len() - 8) as u32;
    bytes[4..8].copy_from_slice(&riff.to_le_bytes());
    std::fs::write(path, bytes)?;
    Ok(())
}

/// The `ICMT` comment written by [`write_wav_with_comment`], if any.
pub fn read_wav_comment(path: impl AsRef<Path>) -> Result<Option<String>> {
    let bytes = std::fs::read(path)?;
    let Some(at) = bytes.windows(8).position(|w| w == b"INFOICMT") else {
        return Ok(None);
    };
    let len_at = at + 8;
    if bytes.len() < len_at + 4 {
        return Ok(None);
    }
    let len = u32::from_le_bytes(bytes[len_at..len_at + 4].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(len_at + 4..len_at + 4 + len).unwrap_or(&[]);
    let text = body.split(|&b| b == 0).next().unwrap_or(&[]);
    Ok(Some(String::from_utf8_lossy(text).into_owned()))
}

fn quantize(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::parse(path, "zero channels"));
    }
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => r.samples::<f32>().collect::<Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = if spec.bits_per_sample == 16 {
                32767.0
            } else {
                (1i64 << (spec.bits_per_sample - 1)) as f32
            };
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<Result<_, _>>()?
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        warn!(
            "{}: downmixing {channels} channels to mono",
            path.display()
        );
        interleaved
            .chunks(channels)
            .map(|c| c.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    AudioBuffer::new(spec.sample_rate, samples).map_err(|e| Error::parse(path, e.to_string()))
}

/// Linear-interpolation resampling to `to_rate`.
pub fn resample_linear(audio: &AudioBuffer, to_rate: u32) -> AudioBuffer {
    if audio.sample_rate == to_rate || audio.is_empty() {
        return AudioBuffer {
            sample_rate: to_rate,
            samples: audio.samples.clone(),
        };
    }
    let ratio = audio.sample_rate as f64 / to_rate as f64;
    let out_len = (audio.len() as f64 / ratio).round() as usize;
    let last = audio.len() - 1;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = (pos.floor() as usize).min(last);
            let frac = pos - j as f64;
            let a = audio.samples[j] as f64;
            let b = audio.samples[(j + 1).min(last)] as f64;
            (a + (b - a) * frac) as f32
        })
        .collect();
    AudioBuffer {
        sample_rate: to_rate,
        samples,
    }
}

/// Truncates or zero-pads to exactly `len` samples. Returns whether anything
/// changed.
pub fn fit_length(audio: &mut AudioBuffer, len: usize) -> bool {
    if audio.len() == len {
        return false;
    }
    audio.samples.resize(len, 0.0);
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let samples: Vec<f32> = (0..1000).map(|i| ((i as f32) * 0.013).sin() * 0.9).collect();
        let a = AudioBuffer::new(16_000, samples).unwrap();
        write_wav(&p, &a).unwrap();
        let b = read_wav(&p).unwrap();
        assert_eq!(b.sample_rate, 16_000);
        assert_eq!(b.len(), a.len());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x - y).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn comment_chunk_is_ignored_by_readers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        let a = AudioBuffer::new(8000, vec![0.5; 101]).unwrap();
        write_wav_with_comment(&p, &a, "config_hash abc seed 7").unwrap();
        let b = read_wav(&p).unwrap();
        assert_eq!(b.len(), 101);
        assert_eq!(read_wav_comment(&p).unwrap().as_deref(), Some("config_hash abc seed 7"));
    }

    #[test]
    fn resample_length_and_endpoints() {
        let a = AudioBuffer::new(44_100, vec![0.25; 88_200]).unwrap();
        let b = resample_linear(&a, 16_000);
        assert_eq!(b.len(), 32_000);
        assert!(b.samples.iter().all(|&s| s == 0.25));
    }

    #[test]
    fn fit_length_pads_and_truncates() {
        let mut a = AudioBuffer::new(8000, vec![1.0; 10]).unwrap();
        assert!(fit_length(&mut a, 12));
        assert_eq!(&a.samples[10..], &[0.0, 0.0]);
        assert!(fit_length(&mut a, 4));
        assert_eq!(a.len(), 4);
        assert!(!fit_length(&mut a, 4));
    }

    #[test]
    fn garbage_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wav");
        std::fs::write(&p, b"not a wav file at all").unwrap();
        assert!(read_wav(&p).is_err());
    }
}
