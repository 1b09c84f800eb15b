//! Log-frequency auditory spectrogram.
//!
//! Frames are Hann-windowed, two hops long, and centered on their hop
//! interval. Power spectra are pooled by triangular filters whose peaks sit
//! at geometrically spaced centers, then compressed with
//! `x ↦ (x + ε)^γ − ε^γ`.

use std::path::Path;
use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::plant::{clip_len, AudioBuffer};
use crate::table::format_matrix;

const MAX_FFT: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterbankConfig {
    pub n_channels: usize,
    pub f_lo: f64,
    pub f_hi: f64,
    pub frames_per_clip: usize,
    /// Length of the clip the frame grid spans, seconds.
    pub clip_duration: f64,
    pub gamma: f64,
    pub floor: f64,
}

impl Default for FilterbankConfig {
    fn default() -> Self {
        Self {
            n_channels: 128,
            f_lo: 110.0,
            f_hi: 7040.0,
            frames_per_clip: 250,
            clip_duration: 2.0,
            gamma: 1.0 / 3.0,
            floor: 1e-8,
        }
    }
}

impl FilterbankConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        let bad = |m: String| Err(Error::Config(m));
        if self.n_channels < 2 {
            return bad(format!("need at least 2 channels, got {}", self.n_channels));
        }
        if !(self.f_lo > 0.0 && self.f_lo < self.f_hi) {
            return bad(format!(
                "need 0 < f_lo < f_hi, got {} and {}",
                self.f_lo, self.f_hi
            ));
        }
        if self.f_hi > nyquist {
            return bad(format!(
                "f_hi {} Hz exceeds the Nyquist frequency {nyquist} Hz",
                self.f_hi
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.floor > 0.0) {
            return bad(format!("floor must be positive, got {}", self.floor));
        }
        if self.frames_per_clip == 0 || !(self.clip_duration > 0.0) {
            return bad("need a positive frame count and clip duration".into());
        }
        if clip_len(sample_rate, self.clip_duration) < 2 * self.frames_per_clip {
            return bad("clip too short for the requested frame count".into());
        }
        Ok(())
    }
}

/// Geometrically spaced channel centers from `f_lo` to `f_hi` inclusive.
pub fn channel_centers(n: usize, f_lo: f64, f_hi: f64) -> Vec<f64> {
    let ratio = (f_hi / f_lo).powf(1.0 / (n - 1) as f64);
    (0..n)
        .map(|k| {
            if k == n - 1 {
                f_hi
            } else {
                f_lo * ratio.powi(k as i32)
            }
        })
        .collect()
}

/// Filter weights on a DFT grid plus the frame geometry they assume.
pub struct Filterbank {
    pub config: FilterbankConfig,
    pub sample_rate: u32,
    pub centers: Vec<f64>,
    pub n_fft: usize,
    pub clip_samples: usize,
    pub frame_len: usize,
    pub hop: f64,
    /// Per channel: first DFT bin and contiguous weights from there.
    rows: Vec<(usize, Vec<f64>)>,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Filterbank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Filterbank")
            .field("config", &self.config)
            .field("sample_rate", &self.sample_rate)
            .field("n_fft", &self.n_fft)
            .field("frame_len", &self.frame_len)
            .finish_non_exhaustive()
    }
}

impl Filterbank {
    pub fn new(config: &FilterbankConfig, sample_rate: u32) -> Result<Self> {
        config.validate(sample_rate)?;
        let n = config.n_channels;
        let centers = channel_centers(n, config.f_lo, config.f_hi);
        let ratio = centers[1] / centers[0];

        let clip_samples = clip_len(sample_rate, config.clip_duration);
        let hop = clip_samples as f64 / config.frames_per_clip as f64;
        let frame_len = 2 * hop.round().max(1.0) as usize;

        // Zero-padded DFT fine enough that the narrowest triangle spans bins.
        let min_spacing = centers[1] - centers[0];
        let needed = (2.0 * sample_rate as f64 / min_spacing).ceil() as usize;
        let n_fft = needed.next_power_of_two().min(MAX_FFT).max(frame_len.next_power_of_two());
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let n_bins = n_fft / 2 + 1;

        let rows = (0..n)
            .map(|k| {
                let lo = if k == 0 { centers[0] / ratio } else { centers[k - 1] };
                let c = centers[k];
                let hi = if k == n - 1 { centers[k] * ratio } else { centers[k + 1] };
                let first = ((lo / bin_hz).floor() as usize + 1).min(n_bins - 1);
                let last = ((hi / bin_hz).ceil() as usize).min(n_bins);
                let mut w: Vec<f64> = (first..last.max(first))
                    .map(|b| {
                        let f = b as f64 * bin_hz;
                        if f <= lo || f >= hi {
                            0.0
                        } else if f <= c {
                            (f - lo) / (c - lo)
                        } else {
                            (hi - f) / (hi - c)
                        }
                    })
                    .collect();
                let sum: f64 = w.iter().sum();
                if sum > 0.0 {
                    w.iter_mut().for_each(|x| *x /= sum);
                    (first, w)
                } else {
                    let nearest = ((c / bin_hz).round() as usize).min(n_bins - 1);
                    (nearest, vec![1.0])
                }
            })
            .collect();

        let window = (0..frame_len)
            .map(|i| {
                let x = std::f64::consts::PI * (i as f64 + 0.5) / frame_len as f64;
                x.sin().powi(2)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);

        Ok(Self {
            config: config.clone(),
            sample_rate,
            centers,
            n_fft,
            clip_samples,
            frame_len,
            hop,
            rows,
            window,
            fft,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.config.n_channels
    }

    pub fn n_frames(&self) -> usize {
        self.config.frames_per_clip
    }

    /// Dense weight row of channel `k` over all `n_fft / 2 + 1` bins.
    pub fn weights(&self, k: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.n_fft / 2 + 1];
        let (first, w) = &self.rows[k];
        row[*first..first + w.len()].copy_from_slice(w);
        row
    }

    /// First sample of frame `f` (may be negative at the clip start).
    fn frame_start(&self, f: usize) -> isize {
        ((f as f64 + 0.5) * self.hop).round() as isize - (self.frame_len / 2) as isize
    }

    pub fn compute(&self, audio: &AudioBuffer) -> Result<AuditorySpectrogram> {
        if audio.is_empty() {
            return Err(Error::Shape("empty audio buffer".into()));
        }
        if audio.sample_rate != self.sample_rate {
            return Err(Error::Shape(format!(
                "audio at {} Hz, filterbank built for {} Hz",
                audio.sample_rate, self.sample_rate
            )));
        }
        if audio.len() > self.clip_samples {
            return Err(Error::Shape(format!(
                "audio has {} samples, clip holds {}",
                audio.len(),
                self.clip_samples
            )));
        }

        let n_ch = self.n_channels();
        let n_fr = self.n_frames();
        let norm = {
            let s: f64 = self.window.iter().sum();
            1.0 / (s * s)
        };
        let offset = self.config.floor.powf(self.config.gamma);
        let mut values = vec![0.0; n_ch * n_fr];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; self.n_fft / 2 + 1];

        for f in 0..n_fr {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            let start = self.frame_start(f);
            let mut any = false;
            for (i, w) in self.window.iter().enumerate() {
                let idx = start + i as isize;
                if idx >= 0 && (idx as usize) < audio.len() {
                    let s = audio.samples[idx as usize] as f64;
                    any |= s != 0.0;
                    buf[i].re = w * s;
                }
            }
            if !any {
                continue;
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr() * norm;
            }
            for (k, (first, w)) in self.rows.iter().enumerate() {
                let e: f64 = w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum();
                values[k * n_fr + f] = (e + self.config.floor).powf(self.config.gamma) - offset;
            }
        }
        for v in values.iter_mut() {
            // exact zero for silent frames, and no tiny negatives from rounding
            if *v < 0.0 {
                *v = 0.0;
            }
        }

        Ok(AuditorySpectrogram {
            n_channels: n_ch,
            n_frames: n_fr,
            values,
            channel_centers: self.centers.clone(),
            frame_hop: self.hop / self.sample_rate as f64,
        })
    }

    /// Spectrograms of many clips, order-preserving.
    pub fn compute_batch(
        &self,
        clips: &[AudioBuffer],
        exec: Execution,
    ) -> Result<Vec<AuditorySpectrogram>> {
        exec::try_map_slice(clips, exec, |_, a| self.compute(a))
    }
}

/// Convenience wrapper building a filterbank for a single clip.
pub fn compute_spectrogram(audio: &AudioBuffer, cfg: &FilterbankConfig) -> Result<AuditorySpectrogram> {
    Filterbank::new(cfg, audio.sample_rate)?.compute(audio)
}

/// Channel × frame matrix, row-major by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditorySpectrogram {
    pub n_channels: usize,
    pub n_frames: usize,
    pub values: Vec<f64>,
    pub channel_centers: Vec<f64>,
    /// Seconds between frame starts.
    pub frame_hop: f64,
}

impl AuditorySpectrogram {
    pub fn get(&self, channel: usize, frame: usize) -> f64 {
        self.values[channel * self.n_frames + frame]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_channels, self.n_frames)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        s.values.iter_mut().for_each(|v| *v *= factor);
        s
    }

    /// Mean over frames, per channel.
    pub fn channel_means(&self) -> Vec<f64> {
        self.values
            .chunks(self.n_frames)
            .map(|r| r.iter().sum::<f64>() / self.n_frames as f64)
            .collect()
    }

    /// Sum over channels, per frame.
    pub fn frame_energy(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.n_frames];
        for row in self.values.chunks(self.n_frames) {
            for (a, v) in e.iter_mut().zip(row) {
                *a += v;
            }
        }
        e
    }

    pub fn mse(&self, other: &Self) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "spectrograms {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let n = self.values.len() as f64;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    }

    pub fn to_csv(&self) -> String {
        format_matrix(self.n_channels, self.n_frames, &self.values)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, channel_centers: Vec<f64>, frame_hop: f64) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let rows = crate::table::parse_matrix(path, &text, false)?;
        let n_frames = rows.first().map_or(0, Vec::len);
        if n_frames == 0 || rows.iter().any(|r| r.len() != n_frames) {
            return Err(Error::parse(path, "ragged spectrogram"));
        }
        if rows.len() != channel_centers.len() {
            return Err(Error::parse(path, "channel count does not match the filterbank"));
        }
        Ok(Self {
            n_channels: rows.len(),
            n_frames,
            values: rows.concat(),
            channel_centers,
            frame_hop,
        })
    }

    /// 8-bit binary graymap, highest channel on the top row. Values are
    /// scaled linearly from `[lo, hi]` to `[0, 255]`. Each comment becomes a
    /// `#` line in the header.
    pub fn to_pgm(&self, lo: f64, hi: f64, comments: &[String]) -> Vec<u8> {
        let mut head = String::from("P5\n");
        for c in comments {
            head.push_str(&format!("# {c}\n"));
        }
        head.push_str(&format!("{} {}\n255\n", self.n_frames, self.n_channels));
        let mut out = head.into_bytes();
        let span = if hi > lo { hi - lo } else { 1.0 };
        for ch in (0..self.n_channels).rev() {
            for f in 0..self.n_frames {
                let v = ((self.get(ch, f) - lo) / span).clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_are_geometric_with_exact_ends() {
        let c = channel_centers(128, 110.0, 7040.0);
        assert_eq!(c[0], 110.0);
        assert_eq!(c[127], 7040.0);
        let r = 64f64.powf(1.0 / 127.0);
        for w in c.windows(2) {
            assert!((w[1] / w[0] / r - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rows_sum_to_one() {
        for (sr, cfg) in [
            (16_000, FilterbankConfig::default()),
            (
                16_000,
                FilterbankConfig {
                    n_channels: 32,
                    frames_per_clip: 50,
                    ..Default::default()
                },
            ),
            (44_100, FilterbankConfig::default()),
        ] {
            let fb = Filterbank::new(&cfg, sr).unwrap();
            for k in 0..fb.n_channels() {
                let s: f64 = fb.weights(k).iter().sum();
                assert!((s - 1.0).abs() < 1e-6, "channel {k} sums to {s}");
            }
        }
    }

    #[test]
    fn config_errors() {
        let cfg = FilterbankConfig {
            f_hi: 9000.0,
            ..Default::default()
        };
        assert!(matches!(Filterbank::new(&cfg, 16_000), Err(Error::Config(_))));
        let cfg = FilterbankConfig {
            n_channels: 1,
            ..Default::default()
        };
        assert!(Filterbank::new(&cfg, 16_000).is_err());
        let cfg = FilterbankConfig {
            gamma: 0.0,
            ..Default::default()
        };
        assert!(Filterbank::new(&cfg, 16_000).is_err());
    }

    #[test]
    fn silence_maps_to_zero_and_shape_is_fixed() {
        let fb = Filterbank::new(&FilterbankConfig::default(), 16_000).unwrap();
        let s = fb.compute(&AudioBuffer::silent(16_000, 32_000)).unwrap();
        assert_eq!(s.shape(), (128, 250));
        assert!(s.values.iter().all(|&v| v == 0.0));
        assert!((s.frame_hop - 0.008).abs() < 1e-12);
    }

    #[test]
    fn length_and_rate_contract() {
        let fb = Filterbank::new(&FilterbankConfig::default(), 16_000).unwrap();
        assert!(fb.compute(&AudioBuffer::silent(16_000, 0)).is_err());
        assert!(fb.compute(&AudioBuffer::silent(16_000, 32_001)).is_err());
        assert!(fb.compute(&AudioBuffer::silent(8_000, 16_000)).is_err());
        assert_eq!(
            fb.compute(&AudioBuffer::silent(16_000, 1000)).unwrap().shape(),
            (128, 250)
        );
    }

    #[test]
    fn pgm_header_and_size() {
        let fb = Filterbank::new(
            &FilterbankConfig {
                n_channels: 8,
                frames_per_clip: 10,
                ..Default::default()
            },
            16_000,
        )
        .unwrap();
        let s = fb.compute(&AudioBuffer::silent(16_000, 32_000)).unwrap();
        let img = s.to_pgm(0.0, 1.0, &["seed 3".to_string()]);
        let header = b"P5\n# seed 3\n10 8\n255\n";
        assert_eq!(&img[..header.len()], header);
        assert_eq!(img.len(), header.len() + 80);
    }
}
