//! Stand-in external corpus: electric-piano-like melodies built from
//! additive, decaying, slightly inharmonic partials. The reference plant
//! cannot reproduce these exactly, which is the point.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{DataItem, Dataset, Provenance, Split};
use crate::error::Result;
use crate::exec::{self, derive_seed, Execution};
use crate::plant::{clip_len, midi_to_hz, AudioBuffer};
use crate::spectro::Filterbank;

const PARTIALS: usize = 10;
const INHARMONICITY: f64 = 1e-4;
const ATTACK: f64 = 0.004;
const RELEASE: f64 = 0.01;

/// One melody of `n_notes` equal-length piano-like notes.
pub fn piano_melody<R: Rng>(rng: &mut R, n_notes: usize, total_duration: f64, sample_rate: u32) -> AudioBuffer {
    let sr = sample_rate as f64;
    let total = clip_len(sample_rate, total_duration);
    let mut out = vec![0.0f32; total];
    let norm: f64 = (1..=PARTIALS).map(|k| (k as f64).powf(-1.2)).sum();
    for i in 0..n_notes {
        let start = (i as f64 * total as f64 / n_notes as f64).round() as usize;
        let end = ((i + 1) as f64 * total as f64 / n_notes as f64).round() as usize;
        let midi = rng.gen_range(48..=84) as f64;
        let velocity = rng.gen_range(0.3..0.9);
        let brightness = rng.gen_range(0.6..1.6);
        let f0 = midi_to_hz(midi);
        let len = end - start;
        for k in 1..=PARTIALS {
            let kf = k as f64;
            let fk = kf * f0 * (1.0 + INHARMONICITY * kf * kf).sqrt();
            if fk >= 0.45 * sr {
                break;
            }
            let amp = velocity * kf.powf(-1.2 * brightness) / norm;
            let decay = 1.5 + 0.9 * kf;
            let phase0 = rng.gen::<f64>() * TAU;
            for n in 0..len {
                let t = n as f64 / sr;
                let env = (t / ATTACK).min(1.0)
                    * ((len - n) as f64 / (RELEASE * sr)).min(1.0)
                    * (-decay * t).exp();
                out[start + n] += (amp * env * (TAU * fk * t + phase0).sin()) as f32;
            }
        }
    }
    for s in &mut out {
        *s = s.clamp(-1.0, 1.0);
    }
    AudioBuffer {
        sample_rate,
        samples: out,
    }
}

/// A corpus of piano-like melodies with no ground-truth controls.
pub fn generate_piano(
    count: usize,
    n_notes: usize,
    seed: u64,
    split: Split,
    fb: &Filterbank,
    exec: Execution,
) -> Result<Dataset> {
    let stream = match split {
        Split::Train => 2,
        Split::Test => 3,
    };
    let items = exec::map_range(count, exec, |i| -> Result<DataItem> {
        let s = derive_seed(seed, stream, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let audio = piano_melody(&mut rng, n_notes, fb.config.clip_duration, fb.sample_rate);
        let spectrogram = fb.compute(&audio)?;
        Ok(DataItem {
            id: format!("piano-{}-{i:04}-{s:016x}", split.as_str()),
            params: None,
            audio,
            spectrogram,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        split,
        provenance: Provenance::External,
        seed,
        items,
    })
}
