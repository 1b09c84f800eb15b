use std::f64::consts::{PI, TAU};

use super::{clip_len, midi_to_hz, AudioBuffer, MelodyParams, NoteParams, ParamRanges};

/// Output gain applied before the final clamp to `[-1, 1]`.
const HEADROOM: f64 = 0.5;

/// Filter cutoff ceiling as a fraction of the sample rate.
const MAX_CENTER_FRACTION: f64 = 0.45;

/// Topology-preserving state-variable filter, band-pass output scaled to
/// unity gain at the center frequency.
struct BandPass {
    k: f64,
    a1: f64,
    a2: f64,
    a3: f64,
    ic1: f64,
    ic2: f64,
}

impl BandPass {
    fn new(center_hz: f64, q: f64, sample_rate: f64) -> Self {
        let fc = center_hz.min(MAX_CENTER_FRACTION * sample_rate);
        let g = (PI * fc / sample_rate).tan();
        let k = 1.0 / q;
        let a1 = 1.0 / (1.0 + g * (g + k));
        let a2 = g * a1;
        let a3 = g * a2;
        Self {
            k,
            a1,
            a2,
            a3,
            ic1: 0.0,
            ic2: 0.0,
        }
    }

    #[inline]
    fn process(&mut self, x: f64) -> f64 {
        let v3 = x - self.ic2;
        let v1 = self.a1 * self.ic1 + self.a2 * v3;
        let v2 = self.ic2 + self.a2 * self.ic1 + self.a3 * v3;
        self.ic1 = 2.0 * v1 - self.ic1;
        self.ic2 = 2.0 * v2 - self.ic2;
        self.k * v1
    }
}

/// Renders one note into exactly `len` samples.
///
/// Signal chain: phase-accumulating sawtooth with sinusoidal pitch vibrato,
/// band-pass filter, attack/decay envelope, gain. Everything after the gate
/// is exact silence.
pub fn render_note_samples(
    note: &NoteParams,
    len: usize,
    sample_rate: u32,
    ranges: &ParamRanges,
) -> Vec<f32> {
    let p = ranges.physical(note);
    let sr = sample_rate as f64;
    let slot = len as f64 / sr;
    let gate_len = ((p.gate_fraction * slot * sr).round() as usize).min(len);

    let mut out = vec![0.0f32; len];
    if p.gain == 0.0 {
        return out;
    }

    let f0 = midi_to_hz(p.midi);
    let mut filter = BandPass::new(p.center_hz, p.q, sr);
    let mut phase = 0.0f64;
    for (i, o) in out.iter_mut().take(gate_len).enumerate() {
        let t = i as f64 / sr;
        let cents = p.vib_cents * (TAU * p.vib_rate_hz * t + p.vib_phase).sin();
        let f = f0 * (cents / 1200.0).exp2();
        let saw = 2.0 * phase - 1.0;
        phase += f / sr;
        phase -= phase.floor();

        let y = filter.process(saw);
        let env = if t < p.attack_s {
            t / p.attack_s
        } else {
            (-(t - p.attack_s) / p.decay_s).exp()
        };
        *o = (HEADROOM * p.gain * env * y).clamp(-1.0, 1.0) as f32;
    }
    out
}

/// Renders one note filling a slot of `slot_duration` seconds.
pub fn render_note(
    note: &NoteParams,
    slot_duration: f64,
    sample_rate: u32,
    ranges: &ParamRanges,
) -> AudioBuffer {
    let len = clip_len(sample_rate, slot_duration);
    AudioBuffer {
        sample_rate,
        samples: render_note_samples(note, len, sample_rate, ranges),
    }
}

/// Renders a melody as equal-width note slots, concatenated.
///
/// Slot boundaries are rounded so the total length is exactly
/// `round(sample_rate * total_duration)`.
pub fn render_melody(melody: &MelodyParams, sample_rate: u32, ranges: &ParamRanges) -> AudioBuffer {
    let total = clip_len(sample_rate, melody.total_duration);
    let n = melody.notes.len();
    let mut samples = Vec::with_capacity(total);
    for (i, note) in melody.notes.iter().enumerate() {
        let start = slot_boundary(i, n, total);
        let end = slot_boundary(i + 1, n, total);
        samples.extend(render_note_samples(note, end - start, sample_rate, ranges));
    }
    AudioBuffer {
        sample_rate,
        samples,
    }
}

/// Sample index where slot `i` of `n` starts in a clip of `total` samples.
pub(crate) fn slot_boundary(i: usize, n: usize, total: usize) -> usize {
    ((i as f64 * total as f64) / n as f64).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::FIXED_CONTROLS;

    fn note(values: [f64; 10]) -> NoteParams {
        NoteParams::new(values).unwrap()
    }

    #[test]
    fn zero_volume_is_silent() {
        let mut v = FIXED_CONTROLS;
        v[2] = 0.0;
        let b = render_note(&note(v), 0.4, 16_000, &ParamRanges::default());
        assert_eq!(b.len(), 6400);
        assert!(b.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn melody_length_is_exact() {
        let ranges = ParamRanges::default();
        let m = MelodyParams::new(vec![note(FIXED_CONTROLS); 5], 2.0).unwrap();
        assert_eq!(render_melody(&m, 16_000, &ranges).len(), 32_000);
        assert_eq!(render_melody(&m, 44_100, &ranges).len(), 88_200);
        let m3 = MelodyParams::new(vec![note(FIXED_CONTROLS); 3], 1.0).unwrap();
        assert_eq!(render_melody(&m3, 16_000, &ranges).len(), 16_000);
    }

    #[test]
    fn tail_after_gate_is_zero_and_attack_starts_low() {
        let mut v = FIXED_CONTROLS;
        v[1] = 0.0; // gate fraction 0.3
        let b = render_note(&note(v), 0.4, 16_000, &ParamRanges::default());
        let gate = (0.3f64 * 0.4 * 16_000.0).round() as usize;
        assert!(b.samples[gate..].iter().all(|&s| s == 0.0));
        assert!(b.samples[..gate].iter().any(|&s| s != 0.0));
        assert_eq!(b.samples[0], 0.0);
    }

    #[test]
    fn render_is_deterministic() {
        let ranges = ParamRanges::default();
        let v = [0.3, 0.7, 0.9, 0.6, 0.8, 0.2, 0.4, 0.5, 0.9, 0.1];
        let m = MelodyParams::new(vec![note(v); 4], 2.0).unwrap();
        assert_eq!(render_melody(&m, 16_000, &ranges), render_melody(&m, 16_000, &ranges));
    }
}
