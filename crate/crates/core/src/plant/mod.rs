//! The motor plant: a deterministic subtractive melody synthesizer.
//!
//! Every control is a normalized scalar in `[0, 1]`. [`ParamRanges`] maps
//! each one to its physical unit before rendering. A melody is a fixed
//! number of notes rendered independently and concatenated slot by slot.

mod external;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use external::{AdapterConfig, ExternalPlant};
pub use synth::{render_melody, render_note, render_note_samples};

/// Number of controls per note.
pub const N_CONTROLS: usize = 10;

/// Number of controls the models learn by default (everything but vibrato).
pub const N_MODELED: usize = 7;

/// Control names, in schema order.
pub const PARAM_NAMES: [&str; N_CONTROLS] = [
    "MIDI note (Pitch)",
    "MIDI duration",
    "Volume",
    "Band pass filter (center frequency)",
    "Filter Resonance",
    "Envelope Attack",
    "Envelope Decay",
    "Vibrato Rate",
    "Vibrato Intensity",
    "Vibrato Phase",
];

const FIELD_NAMES: [&str; N_CONTROLS] = [
    "pitch",
    "duration",
    "volume",
    "bpf_center",
    "resonance",
    "env_attack",
    "env_decay",
    "vib_rate",
    "vib_intensity",
    "vib_phase",
];

/// Values used for controls a caller does not supply (a 7-control latent
/// leaves the vibrato triple here, i.e. no vibrato).
pub const FIXED_CONTROLS: [f64; N_CONTROLS] = [0.5, 1.0, 0.8, 0.5, 0.3, 0.1, 0.5, 0.0, 0.0, 0.0];

/// Normalized controls of a single note.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteParams {
    pub pitch: f64,
    pub duration: f64,
    pub volume: f64,
    pub bpf_center: f64,
    pub resonance: f64,
    pub env_attack: f64,
    pub env_decay: f64,
    pub vib_rate: f64,
    pub vib_intensity: f64,
    pub vib_phase: f64,
}

impl NoteParams {
    /// Builds a note from all ten controls, rejecting anything outside `[0, 1]`.
    pub fn new(values: [f64; N_CONTROLS]) -> Result<Self> {
        for (v, name) in values.iter().zip(FIELD_NAMES) {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Range { name, value: *v });
            }
        }
        let [pitch, duration, volume, bpf_center, resonance, env_attack, env_decay, vib_rate, vib_intensity, vib_phase] =
            values;
        Ok(Self {
            pitch,
            duration,
            volume,
            bpf_center,
            resonance,
            env_attack,
            env_decay,
            vib_rate,
            vib_intensity,
            vib_phase,
        })
    }

    /// Builds a note from the leading `values.len()` controls; the rest take
    /// their [`FIXED_CONTROLS`] value.
    pub fn from_leading(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.len() > N_CONTROLS {
            return Err(Error::Shape(format!(
                "expected 1..={N_CONTROLS} controls, got {}",
                values.len()
            )));
        }
        let mut all = FIXED_CONTROLS;
        all[..values.len()].copy_from_slice(values);
        Self::new(all)
    }

    pub fn to_array(&self) -> [f64; N_CONTROLS] {
        [
            self.pitch,
            self.duration,
            self.volume,
            self.bpf_center,
            self.resonance,
            self.env_attack,
            self.env_decay,
            self.vib_rate,
            self.vib_intensity,
            self.vib_phase,
        ]
    }

    /// The first seven controls, the ones a default model learns.
    pub fn modeled(&self) -> [f64; N_MODELED] {
        let a = self.to_array();
        [a[0], a[1], a[2], a[3], a[4], a[5], a[6]]
    }
}

/// How a normalized value maps onto its physical range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Logarithmic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
    pub scale: Scale,
}

impl ParamRange {
    pub fn new(lo: f64, hi: f64, scale: Scale) -> Result<Self> {
        let r = Self { lo, hi, scale };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::Config(format!(
                "range needs lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.scale == Scale::Logarithmic && self.lo <= 0.0 {
            return Err(Error::Config(format!(
                "logarithmic range needs lo > 0, got {}",
                self.lo
            )));
        }
        Ok(())
    }

    /// Maps `p ∈ [0, 1]` to the physical value. Endpoints map exactly.
    pub fn denormalize(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Range {
                name: "normalized control",
                value: p,
            });
        }
        Ok(self.map_unchecked(p))
    }

    fn map_unchecked(&self, p: f64) -> f64 {
        if p == 0.0 {
            return self.lo;
        }
        if p == 1.0 {
            return self.hi;
        }
        match self.scale {
            Scale::Linear => self.lo + p * (self.hi - self.lo),
            Scale::Logarithmic => self.lo * (self.hi / self.lo).powf(p),
        }
    }
}

/// Physical ranges for all ten controls.
///
/// Units: pitch in MIDI numbers, duration as the gated fraction of the note
/// slot, volume as linear gain, filter center in Hz, resonance as Q, attack
/// and decay in seconds, vibrato rate in Hz, intensity in cents and phase in
/// radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRanges {
    pub pitch: ParamRange,
    pub duration: ParamRange,
    pub volume: ParamRange,
    pub bpf_center: ParamRange,
    pub resonance: ParamRange,
    pub env_attack: ParamRange,
    pub env_decay: ParamRange,
    pub vib_rate: ParamRange,
    pub vib_intensity: ParamRange,
    pub vib_phase: ParamRange,
}

impl Default for ParamRanges {
    fn default() -> Self {
        use Scale::*;
        let r = |lo, hi, scale| ParamRange { lo, hi, scale };
        Self {
            pitch: r(48.0, 84.0, Linear),
            duration: r(0.3, 1.0, Linear),
            volume: r(0.0, 1.0, Linear),
            bpf_center: r(200.0, 8000.0, Logarithmic),
            resonance: r(0.5, 10.0, Logarithmic),
            env_attack: r(0.001, 0.2, Logarithmic),
            env_decay: r(0.01, 0.4, Logarithmic),
            vib_rate: r(2.0, 8.0, Linear),
            vib_intensity: r(0.0, 100.0, Linear),
            vib_phase: r(0.0, std::f64::consts::TAU, Linear),
        }
    }
}

impl ParamRanges {
    pub fn as_array(&self) -> [&ParamRange; N_CONTROLS] {
        [
            &self.pitch,
            &self.duration,
            &self.volume,
            &self.bpf_center,
            &self.resonance,
            &self.env_attack,
            &self.env_decay,
            &self.vib_rate,
            &self.vib_intensity,
            &self.vib_phase,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (r, name) in self.as_array().into_iter().zip(FIELD_NAMES) {
            r.validate()
                .map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    /// Physical values of every control of `n`. `n` is valid by construction.
    pub fn physical(&self, n: &NoteParams) -> PhysicalNote {
        let a = n.to_array();
        let r = self.as_array();
        let v = |i: usize| r[i].map_unchecked(a[i].clamp(0.0, 1.0));
        PhysicalNote {
            midi: v(0),
            gate_fraction: v(1),
            gain: v(2),
            center_hz: v(3),
            q: v(4),
            attack_s: v(5),
            decay_s: v(6),
            vib_rate_hz: v(7),
            vib_cents: v(8),
            vib_phase: v(9),
        }
    }
}

/// A note's controls in physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalNote {
    pub midi: f64,
    pub gate_fraction: f64,
    pub gain: f64,
    pub center_hz: f64,
    pub q: f64,
    pub attack_s: f64,
    pub decay_s: f64,
    pub vib_rate_hz: f64,
    pub vib_cents: f64,
    pub vib_phase: f64,
}

/// Equal-tempered frequency of a (possibly fractional) MIDI note number.
pub fn midi_to_hz(m: f64) -> f64 {
    440.0 * 2f64.powf((m - 69.0) / 12.0)
}

/// A melody: `N` notes filling `total_duration` seconds in equal slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelodyParams {
    pub notes: Vec<NoteParams>,
    pub total_duration: f64,
}

impl MelodyParams {
    pub fn new(notes: Vec<NoteParams>, total_duration: f64) -> Result<Self> {
        if notes.is_empty() {
            return Err(Error::Config("a melody needs at least one note".into()));
        }
        if !(total_duration.is_finite() && total_duration > 0.0) {
            return Err(Error::Config(format!(
                "melody duration must be positive, got {total_duration}"
            )));
        }
        Ok(Self {
            notes,
            total_duration,
        })
    }

    /// Builds a melody from a row-per-note matrix of leading controls.
    pub fn from_rows(rows: &[Vec<f64>], total_duration: f64) -> Result<Self> {
        let notes = rows
            .iter()
            .map(|r| NoteParams::from_leading(r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(notes, total_duration)
    }

    /// Row-per-note matrix of the leading `n_controls` controls.
    pub fn to_rows(&self, n_controls: usize) -> Vec<Vec<f64>> {
        self.notes
            .iter()
            .map(|n| n.to_array()[..n_controls].to_vec())
            .collect()
    }

    pub fn n_notes(&self) -> usize {
        self.notes.len()
    }
}

/// Mono sampled waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl AudioBuffer {
    pub fn new(sample_rate: u32, samples: Vec<f32>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("audio sample {i}")));
        }
        Ok(Self {
            sample_rate,
            samples,
        })
    }

    pub fn silent(sample_rate: u32, len: usize) -> Self {
        Self {
            sample_rate,
            samples: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let ss: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (ss / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// Number of samples in a clip of `duration` seconds.
pub fn clip_len(sample_rate: u32, duration: f64) -> usize {
    (sample_rate as f64 * duration).round() as usize
}

/// A non-differentiable system turning controls into sound.
pub trait Plant: Sync {
    fn render(&self, melody: &MelodyParams) -> Result<AudioBuffer>;

    fn sample_rate(&self) -> u32;
}

/// The built-in synthesizer.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinPlant {
    pub ranges: ParamRanges,
    pub sample_rate: u32,
}

impl BuiltinPlant {
    pub fn new(ranges: ParamRanges, sample_rate: u32) -> Result<Self> {
        ranges.validate()?;
        if sample_rate < 1000 {
            return Err(Error::Config(format!(
                "sample rate {sample_rate} Hz is too low"
            )));
        }
        Ok(Self {
            ranges,
            sample_rate,
        })
    }
}

impl Default for BuiltinPlant {
    fn default() -> Self {
        Self {
            ranges: ParamRanges::default(),
            sample_rate: 16_000,
        }
    }
}

impl Plant for BuiltinPlant {
    fn render(&self, melody: &MelodyParams) -> Result<AudioBuffer> {
        Ok(render_melody(melody, self.sample_rate, &self.ranges))
    }

    fn sample_rate(&self) -> u32 {
        self.sample_rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn denormalize_endpoints_and_midpoint() {
        let r = ParamRanges::default();
        assert_eq!(r.pitch.denormalize(0.0).unwrap(), 48.0);
        assert_eq!(r.bpf_center.denormalize(1.0).unwrap(), 8000.0);
        // 200 * 40^0.5
        assert_relative_eq!(
            r.bpf_center.denormalize(0.5).unwrap(),
            1264.911064067,
            max_relative = 1e-9
        );
    }

    #[test]
    fn denormalize_rejects_out_of_range() {
        let r = ParamRanges::default();
        assert!(matches!(
            r.volume.denormalize(1.5),
            Err(Error::Range { .. })
        ));
        assert!(r.volume.denormalize(-1e-9).is_err());
        assert!(r.volume.denormalize(f64::NAN).is_err());
    }

    #[test]
    fn range_validation() {
        assert!(ParamRange::new(1.0, 1.0, Scale::Linear).is_err());
        assert!(ParamRange::new(0.0, 1.0, Scale::Logarithmic).is_err());
        assert!(ParamRange::new(0.1, 1.0, Scale::Logarithmic).is_ok());
        ParamRanges::default().validate().unwrap();
    }

    #[test]
    fn midi_reference_points() {
        assert_eq!(midi_to_hz(69.0), 440.0);
        assert_eq!(midi_to_hz(81.0), 880.0);
        assert_relative_eq!(midi_to_hz(48.0), 130.812_782_65, max_relative = 1e-9);
    }

    #[test]
    fn note_construction_checks_bounds() {
        let mut v = FIXED_CONTROLS;
        v[3] = 1.01;
        assert!(matches!(
            NoteParams::new(v),
            Err(Error::Range {
                name: "bpf_center",
                ..
            })
        ));
        let n = NoteParams::from_leading(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]).unwrap();
        assert_eq!(n.modeled(), [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]);
        assert_eq!(n.vib_rate, 0.0);
        assert_eq!(n.vib_intensity, 0.0);
        assert_eq!(n.vib_phase, 0.0);
        assert!(NoteParams::from_leading(&[]).is_err());
    }

    #[test]
    fn melody_rows_round_trip() {
        let rows = vec![vec![0.25; 7], vec![0.75; 7]];
        let m = MelodyParams::from_rows(&rows, 2.0).unwrap();
        assert_eq!(m.to_rows(7), rows);
        assert!(MelodyParams::new(vec![], 2.0).is_err());
    }
}
