use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{MelodyParams, NoteParams, N_CONTROLS};
use crate::spectro::AuditorySpectrogram;
use crate::tensor::{BoundConv, Conv1d, Grads, Tape, Tensor, Var};

/// Network topology.
///
/// Encoder: `C1–C3` pointwise pre-processing, three dilated convolutions,
/// then `C4`, `C5`, `C6` each followed by average pooling, and a sigmoid on
/// the latent. The decoder mirrors it with nearest upsampling before `C7`,
/// `C8`, `C9`, the dilated block, and `C10–C12` post-processing with a
/// linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Controls per note (latent rows).
    pub n_params: usize,
    /// Notes per melody (latent columns).
    pub n_notes: usize,
    pub freq_channels: usize,
    pub frames: usize,
    /// Filters of `C1`, `C2`, `C3` (mirrored by `C12`, `C11`, `C10`).
    pub pre_filters: [usize; 3],
    pub dilated_kernel: usize,
    pub dilations: [usize; 3],
    /// Filters of `C4`, `C5` (mirrored by `C8`, `C7`); `C6` has `n_params`.
    pub enc_filters: [usize; 2],
    /// Pool windows after `C4`, `C5`, `C6`.
    pub pools: [usize; 3],
    /// Upsampling factors before `C7`, `C8`, `C9`.
    pub upsamples: [usize; 3],
}

impl ModelConfig {
    /// Full-size topology: 128×250 spectrograms, 7×5 latent.
    pub fn paper() -> Self {
        Self {
            n_params: 7,
            n_notes: 5,
            freq_channels: 128,
            frames: 250,
            pre_filters: [128, 256, 256],
            dilated_kernel: 3,
            dilations: [1, 4, 16],
            enc_filters: [256, 128],
            pools: [5, 5, 2],
            upsamples: [2, 5, 5],
        }
    }

    /// Desk-scale topology: 32×50 spectrograms, 7×2 latent, quarter widths.
    pub fn tiny() -> Self {
        Self {
            n_params: 7,
            n_notes: 2,
            freq_channels: 32,
            frames: 50,
            pre_filters: [32, 64, 64],
            dilated_kernel: 3,
            dilations: [1, 4, 16],
            enc_filters: [64, 32],
            pools: [5, 5, 1],
            upsamples: [1, 5, 5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_params == 0 || self.n_params > N_CONTROLS {
            return bad(format!("n_params must be in 1..={N_CONTROLS}"));
        }
        if self.n_notes == 0 || self.freq_channels == 0 || self.frames == 0 {
            return bad("notes, channels and frames must be positive".into());
        }
        if self.dilated_kernel % 2 == 0 || self.dilations.contains(&0) {
            return bad("dilated kernel must be odd and dilations >= 1".into());
        }
        let mut len = self.frames;
        for w in self.pools {
            if w == 0 || len % w != 0 {
                return bad(format!("pool window {w} does not divide length {len}"));
            }
            len /= w;
        }
        if len != self.n_notes {
            return bad(format!(
                "pooling chain maps {} frames to {len}, latent has {} notes",
                self.frames, self.n_notes
            ));
        }
        let up: usize = self.upsamples.iter().product();
        if self.upsamples.contains(&0) || up * self.n_notes != self.frames {
            return bad(format!(
                "upsampling chain maps {} notes to {} frames, need {}",
                self.n_notes,
                up * self.n_notes,
                self.frames
            ));
        }
        if [self.pre_filters.as_slice(), self.enc_filters.as_slice()]
            .concat()
            .contains(&0)
        {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }

    /// `(in, out, kernel, dilation)` for each encoder convolution.
    fn encoder_layers(&self) -> Vec<(usize, usize, usize, usize)> {
        let [p1, p2, p3] = self.pre_filters;
        let [e4, e5] = self.enc_filters;
        let k = self.dilated_kernel;
        let [d1, d2, d3] = self.dilations;
        vec![
            (self.freq_channels, p1, 1, 1),
            (p1, p2, 1, 1),
            (p2, p3, 1, 1),
            (p3, p3, k, d1),
            (p3, p3, k, d2),
            (p3, p3, k, d3),
            (p3, e4, 1, 1),
            (e4, e5, 1, 1),
            (e5, self.n_params, 1, 1),
        ]
    }

    fn decoder_layers(&self) -> Vec<(usize, usize, usize, usize)> {
        let [_, p2, p3] = self.pre_filters;
        let [e4, e5] = self.enc_filters;
        let k = self.dilated_kernel;
        let [d1, d2, d3] = self.dilations;
        vec![
            (self.n_params, e5, 1, 1),
            (e5, e4, 1, 1),
            (e4, p3, 1, 1),
            (p3, p3, k, d1),
            (p3, p3, k, d2),
            (p3, p3, k, d3),
            (p3, p3, 1, 1),
            (p3, p2, 1, 1),
            (p2, self.freq_channels, 1, 1),
        ]
    }
}

const ENCODER_NAMES: [&str; 9] = ["c1", "c2", "c3", "d1", "d2", "d3", "c4", "c5", "c6"];
const DECODER_NAMES: [&str; 9] = ["c7", "c8", "c9", "d1", "d2", "d3", "c10", "c11", "c12"];

/// Shape of an intermediate activation, recorded for inspection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub name: String,
    pub shape: Vec<usize>,
}

fn record(trace: &mut Option<&mut Vec<Stage>>, tape: &Tape<'_>, name: &str, v: Var) {
    if let Some(t) = trace.as_deref_mut() {
        t.push(Stage {
            name: name.to_string(),
            shape: tape.shape(v).to_vec(),
        });
    }
}

fn build_convs<R: Rng>(spec: &[(usize, usize, usize, usize)], rng: &mut R) -> Vec<Conv1d> {
    spec.iter()
        .map(|&(i, o, k, d)| Conv1d::new(i, o, k, d, rng))
        .collect()
}

/// Spectrogram → latent controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub convs: Vec<Conv1d>,
    pools: [usize; 3],
}

/// Latent controls → spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub convs: Vec<Conv1d>,
    upsamples: [usize; 3],
}

impl Encoder {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        Self {
            convs: build_convs(&cfg.encoder_layers(), rng),
            pools: cfg.pools,
        }
    }

    /// Records the encoder on `tape`. Returns the latent and the bound
    /// parameters needed to collect gradients afterwards.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: Var,
        trainable: bool,
        mut trace: Option<&mut Vec<Stage>>,
    ) -> Result<(Var, Vec<BoundConv>)> {
        let bound: Vec<BoundConv> = self.convs.iter().map(|c| c.bind(tape, trainable)).collect();
        record(&mut trace, tape, "input", x);
        let mut h = x;
        for (i, b) in bound.iter().enumerate().take(7) {
            h = b.apply(tape, h)?;
            h = tape.relu(h);
            record(&mut trace, tape, ENCODER_NAMES[i], h);
        }
        h = tape.avgpool1d(h, self.pools[0])?;
        record(&mut trace, tape, "pool1", h);
        h = bound[7].apply(tape, h)?;
        h = tape.relu(h);
        record(&mut trace, tape, "c5", h);
        h = tape.avgpool1d(h, self.pools[1])?;
        record(&mut trace, tape, "pool2", h);
        h = bound[8].apply(tape, h)?;
        record(&mut trace, tape, "c6", h);
        h = tape.avgpool1d(h, self.pools[2])?;
        record(&mut trace, tape, "pool3", h);
        let z = tape.sigmoid(h);
        record(&mut trace, tape, "latent", z);
        Ok((z, bound))
    }

    pub fn accumulate(&mut self, grads: &Grads, bound: &[BoundConv]) {
        for (c, b) in self.convs.iter_mut().zip(bound) {
            c.accumulate(grads, b);
        }
    }

    pub fn zero_grad(&mut self) {
        self.convs.iter_mut().flat_map(|c| c.params_mut()).for_each(Tensor::zero_grad);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.convs.iter_mut().flat_map(|c| c.params_mut()).collect()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        named(&self.convs, "enc", &ENCODER_NAMES)
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        named_mut(&mut self.convs, "enc", &ENCODER_NAMES)
    }
}

impl Decoder {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        Self {
            convs: build_convs(&cfg.decoder_layers(), rng),
            upsamples: cfg.upsamples,
        }
    }

    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        z: Var,
        trainable: bool,
        mut trace: Option<&mut Vec<Stage>>,
    ) -> Result<(Var, Vec<BoundConv>)> {
        let bound: Vec<BoundConv> = self.convs.iter().map(|c| c.bind(tape, trainable)).collect();
        record(&mut trace, tape, "latent", z);
        let mut h = z;
        for (i, up) in self.upsamples.iter().enumerate() {
            h = tape.upsample_nearest(h, *up)?;
            record(&mut trace, tape, &format!("up{}", i + 1), h);
            h = bound[i].apply(tape, h)?;
            h = tape.relu(h);
            record(&mut trace, tape, DECODER_NAMES[i], h);
        }
        for (i, b) in bound.iter().enumerate().take(8).skip(3) {
            h = b.apply(tape, h)?;
            h = tape.relu(h);
            record(&mut trace, tape, DECODER_NAMES[i], h);
        }
        let y = bound[8].apply(tape, h)?;
        record(&mut trace, tape, "c12", y);
        Ok((y, bound))
    }

    pub fn accumulate(&mut self, grads: &Grads, bound: &[BoundConv]) {
        for (c, b) in self.convs.iter_mut().zip(bound) {
            c.accumulate(grads, b);
        }
    }

    pub fn zero_grad(&mut self) {
        self.convs.iter_mut().flat_map(|c| c.params_mut()).for_each(Tensor::zero_grad);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.convs.iter_mut().flat_map(|c| c.params_mut()).collect()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        named(&self.convs, "dec", &DECODER_NAMES)
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        named_mut(&mut self.convs, "dec", &DECODER_NAMES)
    }
}

fn named<'a>(convs: &'a [Conv1d], prefix: &str, names: &[&str]) -> Vec<(String, &'a Tensor)> {
    convs
        .iter()
        .zip(names)
        .flat_map(|(c, n)| {
            [
                (format!("{prefix}.{n}.weight"), &c.weight),
                (format!("{prefix}.{n}.bias"), &c.bias),
            ]
        })
        .collect()
}

fn named_mut<'a>(
    convs: &'a mut [Conv1d],
    prefix: &str,
    names: &[&str],
) -> Vec<(String, &'a mut Tensor)> {
    convs
        .iter_mut()
        .zip(names)
        .flat_map(|(c, n)| {
            let [w, b] = c.params_mut();
            [
                (format!("{prefix}.{n}.weight"), w),
                (format!("{prefix}.{n}.bias"), b),
            ]
        })
        .collect()
}

/// Stacks spectrograms into a `[batch, channels, frames]` tensor scaled by
/// `scale`.
pub fn spectrogram_batch(specs: &[&AuditorySpectrogram], scale: f64) -> Result<Tensor> {
    let first = specs
        .first()
        .ok_or_else(|| Error::Shape("empty spectrogram batch".into()))?;
    let (c, l) = first.shape();
    let mut data = Vec::with_capacity(specs.len() * c * l);
    for s in specs {
        if s.shape() != (c, l) {
            return Err(Error::Shape(format!(
                "spectrogram {:?} in a batch of {:?}",
                s.shape(),
                (c, l)
            )));
        }
        data.extend(s.values.iter().map(|v| v * scale));
    }
    Tensor::new(vec![specs.len(), c, l], data)
}

/// Latent tensor `[batch, params, notes]` from melodies (leading controls).
pub fn latent_batch(melodies: &[&MelodyParams], n_params: usize) -> Result<Tensor> {
    let n_notes = melodies.first().map_or(0, |m| m.n_notes());
    let mut data = vec![0.0; melodies.len() * n_params * n_notes];
    for (b, m) in melodies.iter().enumerate() {
        if m.n_notes() != n_notes {
            return Err(Error::Shape("melodies in a batch must share a note count".into()));
        }
        for (n, note) in m.notes.iter().enumerate() {
            for (p, v) in note.to_array()[..n_params].iter().enumerate() {
                data[(b * n_params + p) * n_notes + n] = *v;
            }
        }
    }
    Tensor::new(vec![melodies.len(), n_params, n_notes], data)
}

/// Column-wise conversion of one latent (`[params, notes]` slice) into a
/// melody.
pub fn latent_to_melody(
    latent: &[f64],
    n_params: usize,
    n_notes: usize,
    total_duration: f64,
) -> Result<MelodyParams> {
    if latent.len() != n_params * n_notes {
        return Err(Error::Shape(format!(
            "latent of {} values for {n_params}×{n_notes}",
            latent.len()
        )));
    }
    let notes = (0..n_notes)
        .map(|n| {
            let col: Vec<f64> = (0..n_params).map(|p| latent[p * n_notes + n]).collect();
            NoteParams::from_leading(&col)
        })
        .collect::<Result<Vec<_>>>()?;
    MelodyParams::new(notes, total_duration)
}
