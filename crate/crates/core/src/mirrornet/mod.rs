//! The constrained autoencoder.
//!
//! The encoder maps a spectrogram to a `P × N` latent whose entries are
//! plant controls in `[0, 1]`. The decoder maps a latent back to a
//! spectrogram and is trained to imitate the plant, so that the encoder's
//! reconstruction error can be back-propagated into the latent even though
//! the plant itself is a black box. See [`train`] for the alternating
//! schedule.

mod checkpoint;
pub mod gradcheck;
mod model;
mod train;

use rand::Rng;

use crate::error::Result;
use crate::plant::MelodyParams;
use crate::spectro::AuditorySpectrogram;
use crate::tensor::{Adam, AdamConfig, LrSchedule, Tape, Tensor};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CheckpointMeta,
};
pub use model::{
    latent_batch, latent_to_melody, spectrogram_batch, Decoder, Encoder, ModelConfig, Stage,
};
pub use train::{gather, LogRow, Phase, TrainConfig, TrainState, Trainer};

/// Chunk size for inference over many items.
const INFER_CHUNK: usize = 32;

/// Encoder, decoder and their optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct MirrorNet {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub enc_opt: Adam,
    pub dec_opt: Adam,
    /// Multiplier mapping raw spectrogram values onto the training scale.
    pub norm_scale: f64,
}

impl MirrorNet {
    pub fn new<R: Rng>(
        config: ModelConfig,
        encoder_lr: f64,
        decoder_lr: f64,
        schedule: LrSchedule,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(&config, rng);
        let decoder = Decoder::new(&config, rng);
        let adam = |lr| {
            Adam::new(
                AdamConfig {
                    lr,
                    ..Default::default()
                },
                schedule,
            )
        };
        Ok(Self {
            config,
            encoder,
            decoder,
            enc_opt: adam(encoder_lr),
            dec_opt: adam(decoder_lr),
            norm_scale: 1.0,
        })
    }

    /// Latents for a `[batch, channels, frames]` input already on the
    /// training scale.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        chunked(x, |chunk| {
            let mut tape = Tape::new();
            let xv = tape.constant(chunk);
            let (z, _) = self.encoder.forward(&mut tape, xv, false, None)?;
            Ok(tape.to_tensor(z))
        })
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        chunked(z, |chunk| {
            let mut tape = Tape::new();
            let zv = tape.constant(chunk);
            let (y, _) = self.decoder.forward(&mut tape, zv, false, None)?;
            Ok(tape.to_tensor(y))
        })
    }

    /// Shapes of every intermediate activation for one input of the
    /// configured size, encoder then decoder.
    pub fn trace_shapes(&self) -> Result<(Vec<Stage>, Vec<Stage>)> {
        let c = &self.config;
        let x = Tensor::zeros(vec![1, c.freq_channels, c.frames]);
        let mut enc = Vec::new();
        let mut dec = Vec::new();
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let (z, _) = self.encoder.forward(&mut tape, xv, false, Some(&mut enc))?;
        self.decoder.forward(&mut tape, z, false, Some(&mut dec))?;
        Ok((enc, dec))
    }

    pub fn scaled_batch(&self, specs: &[&AuditorySpectrogram]) -> Result<Tensor> {
        spectrogram_batch(specs, self.norm_scale)
    }

    /// Plant controls the encoder assigns to each spectrogram.
    pub fn infer_controls_batch(
        &self,
        specs: &[&AuditorySpectrogram],
        total_duration: f64,
    ) -> Result<Vec<MelodyParams>> {
        let z = self.encode(&self.scaled_batch(specs)?)?;
        let per = self.config.n_params * self.config.n_notes;
        z.data()
            .chunks(per)
            .map(|l| latent_to_melody(l, self.config.n_params, self.config.n_notes, total_duration))
            .collect()
    }

    pub fn infer_controls(&self, spec: &AuditorySpectrogram, total_duration: f64) -> Result<MelodyParams> {
        Ok(self
            .infer_controls_batch(&[spec], total_duration)?
            .pop()
            .expect("one item in, one item out"))
    }

    /// Decoder output for latents, as spectrograms on the training scale.
    pub fn decode_to_spectrograms(
        &self,
        z: &Tensor,
        template: &AuditorySpectrogram,
    ) -> Result<Vec<AuditorySpectrogram>> {
        let y = self.decode(z)?;
        let per = self.config.freq_channels * self.config.frames;
        Ok(y.data()
            .chunks(per)
            .map(|v| AuditorySpectrogram {
                n_channels: self.config.freq_channels,
                n_frames: self.config.frames,
                values: v.to_vec(),
                channel_centers: template.channel_centers.clone(),
                frame_hop: template.frame_hop,
            })
            .collect())
    }
}

/// Applies `f` to consecutive batch chunks and concatenates the results.
fn chunked(x: &Tensor, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let (b, _, _) = x.dims3()?;
    if b <= INFER_CHUNK {
        return f(x);
    }
    let mut shape = Vec::new();
    let mut data = Vec::new();
    for start in (0..b).step_by(INFER_CHUNK) {
        let idx: Vec<usize> = (start..(start + INFER_CHUNK).min(b)).collect();
        let y = f(&gather(x, &idx))?;
        shape = y.shape().to_vec();
        data.extend_from_slice(y.data());
    }
    shape[0] = b;
    Tensor::new(shape, data)
}
