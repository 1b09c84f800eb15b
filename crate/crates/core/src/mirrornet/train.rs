//! Alternating two-phase training.
//!
//! Each outer iteration:
//!
//! 1. encode the corpus (detached) to get the current latents, replacing a
//!    fraction of them with uniform random "babbling" latents;
//! 2. render those latents through the plant and train the decoder to
//!    reproduce the plant's spectrograms (decoder loss `e_d`);
//! 3. freeze the decoder and train the encoder so that
//!    `decoder(encoder(S))` reconstructs `S` (encoder loss `e_c`).
//!
//! The plant sits outside every gradient path; the decoder is the only
//! route by which `e_c` reaches the encoder.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::latent_to_melody;
use super::MirrorNet;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::plant::Plant;
use crate::spectro::{AuditorySpectrogram, Filterbank};
use crate::tensor::{LrSchedule, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub encoder_lr: f64,
    pub decoder_lr: f64,
    pub encoder_epochs: usize,
    pub decoder_epochs: usize,
    /// Decoder epochs in the first outer iteration, each on freshly drawn
    /// random latents; 0 runs an ordinary first iteration instead.
    pub warmup_epochs: usize,
    pub outer_iterations: usize,
    pub batch_size: usize,
    /// Learning-rate decay, stepped once per outer iteration.
    pub lr_decay: LrSchedule,
    /// Fraction of random latents in the first outer iteration.
    pub babble_first: f64,
    /// Fraction of random latents afterwards.
    pub babble_ratio: f64,
    /// Stop once both losses improve by less than this (relative) over
    /// `patience` outer iterations.
    pub tolerance: f64,
    pub patience: usize,
    /// Abort when `e_c` exceeds this multiple of its first value.
    pub divergence_factor: f64,
    /// Outer iterations between checkpoints; 0 disables.
    pub checkpoint_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            encoder_lr: 1e-2,
            decoder_lr: 1e-3,
            encoder_epochs: 5,
            decoder_epochs: 5,
            warmup_epochs: 0,
            outer_iterations: 200,
            batch_size: 20,
            lr_decay: LrSchedule::default(),
            babble_first: 1.0,
            babble_ratio: 0.25,
            tolerance: 1e-3,
            patience: 10,
            divergence_factor: 10.0,
            checkpoint_interval: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings for the tiny profile: a long babbling warm-up for the
    /// decoder, then a short alternating schedule.
    pub fn tiny() -> Self {
        Self {
            warmup_epochs: 200,
            outer_iterations: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.encoder_lr > 0.0 && self.decoder_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(0.0..=1.0).contains(&self.babble_first) || !(0.0..=1.0).contains(&self.babble_ratio) {
            return bad("babbling ratios must lie in [0, 1]");
        }
        if self.lr_decay.interval == 0 || !(self.lr_decay.gamma > 0.0) {
            return bad("learning-rate decay needs interval >= 1 and gamma > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Decoder,
    Encoder,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Decoder => "decoder",
            Phase::Encoder => "encoder",
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub outer_iter: usize,
    pub epoch: usize,
    pub phase: Phase,
    pub e_c: Option<f64>,
    pub e_d: Option<f64>,
    pub lr_enc: f64,
    pub lr_dec: f64,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "outer_iter,epoch,phase,e_c,e_d,lr_enc,lr_dec";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.outer_iter,
            self.epoch,
            self.phase.as_str(),
            opt(self.e_c),
            opt(self.e_d),
            self.lr_enc,
            self.lr_dec
        )
    }

    /// Inverse of [`LogRow::to_csv`].
    pub fn from_csv(line: &str) -> Option<LogRow> {
        let f: Vec<&str> = line.trim().split(',').collect();
        let [it, ep, ph, c, d, le, ld] = f.as_slice() else {
            return None;
        };
        let opt = |s: &str| -> Option<Option<f64>> {
            if s.is_empty() {
                Some(None)
            } else {
                s.parse().ok().map(Some)
            }
        };
        Some(LogRow {
            outer_iter: it.parse().ok()?,
            epoch: ep.parse().ok()?,
            phase: match *ph {
                "decoder" => Phase::Decoder,
                "encoder" => Phase::Encoder,
                _ => return None,
            },
            e_c: opt(c)?,
            e_d: opt(d)?,
            lr_enc: le.parse().ok()?,
            lr_dec: ld.parse().ok()?,
        })
    }
}

/// Everything a training run owns.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub net: MirrorNet,
    /// `e_c` per encoder epoch.
    pub encoder_losses: Vec<f64>,
    /// `e_d` per decoder epoch.
    pub decoder_losses: Vec<f64>,
    /// `(e_d, e_c)` at the end of each outer iteration.
    pub iteration_losses: Vec<(f64, f64)>,
    pub log: Vec<LogRow>,
    pub outer_iter: usize,
    pub seed: u64,
    pub(crate) rng: ChaCha8Rng,
}

impl TrainState {
    pub fn log_csv(&self) -> String {
        let mut s = String::from(LogRow::CSV_HEADER);
        s.push('\n');
        for r in &self.log {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }

    /// True once both losses stopped improving by more than `tol` over the
    /// last `patience` outer iterations.
    pub fn converged(&self, tol: f64, patience: usize) -> bool {
        let h = &self.iteration_losses;
        if patience == 0 || h.len() <= patience {
            return false;
        }
        let (old_d, old_c) = h[h.len() - 1 - patience];
        let (new_d, new_c) = h[h.len() - 1];
        let rel = |old: f64, new: f64| if old > 0.0 { (old - new) / old } else { 0.0 };
        rel(old_d, new_d) < tol && rel(old_c, new_c) < tol
    }
}

/// Copies the batch items at `idx` out of a `[batch, ...]` tensor.
pub fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let per: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data).expect("gathered shape is consistent")
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} = {v}")))
    }
}

/// Drives training against a plant and a spectrogram front-end.
pub struct Trainer<'a> {
    pub plant: &'a dyn Plant,
    pub filterbank: &'a Filterbank,
    pub config: TrainConfig,
    /// Melody length used when rendering latents.
    pub total_duration: f64,
    pub exec: Execution,
}

impl<'a> Trainer<'a> {
    pub fn new(plant: &'a dyn Plant, filterbank: &'a Filterbank, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if plant.sample_rate() != filterbank.sample_rate {
            return Err(Error::Config(format!(
                "plant renders at {} Hz but the filterbank expects {} Hz",
                plant.sample_rate(),
                filterbank.sample_rate
            )));
        }
        Ok(Self {
            plant,
            filterbank,
            total_duration: filterbank.config.clip_duration,
            config,
            exec: Execution::default(),
        })
    }

    /// Fresh network, with the spectrogram scale fixed from `corpus`.
    pub fn init_state(&self, model: ModelConfig, corpus: &[AuditorySpectrogram]) -> Result<TrainState> {
        model.validate()?;
        if model.freq_channels != self.filterbank.n_channels()
            || model.frames != self.filterbank.n_frames()
        {
            return Err(Error::Config(format!(
                "model expects {}×{} spectrograms, front-end produces {}×{}",
                model.freq_channels,
                model.frames,
                self.filterbank.n_channels(),
                self.filterbank.n_frames()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut net = MirrorNet::new(
            model,
            self.config.encoder_lr,
            self.config.decoder_lr,
            self.config.lr_decay,
            &mut rng,
        )?;
        let max = corpus.iter().map(AuditorySpectrogram::max).fold(0.0, f64::max);
        net.norm_scale = if max > 0.0 { 1.0 / max } else { 1.0 };
        Ok(TrainState {
            net,
            encoder_losses: Vec::new(),
            decoder_losses: Vec::new(),
            iteration_losses: Vec::new(),
            log: Vec::new(),
            outer_iter: 0,
            seed: self.config.seed,
            rng,
        })
    }

    /// Renders each latent through the plant and returns the spectrograms
    /// on the training scale, `[batch, channels, frames]`.
    pub fn plant_targets(&self, net: &MirrorNet, z: &Tensor) -> Result<Tensor> {
        let (b, p, n) = z.dims3()?;
        let items: Vec<&[f64]> = z.data().chunks(p * n).collect();
        let specs = exec::try_map_slice(&items, self.exec, |i, latent| {
            let clamped: Vec<f64> = latent.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            let wrap = |e: Error| Error::Plant {
                index: i,
                reason: e.to_string(),
            };
            let melody = latent_to_melody(&clamped, p, n, self.total_duration).map_err(wrap)?;
            let audio = self.plant.render(&melody).map_err(wrap)?;
            self.filterbank.compute(&audio).map_err(wrap)
        })?;
        debug_assert_eq!(specs.len(), b);
        let refs: Vec<&AuditorySpectrogram> = specs.iter().collect();
        net.scaled_batch(&refs)
    }

    /// Full-batch `e_d` for fixed latents and targets, without updating.
    pub fn decoder_loss(&self, net: &MirrorNet, z: &Tensor, targets: &Tensor) -> Result<f64> {
        let y = net.decode(z)?;
        mse(&y, targets)
    }

    /// Full-batch `e_c`, without updating.
    pub fn encoder_loss(&self, net: &MirrorNet, s: &Tensor) -> Result<f64> {
        let y = net.decode(&net.encode(s)?)?;
        mse(&y, s)
    }

    /// Trains the decoder on `(z, targets)` for the configured epochs.
    /// Returns the last epoch's mean `e_d`.
    pub fn decoder_phase(&self, state: &mut TrainState, z: &Tensor, targets: &Tensor) -> Result<f64> {
        let mut last = f64::NAN;
        for epoch in 0..self.config.decoder_epochs {
            last = self.decoder_epoch(state, z, targets, epoch)?;
        }
        Ok(last)
    }

    /// Babbling warm-up: `warmup_epochs` decoder epochs, each on a fresh
    /// draw of random latents (at least one batch, or `n` of them) rendered
    /// through the plant. Returns the last epoch's mean `e_d`.
    pub fn warmup(&self, state: &mut TrainState, n: usize) -> Result<f64> {
        let c = &state.net.config;
        let shape = vec![n.max(self.config.batch_size), c.n_params, c.n_notes];
        let mut last = f64::NAN;
        for epoch in 0..self.config.warmup_epochs {
            let z = Tensor::from_fn(shape.clone(), |_| state.rng.gen::<f64>());
            let targets = self.plant_targets(&state.net, &z)?;
            last = self.decoder_epoch(state, &z, &targets, epoch)?;
        }
        Ok(last)
    }

    fn decoder_epoch(&self, state: &mut TrainState, z: &Tensor, targets: &Tensor, epoch: usize) -> Result<f64> {
        let n = z.shape()[0];
        let TrainState { net, rng, .. } = state;
        let loss = run_epoch(rng, n, self.config.batch_size, |idx| {
            let zb = gather(z, idx);
            let tb = gather(targets, idx);
            let (loss, grads, bound) = {
                let mut tape = Tape::with_execution(self.exec);
                let zv = tape.constant(&zb);
                let tv = tape.constant(&tb);
                let (y, bound) = net.decoder.forward(&mut tape, zv, true, None)?;
                let l = tape.mse(y, tv)?;
                let lv = tape.value(l)[0];
                (lv, tape.backward(l)?, bound)
            };
            check_finite(loss, "decoder loss")?;
            net.decoder.accumulate(&grads, &bound);
            net.dec_opt.step(&mut net.decoder.params_mut());
            net.decoder.zero_grad();
            Ok(loss)
        })?;
        state.decoder_losses.push(loss);
        state.log.push(LogRow {
            outer_iter: state.outer_iter,
            epoch,
            phase: Phase::Decoder,
            e_c: None,
            e_d: Some(loss),
            lr_enc: state.net.enc_opt.lr,
            lr_dec: state.net.dec_opt.lr,
        });
        Ok(loss)
    }

    /// Trains the encoder through the frozen decoder. Returns the last
    /// epoch's mean `e_c`.
    pub fn encoder_phase(&self, state: &mut TrainState, s: &Tensor) -> Result<f64> {
        let TrainState { net, rng, .. } = state;
        let n = s.shape()[0];
        let mut losses = Vec::with_capacity(self.config.encoder_epochs);
        for _ in 0..self.config.encoder_epochs {
            let loss = run_epoch(rng, n, self.config.batch_size, |idx| {
                let sb = gather(s, idx);
                let (loss, grads, bound) = {
                    let mut tape = Tape::with_execution(self.exec);
                    let sv = tape.constant(&sb);
                    let (z, bound) = net.encoder.forward(&mut tape, sv, true, None)?;
                    let (y, _) = net.decoder.forward(&mut tape, z, false, None)?;
                    let l = tape.mse(y, sv)?;
                    let lv = tape.value(l)[0];
                    (lv, tape.backward(l)?, bound)
                };
                check_finite(loss, "encoder loss")?;
                net.encoder.accumulate(&grads, &bound);
                net.enc_opt.step(&mut net.encoder.params_mut());
                net.encoder.zero_grad();
                Ok(loss)
            })?;
            losses.push(loss);
        }
        let (lr_enc, lr_dec) = (state.net.enc_opt.lr, state.net.dec_opt.lr);
        for (epoch, &l) in losses.iter().enumerate() {
            state.encoder_losses.push(l);
            state.log.push(LogRow {
                outer_iter: state.outer_iter,
                epoch,
                phase: Phase::Encoder,
                e_c: Some(l),
                e_d: None,
                lr_enc,
                lr_dec,
            });
        }
        Ok(losses.last().copied().unwrap_or(f64::NAN))
    }

    /// Latents for the decoder phase: detached encoder outputs with a
    /// `ratio` share replaced by uniform random latents.
    pub fn babble_latents(&self, state: &mut TrainState, s: &Tensor, ratio: f64) -> Result<Tensor> {
        let mut z = if ratio >= 1.0 {
            let c = &state.net.config;
            Tensor::zeros(vec![s.shape()[0], c.n_params, c.n_notes])
        } else {
            state.net.encode(s)?
        };
        let (b, p, n) = z.dims3()?;
        let n_rand = ((ratio * b as f64).round() as usize).min(b);
        let mut order: Vec<usize> = (0..b).collect();
        order.shuffle(&mut state.rng);
        let per = p * n;
        for &i in &order[..n_rand] {
            for v in &mut z.data_mut()[i * per..(i + 1) * per] {
                *v = state.rng.gen::<f64>();
            }
        }
        Ok(z)
    }

    /// One outer iteration. Returns `(e_d, e_c)`.
    pub fn step(&self, state: &mut TrainState, s: &Tensor) -> Result<(f64, f64)> {
        let ratio = if state.outer_iter == 0 {
            self.config.babble_first
        } else {
            self.config.babble_ratio
        };
        let e_d = if state.outer_iter == 0 && self.config.warmup_epochs > 0 {
            self.warmup(state, s.shape()[0])?
        } else {
            let z = self.babble_latents(state, s, ratio)?;
            let targets = self.plant_targets(&state.net, &z)?;
            self.decoder_phase(state, &z, &targets)?
        };
        let first_ec = state.encoder_losses.first().copied();
        let e_c = self.encoder_phase(state, s)?;
        let reference = first_ec.or_else(|| state.encoder_losses.first().copied());
        if let Some(r) = reference {
            if state.encoder_losses.iter().any(|&l| l > self.config.divergence_factor * r) {
                return Err(Error::Divergence(format!(
                    "e_c reached {e_c:.6} against an initial {r:.6} at outer iteration {}",
                    state.outer_iter
                )));
            }
        }
        state.iteration_losses.push((e_d, e_c));
        state.outer_iter += 1;
        state.net.enc_opt.set_epoch(state.outer_iter);
        state.net.dec_opt.set_epoch(state.outer_iter);
        Ok((e_d, e_c))
    }

    /// Runs outer iterations until the budget is spent or both losses have
    /// converged. `on_iteration` sees the state after every iteration and
    /// is where checkpoints get written.
    pub fn train(
        &self,
        state: &mut TrainState,
        corpus: &[AuditorySpectrogram],
        mut on_iteration: impl FnMut(&TrainState) -> Result<()>,
    ) -> Result<()> {
        let refs: Vec<&AuditorySpectrogram> = corpus.iter().collect();
        let s = state.net.scaled_batch(&refs)?;
        while state.outer_iter < self.config.outer_iterations {
            self.step(state, &s)?;
            on_iteration(state)?;
            if state.converged(self.config.tolerance, self.config.patience) {
                log::info!("converged after {} outer iterations", state.outer_iter);
                break;
            }
        }
        Ok(())
    }

    /// Convenience: fresh state trained on `corpus`.
    pub fn fit(&self, model: ModelConfig, corpus: &[AuditorySpectrogram]) -> Result<TrainState> {
        let mut state = self.init_state(model, corpus)?;
        self.train(&mut state, corpus, |_| Ok(()))?;
        Ok(state)
    }
}

/// One shuffled pass in minibatches; returns the item-weighted mean loss.
fn run_epoch(
    rng: &mut ChaCha8Rng,
    n: usize,
    batch: usize,
    mut f: impl FnMut(&[usize]) -> Result<f64>,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for idx in order.chunks(batch) {
        total += f(idx)? * idx.len() as f64;
    }
    Ok(total / n.max(1) as f64)
}

fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let n = a.numel().max(1) as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}
