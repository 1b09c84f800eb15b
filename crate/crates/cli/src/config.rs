//! Run configuration: profile defaults overlaid with an optional TOML file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mirrornet::mirrornet::{ModelConfig, TrainConfig};
use mirrornet::plant::{AdapterConfig, ParamRanges};
use mirrornet::spectro::FilterbankConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 32×50 spectrograms, 7×2 latent, quarter widths.
    Tiny,
    /// 128×250 spectrograms, 7×5 latent, full widths.
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSection {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub sample_rate: u32,
    pub ranges: ParamRanges,
    /// When set, audio is rendered by this external program instead of the
    /// built-in synthesizer.
    pub adapter: Option<AdapterSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n_train: usize,
    pub n_test: usize,
    pub n_notes: usize,
    /// Melody length in seconds.
    pub total_duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub plant: PlantSection,
    pub spectrogram: FilterbankConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub data: DataSection,
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let (model, training, channels, frames, n_train, n_test) = match profile {
            Profile::Tiny => (ModelConfig::tiny(), TrainConfig::tiny(), 32, 50, 60, 20),
            Profile::Paper => (ModelConfig::paper(), TrainConfig::default(), 128, 250, 400, 80),
        };
        let n_notes = model.n_notes;
        Self {
            profile,
            seed: 0,
            plant: PlantSection {
                sample_rate: 16_000,
                ranges: ParamRanges::default(),
                adapter: None,
            },
            spectrogram: FilterbankConfig {
                n_channels: channels,
                frames_per_clip: frames,
                ..Default::default()
            },
            model,
            training,
            data: DataSection {
                n_train,
                n_test,
                n_notes,
                total_duration: 2.0,
            },
        }
    }

    /// Profile defaults, overlaid with `file` when given, then with the
    /// explicit `seed`. Unknown keys in the file are rejected.
    pub fn load(profile: Profile, file: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match file {
            None => Self::profile(profile),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read config {}", path.display()))?;
                Self::from_toml(profile, &text)
                    .with_context(|| format!("invalid config {}", path.display()))?
            }
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.training.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overlays a TOML document on the defaults of `profile` (or of the
    /// profile the document names).
    pub fn from_toml(profile: Profile, text: &str) -> Result<Self> {
        let overlay: toml::Value = toml::from_str(text)?;
        let profile = match overlay.get("profile") {
            Some(p) => Profile::deserialize(p.clone()).context("bad profile")?,
            None => profile,
        };
        let mut base = toml::Value::try_from(Self::profile(profile))?;
        merge(&mut base, overlay);
        Ok(base.try_into()?)
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.ranges.validate()?;
        self.spectrogram.validate(self.plant.sample_rate)?;
        self.model.validate()?;
        self.training.validate()?;
        if self.model.freq_channels != self.spectrogram.n_channels
            || self.model.frames != self.spectrogram.frames_per_clip
        {
            bail!(
                "model expects {}×{} spectrograms but the spectrogram section gives {}×{}",
                self.model.freq_channels,
                self.model.frames,
                self.spectrogram.n_channels,
                self.spectrogram.frames_per_clip
            );
        }
        if self.model.n_notes != self.data.n_notes {
            bail!(
                "model latent has {} notes but data.n_notes is {}",
                self.model.n_notes,
                self.data.n_notes
            );
        }
        if (self.spectrogram.clip_duration - self.data.total_duration).abs() > 1e-12 {
            bail!("spectrogram.clip_duration must equal data.total_duration");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (object keys sorted), so the hash
    /// does not depend on key order in the source file.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_value(self).expect("config serializes");
        let text = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn adapter(&self) -> Option<AdapterConfig> {
        self.plant.adapter.as_ref().map(|a| AdapterConfig {
            program: a.program.clone(),
            args: a.args.clone(),
            sample_rate: self.plant.sample_rate,
            n_controls: mirrornet::plant::N_CONTROLS,
            timeout: Duration::from_secs(a.timeout_secs),
        })
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_key_order() {
        let a = "seed = 3\n[training]\nbatch_size = 10\nencoder_epochs = 2\n";
        let b = "[training]\nencoder_epochs = 2\nbatch_size = 10\n\n[data]\nn_train = 60\n";
        let mut x = RunConfig::from_toml(Profile::Tiny, a).unwrap();
        let mut y = RunConfig::from_toml(Profile::Tiny, b).unwrap();
        x.seed = 3;
        y.seed = 3;
        assert_eq!(x.hash(), y.hash());
        assert_ne!(x.hash(), RunConfig::profile(Profile::Tiny).hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml(Profile::Tiny, "bogus = 1\n").is_err());
        assert!(RunConfig::from_toml(Profile::Tiny, "[training]\nlearning_rate = 1\n").is_err());
    }

    #[test]
    fn profiles_validate() {
        RunConfig::profile(Profile::Tiny).validate().unwrap();
        RunConfig::profile(Profile::Paper).validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::profile(Profile::Paper);
        let back = RunConfig::from_toml(Profile::Tiny, &c.to_toml()).unwrap();
        assert_eq!(c, back);
    }
}
