//! Process-boundary adapter for an external synthesizer.
//!
//! The adapter is run as `<program> [args...] <params.csv> <out.wav>`. The
//! CSV carries one row per note and one column per normalized control, with
//! no header. The program must write a mono PCM WAV to `out.wav` and exit 0.

use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use log::warn;

use super::{clip_len, AudioBuffer, MelodyParams, Plant};
use crate::audio::{fit_length, read_wav, resample_linear};
use crate::error::{Error, Result};
use crate::table::write_params_csv;

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterConfig {
    pub program: PathBuf,
    /// Extra arguments placed before the two file paths.
    pub args: Vec<String>,
    pub sample_rate: u32,
    /// Number of leading controls written per note.
    pub n_controls: usize,
    pub timeout: Duration,
}

impl AdapterConfig {
    pub fn new(program: impl Into<PathBuf>, sample_rate: u32) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
            sample_rate,
            n_controls: super::N_CONTROLS,
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExternalPlant {
    pub config: AdapterConfig,
}

impl ExternalPlant {
    pub fn new(config: AdapterConfig) -> Result<Self> {
        let p = &config.program;
        let looks_like_path = p.components().count() > 1;
        if looks_like_path && !p.is_file() {
            return Err(Error::Config(format!(
                "adapter executable {} not found",
                p.display()
            )));
        }
        Ok(Self { config })
    }

    /// Renders through the adapter and enforces the sample-rate and length
    /// contract on what comes back.
    pub fn external_render(&self, melody: &MelodyParams) -> Result<AudioBuffer> {
        let cfg = &self.config;
        let dir = tempfile::Builder::new().prefix("mirrornet-plant").tempdir()?;
        let csv = dir.path().join("params.csv");
        let wav = dir.path().join("out.wav");
        write_params_csv(&csv, &melody.to_rows(cfg.n_controls), false)?;

        let mut child = Command::new(&cfg.program)
            .args(&cfg.args)
            .arg(&csv)
            .arg(&wav)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied => {
                    Error::Config(format!(
                        "cannot launch adapter {}: {e}",
                        cfg.program.display()
                    ))
                }
                _ => Error::Adapter(format!("spawn failed: {e}")),
            })?;

        let started = Instant::now();
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if started.elapsed() > cfg.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Adapter(format!(
                    "timed out after {:.1} s",
                    cfg.timeout.as_secs_f64()
                )));
            }
            std::thread::sleep(Duration::from_millis(2));
        };
        if !status.success() {
            let mut stderr = String::new();
            if let Some(mut e) = child.stderr.take() {
                use std::io::Read;
                let _ = e.read_to_string(&mut stderr);
            }
            return Err(Error::Adapter(format!(
                "exited with {status}: {}",
                stderr.lines().last().unwrap_or("")
            )));
        }

        let mut audio =
            read_wav(&wav).map_err(|e| Error::Adapter(format!("unreadable output: {e}")))?;
        if audio.sample_rate != cfg.sample_rate {
            warn!(
                "adapter returned {} Hz, resampling to {} Hz",
                audio.sample_rate, cfg.sample_rate
            );
            audio = resample_linear(&audio, cfg.sample_rate);
        }
        let want = clip_len(cfg.sample_rate, melody.total_duration);
        let got = audio.len();
        if fit_length(&mut audio, want) {
            warn!("adapter returned {got} samples, fitted to {want}");
        }
        Ok(audio)
    }
}

impl Plant for ExternalPlant {
    fn render(&self, melody: &MelodyParams) -> Result<AudioBuffer> {
        self.external_render(melody)
    }

    fn sample_rate(&self) -> u32 {
        self.config.sample_rate
    }
}
