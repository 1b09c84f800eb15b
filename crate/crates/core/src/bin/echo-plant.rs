//! Reference adapter: renders a params CSV with the built-in plant.
//!
//! ```text
//! echo-plant [--sample-rate HZ] [--duration S] [--extra-samples N] [--fail] <params.csv> <out.wav>
//! ```
//!
//! `--extra-samples` appends silence and `--fail` exits nonzero; both exist
//! to exercise the caller's contract checks.

use std::process::ExitCode;

use mirrornet::audio::write_wav;
use mirrornet::plant::{render_melody, MelodyParams, ParamRanges};
use mirrornet::table::read_params_csv;

struct Args {
    sample_rate: u32,
    duration: f64,
    extra: usize,
    fail: bool,
    params: String,
    out: String,
}

fn parse() -> Result<Args, String> {
    let mut it = std::env::args().skip(1);
    let mut a = Args {
        sample_rate: 16_000,
        duration: 2.0,
        extra: 0,
        fail: false,
        params: String::new(),
        out: String::new(),
    };
    let mut pos = Vec::new();
    while let Some(arg) = it.next() {
        let mut value = |name: &str| it.next().ok_or_else(|| format!("{name} needs a value"));
        match arg.as_str() {
            "--sample-rate" => a.sample_rate = value("--sample-rate")?.parse().map_err(|e| format!("{e}"))?,
            "--duration" => a.duration = value("--duration")?.parse().map_err(|e| format!("{e}"))?,
            "--extra-samples" => a.extra = value("--extra-samples")?.parse().map_err(|e| format!("{e}"))?,
            "--fail" => a.fail = true,
            s if s.starts_with("--") => return Err(format!("unknown flag {s}")),
            _ => pos.push(arg),
        }
    }
    match <[String; 2]>::try_from(pos) {
        Ok([p, o]) => {
            a.params = p;
            a.out = o;
            Ok(a)
        }
        Err(_) => Err("usage: echo-plant [flags] <params.csv> <out.wav>".into()),
    }
}

fn run() -> Result<(), String> {
    let a = parse()?;
    if a.fail {
        return Err("failing on request".into());
    }
    let rows = read_params_csv(&a.params).map_err(|e| e.to_string())?;
    let melody = MelodyParams::from_rows(&rows, a.duration).map_err(|e| e.to_string())?;
    let mut audio = render_melody(&melody, a.sample_rate, &ParamRanges::default());
    audio.samples.extend(std::iter::repeat(0.0).take(a.extra));
    write_wav(&a.out, &audio).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("echo-plant: {e}");
            ExitCode::FAILURE
        }
    }
}
