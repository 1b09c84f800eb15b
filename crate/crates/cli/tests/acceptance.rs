//! Acceptance suite. Every test writes one `criterion N: PASS|FAIL` line
//! straight to stdout, past the harness capture, before it asserts.
//!
//! Criteria 3 to 6 train real models and take minutes on one core.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;

use mirrornet::exec::Execution;
use mirrornet::harness::{evaluate_split, generate_set1, generate_set2, stat_tests, Dataset, GenSpec};
use mirrornet::mirrornet::gradcheck::{encoder_error, layer_cases, micro_model};
use mirrornet::mirrornet::{ModelConfig, MirrorNet, Stage, TrainConfig, Trainer};
use mirrornet::plant::{
    midi_to_hz, render_note, AudioBuffer, BuiltinPlant, NoteParams, ParamRanges, FIXED_CONTROLS,
};
use mirrornet::spectro::{Filterbank, FilterbankConfig};
use mirrornet::tensor::LrSchedule;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

const BIN: &str = env!("CARGO_BIN_EXE_mirrornet");
const SR: u32 = 16_000;

fn verdict(n: u32, ok: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(ok, "criterion {n}: {detail}");
}

fn tiny_fb() -> Filterbank {
    let cfg = FilterbankConfig {
        n_channels: 32,
        frames_per_clip: 50,
        ..Default::default()
    };
    Filterbank::new(&cfg, SR).unwrap()
}

fn desk_spec(seed: u64) -> GenSpec {
    GenSpec {
        n_train: 60,
        n_test: 20,
        n_notes: 2,
        total_duration: 2.0,
        seed,
    }
}

fn fit(ds: &Dataset, cfg: TrainConfig) -> mirrornet::Result<MirrorNet> {
    let fb = tiny_fb();
    let plant = BuiltinPlant::default();
    let trainer = Trainer::new(&plant, &fb, cfg)?;
    Ok(trainer.fit(ModelConfig::tiny(), &ds.corpus())?.net)
}

fn cli(args: &[&str]) {
    let out = Command::new(BIN).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "mirrornet {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn criterion_1_gradients() {
    let seeds = 20u64;
    let mut worst = (0.0f64, String::new());
    let mut note = |err: f64, what: String| {
        if !(err < worst.0) {
            worst = (err, what);
        }
    };
    for (name, case) in layer_cases() {
        for seed in 0..seeds {
            note(case(&mut ChaCha8Rng::seed_from_u64(seed)), format!("{name} seed {seed}"));
        }
    }
    for seed in 0..seeds {
        let err = encoder_error(&micro_model(), &mut ChaCha8Rng::seed_from_u64(seed));
        note(err, format!("encoder stack seed {seed}"));
    }
    verdict(
        1,
        worst.0 < 1e-4,
        &format!("{seeds} seeds per case; worst relative error {:.2e} ({}) < 1e-4", worst.0, worst.1),
    );
}

fn lengths(stages: &[Stage]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for st in stages {
        let l = st.shape[2];
        if out.last() != Some(&l) {
            out.push(l);
        }
    }
    out
}

#[test]
fn criterion_2_paper_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = MirrorNet::new(ModelConfig::paper(), 1e-2, 1e-3, LrSchedule::default(), &mut rng).unwrap();
    let (enc, dec) = net.trace_shapes().unwrap();
    let shape = |st: &[Stage], name: &str| st.iter().find(|x| x.name == name).map(|x| x.shape.clone());
    let ok = enc.first().unwrap().shape == [1, 128, 250]
        && enc.last().unwrap().shape == [1, 7, 5]
        && shape(&enc, "pool1").map(|v| v[2]) == Some(50)
        && shape(&enc, "pool2").map(|v| v[2]) == Some(10)
        && shape(&enc, "pool3").map(|v| v[2]) == Some(5)
        && lengths(&enc) == [250, 50, 10, 5]
        && dec.first().unwrap().shape == [1, 7, 5]
        && dec.last().unwrap().shape == [1, 128, 250]
        && lengths(&dec) == [5, 10, 50, 250];
    verdict(
        2,
        ok,
        &format!(
            "encoder {:?}->{:?} via {:?}, decoder {:?}->{:?} via {:?}",
            enc.first().unwrap().shape,
            enc.last().unwrap().shape,
            lengths(&enc),
            dec.first().unwrap().shape,
            dec.last().unwrap().shape,
            lengths(&dec)
        ),
    );
}

#[test]
fn criterion_3_overfit_one() {
    let fb = tiny_fb();
    let plant = BuiltinPlant::default();
    let spec = GenSpec {
        n_train: 1,
        n_test: 1,
        n_notes: 2,
        total_duration: 2.0,
        seed: 3,
    };
    let (one, _) = generate_set1(&spec, &plant, &fb, Execution::Parallel).unwrap();
    let cfg = TrainConfig {
        outer_iterations: 500,
        seed: 3,
        ..TrainConfig::tiny()
    };
    let trainer = Trainer::new(&plant, &fb, cfg).unwrap();
    let corpus = one.corpus();
    let mut state = trainer.init_state(ModelConfig::tiny(), &corpus).unwrap();
    let s = state.net.scaled_batch(&[&corpus[0]]).unwrap();
    let losses = |net: &MirrorNet| {
        let z = net.encode(&s).unwrap();
        let t = trainer.plant_targets(net, &z).unwrap();
        (trainer.encoder_loss(net, &s).unwrap(), trainer.decoder_loss(net, &z, &t).unwrap())
    };
    let (c0, d0) = losses(&state.net);
    trainer.train(&mut state, &corpus, |_| Ok(())).unwrap();
    let (c1, d1) = losses(&state.net);
    let ok = c1 <= 0.10 * c0 && d1 <= 0.05 * d0 && state.outer_iter <= 500;
    verdict(
        3,
        ok,
        &format!(
            "after {} iterations e_c {c0:.3e}->{c1:.3e} ({:.1}% <= 10%), e_d {d0:.3e}->{d1:.3e} ({:.1}% <= 5%)",
            state.outer_iter,
            100.0 * c1 / c0,
            100.0 * d1 / d0
        ),
    );
}

#[test]
fn criterion_4_set1_recovery() {
    let fb = tiny_fb();
    let plant = BuiltinPlant::default();
    let (train, test) = generate_set1(&desk_spec(1), &plant, &fb, Execution::Parallel).unwrap();
    let net = fit(&train, TrainConfig { seed: 7, ..TrainConfig::tiny() }).unwrap();
    let ev = evaluate_split(&net, &test, &plant, &fb, 7, Execution::Parallel).unwrap();
    let (pred, truth) = ev.control_pairs(&test).unwrap();
    let st = stat_tests(&pred, &truth, 7).unwrap();
    let mad: Vec<String> = st.params.iter().map(|p| format!("{}={:.3}", p.name, p.mean_abs_diff)).collect();
    let (pitch, duration) = (st.params[0].mean_abs_diff, st.params[1].mean_abs_diff);
    let ok = pitch < 0.28 && duration < 0.28 && st.rejections() >= 4;
    verdict(
        4,
        ok,
        &format!(
            "pitch {pitch:.3} and duration {duration:.3} < 0.28; {}/7 better than chance (need 4); [{}]",
            st.rejections(),
            mad.join(" ")
        ),
    );
}

#[test]
fn criterion_5_set2_robustness() {
    let fb = tiny_fb();
    let plant = BuiltinPlant::default();
    let (train, test) = generate_set2(&desk_spec(2), &plant, &fb, Execution::Parallel).unwrap();
    let net = match fit(&train, TrainConfig { seed: 7, ..TrainConfig::tiny() }) {
        Ok(n) => n,
        Err(e) => return verdict(5, false, &format!("training failed: {e}")),
    };
    let ev = evaluate_split(&net, &test, &plant, &fb, 7, Execution::Parallel).unwrap();
    let rate = ev.win_rate();
    verdict(
        5,
        rate >= 0.75,
        &format!(
            "no divergence; beats random on {:.0}% of {} test items (need 75%); mean MSE {:.3e} vs baseline {:.3e}",
            100.0 * rate,
            ev.items.len(),
            ev.mean_spec_mse(),
            ev.mean_baseline_mse()
        ),
    );
}

#[test]
fn criterion_6_external_matching() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run, eval, figs) =
        (dir.path().join("data"), dir.path().join("run"), dir.path().join("eval"), dir.path().join("figs"));
    cli(&["--seed", "5", "gen-data", "external", "--out", s(&data)]);
    cli(&["--seed", "5", "train", "--data", s(&data), "--out", s(&run)]);
    let ckpt = run.join("checkpoint.ckpt");
    cli(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&eval)]);
    cli(&["figures", "--checkpoint", s(&ckpt), "--data", s(&data), "--count", "2", "--out", s(&figs)]);

    let items = std::fs::read_to_string(eval.join("run0/items_test.csv")).unwrap();
    let rows: Vec<(f64, f64)> = items
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("item,"))
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    let wins = rows.iter().filter(|(m, b)| m < b).count();

    let mut panels: Vec<String> = std::fs::read_dir(&figs)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".pgm"))
        .collect();
    panels.sort();
    let per_item = |suffix: &str| panels.iter().filter(|n| n.ends_with(suffix)).count();
    let two_panels = panels.len() == 4 && per_item("_a_input.pgm") == 2 && per_item("_d_plant_learned.pgm") == 2;

    let ok = rows.len() == 20 && wins * 4 >= 3 * rows.len() && two_panels;
    verdict(
        6,
        ok,
        &format!(
            "beats random on {wins}/{} piano-like test items (need 75%); figures {}",
            rows.len(),
            panels.join(" ")
        ),
    );
}

fn rms(s: &[f32]) -> f64 {
    (s.iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / s.len() as f64).sqrt()
}

fn fft_peak_hz(samples: &[f32], from: usize, n: usize) -> (f64, f64) {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|i| {
            let w = 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos();
            Complex::new(samples[from + i] as f64 * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (k, _) = buf[1..n / 2]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
        .unwrap();
    let bin = SR as f64 / n as f64;
    ((k + 1) as f64 * bin, bin)
}

fn sine(freq: f64) -> AudioBuffer {
    let samples = (0..2 * SR as usize)
        .map(|i| 0.5 * (std::f64::consts::TAU * freq * i as f64 / SR as f64).sin() as f32)
        .collect();
    AudioBuffer::new(SR, samples).unwrap()
}

#[test]
fn criterion_7_plant_and_spectrogram() {
    let ranges = ParamRanges::default();
    let note = |v: [f64; 10]| NoteParams::new(v).unwrap();
    let mut failures = Vec::new();

    let corners_ok = (0u32..128).all(|mask| {
        let mut v = FIXED_CONTROLS;
        for (k, slot) in v.iter_mut().enumerate().take(7) {
            *slot = ((mask >> k) & 1) as f64;
        }
        let a = render_note(&note(v), 0.4, SR, &ranges);
        a.samples.iter().all(|x| x.is_finite() && x.abs() <= 1.0)
    });
    if !corners_ok {
        failures.push("corner bound");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let volume_ok = (0..50).all(|_| {
        let mut v: [f64; 10] = std::array::from_fn(|_| rng.gen());
        let (a, b): (f64, f64) = (rng.gen(), rng.gen());
        v[2] = a.min(b);
        let quiet = rms(&render_note(&note(v), 0.4, SR, &ranges).samples);
        v[2] = a.max(b);
        quiet <= rms(&render_note(&note(v), 0.4, SR, &ranges).samples) + 1e-12
    });
    if !volume_ok {
        failures.push("volume monotonicity");
    }

    let c = &ranges.bpf_center;
    let pitch_ok = (0..=24).all(|k| {
        let p = k as f64 / 24.0;
        let f0 = midi_to_hz(ranges.pitch.denormalize(p).unwrap());
        let centre = ((f0 / c.lo).ln() / (c.hi / c.lo).ln()).clamp(0.0, 1.0);
        let v = [p, 1.0, 1.0, centre, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let (peak, bin) = fft_peak_hz(&render_note(&note(v), 1.0, SR, &ranges).samples, 800, 8192);
        (peak - f0).abs() <= bin + 1e-9
    });
    if !pitch_ok {
        failures.push("pitch FFT peak");
    }

    let fb = Filterbank::new(&FilterbankConfig::default(), SR).unwrap();
    let shape = fb.compute(&sine(440.0)).unwrap().shape();
    if shape != (128, 250) {
        failures.push("spectrogram shape");
    }
    let tones_ok = (0..=24).all(|k| {
        let f = 150.0 * (6000.0f64 / 150.0).powf(k as f64 / 24.0);
        let means = fb.compute(&sine(f)).unwrap().channel_means();
        let got = (0..means.len()).max_by(|&a, &b| means[a].total_cmp(&means[b])).unwrap();
        let want = (0..fb.n_channels())
            .min_by(|&a, &b| (fb.centers[a] / f).ln().abs().total_cmp(&(fb.centers[b] / f).ln().abs()))
            .unwrap();
        got.abs_diff(want) <= 1
    });
    if !tones_ok {
        failures.push("tone localization");
    }

    verdict(
        7,
        failures.is_empty(),
        &format!(
            "128 corners bounded, volume monotone over 50 draws, 25 pitches within 1 FFT bin, \
             25 tones within 1 channel, shape {shape:?}; failures: {failures:?}"
        ),
    );
}

#[test]
fn criterion_8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cli(&["--seed", "7", "gen-data", "set1", "--n-train", "8", "--n-test", "2", "--out", s(&data)]);
    let runs: Vec<_> = ["a", "b", "c"].iter().map(|r| dir.path().join(r)).collect();
    for (k, run) in runs.iter().enumerate() {
        let mut args = vec!["--profile", "tiny", "--seed", "7"];
        if k == 2 {
            args.push("--sequential");
        }
        args.extend(["train", "--data", s(&data), "--out", s(run), "--iterations", "3"]);
        cli(&args);
    }
    let read = |run: &Path, f: &str| std::fs::read(run.join(f)).unwrap();
    let same = |f: &str| runs.iter().all(|r| read(r, f) == read(&runs[0], f));
    let (ckpt, log) = (same("checkpoint.ckpt"), same("train_log.csv"));
    verdict(
        8,
        ckpt && log,
        &format!(
            "three runs of train --profile tiny --seed 7 (one sequential): checkpoints identical {ckpt}, \
             train_log.csv identical {log}"
        ),
    );
}
