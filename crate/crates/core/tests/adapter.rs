//! The external-plant process boundary, exercised with the bundled
//! echo-plant.

use std::time::Duration;

use mirrornet::harness::{generate_set1, GenSpec};
use mirrornet::exec::Execution;
use mirrornet::plant::{
    render_melody, AdapterConfig, BuiltinPlant, ExternalPlant, MelodyParams, NoteParams, ParamRanges, Plant,
};
use mirrornet::spectro::{Filterbank, FilterbankConfig};
use mirrornet::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ECHO: &str = env!("CARGO_BIN_EXE_echo-plant");

fn melody(seed: u64) -> MelodyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let notes = (0..5)
        .map(|_| NoteParams::new(std::array::from_fn(|_| rng.gen())).unwrap())
        .collect();
    MelodyParams::new(notes, 2.0).unwrap()
}

fn adapter(args: &[&str]) -> ExternalPlant {
    let mut cfg = AdapterConfig::new(ECHO, 16_000);
    cfg.args = args.iter().map(|s| s.to_string()).collect();
    cfg.timeout = Duration::from_secs(30);
    ExternalPlant::new(cfg).unwrap()
}

#[test]
fn round_trip_matches_builtin_within_quantization() {
    let ranges = ParamRanges::default();
    let plant = adapter(&[]);
    for seed in 0..5 {
        let m = melody(seed);
        let direct = render_melody(&m, 16_000, &ranges);
        let external = plant.render(&m).unwrap();
        assert_eq!(external.len(), direct.len());
        let worst = direct
            .samples
            .iter()
            .zip(&external.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst <= 2f32.powi(-15), "seed {seed}: max diff {worst}");
    }
}

#[test]
fn wrong_length_is_fitted() {
    let m = melody(9);
    let direct = render_melody(&m, 16_000, &ParamRanges::default());
    let out = adapter(&["--extra-samples", "777"]).render(&m).unwrap();
    assert_eq!(out.len(), 32_000);
    let short = adapter(&["--duration", "1.5"]).render(&m).unwrap();
    assert_eq!(short.len(), 32_000);
    assert!(short.samples[24_000..].iter().all(|&s| s == 0.0));
    assert!((out.samples[100] - direct.samples[100]).abs() <= 2f32.powi(-15));
}

#[test]
fn other_sample_rate_is_resampled() {
    let out = adapter(&["--sample-rate", "8000", "--duration", "2"]).render(&melody(2)).unwrap();
    assert_eq!(out.sample_rate, 16_000);
    assert_eq!(out.len(), 32_000);
}

#[test]
fn failing_adapter_reports() {
    let err = adapter(&["--fail"]).render(&melody(1)).unwrap_err();
    assert!(matches!(err, Error::Adapter(_)), "{err}");
    assert!(err.to_string().contains("failing on request"));
}

#[test]
fn missing_executable_is_a_configuration_error() {
    let cfg = AdapterConfig::new("/nonexistent/dir/plant", 16_000);
    assert!(matches!(ExternalPlant::new(cfg), Err(Error::Config(_))));
    let bare = ExternalPlant::new(AdapterConfig::new("no-such-plant-binary-xyz", 16_000)).unwrap();
    assert!(matches!(bare.render(&melody(0)), Err(Error::Config(_))));
}

#[test]
fn external_plant_generates_the_same_corpus() {
    let fb = Filterbank::new(
        &FilterbankConfig {
            n_channels: 32,
            frames_per_clip: 50,
            ..Default::default()
        },
        16_000,
    )
    .unwrap();
    let spec = GenSpec {
        n_train: 3,
        n_test: 1,
        n_notes: 2,
        total_duration: 2.0,
        seed: 4,
    };
    let (a, _) = generate_set1(&spec, &BuiltinPlant::default(), &fb, Execution::Sequential).unwrap();
    let (b, _) = generate_set1(&spec, &adapter(&[]), &fb, Execution::Sequential).unwrap();
    for (x, y) in a.items.iter().zip(&b.items) {
        assert_eq!(x.params, y.params);
        let d = x.spectrogram.mse(&y.spectrogram).unwrap();
        assert!(d < 1e-6, "{d}");
    }
}
