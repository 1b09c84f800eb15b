use mirrornet::plant::AudioBuffer;
use mirrornet::spectro::{Filterbank, FilterbankConfig};
use proptest::prelude::*;

const SR: u32 = 16_000;

fn tone(freq: f64, amp: f32, from_s: f64, to_s: f64) -> AudioBuffer {
    let n = 2 * SR as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            if (from_s..to_s).contains(&t) {
                amp * (std::f64::consts::TAU * freq * t).sin() as f32
            } else {
                0.0
            }
        })
        .collect();
    AudioBuffer::new(SR, samples).unwrap()
}

fn nearest_channel(fb: &Filterbank, f: f64) -> usize {
    (0..fb.n_channels())
        .min_by(|&a, &b| {
            let d = |k: usize| (fb.centers[k].ln() - f.ln()).abs();
            d(a).total_cmp(&d(b))
        })
        .unwrap()
}

fn loudest_channel(spec: &mirrornet::spectro::AuditorySpectrogram) -> usize {
    let means = spec.channel_means();
    (0..means.len()).max_by(|&a, &b| means[a].total_cmp(&means[b])).unwrap()
}

#[test]
fn paper_shape_for_two_seconds() {
    let fb = Filterbank::new(&FilterbankConfig::default(), SR).unwrap();
    let s = fb.compute(&tone(440.0, 0.5, 0.0, 2.0)).unwrap();
    assert_eq!(s.shape(), (128, 250));
    assert!(s.values.iter().all(|v| v.is_finite() && *v >= 0.0));
}

#[test]
fn a440_lands_in_its_channel() {
    let fb = Filterbank::new(&FilterbankConfig::default(), SR).unwrap();
    let s = fb.compute(&tone(440.0, 0.5, 0.0, 2.0)).unwrap();
    let got = loudest_channel(&s);
    let want = nearest_channel(&fb, 440.0);
    assert!(got.abs_diff(want) <= 1, "channel {got}, expected {want}");
}

#[test]
fn burst_is_localized_in_time() {
    let fb = Filterbank::new(&FilterbankConfig::default(), SR).unwrap();
    let s = fb.compute(&tone(1000.0, 0.5, 0.8, 1.2)).unwrap();
    let e = s.frame_energy();
    let hop = 2.0 / 250.0;
    for (f, v) in e.iter().enumerate() {
        let centre = (f as f64 + 0.5) * hop;
        if !(0.8 - 2.0 * hop..1.2 + 2.0 * hop).contains(&centre) {
            assert_eq!(*v, 0.0, "frame {f} at {centre:.3} s");
        }
        if (0.8 + 2.0 * hop..1.2 - 2.0 * hop).contains(&centre) {
            assert!(*v > 0.0, "frame {f} at {centre:.3} s");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tone_channel_within_one(freq in 150.0f64..6000.0) {
        let cfg = FilterbankConfig { n_channels: 32, frames_per_clip: 50, ..Default::default() };
        let fb = Filterbank::new(&cfg, SR).unwrap();
        let s = fb.compute(&tone(freq, 0.5, 0.0, 2.0)).unwrap();
        let got = loudest_channel(&s);
        let want = nearest_channel(&fb, freq);
        prop_assert!(got.abs_diff(want) <= 1, "{freq} Hz: channel {got}, expected {want}");
    }

    #[test]
    fn louder_is_never_smaller(freq in 150.0f64..6000.0, a in 0.01f32..0.5, gain in 1.0f32..2.0) {
        let cfg = FilterbankConfig { n_channels: 32, frames_per_clip: 50, ..Default::default() };
        let fb = Filterbank::new(&cfg, SR).unwrap();
        let quiet = fb.compute(&tone(freq, a, 0.0, 2.0)).unwrap();
        let loud = fb.compute(&tone(freq, a * gain, 0.0, 2.0)).unwrap();
        for (q, l) in quiet.values.iter().zip(&loud.values) {
            prop_assert!(l + 1e-12 >= *q);
        }
    }
}
