use std::collections::HashSet;

use mirrornet::audio::{read_wav_comment, write_wav};
use mirrornet::exec::Execution;
use mirrornet::harness::{
    generate_piano, generate_set1, generate_set2, ingest_external, load_dataset, save_dataset, Dataset,
    DatasetHeader, GenSpec, Provenance, Split,
};
use mirrornet::plant::{AudioBuffer, BuiltinPlant, FIXED_CONTROLS};
use mirrornet::spectro::{Filterbank, FilterbankConfig};

fn tiny_fb() -> Filterbank {
    let cfg = FilterbankConfig {
        n_channels: 32,
        frames_per_clip: 50,
        ..Default::default()
    };
    Filterbank::new(&cfg, 16_000).unwrap()
}

fn spec(seed: u64) -> GenSpec {
    GenSpec {
        n_train: 12,
        n_test: 4,
        n_notes: 2,
        total_duration: 2.0,
        seed,
    }
}

fn rows(ds: &Dataset) -> Vec<[f64; 10]> {
    ds.items
        .iter()
        .flat_map(|i| i.params.as_ref().unwrap().notes.iter().map(|n| n.to_array()))
        .collect()
}

#[test]
fn same_seed_same_bits_any_execution() {
    let fb = tiny_fb();
    let plant = BuiltinPlant::default();
    let (a, b) = generate_set1(&spec(5), &plant, &fb, Execution::Parallel).unwrap();
    let (c, d) = generate_set1(&spec(5), &plant, &fb, Execution::Sequential).unwrap();
    assert_eq!(a.items, c.items);
    assert_eq!(b.items, d.items);
    let (e, _) = generate_set1(&spec(6), &plant, &fb, Execution::Parallel).unwrap();
    assert_ne!(a.items[0].params, e.items[0].params);
}

#[test]
fn splits_do_not_overlap() {
    let fb = tiny_fb();
    let (train, test) = generate_set2(&spec(1), &BuiltinPlant::default(), &fb, Execution::Parallel).unwrap();
    let ids: HashSet<&str> = train.items.iter().map(|i| i.id.as_str()).collect();
    assert!(test.items.iter().all(|i| !ids.contains(i.id.as_str())));
    let notes: HashSet<[u64; 10]> = rows(&train).iter().map(|r| r.map(f64::to_bits)).collect();
    assert!(rows(&test).iter().all(|r| !notes.contains(&r.map(f64::to_bits))));
    assert_eq!(train.len(), 12);
    assert_eq!(test.len(), 4);
}

#[test]
fn set1_fixes_vibrato_and_set2_samples_it() {
    let fb = tiny_fb();
    let plant = BuiltinPlant::default();
    let (s1, _) = generate_set1(&spec(2), &plant, &fb, Execution::Parallel).unwrap();
    for r in rows(&s1) {
        assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(r[7..], FIXED_CONTROLS[7..]);
    }
    let (s2, _) = generate_set2(&spec(2), &plant, &fb, Execution::Parallel).unwrap();
    let r2 = rows(&s2);
    for k in 7..10 {
        let col: Vec<f64> = r2.iter().map(|r| r[k]).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
        assert!(var > 0.0);
    }
}

#[test]
fn save_and_load_round_trip() {
    let fb = tiny_fb();
    let (train, _) = generate_set2(&spec(3), &BuiltinPlant::default(), &fb, Execution::Parallel).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let header = DatasetHeader {
        config_hash: "abc123".into(),
        extra: vec![("note".into(), "hello world".into())],
    };
    save_dataset(&train, dir.path(), &header).unwrap();
    let (back, h) = load_dataset(dir.path(), &fb).unwrap();
    assert_eq!(h, header);
    assert_eq!(back.provenance, Provenance::Set2);
    assert_eq!(back.split, Split::Train);
    assert_eq!(back.seed, 3);
    assert_eq!(back.len(), train.len());
    for (a, b) in train.items.iter().zip(&back.items) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.params, b.params);
        assert_eq!(a.spectrogram.values, b.spectrogram.values);
        assert!(a.audio.samples.iter().zip(&b.audio.samples).all(|(x, y)| (x - y).abs() <= 2f32.powi(-15)));
    }
    let params = std::fs::read_to_string(dir.path().join("params.csv")).unwrap();
    assert_eq!(params.lines().next().unwrap().split(',').count(), 12);
    let wav = dir.path().join(format!("{}.wav", train.items[0].id));
    assert_eq!(read_wav_comment(wav).unwrap().unwrap(), "config_hash abc123 seed 3");
}

#[test]
fn ingest_resamples_fits_and_skips() {
    let fb = tiny_fb();
    let dir = tempfile::tempdir().unwrap();
    let n = 44_100 * 2 + 300;
    let tone: Vec<f32> = (0..n).map(|i| 0.3 * (i as f32 * 0.05).sin()).collect();
    write_wav(dir.path().join("a.wav"), &AudioBuffer::new(44_100, tone).unwrap()).unwrap();
    write_wav(dir.path().join("b.wav"), &AudioBuffer::new(16_000, vec![0.1; 16_000]).unwrap()).unwrap();
    std::fs::write(dir.path().join("c.wav"), b"not a wav").unwrap();
    std::fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
    let ds = ingest_external(dir.path(), &fb, Split::Test, Execution::Parallel).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.provenance, Provenance::External);
    for it in &ds.items {
        assert_eq!(it.audio.sample_rate, 16_000);
        assert_eq!(it.audio.len(), 32_000);
        assert_eq!(it.spectrogram.shape(), (32, 50));
        assert!(it.params.is_none());
    }

    let empty = tempfile::tempdir().unwrap();
    assert!(ingest_external(empty.path(), &fb, Split::Train, Execution::Parallel).is_err());
}

#[test]
fn piano_stand_in_is_deterministic_and_split() {
    let fb = tiny_fb();
    let a = generate_piano(5, 2, 8, Split::Train, &fb, Execution::Parallel).unwrap();
    let b = generate_piano(5, 2, 8, Split::Train, &fb, Execution::Sequential).unwrap();
    let t = generate_piano(5, 2, 8, Split::Test, &fb, Execution::Parallel).unwrap();
    assert_eq!(a.items, b.items);
    assert!(a.items.iter().zip(&t.items).all(|(x, y)| x.id != y.id && x.audio != y.audio));
    assert!(a.items.iter().all(|i| i.params.is_none() && i.audio.peak() <= 1.0));
}
