use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{fit_length, read_wav, resample_linear, write_wav_with_comment};
use crate::error::{Error, Result};
use crate::exec::{self, derive_seed, Execution};
use crate::plant::{
    clip_len, AudioBuffer, MelodyParams, NoteParams, Plant, FIXED_CONTROLS, N_CONTROLS, N_MODELED,
    PARAM_NAMES,
};
use crate::spectro::{AuditorySpectrogram, Filterbank};

/// Where a dataset's audio came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Seven sampled controls, vibrato fixed.
    Set1,
    /// All ten controls sampled.
    Set2,
    /// Foreign audio with no ground truth.
    External,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Set1 => "set1",
            Provenance::Set2 => "set2",
            Provenance::External => "external",
        }
    }

    /// Number of controls drawn at random per note.
    pub fn sampled_controls(&self) -> usize {
        match self {
            Provenance::Set1 => N_MODELED,
            Provenance::Set2 => N_CONTROLS,
            Provenance::External => 0,
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "set1" => Ok(Provenance::Set1),
            "set2" => Ok(Provenance::Set2),
            "external" => Ok(Provenance::External),
            _ => Err(Error::Config(format!("unknown provenance {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    /// Seed stream, so train and test items never share a seed.
    fn stream(&self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataItem {
    /// Stable identifier; for generated items it encodes the item seed.
    pub id: String,
    pub params: Option<MelodyParams>,
    pub audio: AudioBuffer,
    pub spectrogram: AuditorySpectrogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub provenance: Provenance,
    pub seed: u64,
    pub items: Vec<DataItem>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn spectrograms(&self) -> Vec<&AuditorySpectrogram> {
        self.items.iter().map(|i| &i.spectrogram).collect()
    }

    /// Owned copies of the spectrograms, as the trainer expects.
    pub fn corpus(&self) -> Vec<AuditorySpectrogram> {
        self.items.iter().map(|i| i.spectrogram.clone()).collect()
    }
}

/// Sizes and geometry for a generated train/test pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub n_notes: usize,
    pub total_duration: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("train and test counts must be at least 1".into()));
        }
        if self.n_notes == 0 {
            return Err(Error::Config("melodies need at least one note".into()));
        }
        Ok(())
    }
}

/// Draws one melody: the first `sampled` controls uniform in `[0, 1]`, the
/// rest at [`FIXED_CONTROLS`].
pub fn sample_melody<R: Rng>(rng: &mut R, sampled: usize, n_notes: usize, total_duration: f64) -> Result<MelodyParams> {
    let notes = (0..n_notes)
        .map(|_| {
            let mut v = FIXED_CONTROLS;
            for x in v.iter_mut().take(sampled) {
                *x = rng.gen::<f64>();
            }
            NoteParams::new(v)
        })
        .collect::<Result<Vec<_>>>()?;
    MelodyParams::new(notes, total_duration)
}

fn item_seed(seed: u64, split: Split, index: usize) -> u64 {
    derive_seed(seed, split.stream(), index as u64)
}

fn item_id(split: Split, index: usize, item_seed: u64) -> String {
    format!("{}-{index:04}-{item_seed:016x}", split.as_str())
}

/// Renders one split of a generated set.
pub fn generate_split(
    provenance: Provenance,
    split: Split,
    count: usize,
    spec: &GenSpec,
    plant: &dyn Plant,
    fb: &Filterbank,
    exec: Execution,
) -> Result<Dataset> {
    let sampled = provenance.sampled_controls();
    if sampled == 0 {
        return Err(Error::Config("external data cannot be generated from a plant".into()));
    }
    let items = exec::map_range(count, exec, |i| -> Result<DataItem> {
        let s = item_seed(spec.seed, split, i);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let params = sample_melody(&mut rng, sampled, spec.n_notes, spec.total_duration)?;
        let audio = plant.render(&params).map_err(|e| Error::Plant {
            index: i,
            reason: e.to_string(),
        })?;
        let spectrogram = fb.compute(&audio)?;
        Ok(DataItem {
            id: item_id(split, i, s),
            params: Some(params),
            audio,
            spectrogram,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        split,
        provenance,
        seed: spec.seed,
        items,
    })
}

/// Seven-control melodies with the vibrato triple held fixed.
pub fn generate_set1(spec: &GenSpec, plant: &dyn Plant, fb: &Filterbank, exec: Execution) -> Result<(Dataset, Dataset)> {
    generate_pair(Provenance::Set1, spec, plant, fb, exec)
}

/// Melodies with all ten controls sampled.
pub fn generate_set2(spec: &GenSpec, plant: &dyn Plant, fb: &Filterbank, exec: Execution) -> Result<(Dataset, Dataset)> {
    generate_pair(Provenance::Set2, spec, plant, fb, exec)
}

fn generate_pair(
    provenance: Provenance,
    spec: &GenSpec,
    plant: &dyn Plant,
    fb: &Filterbank,
    exec: Execution,
) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let train = generate_split(provenance, Split::Train, spec.n_train, spec, plant, fb, exec)?;
    let test = generate_split(provenance, Split::Test, spec.n_test, spec, plant, fb, exec)?;
    Ok((train, test))
}

/// Loads every `.wav` in `dir` (sorted by name), resampled and fitted to
/// the filterbank's clip. Unreadable files are skipped with a warning.
pub fn ingest_external(dir: impl AsRef<Path>, fb: &Filterbank, split: Split, exec: Execution) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no WAV files in {}", dir.display())));
    }
    let loaded = exec::map_slice(&paths, exec, |_, p| load_external(p, fb));
    let mut items = Vec::new();
    for (p, r) in paths.iter().zip(loaded) {
        match r {
            Ok(item) => items.push(item),
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    if items.is_empty() {
        return Err(Error::Config(format!("no readable WAV files in {}", dir.display())));
    }
    Ok(Dataset {
        split,
        provenance: Provenance::External,
        seed: 0,
        items,
    })
}

fn load_external(path: &Path, fb: &Filterbank) -> Result<DataItem> {
    let mut audio = read_wav(path)?;
    if audio.sample_rate != fb.sample_rate {
        audio = resample_linear(&audio, fb.sample_rate);
    }
    if fit_length(&mut audio, fb.clip_samples) {
        log::warn!("{}: length adjusted to {} samples", path.display(), fb.clip_samples);
    }
    let spectrogram = fb.compute(&audio)?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("item")
        .to_string();
    Ok(DataItem {
        id,
        params: None,
        audio,
        spectrogram,
    })
}

/// Header written at the top of every dataset manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub config_hash: String,
    /// Free-form `key value` lines recorded verbatim (ranges, fixed
    /// controls and so on).
    pub extra: Vec<(String, String)>,
}

/// Writes `manifest`, `params.csv` (when ground truth exists), one WAV and
/// one spectrogram CSV per item.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>, header: &DatasetHeader) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut m = String::new();
    m.push_str("mirrornet-dataset 1\n");
    m.push_str(&format!("config_hash {}\n", header.config_hash));
    m.push_str(&format!("seed {}\n", ds.seed));
    m.push_str(&format!("provenance {}\n", ds.provenance));
    m.push_str(&format!("split {}\n", ds.split.as_str()));
    m.push_str(&format!(
        "fixed_controls {}\n",
        FIXED_CONTROLS.map(|v| v.to_string()).join(",")
    ));
    for (k, v) in &header.extra {
        m.push_str(&format!("{k} {v}\n"));
    }
    for it in &ds.items {
        m.push_str(&format!("item {}\n", it.id));
    }
    std::fs::write(dir.join("manifest"), m)?;

    if ds.items.iter().all(|i| i.params.is_some()) && !ds.items.is_empty() {
        let mut csv = String::from("item,note");
        for name in PARAM_NAMES {
            csv.push(',');
            csv.push_str(name);
        }
        csv.push('\n');
        for it in &ds.items {
            let p = it.params.as_ref().expect("checked above");
            for (n, row) in p.to_rows(N_CONTROLS).iter().enumerate() {
                csv.push_str(&format!("{},{n}", it.id));
                for v in row {
                    csv.push_str(&format!(",{v}"));
                }
                csv.push('\n');
            }
        }
        std::fs::write(dir.join("params.csv"), csv)?;
    }
    let stamp = format!("config_hash {} seed {}", header.config_hash, ds.seed);
    for it in &ds.items {
        write_wav_with_comment(dir.join(format!("{}.wav", it.id)), &it.audio, &stamp)?;
        let csv = format!("# {stamp}\n{}", it.spectrogram.to_csv());
        std::fs::write(dir.join(format!("{}.csv", it.id)), csv)?;
    }
    Ok(())
}

/// Reads a directory written by [`save_dataset`]. Spectrograms come from
/// the stored CSVs; the filterbank supplies channel centers and hop.
pub fn load_dataset(dir: impl AsRef<Path>, fb: &Filterbank) -> Result<(Dataset, DatasetHeader)> {
    let dir = dir.as_ref();
    let mpath = dir.join("manifest");
    let text = std::fs::read_to_string(&mpath)?;
    let mut lines = text.lines();
    if lines.next() != Some("mirrornet-dataset 1") {
        return Err(Error::parse(&mpath, "not a dataset manifest"));
    }
    let mut seed = 0;
    let mut provenance = None;
    let mut split = None;
    let mut config_hash = String::new();
    let mut ids = Vec::new();
    let mut extra = Vec::new();
    for l in lines {
        let (k, v) = l.split_once(' ').unwrap_or((l, ""));
        match k {
            "seed" => seed = v.parse().map_err(|_| Error::parse(&mpath, "bad seed"))?,
            "provenance" => provenance = Some(v.parse()?),
            "split" => split = Some(v.parse()?),
            "config_hash" => config_hash = v.to_string(),
            "item" => ids.push(v.to_string()),
            "fixed_controls" => {}
            _ => extra.push((k.to_string(), v.to_string())),
        }
    }
    let provenance: Provenance = provenance.ok_or_else(|| Error::parse(&mpath, "missing provenance"))?;
    let split = split.ok_or_else(|| Error::parse(&mpath, "missing split"))?;

    let mut params: std::collections::HashMap<String, Vec<Vec<f64>>> = Default::default();
    let ppath = dir.join("params.csv");
    if ppath.exists() {
        let text = std::fs::read_to_string(&ppath)?;
        for (ln, l) in text.lines().enumerate().skip(1) {
            let mut f = l.split(',');
            let id = f.next().unwrap_or_default().to_string();
            let _note = f.next();
            let row = f
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(&ppath, format!("line {}: bad number", ln + 1)))?;
            params.entry(id).or_default().push(row);
        }
    }

    let duration = fb.config.clip_duration;
    let items = ids
        .into_iter()
        .map(|id| -> Result<DataItem> {
            let mut audio = read_wav(dir.join(format!("{id}.wav")))?;
            fit_length(&mut audio, clip_len(fb.sample_rate, duration));
            let spectrogram =
                AuditorySpectrogram::read_csv(dir.join(format!("{id}.csv")), fb.centers.clone(), fb.hop)?;
            let params = match params.remove(&id) {
                Some(rows) => Some(MelodyParams::from_rows(&rows, duration)?),
                None => None,
            };
            Ok(DataItem {
                id,
                params,
                audio,
                spectrogram,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        Dataset {
            split,
            provenance,
            seed,
            items,
        },
        DatasetHeader { config_hash, extra },
    ))
}
