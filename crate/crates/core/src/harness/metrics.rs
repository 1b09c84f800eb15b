use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{sample_melody, Dataset};
use crate::error::{Error, Result};
use crate::exec::{self, derive_seed, Execution};
use crate::mirrornet::MirrorNet;
use crate::plant::{MelodyParams, Plant, N_MODELED};
use crate::spectro::{AuditorySpectrogram, Filterbank};

/// Per-item outcome of resynthesizing an input from inferred controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEval {
    pub id: String,
    pub predicted: MelodyParams,
    /// Input vs spectrogram(plant(predicted)), on the training scale.
    pub spec_mse: f64,
    /// Input vs the rendition of a uniformly random melody.
    pub baseline_mse: f64,
    /// Mean squared error over the modeled controls, when truth exists.
    pub param_mse: Option<f64>,
}

impl ItemEval {
    pub fn beats_baseline(&self) -> bool {
        self.spec_mse < self.baseline_mse
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitEval {
    pub items: Vec<ItemEval>,
}

impl SplitEval {
    pub fn mean_spec_mse(&self) -> f64 {
        mean(self.items.iter().map(|i| i.spec_mse))
    }

    pub fn mean_baseline_mse(&self) -> f64 {
        mean(self.items.iter().map(|i| i.baseline_mse))
    }

    pub fn mean_param_mse(&self) -> Option<f64> {
        let v: Option<Vec<f64>> = self.items.iter().map(|i| i.param_mse).collect();
        v.filter(|v| !v.is_empty()).map(|v| mean(v.into_iter()))
    }

    /// Share of items whose resynthesis beats the random rendition.
    pub fn win_rate(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        self.items.iter().filter(|i| i.beats_baseline()).count() as f64 / self.items.len() as f64
    }

    /// `(predicted, truth)` rows of modeled controls, one per note.
    pub fn control_pairs(&self, ds: &Dataset) -> Result<(Vec<[f64; N_MODELED]>, Vec<[f64; N_MODELED]>)> {
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        for (e, item) in self.items.iter().zip(&ds.items) {
            let gt = item
                .params
                .as_ref()
                .ok_or_else(|| Error::Config(format!("item {} has no ground truth", item.id)))?;
            for (p, t) in e.predicted.notes.iter().zip(&gt.notes) {
                pred.push(p.modeled());
                truth.push(t.modeled());
            }
        }
        Ok((pred, truth))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Mean squared difference over the first seven controls of every note.
pub fn param_mse(predicted: &MelodyParams, truth: &MelodyParams) -> Result<f64> {
    if predicted.n_notes() != truth.n_notes() {
        return Err(Error::Shape(format!(
            "{} predicted notes against {} true notes",
            predicted.n_notes(),
            truth.n_notes()
        )));
    }
    Ok(mean(predicted.notes.iter().zip(&truth.notes).flat_map(|(p, t)| {
        let (p, t) = (p.modeled(), t.modeled());
        (0..N_MODELED).map(move |k| (p[k] - t[k]).powi(2))
    })))
}

fn scaled_mse(a: &AuditorySpectrogram, b: &AuditorySpectrogram, scale: f64) -> Result<f64> {
    Ok(a.mse(b)? * scale * scale)
}

/// Infers controls for every item, resynthesizes through `plant` and
/// scores against the input and a seeded random rendition.
pub fn evaluate_split(
    net: &MirrorNet,
    ds: &Dataset,
    plant: &dyn Plant,
    fb: &Filterbank,
    baseline_seed: u64,
    exec: Execution,
) -> Result<SplitEval> {
    let duration = fb.config.clip_duration;
    let specs = ds.spectrograms();
    let predicted = net.infer_controls_batch(&specs, duration)?;
    let n_notes = net.config.n_notes;
    let scale = net.norm_scale;
    let items = exec::map_slice(&ds.items, exec, |i, item| -> Result<ItemEval> {
        let pred = &predicted[i];
        let resynth = fb.compute(&plant.render(pred)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(baseline_seed, 7, i as u64));
        let random = sample_melody(&mut rng, N_MODELED, n_notes, duration)?;
        let random_spec = fb.compute(&plant.render(&random)?)?;
        Ok(ItemEval {
            id: item.id.clone(),
            predicted: pred.clone(),
            spec_mse: scaled_mse(&item.spectrogram, &resynth, scale)?,
            baseline_mse: scaled_mse(&item.spectrogram, &random_spec, scale)?,
            param_mse: match &item.params {
                Some(t) => Some(param_mse(pred, t)?),
                None => None,
            },
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(SplitEval { items })
}

/// Table columns for one trained model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub spec_train: f64,
    pub spec_test: f64,
    pub param_train: Option<f64>,
    pub param_test: Option<f64>,
}

impl RunMetrics {
    pub fn from_splits(train: &SplitEval, test: &SplitEval) -> Self {
        Self {
            spec_train: train.mean_spec_mse(),
            spec_test: test.mean_spec_mse(),
            param_train: train.mean_param_mse(),
            param_test: test.mean_param_mse(),
        }
    }
}

/// Mean and variance over runs of each column.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub config_hash: String,
    pub seed: u64,
    pub provenance: String,
    pub runs: Vec<RunMetrics>,
}

pub const REPORT_COLUMNS: [&str; 4] = [
    "Input vs Plant(learned) Train",
    "Input vs Plant(learned) Test",
    "Parameter-Train",
    "Parameter-Test",
];

/// Mean and unbiased variance; the variance of a single run is 0.
pub fn mean_variance(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, var)
}

impl MetricsReport {
    /// `(mean, variance)` per column; `None` where no ground truth exists.
    pub fn summary(&self) -> [Option<(f64, f64)>; 4] {
        let col = |f: &dyn Fn(&RunMetrics) -> Option<f64>| {
            let v: Option<Vec<f64>> = self.runs.iter().map(f).collect();
            v.filter(|v| !v.is_empty()).map(|v| mean_variance(&v))
        };
        [
            col(&|r| Some(r.spec_train)),
            col(&|r| Some(r.spec_test)),
            col(&|r| r.param_train),
            col(&|r| r.param_test),
        ]
    }

    fn cell(v: Option<(f64, f64)>) -> (String, String) {
        match v {
            Some((m, var)) => (format!("{m:.6e}"), format!("{var:.6e}")),
            None => ("n/a".into(), "n/a".into()),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# config_hash {}\n# seed {}\n# provenance {}\n# spectrogram MSE on the normalized training scale\n",
            self.config_hash, self.seed, self.provenance
        );
        s.push_str("statistic");
        for c in REPORT_COLUMNS {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        let cells: Vec<(String, String)> = self.summary().into_iter().map(Self::cell).collect();
        s.push_str("mean");
        for (m, _) in &cells {
            s.push(',');
            s.push_str(m);
        }
        s.push_str("\nvariance");
        for (_, v) in &cells {
            s.push(',');
            s.push_str(v);
        }
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let cells: Vec<(String, String)> = self.summary().into_iter().map(Self::cell).collect();
        let width = REPORT_COLUMNS.iter().map(|c| c.len()).max().unwrap_or(0).max(27);
        let mut s = format!(
            "Mean and variance of MSE across {} training run(s)\n\
             config hash {}, seed {}, data {}\n\
             Spectrogram MSE is computed on the normalized training scale.\n\n",
            self.runs.len(),
            self.config_hash,
            self.seed,
            self.provenance
        );
        s.push_str(&format!("{:<10}", ""));
        for c in REPORT_COLUMNS {
            s.push_str(&format!(" | {c:<width$}"));
        }
        s.push('\n');
        for (label, pick) in [("mean", 0), ("variance", 1)] {
            s.push_str(&format!("{label:<10}"));
            for c in &cells {
                let v = if pick == 0 { &c.0 } else { &c.1 };
                s.push_str(&format!(" | {v:<width$}"));
            }
            s.push('\n');
        }
        s
    }
}
