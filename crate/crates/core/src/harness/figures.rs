//! Spectrogram panels for visual inspection.
//!
//! Per item, up to four panels:
//!
//! - `a_input`: the input;
//! - `b_decoder_truth`: the decoder fed the true controls (generated data only);
//! - `c_decoder_output`: the decoder fed the encoder's controls;
//! - `d_plant_learned`: the plant fed the encoder's controls.
//!
//! All panels of an item share one min-max grey scale, so brightness is
//! comparable across them. Each panel is written as a binary PGM and a CSV.

use std::path::{Path, PathBuf};

use super::dataset::DataItem;
use crate::error::Result;
use crate::mirrornet::{latent_batch, MirrorNet};
use crate::plant::Plant;
use crate::spectro::{AuditorySpectrogram, Filterbank};

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub name: &'static str,
    pub spectrogram: AuditorySpectrogram,
}

/// Panels for one item, all on the training scale.
pub fn item_panels(net: &MirrorNet, item: &DataItem, plant: &dyn Plant, fb: &Filterbank) -> Result<Vec<Panel>> {
    let input = item.spectrogram.scaled(net.norm_scale);
    let x = net.scaled_batch(&[&item.spectrogram])?;
    let z = net.encode(&x)?;
    let duration = fb.config.clip_duration;
    let learned = net.infer_controls(&item.spectrogram, duration)?;
    let plant_learned = fb.compute(&plant.render(&learned)?)?.scaled(net.norm_scale);

    let mut panels = vec![Panel {
        name: "a_input",
        spectrogram: input.clone(),
    }];
    if let Some(truth) = &item.params {
        let zt = latent_batch(&[truth], net.config.n_params)?;
        let dec_truth = net.decode_to_spectrograms(&zt, &input)?.remove(0);
        let dec_out = net.decode_to_spectrograms(&z, &input)?.remove(0);
        panels.push(Panel {
            name: "b_decoder_truth",
            spectrogram: dec_truth,
        });
        panels.push(Panel {
            name: "c_decoder_output",
            spectrogram: dec_out,
        });
    }
    panels.push(Panel {
        name: "d_plant_learned",
        spectrogram: plant_learned,
    });
    Ok(panels)
}

/// Writes every panel of every item into `out_dir` and returns the paths.
/// `comments` (config hash, seed, …) go into each file's header.
pub fn emit_figures(
    net: &MirrorNet,
    items: &[DataItem],
    plant: &dyn Plant,
    fb: &Filterbank,
    out_dir: impl AsRef<Path>,
    comments: &[String],
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for item in items {
        let panels = item_panels(net, item, plant, fb)?;
        let (lo, hi) = panels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let (a, b) = p.spectrogram.min_max();
            (lo.min(a), hi.max(b))
        });
        for p in &panels {
            let mut c = comments.to_vec();
            c.push(format!("item {} panel {} scale {lo} {hi}", item.id, p.name));
            let base = out_dir.join(format!("{}_{}", item.id, p.name));
            let pgm = base.with_extension("pgm");
            std::fs::write(&pgm, p.spectrogram.to_pgm(lo, hi, &c))?;
            let csv = base.with_extension("csv");
            let mut text: String = c.iter().map(|l| format!("# {l}\n")).collect();
            text.push_str(&p.spectrogram.to_csv());
            std::fs::write(&csv, text)?;
            written.push(pgm);
            written.push(csv);
        }
    }
    Ok(written)
}
