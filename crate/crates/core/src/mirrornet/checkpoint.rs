//! Checkpoint files.
//!
//! A text manifest, one record per line and terminated by a line reading
//! `end`, followed by the tensors it lists as little-endian `f64`, in
//! manifest order and without padding.
//!
//! ```text
//! mirrornet-checkpoint 1
//! config_hash 3f9a…
//! seed 7
//! outer_iter 12
//! norm_scale 0.5
//! rng_word_pos 123456
//! model {"n_params":7,…}
//! optimizer enc {"config":{…},"schedule":{…},"lr":0.01,"t":60}
//! optimizer dec {…}
//! history e_c 0.1 0.09 …
//! history e_d 0.2 0.15 …
//! history iter 0.15:0.09 …
//! log 0,0,decoder,,0.2,0.01,0.001
//! tensor enc.c1.weight 32,32,1
//! …
//! end
//! ```
//!
//! Optimizer moments are stored as `enc_opt.m.<i>` / `enc_opt.v.<i>` (and
//! likewise for the decoder) once the optimizer has taken a step.

use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LogRow, MirrorNet, ModelConfig, TrainState};
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, LrSchedule, Tensor};

const MAGIC: &str = "mirrornet-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub seed: u64,
    pub outer_iter: usize,
    pub norm_scale: f64,
}

/// A decoded checkpoint: its header plus a resumable training state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct OptimRecord {
    config: AdamConfig,
    schedule: LrSchedule,
    lr: f64,
    t: u64,
}

fn optim_record(o: &Adam) -> OptimRecord {
    OptimRecord {
        config: o.config,
        schedule: o.schedule,
        lr: o.lr,
        t: o.t,
    }
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Config(e.to_string()))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ")
}

fn moment_tensors<'a>(
    prefix: &str,
    opt: &'a Adam,
    params: &[(String, &Tensor)],
) -> Vec<(String, Vec<usize>, &'a [f64])> {
    let mut out = Vec::new();
    for (i, ((m, v), (_, p))) in opt.moments().iter().zip(params).enumerate() {
        out.push((format!("{prefix}.m.{i}"), p.shape().to_vec(), m.as_slice()));
        out.push((format!("{prefix}.v.{i}"), p.shape().to_vec(), v.as_slice()));
    }
    out
}

/// Serializes a training state.
pub fn encode_checkpoint(state: &TrainState, config_hash: &str) -> Result<Vec<u8>> {
    let net = &state.net;
    let mut head = String::new();
    let mut line = |s: String| {
        head.push_str(&s);
        head.push('\n');
    };
    line(MAGIC.to_string());
    line(format!("config_hash {config_hash}"));
    line(format!("seed {}", state.seed));
    line(format!("outer_iter {}", state.outer_iter));
    line(format!("norm_scale {}", net.norm_scale));
    line(format!("rng_word_pos {}", state.rng.get_word_pos()));
    line(format!("model {}", json(&net.config)?));
    line(format!("optimizer enc {}", json(&optim_record(&net.enc_opt))?));
    line(format!("optimizer dec {}", json(&optim_record(&net.dec_opt))?));
    line(format!("history e_c {}", join(&state.encoder_losses)).trim_end().to_string());
    line(format!("history e_d {}", join(&state.decoder_losses)).trim_end().to_string());
    let iters: Vec<String> = state
        .iteration_losses
        .iter()
        .map(|(d, c)| format!("{d}:{c}"))
        .collect();
    line(format!("history iter {}", iters.join(" ")).trim_end().to_string());
    for r in &state.log {
        line(format!("log {}", r.to_csv()));
    }

    let enc = net.encoder.named_params();
    let dec = net.decoder.named_params();
    let mut tensors: Vec<(String, Vec<usize>, &[f64])> = enc
        .iter()
        .chain(dec.iter())
        .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data()))
        .collect();
    tensors.extend(moment_tensors("enc_opt", &net.enc_opt, &enc));
    tensors.extend(moment_tensors("dec_opt", &net.dec_opt, &dec));
    for (name, shape, _) in &tensors {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        line(format!("tensor {name} {}", dims.join(",")));
    }
    line("end".to_string());

    let mut out = head.into_bytes();
    for (_, _, data) in &tensors {
        for &v in *data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_checkpoint(path: impl AsRef<Path>, state: &TrainState, config_hash: &str) -> Result<()> {
    let bytes = encode_checkpoint(state, config_hash)?;
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    drop(f);
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Parse { reason, .. } => Error::parse(path, reason),
        other => other,
    })
}

fn bad(reason: impl Into<String>) -> Error {
    Error::parse("<checkpoint>", reason.into())
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| bad(format!("bad {what}: {s:?}")))
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace().map(|t| parse_num(t, "history value")).collect()
}

/// Parses bytes produced by [`encode_checkpoint`].
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let marker = b"\nend\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("manifest is not terminated by `end`"))?;
    let head = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("manifest is not UTF-8"))?;
    let mut body = &bytes[split + marker.len()..];

    let mut lines = head.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("not a mirrornet checkpoint"));
    }
    let mut config_hash = None;
    let mut seed = None;
    let mut outer_iter = None;
    let mut norm_scale = None;
    let mut word_pos: Option<u128> = None;
    let mut model: Option<ModelConfig> = None;
    let mut enc_opt: Option<OptimRecord> = None;
    let mut dec_opt: Option<OptimRecord> = None;
    let mut e_c = Vec::new();
    let mut e_d = Vec::new();
    let mut iters = Vec::new();
    let mut log = Vec::new();
    let mut tensors: Vec<(String, Vec<usize>)> = Vec::new();
    for l in lines {
        let (key, rest) = l.split_once(' ').unwrap_or((l, ""));
        match key {
            "config_hash" => config_hash = Some(rest.to_string()),
            "seed" => seed = Some(parse_num(rest, "seed")?),
            "outer_iter" => outer_iter = Some(parse_num(rest, "outer_iter")?),
            "norm_scale" => norm_scale = Some(parse_num(rest, "norm_scale")?),
            "rng_word_pos" => word_pos = Some(parse_num(rest, "rng_word_pos")?),
            "model" => {
                model = Some(serde_json::from_str(rest).map_err(|e| bad(format!("model: {e}")))?)
            }
            "optimizer" => {
                let (which, js) = rest.split_once(' ').ok_or_else(|| bad("bad optimizer line"))?;
                let rec: OptimRecord =
                    serde_json::from_str(js).map_err(|e| bad(format!("optimizer: {e}")))?;
                match which {
                    "enc" => enc_opt = Some(rec),
                    "dec" => dec_opt = Some(rec),
                    _ => return Err(bad(format!("unknown optimizer {which:?}"))),
                }
            }
            "history" => {
                let (which, vals) = rest.split_once(' ').unwrap_or((rest, ""));
                match which {
                    "e_c" => e_c = parse_list(vals)?,
                    "e_d" => e_d = parse_list(vals)?,
                    "iter" => {
                        for pair in vals.split_whitespace() {
                            let (d, c) = pair.split_once(':').ok_or_else(|| bad("bad iteration pair"))?;
                            iters.push((parse_num(d, "e_d")?, parse_num(c, "e_c")?));
                        }
                    }
                    _ => return Err(bad(format!("unknown history {which:?}"))),
                }
            }
            "log" => log.push(LogRow::from_csv(rest).ok_or_else(|| bad(format!("bad log row {rest:?}")))?),
            "tensor" => {
                let (name, dims) = rest.split_once(' ').ok_or_else(|| bad("bad tensor line"))?;
                let shape = dims
                    .split(',')
                    .map(|d| parse_num(d, "dimension"))
                    .collect::<Result<Vec<usize>>>()?;
                tensors.push((name.to_string(), shape));
            }
            _ => return Err(bad(format!("unknown manifest key {key:?}"))),
        }
    }
    let missing = |k: &str| bad(format!("manifest lacks `{k}`"));
    let model = model.ok_or_else(|| missing("model"))?;
    let enc_rec = enc_opt.ok_or_else(|| missing("optimizer enc"))?;
    let dec_rec = dec_opt.ok_or_else(|| missing("optimizer dec"))?;
    let seed: u64 = seed.ok_or_else(|| missing("seed"))?;
    let meta = CheckpointMeta {
        config_hash: config_hash.ok_or_else(|| missing("config_hash"))?,
        seed,
        outer_iter: outer_iter.ok_or_else(|| missing("outer_iter"))?,
        norm_scale: norm_scale.ok_or_else(|| missing("norm_scale"))?,
    };

    let mut arrays = std::collections::HashMap::new();
    for (name, shape) in tensors {
        let n: usize = shape.iter().product();
        if body.len() < 8 * n {
            return Err(bad(format!("data for {name} is truncated")));
        }
        let data: Vec<f64> = body[..8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        body = &body[8 * n..];
        arrays.insert(name, Tensor::new(shape, data)?);
    }
    if !body.is_empty() {
        return Err(bad(format!("{} trailing bytes after tensor data", body.len())));
    }

    // Topology comes from the model config; weights are then overwritten.
    let mut init = ChaCha8Rng::seed_from_u64(0);
    let mut net = MirrorNet::new(model, enc_rec.config.lr, dec_rec.config.lr, enc_rec.schedule, &mut init)?;
    net.dec_opt.schedule = dec_rec.schedule;
    net.norm_scale = meta.norm_scale;
    let mut take = |name: &str, into: &mut Tensor| -> Result<()> {
        let t = arrays
            .remove(name)
            .ok_or_else(|| bad(format!("missing tensor {name}")))?;
        if t.shape() != into.shape() {
            return Err(bad(format!(
                "tensor {name} has shape {:?}, model expects {:?}",
                t.shape(),
                into.shape()
            )));
        }
        into.data_mut().copy_from_slice(t.data());
        Ok(())
    };
    for (name, t) in net.encoder.named_params_mut() {
        take(&name, t)?;
    }
    for (name, t) in net.decoder.named_params_mut() {
        take(&name, t)?;
    }
    let mut moments = |prefix: &str, shapes: Vec<Vec<usize>>| -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        if !arrays.contains_key(&format!("{prefix}.m.0")) {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for (i, shape) in shapes.into_iter().enumerate() {
            let mut get = |k: &str| -> Result<Vec<f64>> {
                let name = format!("{prefix}.{k}.{i}");
                let t = arrays
                    .remove(&name)
                    .ok_or_else(|| bad(format!("missing tensor {name}")))?;
                if t.shape() != shape.as_slice() {
                    return Err(bad(format!("tensor {name} has the wrong shape")));
                }
                Ok(t.into_data())
            };
            out.push((get("m")?, get("v")?));
        }
        Ok(out)
    };
    let enc_shapes = net.encoder.named_params().iter().map(|(_, t)| t.shape().to_vec()).collect();
    let dec_shapes = net.decoder.named_params().iter().map(|(_, t)| t.shape().to_vec()).collect();
    let enc_m = moments("enc_opt", enc_shapes)?;
    let dec_m = moments("dec_opt", dec_shapes)?;
    if let Some(extra) = arrays.keys().next() {
        return Err(bad(format!("unexpected tensor {extra}")));
    }
    net.enc_opt.restore(enc_rec.t, enc_rec.lr, enc_m);
    net.dec_opt.restore(dec_rec.t, dec_rec.lr, dec_m);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(word_pos.ok_or_else(|| missing("rng_word_pos"))?);
    let state = TrainState {
        net,
        encoder_losses: e_c,
        decoder_losses: e_d,
        iteration_losses: iters,
        log,
        outer_iter: meta.outer_iter,
        seed,
        rng,
    };
    Ok(Checkpoint { meta, state })
}
