mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mirrornet::audio::{fit_length, read_wav, resample_linear, write_wav_with_comment};
use mirrornet::exec::Execution;
use mirrornet::harness::{
    emit_figures, evaluate_split, generate_piano, generate_set1, generate_set2, ingest_external,
    load_dataset, save_dataset, stat_tests, Dataset, DatasetHeader, GenSpec, MetricsReport,
    RunMetrics, Split, SplitEval,
};
use mirrornet::mirrornet::{read_checkpoint, write_checkpoint, Checkpoint, TrainState, Trainer};
use mirrornet::plant::{clip_len, BuiltinPlant, ExternalPlant, MelodyParams, Plant, AudioBuffer, N_MODELED};
use mirrornet::spectro::{AuditorySpectrogram, Filterbank};
use mirrornet::table::{format_params_csv, read_params_csv};

use config::{Profile, RunConfig};

/// Learns the controls of a black-box synthesizer from auditory spectrograms.
#[derive(Debug, Parser)]
#[command(name = "mirrornet", version)]
struct Cli {
    /// Base seed for data generation, initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file overlaid on the profile defaults. Unknown keys are errors.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in size profile.
    #[arg(long, global = true, value_enum, default_value_t = Profile::Tiny)]
    profile: Profile,
    /// Run every batch helper on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Corpus {
    /// First 7 controls sampled, the rest fixed.
    Set1,
    /// All 10 controls sampled.
    Set2,
    /// WAV directories, or the piano-like stand-in when none are given.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate or ingest a corpus into DIR/train and DIR/test.
    GenData(GenDataArgs),
    /// Train a model on DIR/train.
    Train(TrainArgs),
    /// Score checkpoints on DIR/train and DIR/test.
    Eval(EvalArgs),
    /// Infer controls for a WAV and resynthesize it.
    Infer(InferArgs),
    /// Render a parameter CSV through the plant.
    Synth(SynthArgs),
    /// Compute the auditory spectrogram of a WAV.
    Spectrogram(SpectrogramArgs),
    /// Write spectrogram panels for a few items.
    Figures(FiguresArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(value_enum)]
    corpus: Corpus,
    #[arg(long)]
    out: PathBuf,
    /// Training WAVs for `external`.
    #[arg(long)]
    wav_dir: Option<PathBuf>,
    /// Test WAVs for `external`.
    #[arg(long)]
    test_wav_dir: Option<PathBuf>,
    /// Overrides `data.n_train`.
    #[arg(long)]
    n_train: Option<usize>,
    /// Overrides `data.n_test`.
    #[arg(long)]
    n_test: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    /// Run directory; receives config.toml, checkpoints and train_log.csv.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `training.outer_iterations`.
    #[arg(long)]
    iterations: Option<usize>,
    /// Continue from OUT/checkpoint.ckpt.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// One checkpoint per training run; repeat to aggregate runs.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    wav: PathBuf,
    #[arg(long)]
    params_out: PathBuf,
    /// Resynthesized audio.
    #[arg(long)]
    wav_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// One row per note, normalized controls, optional header.
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SpectrogramArgs {
    #[arg(long)]
    wav: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FiguresArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Number of leading items to draw.
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let g = Globals {
        seed: cli.seed,
        config: cli.config,
        profile: cli.profile,
        exec,
    };
    match cli.command {
        Command::GenData(a) => gen_data(&g, a),
        Command::Train(a) => train(&g, a),
        Command::Eval(a) => eval(&g, a),
        Command::Infer(a) => infer(&g, a),
        Command::Synth(a) => synth(&g, a),
        Command::Spectrogram(a) => spectrogram(&g, a),
        Command::Figures(a) => figures(&g, a),
    }
}

struct Globals {
    seed: Option<u64>,
    config: Option<PathBuf>,
    profile: Profile,
    exec: Execution,
}

impl Globals {
    fn run_config(&self) -> Result<RunConfig> {
        RunConfig::load(self.profile, self.config.as_deref(), self.seed)
    }

    /// The configuration a checkpoint was trained with: `--config` when
    /// given, else the config.toml of its run directory. `--seed` is
    /// ignored here; the run directory already records it.
    fn checkpoint_config(&self, ckpt: &Path) -> Result<(RunConfig, Checkpoint)> {
        let checkpoint =
            read_checkpoint(ckpt).with_context(|| format!("cannot load checkpoint {}", ckpt.display()))?;
        let cfg = match &self.config {
            Some(_) => self.run_config()?,
            None => {
                let dir = ckpt.parent().unwrap_or(Path::new("."));
                let found = [dir.join("config.toml"), dir.join("../config.toml")]
                    .into_iter()
                    .find(|p| p.is_file())
                    .ok_or_else(|| anyhow!("no config.toml next to {}; pass --config", ckpt.display()))?;
                RunConfig::load(self.profile, Some(&found), None)?
            }
        };
        if cfg.hash() != checkpoint.meta.config_hash {
            log::warn!(
                "config hash {} differs from the checkpoint's {}",
                cfg.hash(),
                checkpoint.meta.config_hash
            );
        }
        if cfg.model != checkpoint.state.net.config {
            bail!("checkpoint model does not match the configured model");
        }
        Ok((cfg, checkpoint))
    }
}

fn make_plant(cfg: &RunConfig) -> Result<Box<dyn Plant>> {
    Ok(match cfg.adapter() {
        Some(a) => Box::new(ExternalPlant::new(a)?),
        None => Box::new(BuiltinPlant::new(cfg.plant.ranges.clone(), cfg.plant.sample_rate)?),
    })
}

fn filterbank(cfg: &RunConfig) -> Result<Filterbank> {
    Ok(Filterbank::new(&cfg.spectrogram, cfg.plant.sample_rate)?)
}

fn stamp(cfg: &RunConfig) -> Vec<String> {
    vec![format!("config_hash {}", cfg.hash()), format!("seed {}", cfg.seed)]
}

fn comment_block(lines: &[String]) -> String {
    lines.iter().map(|l| format!("# {l}\n")).collect()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn load_wav(path: &Path, cfg: &RunConfig) -> Result<AudioBuffer> {
    let audio = read_wav(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut audio = resample_linear(&audio, cfg.plant.sample_rate);
    fit_length(&mut audio, clip_len(cfg.plant.sample_rate, cfg.data.total_duration));
    Ok(audio)
}

fn load_split(dir: &Path, split: Split, fb: &Filterbank) -> Result<(Dataset, DatasetHeader)> {
    let sub = dir.join(split.as_str());
    load_dataset(&sub, fb).with_context(|| format!("cannot load dataset {}", sub.display()))
}

fn gen_data(g: &Globals, a: GenDataArgs) -> Result<()> {
    let mut cfg = g.run_config()?;
    if let Some(n) = a.n_train {
        cfg.data.n_train = n;
    }
    if let Some(n) = a.n_test {
        cfg.data.n_test = n;
    }
    let fb = filterbank(&cfg)?;
    let spec = GenSpec {
        n_train: cfg.data.n_train,
        n_test: cfg.data.n_test,
        n_notes: cfg.data.n_notes,
        total_duration: cfg.data.total_duration,
        seed: cfg.seed,
    };
    spec.validate()?;
    let (train, test) = match a.corpus {
        Corpus::Set1 | Corpus::Set2 => {
            let plant = make_plant(&cfg)?;
            if a.corpus == Corpus::Set1 {
                generate_set1(&spec, plant.as_ref(), &fb, g.exec)?
            } else {
                generate_set2(&spec, plant.as_ref(), &fb, g.exec)?
            }
        }
        Corpus::External => {
            let train = match &a.wav_dir {
                Some(d) => ingest_external(d, &fb, Split::Train, g.exec)?,
                None => generate_piano(spec.n_train, spec.n_notes, spec.seed, Split::Train, &fb, g.exec)?,
            };
            let test = match (&a.test_wav_dir, &a.wav_dir) {
                (Some(d), _) => ingest_external(d, &fb, Split::Test, g.exec)?,
                (None, None) => generate_piano(spec.n_test, spec.n_notes, spec.seed, Split::Test, &fb, g.exec)?,
                (None, Some(_)) => bail!("--wav-dir needs a matching --test-wav-dir"),
            };
            (train, test)
        }
    };
    let hash = cfg.hash();
    let ranges = serde_json::to_string(&cfg.plant.ranges)?;
    let header = DatasetHeader {
        config_hash: hash.clone(),
        extra: vec![
            ("sample_rate".into(), cfg.plant.sample_rate.to_string()),
            ("total_duration".into(), cfg.data.total_duration.to_string()),
            ("ranges".into(), ranges),
        ],
    };
    for ds in [&train, &test] {
        save_dataset(ds, a.out.join(ds.split.as_str()), &header)?;
    }
    write(&a.out.join("config.toml"), cfg.to_toml())?;
    log::info!(
        "wrote {} train and {} test items to {} (config {hash})",
        train.len(),
        test.len(),
        a.out.display()
    );
    Ok(())
}

fn train(g: &Globals, a: TrainArgs) -> Result<()> {
    let mut cfg = g.run_config()?;
    if let Some(n) = a.iterations {
        cfg.training.outer_iterations = n;
    }
    cfg.validate()?;
    let hash = cfg.hash();
    let fb = filterbank(&cfg)?;
    let plant = make_plant(&cfg)?;
    let (data, header) = load_split(&a.data, Split::Train, &fb)?;
    if header.config_hash != hash {
        log::info!("dataset was generated under config {}", header.config_hash);
    }
    let corpus = data.corpus();
    let trainer = Trainer::new(plant.as_ref(), &fb, cfg.training.clone())?;

    let main_ckpt = a.out.join("checkpoint.ckpt");
    let mut state = if a.resume {
        let c = read_checkpoint(&main_ckpt)
            .with_context(|| format!("cannot resume from {}", main_ckpt.display()))?;
        if c.meta.config_hash != hash {
            bail!("checkpoint config {} does not match {hash}", c.meta.config_hash);
        }
        c.state
    } else {
        trainer.init_state(cfg.model.clone(), &corpus)?
    };
    write(&a.out.join("config.toml"), cfg.to_toml())?;

    let interval = cfg.training.checkpoint_interval;
    let ckpt_dir = a.out.join("checkpoints");
    let result = trainer.train(&mut state, &corpus, |s: &TrainState| {
        let (e_d, e_c) = s.iteration_losses.last().copied().unwrap_or((f64::NAN, f64::NAN));
        log::info!("iteration {} e_d {e_d:.6e} e_c {e_c:.6e}", s.outer_iter);
        if interval > 0 && s.outer_iter % interval == 0 {
            std::fs::create_dir_all(&ckpt_dir)?;
            write_checkpoint(ckpt_dir.join(format!("iter_{}.ckpt", s.outer_iter)), s, &hash)?;
            write_checkpoint(&main_ckpt, s, &hash)?;
        }
        Ok(())
    });
    let log = format!("{}{}", comment_block(&stamp(&cfg)), state.log_csv());
    write(&a.out.join("train_log.csv"), log)?;
    result?;
    write_checkpoint(&main_ckpt, &state, &hash)?;
    log::info!("finished after {} outer iterations", state.outer_iter);
    Ok(())
}

fn items_csv(eval: &SplitEval) -> String {
    let mut s = String::from("item,spec_mse,baseline_mse,param_mse\n");
    for it in &eval.items {
        let p = it.param_mse.map_or(String::new(), |v| v.to_string());
        s.push_str(&format!("{},{},{},{p}\n", it.id, it.spec_mse, it.baseline_mse));
    }
    s
}

fn eval(g: &Globals, a: EvalArgs) -> Result<()> {
    let mut runs = Vec::new();
    let mut first: Option<RunConfig> = None;
    let mut provenance = String::new();
    for (k, path) in a.checkpoint.iter().enumerate() {
        let (cfg, ckpt) = g.checkpoint_config(path)?;
        let fb = filterbank(&cfg)?;
        let plant = make_plant(&cfg)?;
        let (train, _) = load_split(&a.data, Split::Train, &fb)?;
        let (test, _) = load_split(&a.data, Split::Test, &fb)?;
        provenance = test.provenance.to_string();
        let net = &ckpt.state.net;
        let e_train = evaluate_split(net, &train, plant.as_ref(), &fb, cfg.seed, g.exec)?;
        let e_test = evaluate_split(net, &test, plant.as_ref(), &fb, cfg.seed, g.exec)?;
        let dir = a.out.join(format!("run{k}"));
        let head = comment_block(&[
            format!("config_hash {}", ckpt.meta.config_hash),
            format!("seed {}", ckpt.meta.seed),
            format!("checkpoint {}", path.display()),
        ]);
        write(&dir.join("items_train.csv"), format!("{head}{}", items_csv(&e_train)))?;
        write(&dir.join("items_test.csv"), format!("{head}{}", items_csv(&e_test)))?;
        if test.items.iter().all(|i| i.params.is_some()) {
            let (pred, truth) = e_test.control_pairs(&test)?;
            let st = stat_tests(&pred, &truth, cfg.seed)?;
            write(&dir.join("stats.csv"), format!("{head}{}", st.to_csv()))?;
            log::info!(
                "run {k}: {}/{N_MODELED} parameters better than chance",
                st.rejections()
            );
        }
        log::info!(
            "run {k}: test spectrogram MSE {:.4e}, beats random on {:.0}% of test items",
            e_test.mean_spec_mse(),
            100.0 * e_test.win_rate()
        );
        runs.push(RunMetrics::from_splits(&e_train, &e_test));
        first.get_or_insert(cfg);
    }
    let cfg = first.expect("at least one checkpoint");
    let report = MetricsReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        provenance,
        runs,
    };
    write(&a.out.join("report.csv"), report.to_csv())?;
    write(&a.out.join("report.txt"), report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}

fn infer(g: &Globals, a: InferArgs) -> Result<()> {
    let (cfg, ckpt) = g.checkpoint_config(&a.checkpoint)?;
    let fb = filterbank(&cfg)?;
    let audio = load_wav(&a.wav, &cfg)?;
    let spec = fb.compute(&audio)?;
    let melody = ckpt.state.net.infer_controls(&spec, cfg.data.total_duration)?;
    let rows = melody.to_rows(N_MODELED);
    let mut lines = stamp(&cfg);
    lines.push(format!("source {}", a.wav.display()));
    write(&a.params_out, format!("{}{}", comment_block(&lines), format_params_csv(&rows, true)?))?;
    if let Some(out) = &a.wav_out {
        let plant = make_plant(&cfg)?;
        let rendered = plant.render(&melody)?;
        write_wav_with_comment(out, &rendered, &lines.join(" "))?;
    }
    Ok(())
}

fn synth(g: &Globals, a: SynthArgs) -> Result<()> {
    let cfg = g.run_config()?;
    let rows = read_params_csv(&a.params).with_context(|| format!("cannot read {}", a.params.display()))?;
    let melody = MelodyParams::from_rows(&rows, cfg.data.total_duration)?;
    let audio = make_plant(&cfg)?.render(&melody)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_wav_with_comment(&a.out, &audio, &stamp(&cfg).join(" "))?;
    Ok(())
}

fn spectrogram(g: &Globals, a: SpectrogramArgs) -> Result<()> {
    if a.csv.is_none() && a.pgm.is_none() {
        bail!("nothing to write; pass --csv and/or --pgm");
    }
    let cfg = g.run_config()?;
    let fb = filterbank(&cfg)?;
    let spec: AuditorySpectrogram = fb.compute(&load_wav(&a.wav, &cfg)?)?;
    let mut lines = stamp(&cfg);
    lines.push(format!("source {}", a.wav.display()));
    if let Some(p) = &a.csv {
        write(p, format!("{}{}", comment_block(&lines), spec.to_csv()))?;
    }
    if let Some(p) = &a.pgm {
        let (lo, hi) = spec.min_max();
        write(p, spec.to_pgm(lo, hi, &lines))?;
    }
    Ok(())
}

fn figures(g: &Globals, a: FiguresArgs) -> Result<()> {
    let (cfg, ckpt) = g.checkpoint_config(&a.checkpoint)?;
    let fb = filterbank(&cfg)?;
    let plant = make_plant(&cfg)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let (ds, _) = load_split(&a.data, split, &fb)?;
    let n = a.count.min(ds.len());
    let comments = vec![
        format!("config_hash {}", ckpt.meta.config_hash),
        format!("seed {}", ckpt.meta.seed),
    ];
    let written = emit_figures(&ckpt.state.net, &ds.items[..n], plant.as_ref(), &fb, &a.out, &comments)?;
    log::info!("wrote {} files to {}", written.len(), a.out.display());
    Ok(())
}
