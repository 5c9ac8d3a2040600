//! Command-line pipeline glue: a flat key=value run configuration shared by
//! every subcommand, plus the subcommand implementations themselves. The
//! binary in `main.rs` only parses arguments and maps errors to exit codes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use temporal_embed::dataset::{load_dataset, save_dataset, Dataset};
use temporal_embed::eval::{
    classification_report, event_retrieval_map, export_embeddings_tsv, order_recovery_eval,
    temporal_retrieval_map, ClassifierConfig, EvalReport, FrameEmbedder, RawFeatures,
};
use temporal_embed::model::{load_checkpoint, EmbeddingModel, LrnParams};
use temporal_embed::objective::ContextVariant;
use temporal_embed::sampler::SamplerConfig;
use temporal_embed::synth::{generate, SynthSpec};
use temporal_embed::trainer::{train_from, TrainConfig};
use temporal_embed::Error;

/// CLI failures split into the two exit classes that are not numerical:
/// usage problems (exit 1) and everything the library reports (exit 2, or 3
/// when [`Error::is_numerical`]).
#[derive(Debug)]
pub enum RunError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Lib(e)
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Usage(msg) => write!(f, "{msg}"),
            RunError::Lib(e) => write!(f, "{e}"),
        }
    }
}

pub fn exit_code(e: &RunError) -> i32 {
    match e {
        RunError::Usage(_) => 1,
        RunError::Lib(err) => {
            if err.is_numerical() {
                3
            } else {
                2
            }
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "temporal-embed", version, about = "Train and evaluate temporal frame embeddings")]
pub struct Cli {
    /// Flat key=value run configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed for data generation, initialization, sampling, and splits.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Evaluate raw feature vectors instead of a trained model.
    #[arg(long, global = true)]
    pub raw_features: bool,

    /// Context construction: full, no_future, or no_temporal.
    #[arg(long, global = true, value_parser = parse_variant)]
    pub variant: Option<ContextVariant>,

    /// Draw every negative from other sequences.
    #[arg(long, global = true)]
    pub no_hard_negatives: bool,

    #[command(subcommand)]
    pub command: Command,
}

fn parse_variant(s: &str) -> Result<ContextVariant, String> {
    ContextVariant::from_str(s).map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Dataset manifest (manifest.json) or the directory containing it.
    /// Falls back to the config file's `data` key.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

fn resolve_data(args: &DataArgs, rc: &RunConfig) -> Result<PathBuf, RunError> {
    args.data
        .clone()
        .or_else(|| rc.data_path.clone())
        .ok_or_else(|| RunError::Usage("no dataset given: pass --data or set data= in the config".into()))
}

fn resolve_out(flag: &Option<PathBuf>, rc: &RunConfig) -> Result<PathBuf, RunError> {
    flag.clone()
        .or_else(|| rc.out_path.clone())
        .ok_or_else(|| RunError::Usage("no output location given: pass --out or set out= in the config".into()))
}

#[derive(Args, Debug)]
pub struct EmbedderArgs {
    /// Checkpoint to embed with (omit together with --raw-features).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic benchmark dataset into a directory.
    GenSynth {
        /// Output directory; falls back to the config file's `out` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an embedding model on a dataset.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory for checkpoints, loss log, and resolved config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from this checkpoint instead of initializing fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write per-frame embeddings as TSV.
    Embed {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        embedder: EmbedderArgs,
        /// Where to write results; falls back to the config file's `out` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank other videos by similarity; score same-label retrieval.
    EvalEvent {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        embedder: EmbedderArgs,
        /// Where to write results; falls back to the config file's `out` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrieve the frames between two context frames from distractors.
    EvalTemporal {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        embedder: EmbedderArgs,
        /// Where to write results; falls back to the config file's `out` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct frame order greedily; score Kendall tau distance.
    EvalOrder {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        embedder: EmbedderArgs,
        /// Where to write results; falls back to the config file's `out` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a linear classifier on video embeddings; score test accuracy.
    EvalClassify {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        embedder: EmbedderArgs,
        /// Where to write results; falls back to the config file's `out` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Every tunable of a run in one flat struct. The canonical text rendering
/// (and the digest over it) covers only semantic keys — never filesystem
/// locations — so the same experiment is byte-identical no matter where its
/// artifacts land.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // model
    pub emb_dim: usize,
    pub dropout_rate: f64,
    pub lrn_size: usize,
    pub lrn_k: f64,
    pub lrn_alpha: f64,
    pub lrn_beta: f64,
    // sampler
    pub window: usize,
    pub strides: Vec<usize>,
    pub negatives_per_target: usize,
    pub hard_fraction: f64,
    // trainer
    pub lr0: f64,
    pub anneal_every: u64,
    pub anneal_factor: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub checkpoint_every: u64,
    pub variant: ContextVariant,
    pub hard_negatives: bool,
    pub deterministic: bool,
    // synthetic data
    pub synth_num_events: usize,
    pub synth_states_per_event: usize,
    pub synth_dim: usize,
    pub synth_num_sequences: usize,
    pub synth_seq_len: usize,
    pub synth_emission_noise: f64,
    pub synth_alias_pairs: Vec<(usize, usize)>,
    pub synth_advance_prob: f64,
    // evaluation
    pub eval_min_len: usize,
    pub eval_frames_per_video: usize,
    pub eval_train_frac: f64,
    pub cls_reg_lambda: f64,
    pub cls_epochs: usize,
    pub cls_lr0: f64,
    pub cls_halve_every: usize,
    /// Optional path conveniences; accepted from the file, overridden by
    /// flags, excluded from the canonical text.
    pub data_path: Option<PathBuf>,
    pub out_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SamplerConfig::default();
        let t = TrainConfig::default();
        let sy = SynthSpec::default();
        let c = ClassifierConfig::default();
        let lrn = LrnParams::default();
        RunConfig {
            seed: 0,
            emb_dim: 64,
            dropout_rate: 0.5,
            lrn_size: lrn.size,
            lrn_k: lrn.k,
            lrn_alpha: lrn.alpha,
            lrn_beta: lrn.beta,
            window: s.window,
            strides: s.strides,
            negatives_per_target: s.negatives_per_target,
            hard_fraction: s.hard_fraction,
            lr0: t.lr0,
            anneal_every: t.anneal_every,
            anneal_factor: t.anneal_factor,
            batch_size: t.batch_size,
            iterations: t.iterations,
            checkpoint_every: t.checkpoint_every,
            variant: t.variant,
            hard_negatives: t.hard_negatives,
            deterministic: t.deterministic,
            synth_num_events: sy.num_events,
            synth_states_per_event: sy.states_per_event,
            synth_dim: sy.dim,
            synth_num_sequences: sy.num_sequences,
            synth_seq_len: sy.seq_len,
            synth_emission_noise: sy.emission_noise,
            synth_alias_pairs: sy.alias_pairs,
            synth_advance_prob: sy.advance_prob,
            eval_min_len: temporal_embed::eval::TEMPORAL_MIN_LEN,
            eval_frames_per_video: 12,
            eval_train_frac: 0.5,
            cls_reg_lambda: c.reg_lambda,
            cls_epochs: c.epochs,
            cls_lr0: c.lr0,
            cls_halve_every: c.halve_every,
            data_path: None,
            out_path: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, Error>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("bad value for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, Error> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::InvalidConfig(format!(
            "bad value for {key}: expected true or false, got {other}"
        ))),
    }
}

fn parse_strides(value: &str) -> Result<Vec<usize>, Error> {
    if value.is_empty() {
        return Err(Error::InvalidConfig("strides must not be empty".into()));
    }
    value.split(',').map(|s| parse_num("strides", s.trim())).collect()
}

fn parse_alias_pairs(value: &str) -> Result<Vec<(usize, usize)>, Error> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|pair| {
            let (a, b) = pair.split_once(':').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "bad value for synth_alias_pairs: expected a:b, got {pair}"
                ))
            })?;
            Ok((
                parse_num("synth_alias_pairs", a.trim())?,
                parse_num("synth_alias_pairs", b.trim())?,
            ))
        })
        .collect()
}

fn format_strides(strides: &[usize]) -> String {
    strides.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

fn format_alias_pairs(pairs: &[(usize, usize)]) -> String {
    pairs.iter().map(|(a, b)| format!("{a}:{b}")).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one flat key=value file on top of the current values. Unknown
    /// and repeated keys are rejected; blank lines and `#` comments skipped.
    pub fn apply_file(&mut self, text: &str) -> Result<(), Error> {
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::InvalidConfig(format!("repeated key {key}")));
            }
            self.apply_key(key, value)?;
        }
        Ok(())
    }

    fn apply_key(&mut self, key: &str, value: &str) -> Result<(), Error> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "emb_dim" => self.emb_dim = parse_num(key, value)?,
            "dropout_rate" => self.dropout_rate = parse_num(key, value)?,
            "lrn_size" => self.lrn_size = parse_num(key, value)?,
            "lrn_k" => self.lrn_k = parse_num(key, value)?,
            "lrn_alpha" => self.lrn_alpha = parse_num(key, value)?,
            "lrn_beta" => self.lrn_beta = parse_num(key, value)?,
            "window" => self.window = parse_num(key, value)?,
            "strides" => self.strides = parse_strides(value)?,
            "negatives_per_target" => self.negatives_per_target = parse_num(key, value)?,
            "hard_fraction" => self.hard_fraction = parse_num(key, value)?,
            "lr0" => self.lr0 = parse_num(key, value)?,
            "anneal_every" => self.anneal_every = parse_num(key, value)?,
            "anneal_factor" => self.anneal_factor = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "iterations" => self.iterations = parse_num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            "variant" => {
                self.variant = ContextVariant::from_str(value)
                    .map_err(|e| Error::InvalidConfig(format!("bad value for variant: {e}")))?
            }
            "hard_negatives" => self.hard_negatives = parse_bool(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            "synth_num_events" => self.synth_num_events = parse_num(key, value)?,
            "synth_states_per_event" => self.synth_states_per_event = parse_num(key, value)?,
            "synth_dim" => self.synth_dim = parse_num(key, value)?,
            "synth_num_sequences" => self.synth_num_sequences = parse_num(key, value)?,
            "synth_seq_len" => self.synth_seq_len = parse_num(key, value)?,
            "synth_emission_noise" => self.synth_emission_noise = parse_num(key, value)?,
            "synth_alias_pairs" => self.synth_alias_pairs = parse_alias_pairs(value)?,
            "synth_advance_prob" => self.synth_advance_prob = parse_num(key, value)?,
            "eval_min_len" => self.eval_min_len = parse_num(key, value)?,
            "eval_frames_per_video" => self.eval_frames_per_video = parse_num(key, value)?,
            "eval_train_frac" => self.eval_train_frac = parse_num(key, value)?,
            "cls_reg_lambda" => self.cls_reg_lambda = parse_num(key, value)?,
            "cls_epochs" => self.cls_epochs = parse_num(key, value)?,
            "cls_lr0" => self.cls_lr0 = parse_num(key, value)?,
            "cls_halve_every" => self.cls_halve_every = parse_num(key, value)?,
            "data" => self.data_path = Some(PathBuf::from(value)),
            "out" => self.out_path = Some(PathBuf::from(value)),
            other => return Err(Error::InvalidConfig(format!("unknown config key {other}"))),
        }
        Ok(())
    }

    /// Canonical text: every semantic key in fixed order, one per line.
    /// Paths are deliberately absent (see the type-level comment).
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "emb_dim={}", self.emb_dim);
        let _ = writeln!(s, "dropout_rate={}", self.dropout_rate);
        let _ = writeln!(s, "lrn_size={}", self.lrn_size);
        let _ = writeln!(s, "lrn_k={}", self.lrn_k);
        let _ = writeln!(s, "lrn_alpha={}", self.lrn_alpha);
        let _ = writeln!(s, "lrn_beta={}", self.lrn_beta);
        let _ = writeln!(s, "window={}", self.window);
        let _ = writeln!(s, "strides={}", format_strides(&self.strides));
        let _ = writeln!(s, "negatives_per_target={}", self.negatives_per_target);
        let _ = writeln!(s, "hard_fraction={}", self.hard_fraction);
        let _ = writeln!(s, "lr0={}", self.lr0);
        let _ = writeln!(s, "anneal_every={}", self.anneal_every);
        let _ = writeln!(s, "anneal_factor={}", self.anneal_factor);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "iterations={}", self.iterations);
        let _ = writeln!(s, "checkpoint_every={}", self.checkpoint_every);
        let _ = writeln!(s, "variant={}", self.variant.as_str());
        let _ = writeln!(s, "hard_negatives={}", self.hard_negatives);
        let _ = writeln!(s, "deterministic={}", self.deterministic);
        let _ = writeln!(s, "synth_num_events={}", self.synth_num_events);
        let _ = writeln!(s, "synth_states_per_event={}", self.synth_states_per_event);
        let _ = writeln!(s, "synth_dim={}", self.synth_dim);
        let _ = writeln!(s, "synth_num_sequences={}", self.synth_num_sequences);
        let _ = writeln!(s, "synth_seq_len={}", self.synth_seq_len);
        let _ = writeln!(s, "synth_emission_noise={}", self.synth_emission_noise);
        let _ = writeln!(s, "synth_alias_pairs={}", format_alias_pairs(&self.synth_alias_pairs));
        let _ = writeln!(s, "synth_advance_prob={}", self.synth_advance_prob);
        let _ = writeln!(s, "eval_min_len={}", self.eval_min_len);
        let _ = writeln!(s, "eval_frames_per_video={}", self.eval_frames_per_video);
        let _ = writeln!(s, "eval_train_frac={}", self.eval_train_frac);
        let _ = writeln!(s, "cls_reg_lambda={}", self.cls_reg_lambda);
        let _ = writeln!(s, "cls_epochs={}", self.cls_epochs);
        let _ = writeln!(s, "cls_lr0={}", self.cls_lr0);
        let _ = writeln!(s, "cls_halve_every={}", self.cls_halve_every);
        s
    }

    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_text().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            window: self.window,
            strides: self.strides.clone(),
            negatives_per_target: self.negatives_per_target,
            hard_fraction: self.hard_fraction,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.lr0,
            anneal_every: self.anneal_every,
            anneal_factor: self.anneal_factor,
            batch_size: self.batch_size,
            iterations: self.iterations,
            seed: self.seed,
            variant: self.variant,
            hard_negatives: self.hard_negatives,
            checkpoint_every: self.checkpoint_every,
            deterministic: self.deterministic,
            config_digest: self.digest(),
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            num_events: self.synth_num_events,
            states_per_event: self.synth_states_per_event,
            dim: self.synth_dim,
            num_sequences: self.synth_num_sequences,
            seq_len: self.synth_seq_len,
            emission_noise: self.synth_emission_noise,
            alias_pairs: self.synth_alias_pairs.clone(),
            advance_prob: self.synth_advance_prob,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            reg_lambda: self.cls_reg_lambda,
            epochs: self.cls_epochs,
            lr0: self.cls_lr0,
            halve_every: self.cls_halve_every,
            seed: self.seed,
        }
    }

    pub fn lrn_params(&self) -> LrnParams {
        LrnParams {
            size: self.lrn_size,
            k: self.lrn_k,
            alpha: self.lrn_alpha,
            beta: self.lrn_beta,
        }
    }
}

/// Builds the resolved config for this invocation: defaults, then the config
/// file, then flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, RunError> {
    let mut rc = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.clone(), source })?;
        rc.apply_file(&text)?;
    }
    if let Some(seed) = cli.seed {
        rc.seed = seed;
    }
    if let Some(variant) = cli.variant {
        rc.variant = variant;
    }
    if cli.no_hard_negatives {
        rc.hard_negatives = false;
    }
    Ok(rc)
}

fn write_resolved(rc: &RunConfig, dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let path = dir.join("run_config.resolved");
    fs::write(&path, rc.canonical_text()).map_err(|source| Error::Io { path, source })
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.json")
    } else {
        data.to_path_buf()
    }
}

enum Embedder {
    Raw,
    Model(Box<EmbeddingModel>),
}

fn load_embedder(raw: bool, args: &EmbedderArgs) -> Result<Embedder, RunError> {
    match (raw, &args.checkpoint) {
        (true, None) => Ok(Embedder::Raw),
        (false, Some(path)) => {
            let (model, _, _) = load_checkpoint(path)?;
            Ok(Embedder::Model(Box::new(model)))
        }
        (true, Some(_)) => Err(RunError::Usage(
            "--raw-features and --checkpoint are mutually exclusive".into(),
        )),
        (false, None) => Err(RunError::Usage(
            "provide --checkpoint PATH or pass --raw-features".into(),
        )),
    }
}

fn write_report(report: &EvalReport, out: &Path) -> Result<(), Error> {
    report.write_json(&out.join(format!("{}.json", report.task)))?;
    report.write_csv(&out.join(format!("{}.csv", report.task)))?;
    Ok(())
}

fn run_eval<F>(
    data: &DataArgs,
    embedder_args: &EmbedderArgs,
    raw: bool,
    out_flag: &Option<PathBuf>,
    rc: &RunConfig,
    eval: F,
) -> Result<(), RunError>
where
    F: Fn(&Dataset, &dyn DynEmbedder) -> Result<EvalReport, Error>,
{
    let out = &resolve_out(out_flag, rc)?;
    let dataset = load_dataset(&manifest_path(&resolve_data(data, rc)?))?;
    let embedder = load_embedder(raw, embedder_args)?;
    let report = match &embedder {
        Embedder::Raw => eval(&dataset, &RawFeatures)?,
        Embedder::Model(m) => eval(&dataset, m.as_ref())?,
    };
    write_resolved(rc, out)?;
    write_report(&report, out)?;
    println!("{}: aggregate {}", report.task, report.aggregate);
    println!("report written to {}", out.join(format!("{}.json", report.task)).display());
    println!("config digest: {}", rc.digest());
    Ok(())
}

/// Object-safe alias so one closure serves both embedding modes.
pub trait DynEmbedder: FrameEmbedder {}
impl<T: FrameEmbedder> DynEmbedder for T {}

impl FrameEmbedder for &dyn DynEmbedder {
    fn embed_frame(&self, features: &[f32]) -> Vec<f64> {
        (**self).embed_frame(features)
    }
}

pub fn run(cli: &Cli) -> Result<(), RunError> {
    let rc = resolve_config(cli)?;
    match &cli.command {
        Command::GenSynth { out } => {
            let out = &resolve_out(out, &rc)?;
            let spec = rc.synth_spec();
            let dataset = generate(&spec, rc.seed)?;
            write_resolved(&rc, out)?;
            let manifest = save_dataset(&dataset, out)?;
            println!(
                "wrote {} sequences ({} frames each, dim {}) to {}",
                dataset.len(),
                rc.synth_seq_len,
                dataset.dim(),
                manifest.display()
            );
            println!("config digest: {}", rc.digest());
            Ok(())
        }
        Command::Train { data, out, resume } => {
            let out = &resolve_out(out, &rc)?;
            let dataset = load_dataset(&manifest_path(&resolve_data(data, &rc)?))?;
            let digest = rc.digest();
            let (model, start) = match resume {
                Some(path) => {
                    let (model, iteration, saved) = load_checkpoint(path)?;
                    if saved != digest {
                        eprintln!(
                            "warning: resuming from a checkpoint with config digest {saved}, \
                             but the current config digest is {digest}"
                        );
                    }
                    (model, iteration)
                }
                None => {
                    let mut model =
                        EmbeddingModel::init_seeded(dataset.dim(), rc.emb_dim, rc.seed);
                    model.lrn = rc.lrn_params();
                    model.dropout_rate = rc.dropout_rate;
                    (model, 0)
                }
            };
            write_resolved(&rc, out)?;
            let (trained, log) =
                train_from(&dataset, model, &rc.sampler_config(), &rc.train_config(), Some(out), start)?;
            log.write_csv(&out.join("loss.csv"))?;
            let final_loss = log.entries.last().map(|e| e.loss);
            match final_loss {
                Some(loss) => println!(
                    "trained {} iterations (final batch loss {loss}); emb_dim {}",
                    rc.iterations,
                    trained.emb_dim()
                ),
                None => println!("nothing to train: start iteration equals the target"),
            }
            println!("config digest: {digest}");
            Ok(())
        }
        Command::Embed { data, embedder, out } => {
            let out = &resolve_out(out, &rc)?;
            let dataset = load_dataset(&manifest_path(&resolve_data(data, &rc)?))?;
            let chosen = load_embedder(cli.raw_features, embedder)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)
                    .map_err(|source| Error::Io { path: parent.to_path_buf(), source })?;
            }
            match &chosen {
                Embedder::Raw => export_embeddings_tsv(&dataset, &RawFeatures, out)?,
                Embedder::Model(m) => export_embeddings_tsv(&dataset, m.as_ref(), out)?,
            }
            println!("embeddings written to {}", out.display());
            println!("config digest: {}", rc.digest());
            Ok(())
        }
        Command::EvalEvent { data, embedder, out } => run_eval(
            data,
            embedder,
            cli.raw_features,
            out,
            &rc,
            |d, e| event_retrieval_map(d, &e),
        ),
        Command::EvalTemporal { data, embedder, out } => run_eval(
            data,
            embedder,
            cli.raw_features,
            out,
            &rc,
            |d, e| temporal_retrieval_map(d, &e, rc.eval_min_len),
        ),
        Command::EvalOrder { data, embedder, out } => run_eval(
            data,
            embedder,
            cli.raw_features,
            out,
            &rc,
            |d, e| order_recovery_eval(d, &e, rc.eval_frames_per_video),
        ),
        Command::EvalClassify { data, embedder, out } => run_eval(
            data,
            embedder,
            cli.raw_features,
            out,
            &rc,
            |d, e| classification_report(d, &e, &rc.classifier_config(), rc.eval_train_frac),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_the_file_format() {
        let rc = RunConfig::default();
        let text = rc.canonical_text();
        let mut parsed = RunConfig::default();
        parsed.apply_file(&text).unwrap();
        assert_eq!(parsed, rc);
        assert_eq!(parsed.digest(), rc.digest());
    }

    #[test]
    fn unknown_and_repeated_keys_are_rejected() {
        let mut rc = RunConfig::default();
        assert!(rc.apply_file("bogus_key=1\n").is_err());
        assert!(rc.apply_file("seed=1\nseed=2\n").is_err());
        assert!(rc.apply_file("seed\n").is_err());
    }

    #[test]
    fn comments_blanks_and_overrides_apply() {
        let mut rc = RunConfig::default();
        rc.apply_file("# comment\n\nseed=9\nvariant=no_future\nstrides=2,8\nhard_negatives=false\nsynth_alias_pairs=1:7,2:14\n")
            .unwrap();
        assert_eq!(rc.seed, 9);
        assert_eq!(rc.variant, ContextVariant::NoFuture);
        assert_eq!(rc.strides, vec![2, 8]);
        assert!(!rc.hard_negatives);
        assert_eq!(rc.synth_alias_pairs, vec![(1, 7), (2, 14)]);
    }

    #[test]
    fn digest_tracks_semantic_changes_only() {
        let base = RunConfig::default();
        let mut moved = base.clone();
        moved.data_path = Some(PathBuf::from("/elsewhere/data"));
        moved.out_path = Some(PathBuf::from("/elsewhere/out"));
        assert_eq!(base.digest(), moved.digest());

        let mut changed = base.clone();
        changed.lr0 = 0.02;
        assert_ne!(base.digest(), changed.digest());
    }

    #[test]
    fn alias_pair_parsing_rejects_malformed_entries() {
        assert!(parse_alias_pairs("3:9,15:21").is_ok());
        assert_eq!(parse_alias_pairs("").unwrap(), vec![]);
        assert!(parse_alias_pairs("39").is_err());
        assert!(parse_alias_pairs("a:b").is_err());
    }
}
