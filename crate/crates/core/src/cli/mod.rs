//! Command-line front end. Exit codes: 0 success, 2 config or flag error,
//! 3 I/O or bad input data, 4 numerical divergence.

pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

pub use config::{DataSettings, PathSettings, RunConfig};

use crate::corpus::{corpus_stats, CorpusError};
use crate::data::{
    generate_synthetic, input_stats, manifest::{load_records, save_dataset}, parse_band_list, prepare_split, read_manifest, BandId,
    DataError, NormalizationStats, Split,
};
use crate::eval::{class_names_from_labels, evaluate, export::export_embeddings, EvalError, MultilabelMethod};
use crate::model::{
    extend_patch_embed, init_model, load_checkpoint, resolve_freeze, rgb_positions, save_checkpoint, FreezePolicy,
    FreezeSpec, InitMode, ModelError, ModelParameters,
};
use crate::tokenizer::{TokenizerError, Vocabulary};
use crate::trainer::{frozen_checksum, train, TrainError};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;

pub const VOCAB_FILE: &str = "vocab.txt";
pub const STATS_FILE: &str = "stats.json";
pub const BEST_CHECKPOINT: &str = "best.msck";
pub const TRAIN_LOG: &str = "train_log.jsonl";

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }

    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match e {
            DataError::InvalidConfig(_)
            | DataError::UnknownBand(_)
            | DataError::DuplicateBand(_)
            | DataError::MissingBand(_) => EXIT_CONFIG,
            _ => EXIT_IO,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::Io { .. } | ModelError::Checkpoint(_) => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::DivergedLoss { .. } | TrainError::Loss(_) => Self {
                code: EXIT_DIVERGED,
                message: e.to_string(),
            },
            _ => CliError::config(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Data(d) => d.into(),
            EvalError::Io { .. } => CliError::input(e.to_string()),
            _ => CliError::config(e.to_string()),
        }
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        match e {
            TokenizerError::MaxSizeTooSmall(_) => CliError::config(e.to_string()),
            _ => CliError::input(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::input(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "msclip", version, about = "Multispectral contrastive image-text training and zero-shot evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.peak_lr=1e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic multispectral scene dataset.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train or continue training on a manifest's train and val splits.
    Train(TrainArgs),
    /// Zero-shot classification and text-to-image retrieval.
    Eval(EvalArgs),
    /// Write image embeddings and their labels for one split.
    Export {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        bands: Option<String>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Directory receiving `embeddings.msr` and `labels.txt`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Widen a 3-channel checkpoint's patch embedding to more bands.
    Extend {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bands: String,
        #[arg(long, default_value = "zero")]
        init_mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lexical statistics of a manifest's captions and questions.
    CorpusStats {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
        /// Restrict to one split.
        #[arg(long)]
        split: Option<String>,
        /// Also write the statistics as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Input bands, e.g. `rgb`, `10` or `B4,B3,B2,B8`.
    #[arg(long)]
    pub bands: Option<String>,
    /// Start from this checkpoint; its vocabulary is reused.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Widen the `--init` checkpoint to these bands before training.
    #[arg(long)]
    pub extend_bands: Option<String>,
    #[arg(long, default_value = "zero")]
    pub init_mode: String,
    /// all | projection | attention | image | custom:pat1,pat2
    #[arg(long)]
    pub freeze: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub bands: Option<String>,
    /// One template per line, each containing `{}` once.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// eq2 | negclass
    #[arg(long)]
    pub multilabel: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Defaults to `vocab.txt` next to the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Defaults to `stats.json` next to the checkpoint.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Write the report JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.code;
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("MSCLIP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::config(format!("MSCLIP_THREADS={v:?} is not a positive integer")))?;
    // fails only if a pool already exists, which is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { cfg, out } => cmd_synth(&RunConfig::load(cfg.config.as_deref(), &cfg.overrides)?, out),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Export {
            cfg,
            checkpoint,
            manifest,
            bands,
            split,
            vocab,
            stats,
            out,
        } => {
            let run = RunConfig::load(cfg.config.as_deref(), &cfg.overrides)?;
            let bands = match bands {
                Some(b) => parse_band_list(&b)?,
                None => run.eval.bands.clone(),
            };
            let assets = ModelAssets::load(&checkpoint, vocab, stats, &bands)?;
            let records = load_records(&manifest, Some(parse_split(&split)?))?;
            let data = assets.prepare(&records, &bands)?;
            let embs = assets.params.encode_image(data.images())?;
            create_dir(&out)?;
            export_embeddings(&embs, &data.labels, &out.join("embeddings.msr"), &out.join("labels.txt"))?;
            println!("wrote {} embeddings of dimension {} to {}", embs.nrows(), embs.ncols(), out.display());
            Ok(())
        }
        Command::Extend {
            checkpoint,
            bands,
            init_mode,
            out,
        } => {
            let params = load_checkpoint(&checkpoint)?;
            let bands = parse_band_list(&bands)?;
            let mode = parse_init_mode(&init_mode)?;
            let extended = extend_patch_embed(&params, &bands, rgb_positions(&bands)?, mode)?;
            save_checkpoint(&extended, &out)?;
            println!("extended {} to {} channels: {}", checkpoint.display(), bands.len(), out.display());
            Ok(())
        }
        Command::CorpusStats {
            cfg,
            manifest,
            top_k,
            split,
            out,
        } => {
            let mut run = RunConfig::load(cfg.config.as_deref(), &cfg.overrides)?;
            if let Some(k) = top_k {
                run.corpus.top_k = k;
            }
            let split = split.as_deref().map(parse_split).transpose()?;
            let rows = read_manifest(&manifest)?;
            let rows: Vec<_> = rows.iter().filter(|r| split.is_none_or(|s| r.split == s)).collect();
            let captions: Vec<&str> = rows.iter().map(|r| r.caption.as_str()).collect();
            let questions: Vec<&str> = rows.iter().flat_map(|r| r.qa_pairs.iter().map(|(q, _)| q.as_str())).collect();
            let stats = corpus_stats(&captions, &questions, &run.corpus)?;
            print!("{}", stats.render());
            if let Some(out) = out {
                let text = serde_json::to_string_pretty(&stats).map_err(|e| CliError::input(e.to_string()))?;
                write_file(&out, &text)?;
            }
            Ok(())
        }
    }
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    s.parse::<Split>().map_err(|e| CliError::config(e.to_string()))
}

fn parse_init_mode(s: &str) -> Result<InitMode, CliError> {
    s.parse::<InitMode>().map_err(|e| CliError::config(e.to_string()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::input(e.to_string()))
}

fn sibling(checkpoint: &Path, name: &str) -> PathBuf {
    checkpoint.parent().unwrap_or_else(|| Path::new(".")).join(name)
}

pub fn cmd_synth(run: &RunConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    let out = out
        .or_else(|| run.paths.out.clone())
        .ok_or_else(|| CliError::config("synth needs --out or paths.out"))?;
    let records = generate_synthetic(&run.synth)?;
    create_dir(&out)?;
    let manifest = save_dataset(&out, &records)?;
    write_file(&out.join("synth_config.json"), &to_json(&run.synth)?)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let n = records.iter().filter(|r| r.split == split).count();
        println!("{:<5} {n}", split.as_str());
    }
    println!("manifest: {}", manifest.display());
    Ok(())
}

/// Checkpoint plus the vocabulary and normalization statistics stored beside it.
struct ModelAssets {
    params: ModelParameters,
    vocab: Vocabulary,
    stats: NormalizationStats,
}

impl ModelAssets {
    fn load(checkpoint: &Path, vocab: Option<PathBuf>, stats: Option<PathBuf>, bands: &[BandId]) -> Result<Self, CliError> {
        let params = load_checkpoint(checkpoint)?;
        let channels = params.config.in_channels;
        if channels != bands.len() {
            return Err(CliError::config(format!(
                "checkpoint {} expects {channels} input channels but {} bands were requested; pass --bands with {channels} bands",
                checkpoint.display(),
                bands.len()
            )));
        }
        let vocab = Vocabulary::load(&vocab.unwrap_or_else(|| sibling(checkpoint, VOCAB_FILE)))?;
        if vocab.len() != params.config.vocab_size {
            return Err(CliError::config(format!(
                "vocabulary has {} tokens but the checkpoint expects {}",
                vocab.len(),
                params.config.vocab_size
            )));
        }
        let stats_path = stats.unwrap_or_else(|| sibling(checkpoint, STATS_FILE));
        let text = fs::read_to_string(&stats_path).map_err(|e| CliError::io(&stats_path, e))?;
        let stats: NormalizationStats =
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", stats_path.display())))?;
        Ok(Self { params, vocab, stats })
    }

    fn prepare(&self, records: &[crate::data::SceneRecord], bands: &[BandId]) -> Result<crate::data::PreparedSplit, CliError> {
        let c = &self.params.config;
        Ok(prepare_split(records, bands, c.image_size, &self.stats, &self.vocab, c.context_length)?)
    }
}

pub fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let run = RunConfig::load(args.cfg.config.as_deref(), &args.cfg.overrides)?;
    let mut settings = run.eval.clone();
    if let Some(b) = &args.bands {
        settings.bands = parse_band_list(b)?;
    }
    if let Some(m) = &args.multilabel {
        settings.method = m.parse::<MultilabelMethod>().map_err(|e| CliError::config(e.to_string()))?;
    }
    if let Some(k) = args.k {
        settings.k = k;
    }
    if let Some(path) = &args.templates {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        settings.templates = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    }
    settings.checkpoint = args.checkpoint.display().to_string();

    let assets = ModelAssets::load(&args.checkpoint, args.vocab, args.stats, &settings.bands)?;
    let records = load_records(&args.manifest, Some(parse_split(&args.split)?))?;
    if records.is_empty() {
        return Err(CliError::input(format!("{} has no {} rows", args.manifest.display(), args.split)));
    }
    let data = assets.prepare(&records, &settings.bands)?;
    let classes = class_names_from_labels(&data.labels);
    let result = evaluate(&assets.params, &assets.vocab, &data, &classes, &settings)?;
    print!("{}", result.report.render_table());
    if let Some(out) = &args.out {
        write_file(out, &result.report.to_json())?;
    }
    Ok(())
}

struct LogWriter {
    path: PathBuf,
    w: BufWriter<File>,
}

impl LogWriter {
    fn create(path: PathBuf) -> Result<Self, CliError> {
        let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(Self {
            w: BufWriter::new(f),
            path,
        })
    }

    fn line(&mut self, v: &serde_json::Value) -> Result<(), CliError> {
        writeln!(self.w, "{v}").map_err(|e| CliError::io(&self.path, e))
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.w.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

pub fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut run = RunConfig::load(args.cfg.config.as_deref(), &args.cfg.overrides)?;
    if let Some(f) = &args.freeze {
        let policy: FreezePolicy = f.parse::<FreezePolicy>().map_err(|e| CliError::config(e.to_string()))?;
        run.train.freeze = FreezeSpec::new(policy);
    }
    if let Some(b) = &args.bands {
        run.data.bands = parse_band_list(b)?;
    }
    let init_mode = parse_init_mode(&args.init_mode)?;
    if let Some(b) = &args.extend_bands {
        if args.init.is_none() {
            return Err(CliError::config("--extend-bands requires --init with a 3-channel checkpoint"));
        }
        run.data.bands = parse_band_list(b)?;
    }
    run.train.validate()?;
    let manifest = args
        .manifest
        .or_else(|| run.paths.manifest.clone())
        .ok_or_else(|| CliError::config("train needs --manifest or paths.manifest"))?;
    let out = args
        .out
        .or_else(|| run.paths.out.clone())
        .ok_or_else(|| CliError::config("train needs --out or paths.out"))?;
    let bands = run.data.bands.clone();

    let train_records = load_records(&manifest, Some(Split::Train))?;
    let val_records = load_records(&manifest, Some(Split::Val))?;

    let (params, vocab) = match &args.init {
        Some(init) => {
            let mut params = load_checkpoint(init)?;
            if args.extend_bands.is_some() {
                if params.config.in_channels != 3 {
                    return Err(CliError::config(format!(
                        "--extend-bands needs a 3-channel checkpoint, {} has {}",
                        init.display(),
                        params.config.in_channels
                    )));
                }
                params = extend_patch_embed(&params, &bands, rgb_positions(&bands)?, init_mode)?;
            } else if params.config.in_channels != bands.len() {
                return Err(CliError::config(format!(
                    "{} has {} input channels but {} bands are configured",
                    init.display(),
                    params.config.in_channels,
                    bands.len()
                )));
            }
            let vocab = Vocabulary::load(&sibling(init, VOCAB_FILE))?;
            (params, vocab)
        }
        None => {
            let vocab = Vocabulary::build(train_records.iter().map(|r| r.caption.as_str()), run.data.vocab_size)?;
            let mut model = run.model.clone();
            model.in_channels = bands.len();
            model.vocab_size = vocab.len();
            (init_model(&model, run.train.seed)?, vocab)
        }
    };
    run.model = params.config.clone();

    let stats = input_stats(&train_records, &bands)?;
    let c = &params.config;
    let train_data = prepare_split(&train_records, &bands, c.image_size, &stats, &vocab, c.context_length)?;
    let val_data = prepare_split(&val_records, &bands, c.image_size, &stats, &vocab, c.context_length)?;

    create_dir(&out)?;
    vocab.save(&out.join(VOCAB_FILE))?;
    write_file(&out.join(STATS_FILE), &to_json(&stats)?)?;

    let mask = resolve_freeze(&params, &run.train.freeze)?;
    let mut log = LogWriter::create(out.join(TRAIN_LOG))?;
    log.line(&json!({
        "event": "config",
        "run": run,
        "bands": bands,
        "init": args.init.as_ref().map(|p| p.display().to_string()),
        "extend_bands": args.extend_bands.is_some(),
        "init_mode": args.extend_bands.as_ref().map(|_| args.init_mode.clone()),
        "freeze": run.train.freeze.policy.to_string(),
        "num_parameters": params.num_parameters(),
        "trainable": mask.trainable_names(),
    }))?;
    log.line(&json!({
        "event": "frozen_checksum",
        "phase": "before",
        "sha256": frozen_checksum(&params, &mask),
    }))?;

    let ckpt_dir = out.clone();
    let outcome = train(params, &train_data, &val_data, &run.train, |step, p, _| {
        save_checkpoint(p, &ckpt_dir.join(format!("ckpt_step{}.msck", step + 1)))?;
        Ok(())
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            log.line(&json!({"event": "error", "message": e.to_string()}))?;
            log.finish()?;
            return Err(e.into());
        }
    };
    log.line(&json!({"event": "init", "val_loss": outcome.initial_val_loss}))?;
    for entry in &outcome.log {
        let mut v = serde_json::to_value(entry).map_err(|e| CliError::input(e.to_string()))?;
        if let Some(map) = v.as_object_mut() {
            map.insert("event".into(), json!("step"));
        }
        log.line(&v)?;
    }
    log.line(&json!({
        "event": "frozen_checksum",
        "phase": "after",
        "sha256": frozen_checksum(&outcome.last, &outcome.mask),
    }))?;
    let best_ckpt = outcome.best_step.map(|s| format!("ckpt_step{}.msck", s + 1));
    log.line(&json!({
        "event": "best",
        "step": outcome.best_step,
        "checkpoint": best_ckpt,
        "val_loss": outcome.best_val_loss,
    }))?;
    log.finish()?;
    save_checkpoint(&outcome.best, &out.join(BEST_CHECKPOINT))?;

    match outcome.best_step {
        Some(s) => println!("best val loss {:.6} at step {s} ({})", outcome.best_val_loss, best_ckpt.unwrap_or_default()),
        None => println!("best val loss {:.6} at initialization", outcome.best_val_loss),
    }
    Ok(())
}
