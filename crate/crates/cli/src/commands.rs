//! Subcommands driving the pipeline from raw files to a running service.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use wholeline_core::corpus::{self, load_sources, SourceFile, SplitKind, SplitManifest};
use wholeline_core::decoder::{mode_equivalence_check, DecodeRequest, GptLm, Mode, NGramLm};
use wholeline_core::evalkit::{evaluate, EvalConfig, EvalReport};
use wholeline_core::gptc::{self, LangMode, ModelConfig, ModelParams, Teacher, TrainSchedule};
use wholeline_core::lexnorm::{self, KeptCounts};
use wholeline_core::pipeline::{self, DecodeSettings, Engine, EngineModel};
use wholeline_core::suggest::{DEFAULT_ALPHA, DEFAULT_KAPPA};
use wholeline_core::vocab::{Scheme, SubtokenVocabulary, DEFAULT_TARGET_SIZE};
use wholeline_core::{synth, Language};

use crate::service::{self, CompletionRequest};

#[derive(Debug, Parser)]
#[command(name = "wholeline", version, about = "Whole-line code completion: training, evaluation and serving.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic toy-language corpus.
    Synth(SynthArgs),
    /// Index and deduplicate source files under one or more roots.
    Ingest(IngestArgs),
    /// Split an index into train/validation/test by repository.
    Split(SplitArgs),
    /// Print the normalized token stream of a file.
    Lex(LexArgs),
    /// Learn a subtoken vocabulary from the training split.
    TrainVocab(TrainVocabArgs),
    /// Count an n-gram model over the training split.
    TrainNgram(TrainNgramArgs),
    /// Train a transformer from scratch.
    TrainGptc(TrainGptcArgs),
    /// Train a shallower student initialized from a teacher checkpoint.
    Distill(DistillArgs),
    /// Score a model on a split and write a report.
    Eval(EvalArgs),
    /// Complete the last line of the code read from stdin.
    Complete(CompleteArgs),
    /// Run the completion web service.
    Serve(ServeArgs),
    /// Check decoding modes agree and print model-call counts.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Bpe,
    Casing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LangModeArg {
    None,
    Embedding,
    ControlCodes,
    DoubleHeads,
}

impl From<LangModeArg> for LangMode {
    fn from(m: LangModeArg) -> Self {
        match m {
            LangModeArg::None => LangMode::None,
            LangModeArg::Embedding => LangMode::Embedding,
            LangModeArg::ControlCodes => LangMode::ControlCodes,
            LangModeArg::DoubleHeads => LangMode::DoubleHeads,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for SplitKind {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitKind::Train,
            SplitArg::Validation => SplitKind::Validation,
            SplitArg::Test => SplitKind::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "toy-py")]
    pub language: Language,
    #[arg(long, default_value_t = 40)]
    pub files: usize,
    /// Top-level statements per function body.
    #[arg(long, default_value_t = 6)]
    pub statements: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long = "root", required = true)]
    pub roots: Vec<PathBuf>,
    /// Output index (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output manifest (TSV).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LexArgs {
    pub file: PathBuf,
    #[arg(long, default_value = "toy-py")]
    pub language: Language,
    /// Keep the literals of this vocabulary's table instead of masking all.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainVocabArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SchemeArg::Bpe)]
    pub scheme: SchemeArg,
    #[arg(long, default_value_t = DEFAULT_TARGET_SIZE)]
    pub size: usize,
    /// Most frequent string literals kept verbatim.
    #[arg(long, default_value_t = KeptCounts::default().string)]
    pub kept_strings: usize,
    /// Most frequent number literals kept verbatim.
    #[arg(long, default_value_t = KeptCounts::default().number)]
    pub kept_numbers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainNgramArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub order: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 6.25e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub warmup_epochs: usize,
    #[arg(long, default_value_t = 0.98)]
    pub decay: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clip_norm: f64,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub target_loss: Option<f64>,
    #[arg(long)]
    pub no_dropout: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ScheduleArgs {
    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            epochs: self.epochs,
            batch_size: self.batch_size,
            base_lr: self.lr,
            warmup_epochs: self.warmup_epochs,
            decay: self.decay,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            max_steps: self.max_steps,
            target_loss: self.target_loss,
            dropout: !self.no_dropout,
            seed: self.seed,
            ..TrainSchedule::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainGptcArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 128)]
    pub d_model: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 128)]
    pub n_ctx: usize,
    #[arg(long, value_enum, default_value_t = LangModeArg::None)]
    pub lang_mode: LangModeArg,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Mix the teacher's next-token distribution into the targets with this
    /// weight. Experimental; 0 trains on hard targets only.
    #[arg(long, default_value_t = 0.0)]
    pub soft_weight: f64,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct DecodeArgs {
    #[arg(long, default_value_t = DecodeSettings::default().beam_width)]
    pub beam_width: usize,
    #[arg(long, default_value_t = DecodeSettings::default().max_len)]
    pub max_len: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    pub kappa: f64,
    #[arg(long, default_value = "parallel+cached")]
    pub mode: Mode,
}

impl DecodeArgs {
    pub fn settings(&self) -> DecodeSettings {
        DecodeSettings {
            beam_width: self.beam_width,
            max_len: self.max_len,
            alpha: self.alpha,
            kappa: self.kappa,
            mode: self.mode,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Transformer checkpoint or n-gram table.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_samples: Option<usize>,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Report file (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "toy-py")]
    pub language: Language,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Print the full service response instead of the suggestion text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Completions computed at once; requests beyond this get 429.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u16).range(1..))]
    pub max_concurrent: u16,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Vocabulary of `--model`; both or neither.
    #[arg(long, requires = "model")]
    pub vocab: Option<PathBuf>,
    /// Model to benchmark. Without one a small random transformer is used.
    #[arg(long, requires = "vocab")]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "toy-py")]
    pub language: Language,
    /// Context file; defaults to an empty file.
    #[arg(long)]
    pub context: Option<PathBuf>,
    /// (L,k) pairs as `L:k`.
    #[arg(long = "case", default_values = ["10:1", "10:10", "25:15"])]
    pub cases: Vec<String>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth_cmd(a),
        Command::Ingest(a) => ingest_cmd(a),
        Command::Split(a) => split_cmd(a),
        Command::Lex(a) => lex_cmd(a),
        Command::TrainVocab(a) => train_vocab_cmd(a),
        Command::TrainNgram(a) => train_ngram_cmd(a),
        Command::TrainGptc(a) => train_gptc_cmd(a),
        Command::Distill(a) => distill_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Complete(a) => complete_cmd(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Bench(a) => {
            print!("{}", bench(&a)?);
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read `{}`", path.display()))
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write `{}`", path.display()))
}

fn load_split(manifest: &Path, kind: SplitKind) -> Result<Vec<SourceFile>> {
    let manifest = SplitManifest::from_tsv(&read(manifest)?)?;
    let files = load_sources(manifest.get(kind))?;
    if files.is_empty() {
        bail!("the {} split is empty", kind.as_str());
    }
    Ok(files)
}

fn load_vocab(path: &Path) -> Result<SubtokenVocabulary> {
    Ok(SubtokenVocabulary::from_text(&read(path)?)?)
}

/// Normalizes files with the literal table stored in `vocab`.
fn normalized_streams(files: &[SourceFile], vocab: &SubtokenVocabulary) -> Result<Vec<lexnorm::TokenStream>> {
    let table = vocab.literal_table();
    Ok(pipeline::lex_files(files)?
        .iter()
        .map(|s| lexnorm::normalize(s, &table))
        .collect())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let files = synth::generate(a.language, a.files, a.statements, a.seed);
    synth::write_corpus(&a.out, &files).with_context(|| format!("cannot write corpus to `{}`", a.out.display()))?;
    println!("wrote {} files to {}", files.len(), a.out.display());
    Ok(())
}

fn ingest_cmd(a: IngestArgs) -> Result<()> {
    let index = corpus::ingest(&a.roots, &corpus::default_language_config())?;
    write(&a.out, serde_json::to_string_pretty(&index)?.as_bytes())?;
    println!("indexed {} files in {} repositories", index.len(), index.repo_ids().len());
    Ok(())
}

fn split_cmd(a: SplitArgs) -> Result<()> {
    let index: corpus::CorpusIndex = serde_json::from_str(&read(&a.index)?).context("malformed index")?;
    let manifest = corpus::split(&index, a.seed);
    if let Some(w) = &manifest.warning {
        log::warn!("{w}");
    }
    write(&a.out, manifest.to_tsv().as_bytes())?;
    println!(
        "train={} validation={} test={}",
        manifest.train.len(),
        manifest.validation.len(),
        manifest.test.len()
    );
    Ok(())
}

fn lex_cmd(a: LexArgs) -> Result<()> {
    let text = read(&a.file)?;
    let table = match &a.vocab {
        Some(v) => load_vocab(v)?.literal_table(),
        None => lexnorm::LiteralTable::empty(),
    };
    let raw = lexnorm::lex(&text, a.language)?;
    let stream = lexnorm::normalize(&raw, &table);
    let mut out = String::new();
    let mut line = Vec::new();
    for token in &stream.tokens {
        line.push(token.text.as_str());
        if token.kind == lexnorm::TokenKind::Eol {
            let _ = writeln!(out, "{}", line.join(" "));
            line.clear();
        }
    }
    if !line.is_empty() {
        let _ = writeln!(out, "{}", line.join(" "));
    }
    print!("{out}");
    Ok(())
}

fn train_vocab_cmd(a: TrainVocabArgs) -> Result<()> {
    let files = load_split(&a.manifest, SplitKind::Train)?;
    let kept = KeptCounts {
        string: a.kept_strings,
        number: a.kept_numbers,
    };
    let (_, streams) = pipeline::normalize_files(&files, kept)?;
    let scheme = match a.scheme {
        SchemeArg::Bpe => Scheme::Bpe,
        SchemeArg::Casing => Scheme::Casing,
    };
    let vocab = pipeline::train_vocabulary(&streams, scheme, a.size)?;
    if vocab.size() < a.size {
        log::warn!("corpus supports only {} subtokens (asked for {})", vocab.size(), a.size);
    }
    write(&a.out, vocab.to_text().as_bytes())?;
    println!("vocabulary size {}", vocab.size());
    Ok(())
}

fn train_ngram_cmd(a: TrainNgramArgs) -> Result<()> {
    let files = load_split(&a.manifest, SplitKind::Train)?;
    let vocab = load_vocab(&a.vocab)?;
    let streams = normalized_streams(&files, &vocab)?;
    let model = pipeline::train_ngram_model(&vocab, &streams, a.order)?;
    write(&a.out, model.to_text().as_bytes())?;
    println!("{}-gram model with {} contexts", model.order(), model.num_contexts());
    Ok(())
}

fn training_samples(manifest: &Path, vocab: &SubtokenVocabulary, config: &ModelConfig) -> Result<(Vec<gptc::Sample>, Vec<gptc::Sample>)> {
    let train = normalized_streams(&load_split(manifest, SplitKind::Train)?, vocab)?;
    let samples = pipeline::encode_samples(vocab, &train, config.lang_mode, config.n_ctx)?;
    let manifest = SplitManifest::from_tsv(&read(manifest)?)?;
    let validation = normalized_streams(&load_sources(manifest.get(SplitKind::Validation))?, vocab)?;
    let held_out = pipeline::encode_samples(vocab, &validation, config.lang_mode, config.n_ctx)?;
    Ok((samples, held_out))
}

fn report_training(outcome: &gptc::TrainOutcome<f32>, held_out: &[gptc::Sample]) -> Result<()> {
    if let Some(reason) = &outcome.aborted {
        log::warn!("training aborted: {reason}");
    }
    for (epoch, loss) in outcome.epoch_losses.iter().enumerate() {
        println!("epoch {epoch}: loss {loss:.4}");
    }
    if !held_out.is_empty() {
        println!("validation loss {:.4}", gptc::eval_loss(&outcome.params, held_out)?);
    }
    println!("{} steps", outcome.steps);
    Ok(())
}

fn train_gptc_cmd(a: TrainGptcArgs) -> Result<()> {
    let vocab = load_vocab(&a.vocab)?;
    let lang_mode: LangMode = a.lang_mode.into();
    let config = ModelConfig {
        n_layers: a.layers,
        d_model: a.d_model,
        d_x: a.d_model,
        n_heads: a.heads,
        n_ctx: a.n_ctx,
        lang_mode,
        n_lang: if lang_mode == LangMode::None { 1 } else { Language::ALL.len() },
        ..ModelConfig::desk(vocab.size())
    };
    let (samples, held_out) = training_samples(&a.manifest, &vocab, &config)?;
    let schedule = a.schedule.schedule();
    let params = gptc::init::<f32>(&config, schedule.seed)?;
    println!("{} parameters, {} samples", gptc::count_params(&config), samples.len());
    let outcome = gptc::train(params, &samples, &schedule, None)?;
    report_training(&outcome, &held_out)?;
    gptc::save_checkpoint(&outcome.params, &a.out)?;
    Ok(())
}

fn distill_cmd(a: DistillArgs) -> Result<()> {
    let vocab = load_vocab(&a.vocab)?;
    let teacher: ModelParams<f32> = gptc::load_checkpoint(&a.teacher)?;
    if teacher.config.vocab_size != vocab.size() {
        bail!("teacher expects {} ids, vocabulary has {}", teacher.config.vocab_size, vocab.size());
    }
    let student = gptc::distill_init(&teacher, a.layers)?;
    let (samples, held_out) = training_samples(&a.manifest, &vocab, &student.config)?;
    let soft = (a.soft_weight > 0.0).then_some(Teacher {
        params: &teacher,
        weight: a.soft_weight,
    });
    let outcome = gptc::train(student, &samples, &a.schedule.schedule(), soft)?;
    report_training(&outcome, &held_out)?;
    gptc::save_checkpoint(&outcome.params, &a.out)?;
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let files = load_split(&a.manifest, a.split.into())?;
    let mut engine = Engine::load(&a.vocab, &a.model)?;
    engine.defaults = a.decode.settings();
    let config = EvalConfig {
        seed: a.seed,
        max_samples: a.max_samples,
    };
    let report = evaluate(&engine, &files, &config)?;
    write(&a.out, serde_json::to_string_pretty(&report)?.as_bytes())?;
    print!("{}", report.to_key_values());
    print!("{}", EvalReport::table(std::slice::from_ref(&report)));
    Ok(())
}

/// Completion for `context`, as printed by `complete`.
pub fn complete_text(engine: &Engine, context: &str, language: Language, decode: &DecodeArgs, json: bool) -> Result<String> {
    let request = CompletionRequest {
        context: context.to_string(),
        language,
        beam_width: decode.beam_width,
        max_len: decode.max_len,
        alpha: decode.alpha,
        kappa: decode.kappa,
        mode: decode.mode,
    };
    let response = service::respond(engine, &request)?;
    Ok(if json {
        serde_json::to_string_pretty(&response)? + "\n"
    } else {
        response.best.display_text + "\n"
    })
}

fn complete_cmd(a: CompleteArgs) -> Result<()> {
    let engine = Engine::load(&a.vocab, &a.model)?;
    let mut context = String::new();
    std::io::stdin().read_to_string(&mut context).context("cannot read stdin")?;
    let out = complete_text(&engine, &context, a.language, &a.decode, a.json)?;
    std::io::stdout().write_all(out.as_bytes())?;
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let engine = Engine::load(&a.vocab, &a.model)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(engine, a.bind, usize::from(a.max_concurrent)))?;
    Ok(())
}

fn parse_case(s: &str) -> Result<(usize, usize)> {
    let (l, k) = s.split_once(':').with_context(|| format!("case `{s}` is not `L:k`"))?;
    Ok((l.trim().parse()?, k.trim().parse()?))
}

/// Runs every (L,k) case in all decoding modes and renders the call table.
/// Break ids are disabled so every case runs its full length.
pub fn bench(a: &BenchArgs) -> Result<String> {
    let cases = a.cases.iter().map(|c| parse_case(c)).collect::<Result<Vec<_>>>()?;
    let longest = cases.iter().map(|c| c.0).max().unwrap_or(0);
    let (model, context) = match (&a.vocab, &a.model) {
        (Some(v), Some(m)) => {
            let engine = Engine::load(v, m)?;
            let text = match &a.context {
                Some(path) => read(path)?,
                None => String::new(),
            };
            let mode = match &engine.model {
                EngineModel::Gpt(p) => p.config.lang_mode,
                EngineModel::NGram { .. } => LangMode::None,
            };
            let raw = lexnorm::lex_prefix(&text, a.language)?;
            let stream = lexnorm::normalize(&raw, &engine.vocab.literal_table());
            let ids = pipeline::encode_stream(&engine.vocab, &stream, mode)?;
            (engine.model, ids)
        }
        _ => {
            let config = ModelConfig {
                n_layers: 2,
                d_model: 32,
                d_x: 32,
                n_heads: 2,
                n_ctx: longest + 8,
                ..ModelConfig::desk(64)
            };
            (EngineModel::Gpt(gptc::init(&config, 0)?), vec![1, 2, 3])
        }
    };
    let mut out = format!("{:>4} {:>4} {:<16} {:>8} {:>6}  {}\n", "L", "k", "mode", "calls", "steps", "agree");
    for (l, k) in cases {
        let req = DecodeRequest {
            context: context.clone(),
            beam_width: k,
            max_len: l,
            break_ids: Vec::new(),
            mode: Mode::ParallelCached,
        };
        let report = match &model {
            EngineModel::Gpt(p) => {
                let lang = pipeline::lang_input(p.config.lang_mode, a.language);
                mode_equivalence_check(&GptLm { params: p, lang }, &req)?
            }
            EngineModel::NGram { model, smoothing } => mode_equivalence_check(
                &NGramLm {
                    model,
                    smoothing: *smoothing,
                },
                &req,
            )?,
        };
        let agree = match &report.mismatch {
            None => "yes".to_string(),
            Some(m) => format!("no ({m})"),
        };
        for (mode, _, stats) in &report.results {
            let _ = writeln!(out, "{:>4} {:>4} {:<16} {:>8} {:>6}  {}", l, k, mode.name(), stats.model_calls, stats.steps, agree);
        }
    }
    Ok(out)
}
