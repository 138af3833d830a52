//! Glue from source files to trained models and line completions.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::corpus::SourceFile;
use crate::decoder::{beam_search, default_break_ids, CallStats, DecodeError, DecodeRequest, GptLm, Hypothesis, Mode, NGramLm};
use crate::evalkit::{Completer, SequenceScorer};
use crate::fnv1a64;
use crate::gptc::{self, prepend_control_code, LangMode, ModelError, ModelParams, Sample};
use crate::language::Language;
use crate::lexnorm::{self, lex, lex_prefix, normalize, KeptCounts, LexError, LiteralTable, TokenKind, TokenStream};
use crate::ngram::{train_ngram, NGramError, NGramModel, Smoothing};
use crate::suggest::{postprocess_continuation, CompletionTrie, LineState, Span, Suggestion, DEFAULT_ALPHA, DEFAULT_KAPPA};
use crate::vocab::{train_bpe, train_casing, Scheme, SubtokenVocabulary, VocabError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Lex {
        path: String,
        #[source]
        source: LexError,
    },
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    NGram(#[from] NGramError),
    #[error("language `{0}` is not supported by this model")]
    Language(Language),
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Lexes every file.
pub fn lex_files(files: &[SourceFile]) -> Result<Vec<TokenStream>, PipelineError> {
    files
        .iter()
        .map(|f| {
            lex(&f.text, f.language).map_err(|source| PipelineError::Lex {
                path: f.path.clone(),
                source,
            })
        })
        .collect()
}

/// Lexes, builds the kept-literal table from the raw streams, and
/// normalizes.
pub fn normalize_files(files: &[SourceFile], kept: KeptCounts) -> Result<(LiteralTable, Vec<TokenStream>), PipelineError> {
    let raw = lex_files(files)?;
    let table = lexnorm::build_literal_table(&raw, kept);
    let normalized = raw.iter().map(|s| normalize(s, &table)).collect();
    Ok((table, normalized))
}

pub fn train_vocabulary(streams: &[TokenStream], scheme: Scheme, target: usize) -> Result<SubtokenVocabulary, VocabError> {
    match scheme {
        Scheme::Bpe => train_bpe(streams, target),
        Scheme::Casing => train_casing(streams, target),
    }
}

/// Language input expected by a model in `mode`.
pub fn lang_input(mode: LangMode, language: Language) -> Option<usize> {
    match mode {
        LangMode::Embedding | LangMode::DoubleHeads => Some(language.index()),
        LangMode::None | LangMode::ControlCodes => None,
    }
}

/// Encodes one normalized stream, adding the control code when `mode` uses
/// them.
pub fn encode_stream(vocab: &SubtokenVocabulary, stream: &TokenStream, mode: LangMode) -> Result<Vec<u32>, PipelineError> {
    let ids = vocab.encode(stream)?;
    Ok(prepend_control_code(&ids, stream.language, vocab, mode)?)
}

/// Splits a sequence into training windows of at most `n_ctx` ids that
/// overlap by half.
pub fn windows(ids: &[u32], n_ctx: usize) -> Vec<Vec<u32>> {
    if ids.len() <= n_ctx {
        return vec![ids.to_vec()];
    }
    let stride = (n_ctx / 2).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + n_ctx).min(ids.len());
        out.push(ids[start..end].to_vec());
        if end == ids.len() {
            return out;
        }
        start += stride;
    }
}

/// Training samples for every stream, windowed to the model's context.
pub fn encode_samples(
    vocab: &SubtokenVocabulary,
    streams: &[TokenStream],
    mode: LangMode,
    n_ctx: usize,
) -> Result<Vec<Sample>, PipelineError> {
    let mut out = Vec::new();
    for stream in streams {
        let ids = encode_stream(vocab, stream, mode)?;
        let lang = match mode {
            LangMode::None => None,
            _ => Some(stream.language.index()),
        };
        out.extend(windows(&ids, n_ctx).into_iter().filter(|w| w.len() >= 2).map(|w| Sample::new(w, lang)));
    }
    Ok(out)
}

pub fn train_ngram_model(vocab: &SubtokenVocabulary, streams: &[TokenStream], n: usize) -> Result<NGramModel, PipelineError> {
    let seqs = streams.iter().map(|s| vocab.encode(s)).collect::<Result<Vec<_>, _>>()?;
    Ok(train_ngram(&seqs, n, vocab.size())?)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EngineModel {
    Gpt(ModelParams<f32>),
    NGram { model: NGramModel, smoothing: Smoothing },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeSettings {
    pub beam_width: usize,
    pub max_len: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub mode: Mode,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        DecodeSettings {
            beam_width: 5,
            max_len: 24,
            alpha: DEFAULT_ALPHA,
            kappa: DEFAULT_KAPPA,
            mode: Mode::ParallelCached,
        }
    }
}

/// One beam hypothesis rendered as a standalone suggestion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Alternative {
    /// Subtokens after the typed partial identifier.
    pub subtokens: Vec<String>,
    pub step_log_probs: Vec<f64>,
    pub log_prob: f64,
    /// Share of probability mass among the returned alternatives.
    pub probability: f64,
    pub text: String,
    pub placeholders: Vec<Span>,
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub hypotheses: Vec<Hypothesis>,
    /// Hypotheses that agree with the typed partial identifier, best first.
    pub alternatives: Vec<Alternative>,
    /// Trie after pruning by the typed partial identifier.
    pub trie: CompletionTrie,
    pub subtokens: Vec<String>,
    pub suggestion: Suggestion,
    pub stats: CallStats,
    /// Ids the model was conditioned on.
    pub context_ids: Vec<u32>,
    /// The encoded context was cut from the left to fit the model.
    pub truncated_context: bool,
    pub latency_ms: f64,
}

/// A vocabulary plus a model, answering completion requests.
#[derive(Debug, Clone)]
pub struct Engine {
    pub vocab: SubtokenVocabulary,
    pub model: EngineModel,
    /// Settings used when completing through [`Completer`].
    pub defaults: DecodeSettings,
    table: LiteralTable,
}

/// Splits a trailing identifier being typed off the context.
fn split_partial(context: &str) -> (&str, &str) {
    let tail = context.len()
        - context
            .chars()
            .rev()
            .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
            .map(char::len_utf8)
            .sum::<usize>();
    let partial = &context[tail..];
    if partial.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_') {
        (&context[..tail], partial)
    } else {
        (context, "")
    }
}

/// Lexes the text before the query point. A blank last line still fixes the
/// indentation of the code about to be typed, so its indent/dedent tokens are
/// emitted as if a token followed.
fn lex_head(head: &str, language: Language) -> Result<TokenStream, LexError> {
    let last_line = &head[head.rfind('\n').map_or(0, |i| i + 1)..];
    if language == Language::ToyPy && last_line.chars().all(|c| c == ' ' || c == '\t') {
        if let Ok(mut stream) = lex_prefix(&format!("{head}x"), language) {
            stream.tokens.pop();
            return Ok(stream);
        }
    }
    lex_prefix(head, language)
}

fn display_atom(token: &lexnorm::Token) -> Option<String> {
    match token.kind {
        TokenKind::StrLit => Some("\"\"".into()),
        TokenKind::NumLit => Some("0".into()),
        TokenKind::KeptLiteral => crate::suggest::postprocess(&[token.text.as_str()]).text.into(),
        TokenKind::Comment => None,
        k if k.is_structural() => None,
        _ => Some(token.text.clone()),
    }
}

impl Engine {
    pub fn new(vocab: SubtokenVocabulary, model: EngineModel) -> Result<Self, PipelineError> {
        if let EngineModel::Gpt(params) = &model {
            if params.config.vocab_size != vocab.size() {
                return Err(ModelError::Mismatch(format!(
                    "model expects {} ids, vocabulary has {}",
                    params.config.vocab_size,
                    vocab.size()
                ))
                .into());
            }
        }
        let table = vocab.literal_table();
        Ok(Engine {
            vocab,
            model,
            defaults: DecodeSettings::default(),
            table,
        })
    }

    /// Loads a vocabulary file and either a transformer checkpoint or an
    /// n-gram table, told apart by their headers.
    pub fn load(vocab_path: &Path, model_path: &Path) -> Result<Self, PipelineError> {
        let io = |path: &Path, e: std::io::Error| PipelineError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let vocab_text = std::fs::read_to_string(vocab_path).map_err(|e| io(vocab_path, e))?;
        let vocab = SubtokenVocabulary::from_text(&vocab_text)?;
        let bytes = std::fs::read(model_path).map_err(|e| io(model_path, e))?;
        let model = if bytes.starts_with(b"ngram ") {
            let text = String::from_utf8(bytes).map_err(|e| io(model_path, std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
            let model = NGramModel::from_text(&text)?;
            if model.vocab_size() != vocab.size() {
                return Err(ModelError::Mismatch(format!(
                    "n-gram model expects {} ids, vocabulary has {}",
                    model.vocab_size(),
                    vocab.size()
                ))
                .into());
            }
            EngineModel::NGram {
                model,
                smoothing: Smoothing::Backoff,
            }
        } else {
            EngineModel::Gpt(gptc::read_checkpoint(bytes.as_slice())?)
        };
        Engine::new(vocab, model)
    }

    pub fn name(&self) -> String {
        match &self.model {
            EngineModel::Gpt(p) => format!("gptc-{}x{}", p.config.n_layers, p.config.d_model),
            EngineModel::NGram { model, .. } => format!("ngram-{}", model.order()),
        }
    }

    /// Stable digest of the vocabulary and model contents.
    pub fn digest(&self) -> String {
        let mut bytes = self.vocab.to_text().into_bytes();
        match &self.model {
            EngineModel::Gpt(p) => {
                let mut buf = Vec::new();
                gptc::write_checkpoint(p, &mut buf).expect("in-memory write");
                bytes.extend(buf);
            }
            EngineModel::NGram { model, .. } => bytes.extend(model.to_text().into_bytes()),
        }
        format!("{:016x}", fnv1a64(&bytes))
    }

    fn lang_mode(&self) -> LangMode {
        match &self.model {
            EngineModel::Gpt(p) => p.config.lang_mode,
            EngineModel::NGram { .. } => LangMode::None,
        }
    }

    fn check_language(&self, language: Language) -> Result<(), PipelineError> {
        if let EngineModel::Gpt(p) = &self.model {
            if matches!(p.config.lang_mode, LangMode::Embedding | LangMode::DoubleHeads) && language.index() >= p.config.n_lang {
                return Err(PipelineError::Language(language));
            }
        }
        Ok(())
    }

    /// Context window available for `max_len` new ids, if bounded.
    pub fn context_budget(&self, max_len: usize) -> Option<usize> {
        match &self.model {
            EngineModel::Gpt(p) => Some(p.config.n_ctx.saturating_sub(max_len)),
            EngineModel::NGram { .. } => None,
        }
    }

    /// Completes the line at the end of `context`.
    ///
    /// A trailing identifier is treated as being typed: decoding runs from
    /// the point before it and the trie is pruned by its characters. Contexts
    /// longer than the model window lose ids from the left; a leading
    /// control-code header is kept.
    pub fn complete(&self, context: &str, language: Language, settings: &DecodeSettings) -> Result<Completion, PipelineError> {
        let started = Instant::now();
        self.check_language(language)?;
        let (head, partial) = split_partial(context);
        let raw = lex_head(head, language).map_err(|source| PipelineError::Lex {
            path: "<context>".into(),
            source,
        })?;
        let stream = normalize(&raw, &self.table);
        let mode = self.lang_mode();
        let mut ids = encode_stream(&self.vocab, &stream, mode)?;

        let mut truncated_context = false;
        if let Some(budget) = self.context_budget(settings.max_len) {
            if ids.len() > budget {
                let keep_head = if mode == LangMode::ControlCodes { 3.min(budget) } else { 0 };
                let tail_len = budget - keep_head;
                let mut cut = ids[..keep_head].to_vec();
                cut.extend_from_slice(&ids[ids.len() - tail_len..]);
                ids = cut;
                truncated_context = true;
            }
        }

        let request = DecodeRequest {
            context: ids.clone(),
            beam_width: settings.beam_width,
            max_len: settings.max_len,
            break_ids: default_break_ids(&self.vocab, language),
            mode: settings.mode,
        };
        let (hypotheses, stats) = match &self.model {
            EngineModel::Gpt(params) => beam_search(
                &GptLm {
                    params,
                    lang: lang_input(mode, language),
                },
                &request,
            )?,
            EngineModel::NGram { model, smoothing } => beam_search(
                &NGramLm {
                    model,
                    smoothing: *smoothing,
                },
                &request,
            )?,
        };

        let line_start = head.rfind('\n').map_or(0, |i| i + 1);
        let root_position = head[line_start..].chars().count();
        let mut trie = CompletionTrie::build(&hypotheses, &self.vocab, root_position)?;
        for c in partial.chars() {
            match trie.prune_on_keystroke(c) {
                Some(t) => trie = t,
                None => {
                    trie = CompletionTrie::empty(root_position);
                    break;
                }
            }
        }
        let subtokens = trie.traverse_greedy(settings.alpha, settings.kappa);
        let state = LineState {
            prev_atom: None,
            partial,
            trailing_space: head.ends_with([' ', '\t']),
        };

        let prev_atom = raw
            .tokens
            .iter()
            .rev()
            .take_while(|t| t.kind != TokenKind::Eol)
            .find_map(display_atom);
        let state = LineState {
            prev_atom: prev_atom.as_deref(),
            ..state
        };
        let alternatives = self.alternatives(&hypotheses, &state, root_position)?;
        let suggestion = if trie.is_empty() {
            Suggestion {
                text: String::new(),
                placeholders: Vec::new(),
            }
        } else {
            postprocess_continuation(&state, &subtokens)
        };
        Ok(Completion {
            hypotheses,
            alternatives,
            trie,
            subtokens,
            suggestion,
            stats,
            context_ids: ids,
            truncated_context,
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    fn alternatives(&self, hypotheses: &[Hypothesis], state: &LineState<'_>, root_position: usize) -> Result<Vec<Alternative>, PipelineError> {
        let mut out = Vec::new();
        'hyps: for hyp in hypotheses {
            let mut trie = CompletionTrie::build(std::slice::from_ref(hyp), &self.vocab, root_position)?;
            for c in state.partial.chars() {
                match trie.prune_on_keystroke(c) {
                    Some(t) => trie = t,
                    None => continue 'hyps,
                }
            }
            // A zero ratio never stops early, so the whole remaining path is taken.
            let subtokens = trie.traverse_greedy(0.0, 1.0);
            let Suggestion { text, placeholders } = postprocess_continuation(state, &subtokens);
            out.push(Alternative {
                subtokens,
                step_log_probs: hyp.step_log_probs.clone(),
                log_prob: hyp.log_prob,
                probability: 0.0,
                text,
                placeholders,
            });
        }
        let best = out.iter().map(|a| a.log_prob).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = out.iter().map(|a| (a.log_prob - best).exp()).sum();
        for a in &mut out {
            a.probability = (a.log_prob - best).exp() / total;
        }
        Ok(out)
    }

    /// Per-position log-probabilities of a whole file.
    pub fn file_log_probs(&self, source: &str, language: Language) -> Result<Vec<f64>, PipelineError> {
        self.check_language(language)?;
        let raw = lex(source, language).map_err(|source| PipelineError::Lex {
            path: "<source>".into(),
            source,
        })?;
        let ids = encode_stream(&self.vocab, &normalize(&raw, &self.table), self.lang_mode())?;
        let mut lps = match &self.model {
            EngineModel::Gpt(params) => GptLm {
                params,
                lang: lang_input(self.lang_mode(), language),
            }
            .token_log_probs(&ids)?,
            EngineModel::NGram { model, smoothing } => NGramLm {
                model,
                smoothing: *smoothing,
            }
            .token_log_probs(&ids)?,
        };
        // The control code and separator are given, not predicted.
        if self.lang_mode() == LangMode::ControlCodes {
            lps.drain(..2.min(lps.len()));
        }
        Ok(lps)
    }
}

impl Completer for Engine {
    fn model_id(&self) -> String {
        format!("{}@{}", self.name(), self.digest())
    }

    fn literal_table(&self) -> &LiteralTable {
        &self.table
    }

    fn complete(&self, context: &str, language: Language) -> Result<String, String> {
        Engine::complete(self, context, language, &self.defaults)
            .map(|c| c.suggestion.text)
            .map_err(|e| e.to_string())
    }

    fn token_log_probs(&self, source: &str, language: Language) -> Result<Vec<f64>, String> {
        self.file_log_probs(source, language).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gptc::{init, ModelConfig};
    use crate::synth;

    fn setup() -> (SubtokenVocabulary, Vec<TokenStream>) {
        let files = synth::generate(Language::ToyPy, 12, 4, 11);
        let (_, streams) = normalize_files(&files, KeptCounts::default()).unwrap();
        let vocab = train_vocabulary(&streams, Scheme::Bpe, 300).unwrap();
        (vocab, streams)
    }

    #[test]
    fn windows_cover_the_sequence() {
        let ids: Vec<u32> = (0..10).collect();
        assert_eq!(windows(&ids, 16), vec![ids.clone()]);
        let w = windows(&ids, 4);
        assert_eq!(w[0], vec![0, 1, 2, 3]);
        assert_eq!(w[1], vec![2, 3, 4, 5]);
        assert_eq!(w.last().unwrap(), &vec![6, 7, 8, 9]);
    }

    #[test]
    fn trailing_identifier_is_split() {
        assert_eq!(split_partial("x = foo"), ("x = ", "foo"));
        assert_eq!(split_partial("x = 12"), ("x = 12", ""));
        assert_eq!(split_partial("f("), ("f(", ""));
        assert_eq!(split_partial("a_1"), ("", "a_1"));
    }

    #[test]
    fn blank_last_line_sets_indentation() {
        let last = |head: &str| lex_head(head, Language::ToyPy).unwrap().tokens.last().unwrap().kind;
        assert_eq!(last("def f(x):\n    "), TokenKind::Indent);
        assert_eq!(last("def f(x):\n    y = 1\n"), TokenKind::Dedent);
        assert_eq!(last("def f(x):\n    y = 1\n    "), TokenKind::Eol);
        assert_eq!(last("def f(x):\n    y = "), TokenKind::Punct);
        // An inconsistent dedent leaves the line open.
        assert_eq!(last("def f(x):\n    y = 1\n  "), TokenKind::Eol);
    }

    #[test]
    fn ngram_engine_completes_memorized_line() {
        let (vocab, streams) = setup();
        let model = train_ngram_model(&vocab, &streams, 8).unwrap();
        let engine = Engine::new(vocab, EngineModel::NGram { model, smoothing: Smoothing::Backoff }).unwrap();
        let files = synth::generate(Language::ToyPy, 12, 4, 11);
        let text = &files[0].text;
        let second = text.lines().nth(1).unwrap();
        let cut = text.find(second).unwrap() + second.find('=').unwrap() + 1;
        let out = engine.complete(&text[..cut], Language::ToyPy, &DecodeSettings::default()).unwrap();
        let expected = second[second.find('=').unwrap() + 1..].trim();
        assert_eq!(
            crate::evalkit::normalize_whitespace(&out.suggestion.text),
            crate::evalkit::normalize_whitespace(&normalize_literals(expected)),
        );
        assert!(out.suggestion.text.starts_with(' '));
        assert!(!out.truncated_context);
    }

    /// Display form of a line with literals replaced by placeholders.
    fn normalize_literals(line: &str) -> String {
        let stream = lex_prefix(line, Language::ToyPy).unwrap();
        let atoms: Vec<String> = stream.tokens.iter().filter_map(display_atom).collect();
        lexnorm::render_line(&atoms)
    }

    #[test]
    fn gpt_engine_truncates_long_contexts() {
        let (vocab, _) = setup();
        let config = ModelConfig { n_layers: 1, d_model: 16, d_x: 16, n_heads: 2, n_ctx: 32, ..ModelConfig::desk(vocab.size()) };
        let engine = Engine::new(vocab, EngineModel::Gpt(init(&config, 0).unwrap())).unwrap();
        let settings = DecodeSettings { max_len: 8, beam_width: 2, ..DecodeSettings::default() };
        let long = "x = y\n".repeat(20);
        let out = engine.complete(&long, Language::ToyPy, &settings).unwrap();
        assert!(out.truncated_context);
        let stream = normalize(&lex_prefix(&long, Language::ToyPy).unwrap(), &engine.table);
        let full = engine.vocab.encode(&stream).unwrap();
        assert_eq!(out.context_ids.len(), 32 - 8);
        assert_eq!(out.context_ids, full[full.len() - 24..]);
        let short = engine.complete("x = ", Language::ToyPy, &settings).unwrap();
        assert!(!short.truncated_context);
        assert_eq!(engine.complete("x = ", Language::ToyPy, &settings).unwrap().suggestion, short.suggestion);
        let wrong = ModelConfig { vocab_size: 7, ..config };
        let (vocab, _) = setup();
        assert!(Engine::new(vocab, EngineModel::Gpt(init(&wrong, 0).unwrap())).is_err());
    }
}
