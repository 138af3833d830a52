use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{edit_similarity, perplexity, rouge_l, syntax_valid};
use crate::corpus::SourceFile;
use crate::fnv1a64;
use crate::language::Language;
use crate::lexnorm::{lex_prefix, normalize, render_line, LiteralTable, TokenKind};
use crate::suggest::postprocess;
use crate::vocab::END_OF_TOKEN;

/// A model as seen by the evaluation runner.
pub trait Completer {
    fn model_id(&self) -> String;

    /// Literal table the model was trained with; references are normalized
    /// with it.
    fn literal_table(&self) -> &LiteralTable;

    /// Display text completing the current line of `context`. The text
    /// carries its own leading space when canonical spacing needs one.
    fn complete(&self, context: &str, language: Language) -> Result<String, String>;

    /// Natural-log probability of every predicted position of a whole file.
    fn token_log_probs(&self, source: &str, language: Language) -> Result<Vec<f64>, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub seed: u64,
    pub max_samples: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: 0,
            max_samples: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("the test split is empty")]
    EmptyTestSet,
    #[error("no line yielded an evaluation sample")]
    NoSamples,
    #[error("scoring `{path}` failed: {reason}")]
    Scoring { path: String, reason: String },
}

/// One held-out line split at a token boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cut {
    pub file: usize,
    /// 1-based line number.
    pub line: usize,
    pub language: Language,
    pub context: String,
    /// Canonical display text of the rest of the line.
    pub reference: String,
}

/// Picks one cut per code line, uniformly among the line's token starts.
///
/// Cuts fall on token boundaries because completions are requested after
/// non-alphanumeric keystrokes. Lines that fail to lex are counted as
/// skipped.
pub fn sample_cuts(files: &[SourceFile], table: &LiteralTable, seed: u64) -> (Vec<Cut>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cuts = Vec::new();
    let mut skipped = 0;
    for (fi, file) in files.iter().enumerate() {
        let mut offset = 0;
        for (li, raw) in file.text.split_inclusive('\n').enumerate() {
            let line_start = offset;
            offset += raw.len();
            let line = raw.trim_end_matches(['\n', '\r']);
            let body = line.trim_start_matches([' ', '\t']);
            if body.is_empty() {
                continue;
            }
            let Ok(stream) = lex_prefix(body, file.language) else {
                skipped += 1;
                continue;
            };
            let code: Vec<_> = stream
                .tokens
                .iter()
                .filter(|t| !t.kind.is_structural())
                .take_while(|t| t.kind != TokenKind::Comment)
                .cloned()
                .collect();
            if code.is_empty() {
                continue;
            }
            let cut = rng.random_range(0..code.len());
            let atoms: Vec<&str> = code[..cut].iter().map(|t| t.text.as_str()).collect();
            let indent = &line[..line.len() - body.len()];
            let context = format!("{}{}{}", &file.text[..line_start], indent, render_line(&atoms));

            let rest = crate::lexnorm::TokenStream {
                tokens: code[cut..].to_vec(),
                ..stream.clone()
            };
            let images: Vec<String> = normalize(&rest, table)
                .tokens
                .iter()
                .map(|t| match t.kind {
                    TokenKind::StrLit | TokenKind::NumLit | TokenKind::KeptLiteral => t.text.clone(),
                    _ => format!("{}{END_OF_TOKEN}", t.text),
                })
                .collect();
            cuts.push(Cut {
                file: fi,
                line: li + 1,
                language: file.language,
                context,
                reference: postprocess(&images).text,
            });
        }
    }
    (cuts, skipped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub corpus: String,
    pub config_digest: String,
    #[serde(with = "float_text")]
    pub perplexity: f64,
    pub rouge_l_precision: f64,
    pub rouge_l_recall: f64,
    pub edit_similarity: f64,
    pub syntax_valid: f64,
    pub samples: usize,
    pub skipped: usize,
    pub empty_suggestions: usize,
}

/// JSON has no infinities; non-finite values travel as strings.
mod float_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&x.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl EvalReport {
    /// Flat `key=value` block, one metric per line.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model={}", self.model);
        let _ = writeln!(out, "corpus={}", self.corpus);
        let _ = writeln!(out, "config_digest={}", self.config_digest);
        let _ = writeln!(out, "perplexity={:.4}", self.perplexity);
        let _ = writeln!(out, "rouge_l_precision={:.4}", self.rouge_l_precision);
        let _ = writeln!(out, "rouge_l_recall={:.4}", self.rouge_l_recall);
        let _ = writeln!(out, "edit_similarity={:.2}", self.edit_similarity);
        let _ = writeln!(out, "syntax_valid={:.2}", self.syntax_valid);
        let _ = writeln!(out, "samples={}", self.samples);
        let _ = writeln!(out, "skipped={}", self.skipped);
        let _ = writeln!(out, "empty_suggestions={}", self.empty_suggestions);
        out
    }

    pub fn digest(&self) -> String {
        format!("{:016x}", fnv1a64(self.to_key_values().as_bytes()))
    }

    /// Fixed-width comparison table with one row per report.
    pub fn table(reports: &[EvalReport]) -> String {
        let mut out = format!(
            "{:<24} {:>10} {:>11} {:>11} {:>9} {:>8}\n",
            "model", "perplexity", "rouge_l_p", "rouge_l_r", "edit_sim", "syntax"
        );
        for r in reports {
            let _ = writeln!(
                out,
                "{:<24} {:>10.3} {:>11.3} {:>11.3} {:>9.2} {:>8.2}",
                r.model, r.perplexity, r.rouge_l_precision, r.rouge_l_recall, r.edit_similarity, r.syntax_valid
            );
        }
        out
    }
}

/// Scores a model on held-out files: perplexity over whole files, and string
/// metrics on one completion per code line. Deterministic for a fixed seed.
pub fn evaluate<C: Completer + ?Sized>(completer: &C, files: &[SourceFile], config: &EvalConfig) -> Result<EvalReport, EvalError> {
    if files.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let mut log_probs = Vec::new();
    let mut corpus = Vec::new();
    for file in files {
        let lps = completer.token_log_probs(&file.text, file.language).map_err(|reason| EvalError::Scoring {
            path: file.path.clone(),
            reason,
        })?;
        log_probs.extend(lps);
        corpus.extend_from_slice(file.text.as_bytes());
        corpus.push(0);
    }

    let (mut cuts, mut skipped) = sample_cuts(files, completer.literal_table(), config.seed);
    if let Some(max) = config.max_samples {
        cuts.truncate(max);
    }
    let (mut p, mut r, mut es, mut valid, mut empty, mut n) = (0.0, 0.0, 0.0, 0usize, 0usize, 0usize);
    for cut in &cuts {
        let Ok(suggestion) = completer.complete(&cut.context, cut.language) else {
            skipped += 1;
            continue;
        };
        let rouge = rouge_l(&suggestion, &cut.reference);
        p += rouge.precision;
        r += rouge.recall;
        es += edit_similarity(&suggestion, &cut.reference);
        valid += usize::from(syntax_valid(&format!("{}{}", cut.context, suggestion), cut.language));
        empty += usize::from(rouge.empty_candidate);
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::NoSamples);
    }
    let nf = n as f64;
    let config_json = serde_json::to_string(config).expect("config serializes");
    Ok(EvalReport {
        model: completer.model_id(),
        corpus: format!("{:016x}", fnv1a64(&corpus)),
        config_digest: format!("{:016x}", fnv1a64(config_json.as_bytes())),
        perplexity: perplexity(log_probs),
        rouge_l_precision: p / nf,
        rouge_l_recall: r / nf,
        edit_similarity: es / nf,
        syntax_valid: 100.0 * valid as f64 / nf,
        samples: n,
        skipped,
        empty_suggestions: empty,
    })
}
