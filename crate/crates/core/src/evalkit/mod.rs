//! Offline metrics and the evaluation runner.
//!
//! String metrics work on characters after whitespace normalization (runs of
//! whitespace collapse to one space, ends trimmed).

mod runner;
mod syntax;

pub use runner::{evaluate, sample_cuts, Completer, Cut, EvalConfig, EvalError, EvalReport};
pub use syntax::{syntax_valid, syntax_valid_rate};

use crate::decoder::{GptLm, NGramLm};
use crate::gptc::{self, tensor::log_softmax};

pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Insert/delete/substitute edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    /// The candidate was empty after normalization.
    pub empty_candidate: bool,
}

pub fn rouge_l(candidate: &str, reference: &str) -> RougeL {
    let c: Vec<char> = normalize_whitespace(candidate).chars().collect();
    let r: Vec<char> = normalize_whitespace(reference).chars().collect();
    if c.is_empty() {
        return RougeL {
            precision: 0.0,
            recall: 0.0,
            empty_candidate: true,
        };
    }
    let l = lcs_len(&c, &r) as f64;
    RougeL {
        precision: l / c.len() as f64,
        recall: if r.is_empty() { 0.0 } else { l / r.len() as f64 },
        empty_candidate: false,
    }
}

/// `100·(1 − lev(c, r) / max(|c|, |r|))`; 100 when both are empty.
pub fn edit_similarity(candidate: &str, reference: &str) -> f64 {
    let c: Vec<char> = normalize_whitespace(candidate).chars().collect();
    let r: Vec<char> = normalize_whitespace(reference).chars().collect();
    let longest = c.len().max(r.len());
    if longest == 0 {
        return 100.0;
    }
    100.0 * (1.0 - levenshtein(&c, &r) as f64 / longest as f64)
}

/// `exp(mean(−ln p))`. A zero probability yields infinity; an empty input
/// yields NaN.
pub fn perplexity<I: IntoIterator<Item = f64>>(log_probs: I) -> f64 {
    let (mut total, mut n) = (0.0, 0usize);
    for lp in log_probs {
        total -= lp;
        n += 1;
    }
    if n == 0 {
        return f64::NAN;
    }
    (total / n as f64).exp()
}

/// Log-probability of every id after the first, each given all earlier ids.
pub trait SequenceScorer {
    fn token_log_probs(&self, ids: &[u32]) -> Result<Vec<f64>, gptc::ModelError>;
}

impl SequenceScorer for NGramLm<'_> {
    fn token_log_probs(&self, ids: &[u32]) -> Result<Vec<f64>, gptc::ModelError> {
        Ok((1..ids.len())
            .map(|i| self.model.prob(&ids[..i], ids[i], self.smoothing).ln())
            .collect())
    }
}

impl SequenceScorer for GptLm<'_> {
    /// Sequences longer than the context window are scored in windows that
    /// overlap by half, each position scored once with as much left context
    /// as the window allows.
    fn token_log_probs(&self, ids: &[u32]) -> Result<Vec<f64>, gptc::ModelError> {
        let n_ctx = self.params.config.n_ctx;
        let mut out = Vec::with_capacity(ids.len().saturating_sub(1));
        let mut start = 0;
        while out.len() + 1 < ids.len() {
            let end = (start + n_ctx).min(ids.len());
            let logits = gptc::forward(self.params, &ids[start..end], self.lang, None)?;
            // Position `p` (absolute) is predicted by row `p − 1 − start`.
            for p in (out.len() + 1).max(start + 1)..end {
                let row = log_softmax(logits.row(p - 1 - start));
                out.push(row[ids[p] as usize]);
            }
            start += (n_ctx / 2).max(1);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gptc::{init, ModelConfig};
    use crate::ngram::{train_ngram, Smoothing};

    #[test]
    fn metric_examples() {
        let r = rouge_l("abcd", "acde");
        assert_eq!((r.precision, r.recall), (0.75, 0.75));
        assert_eq!(rouge_l("same", "same").precision, 1.0);
        let empty = rouge_l("  ", "x");
        assert!(empty.empty_candidate && empty.precision == 0.0 && empty.recall == 0.0);
        assert_eq!(rouge_l("abc", "xyz").recall, 0.0);
        assert!((edit_similarity("kitten", "sitting") - 57.142857).abs() < 1e-4);
        assert_eq!(edit_similarity("", ""), 100.0);
        assert_eq!(edit_similarity("a", ""), 0.0);
        assert_eq!(edit_similarity("x  =  1", "x = 1"), 100.0);
    }

    #[test]
    fn perplexity_examples() {
        assert!((perplexity([0.5f64.ln(), 0.5f64.ln()]) - 2.0).abs() < 1e-12);
        assert_eq!(perplexity([0.0, 0.0]), 1.0);
        assert!((perplexity(vec![(1.0f64 / 7.0).ln(); 5]) - 7.0).abs() < 1e-9);
        assert_eq!(perplexity([f64::NEG_INFINITY]), f64::INFINITY);
    }

    #[test]
    fn strict_ngram_gives_infinite_perplexity_on_unseen() {
        let model = train_ngram([vec![0u32, 1, 2]], 2, 4).unwrap();
        let strict = NGramLm { model: &model, smoothing: Smoothing::Strict };
        // Context 3 is unseen and gets the uniform distribution; 1 → 3 never
        // occurs after a seen context.
        let lps = strict.token_log_probs(&[0, 1, 3]).unwrap();
        assert_eq!(perplexity(lps), f64::INFINITY);
    }

    #[test]
    fn windowed_scoring_matches_full_forward() {
        let config = ModelConfig { n_layers: 1, d_model: 8, d_x: 8, n_heads: 2, n_ctx: 6, ..ModelConfig::desk(10) };
        let params = init::<f32>(&config, 5).unwrap();
        let lm = GptLm { params: &params, lang: None };
        let ids = [1u32, 2, 3, 4, 5];
        let lps = lm.token_log_probs(&ids).unwrap();
        let logits = gptc::forward(&params, &ids, None, None).unwrap();
        for p in 1..ids.len() {
            assert!((lps[p - 1] - log_softmax(logits.row(p - 1))[ids[p] as usize]).abs() < 1e-9);
        }
        let long: Vec<u32> = (0..17).map(|i| i % 10).collect();
        assert_eq!(lm.token_log_probs(&long).unwrap().len(), 16);
    }
}
