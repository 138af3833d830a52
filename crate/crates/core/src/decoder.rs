//! Beam search over any next-token model.
//!
//! Scores are sums of natural-log probabilities with no length
//! normalization. A hypothesis that emits a break id is retired to a
//! finished pool; the answer is the best `k` of the pool and the surviving
//! beams, ties broken by lexicographic id order.
//!
//! Three execution modes produce the same ranking and differ only in how the
//! model is invoked per step:
//!
//! * `sequential`: one call per live hypothesis (at most `L·k` calls);
//! * `parallel`: one batched call per step over all live prefixes (at most
//!   `L` calls);
//! * `parallel+cached`: one batched call per step that feeds only the newest
//!   id of each hypothesis into its own attention cache.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gptc::{self, tensor::log_softmax, KvCache, ModelError, ModelParams};
use crate::language::Language;
use crate::ngram::{NGramModel, Smoothing};
use crate::vocab::SubtokenVocabulary;

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("beam width must be at least 1")]
    ZeroBeam,
    #[error("maximum length must be at least 1")]
    ZeroLength,
    #[error("decoding needs a non-empty context")]
    EmptyContext,
    #[error("context of {context} ids plus {max_len} new ids exceeds the model's {limit} positions")]
    ContextOverflow { context: usize, max_len: usize, limit: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A next-token model usable by [`beam_search`]. Every method call counts as
/// one model invocation.
pub trait LanguageModel {
    /// Per-hypothesis incremental state for cached decoding.
    type State: Clone;

    fn vocab_size(&self) -> usize;

    /// Maximum sequence length the model accepts, if bounded.
    fn max_positions(&self) -> Option<usize>;

    /// Next-token log-probabilities after each full prefix.
    fn log_probs(&self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>, DecodeError>;

    /// Processes the context once and returns the state and next-token
    /// log-probabilities.
    fn start(&self, context: &[u32]) -> Result<(Self::State, Vec<f64>), DecodeError>;

    /// Appends one id to each state and returns the next-token
    /// log-probabilities for each.
    fn extend(&self, states: &mut [Self::State], ids: &[u32]) -> Result<Vec<Vec<f64>>, DecodeError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Mode {
    #[serde(rename = "sequential")]
    Sequential,
    #[serde(rename = "parallel")]
    Parallel,
    #[default]
    #[serde(rename = "parallel+cached")]
    ParallelCached,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Sequential, Mode::Parallel, Mode::ParallelCached];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Sequential => "sequential",
            Mode::Parallel => "parallel",
            Mode::ParallelCached => "parallel+cached",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown decode mode `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRequest {
    pub context: Vec<u32>,
    pub beam_width: usize,
    pub max_len: usize,
    pub break_ids: Vec<u32>,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypothesis {
    pub ids: Vec<u32>,
    pub log_prob: f64,
    pub step_log_probs: Vec<f64>,
    pub finished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CallStats {
    pub model_calls: usize,
    pub steps: usize,
    pub mode: Mode,
}

fn rank(a_score: f64, a_ids: &[u32], b_score: f64, b_ids: &[u32]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_ids.cmp(b_ids))
}

struct Live<S> {
    hyp: Hypothesis,
    state: Option<S>,
}

/// Standard beam search. Returns at most `k` hypotheses, best first, and the
/// number of model invocations made.
pub fn beam_search<M: LanguageModel>(model: &M, request: &DecodeRequest) -> Result<(Vec<Hypothesis>, CallStats), DecodeError> {
    let (k, max_len) = (request.beam_width, request.max_len);
    if k == 0 {
        return Err(DecodeError::ZeroBeam);
    }
    if max_len == 0 {
        return Err(DecodeError::ZeroLength);
    }
    if request.context.is_empty() {
        return Err(DecodeError::EmptyContext);
    }
    if let Some(limit) = model.max_positions() {
        if request.context.len() + max_len > limit {
            return Err(DecodeError::ContextOverflow {
                context: request.context.len(),
                max_len,
                limit,
            });
        }
    }
    let mut stats = CallStats {
        model_calls: 0,
        steps: 0,
        mode: request.mode,
    };
    let mut live: Vec<Live<M::State>> = vec![Live {
        hyp: Hypothesis {
            ids: Vec::new(),
            log_prob: 0.0,
            step_log_probs: Vec::new(),
            finished: false,
        },
        state: None,
    }];
    let mut pool: Vec<Hypothesis> = Vec::new();

    for step in 0..max_len {
        let prefixes: Vec<Vec<u32>> = live
            .iter()
            .map(|l| request.context.iter().chain(&l.hyp.ids).copied().collect())
            .collect();
        let dists: Vec<Vec<f64>> = match request.mode {
            Mode::Sequential => {
                let mut out = Vec::with_capacity(live.len());
                for prefix in &prefixes {
                    stats.model_calls += 1;
                    out.extend(model.log_probs(&[prefix.as_slice()])?);
                }
                out
            }
            Mode::Parallel => {
                stats.model_calls += 1;
                let refs: Vec<&[u32]> = prefixes.iter().map(Vec::as_slice).collect();
                model.log_probs(&refs)?
            }
            Mode::ParallelCached if step == 0 => {
                stats.model_calls += 1;
                let (state, dist) = model.start(&request.context)?;
                live[0].state = Some(state);
                vec![dist]
            }
            Mode::ParallelCached => {
                stats.model_calls += 1;
                let mut states: Vec<M::State> = live.iter_mut().map(|l| l.state.take().expect("live state")).collect();
                let last: Vec<u32> = live.iter().map(|l| *l.hyp.ids.last().expect("non-root")).collect();
                let dists = model.extend(&mut states, &last)?;
                for (l, s) in live.iter_mut().zip(states) {
                    l.state = Some(s);
                }
                dists
            }
        };
        stats.steps += 1;

        let mut candidates: Vec<(usize, u32, f64)> = Vec::new();
        for (p, dist) in dists.iter().enumerate() {
            for (id, &lp) in dist.iter().enumerate() {
                if lp.is_finite() {
                    candidates.push((p, id as u32, live[p].hyp.log_prob + lp));
                }
            }
        }
        let cmp = |a: &(usize, u32, f64), b: &(usize, u32, f64)| {
            b.2.total_cmp(&a.2)
                .then_with(|| live[a.0].hyp.ids.cmp(&live[b.0].hyp.ids))
                .then_with(|| a.1.cmp(&b.1))
        };
        if candidates.len() > k {
            candidates.select_nth_unstable_by(k - 1, cmp);
            candidates.truncate(k);
        }
        candidates.sort_by(cmp);

        let mut next = Vec::with_capacity(candidates.len());
        for &(p, id, score) in &candidates {
            let parent = &live[p];
            let mut hyp = parent.hyp.clone();
            hyp.ids.push(id);
            hyp.step_log_probs.push(score - parent.hyp.log_prob);
            hyp.log_prob = score;
            if request.break_ids.contains(&id) {
                hyp.finished = true;
                pool.push(hyp);
            } else {
                next.push(Live {
                    hyp,
                    state: parent.state.clone(),
                });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    for l in live {
        let mut hyp = l.hyp;
        hyp.finished = true;
        pool.push(hyp);
    }
    pool.sort_by(|a, b| rank(a.log_prob, &a.ids, b.log_prob, &b.ids));
    pool.truncate(k);
    Ok((pool, stats))
}

/// Per-mode results of [`mode_equivalence_check`].
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub results: Vec<(Mode, Vec<Hypothesis>, CallStats)>,
    /// First disagreement with the sequential reference, if any.
    pub mismatch: Option<String>,
}

impl EquivalenceReport {
    pub fn consistent(&self) -> bool {
        self.mismatch.is_none()
    }
}

pub const MODE_TOLERANCE: f64 = 1e-5;

/// Runs the request in all three modes and compares each against the
/// sequential result: identical ids and scores within [`MODE_TOLERANCE`].
pub fn mode_equivalence_check<M: LanguageModel>(model: &M, request: &DecodeRequest) -> Result<EquivalenceReport, DecodeError> {
    let mut results = Vec::new();
    for mode in Mode::ALL {
        let req = DecodeRequest {
            mode,
            ..request.clone()
        };
        let (hyps, stats) = beam_search(model, &req)?;
        results.push((mode, hyps, stats));
    }
    let mut mismatch = None;
    let reference = &results[0].1;
    'modes: for (mode, hyps, _) in &results[1..] {
        if hyps.len() != reference.len() {
            mismatch = Some(format!("{}: {} hypotheses vs {}", mode.name(), hyps.len(), reference.len()));
            break;
        }
        for (rank, (a, b)) in reference.iter().zip(hyps).enumerate() {
            let steps = a.ids.len().max(b.ids.len());
            for s in 0..steps {
                let same_id = a.ids.get(s) == b.ids.get(s);
                let close = match (a.step_log_probs.get(s), b.step_log_probs.get(s)) {
                    (Some(x), Some(y)) => (x - y).abs() <= MODE_TOLERANCE,
                    _ => false,
                };
                if !same_id || !close {
                    mismatch = Some(format!("{}: rank {rank} diverges at step {s}", mode.name()));
                    break 'modes;
                }
            }
            if (a.log_prob - b.log_prob).abs() > MODE_TOLERANCE {
                mismatch = Some(format!("{}: rank {rank} score differs", mode.name()));
                break 'modes;
            }
        }
    }
    Ok(EquivalenceReport { results, mismatch })
}

/// Default break set: `<EOL>` and `<EOF>`, plus the closing brace for
/// brace-scoped languages.
pub fn default_break_ids(vocab: &SubtokenVocabulary, language: Language) -> Vec<u32> {
    let mut ids = vec![vocab.eol(), vocab.eof()];
    if language == Language::ToyC {
        let closer = format!("}}{}", crate::vocab::END_OF_TOKEN);
        ids.extend(vocab.id(&closer));
    }
    ids
}

/// Fixed conditional table keyed by the full prefix (context included);
/// prefixes not in the table get the uniform distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TableLm {
    pub vocab_size: usize,
    pub table: HashMap<Vec<u32>, Vec<f64>>,
}

impl TableLm {
    /// Random distributions for every continuation of `context` up to
    /// `depth` ids.
    pub fn random(context: &[u32], vocab_size: usize, depth: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = HashMap::new();
        let mut frontier = vec![context.to_vec()];
        for _ in 0..depth {
            let mut next = Vec::new();
            for prefix in frontier {
                let weights: Vec<f64> = (0..vocab_size).map(|_| rng.random::<f64>() + 1e-3).collect();
                let total: f64 = weights.iter().sum();
                table.insert(prefix.clone(), weights.iter().map(|w| w / total).collect());
                for id in 0..vocab_size as u32 {
                    let mut p = prefix.clone();
                    p.push(id);
                    next.push(p);
                }
            }
            frontier = next;
        }
        TableLm { vocab_size, table }
    }

    pub fn probs(&self, prefix: &[u32]) -> Vec<f64> {
        self.table
            .get(prefix)
            .cloned()
            .unwrap_or_else(|| vec![1.0 / self.vocab_size as f64; self.vocab_size])
    }
}

impl LanguageModel for TableLm {
    type State = Vec<u32>;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_positions(&self) -> Option<usize> {
        None
    }

    fn log_probs(&self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>, DecodeError> {
        Ok(prefixes.iter().map(|p| self.probs(p).iter().map(|x| x.ln()).collect()).collect())
    }

    fn start(&self, context: &[u32]) -> Result<(Vec<u32>, Vec<f64>), DecodeError> {
        let lp = self.log_probs(&[context])?.remove(0);
        Ok((context.to_vec(), lp))
    }

    fn extend(&self, states: &mut [Vec<u32>], ids: &[u32]) -> Result<Vec<Vec<f64>>, DecodeError> {
        for (s, &id) in states.iter_mut().zip(ids) {
            s.push(id);
        }
        let refs: Vec<&[u32]> = states.iter().map(Vec::as_slice).collect();
        self.log_probs(&refs)
    }
}

/// n-gram model adapter.
#[derive(Debug, Clone, Copy)]
pub struct NGramLm<'a> {
    pub model: &'a NGramModel,
    pub smoothing: Smoothing,
}

impl LanguageModel for NGramLm<'_> {
    type State = Vec<u32>;

    fn vocab_size(&self) -> usize {
        self.model.vocab_size()
    }

    fn max_positions(&self) -> Option<usize> {
        None
    }

    fn log_probs(&self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>, DecodeError> {
        Ok(prefixes
            .iter()
            .map(|p| self.model.next_distribution(p, self.smoothing).into_iter().map(f64::ln).collect())
            .collect())
    }

    fn start(&self, context: &[u32]) -> Result<(Vec<u32>, Vec<f64>), DecodeError> {
        let lp = self.log_probs(&[context])?.remove(0);
        Ok((context.to_vec(), lp))
    }

    fn extend(&self, states: &mut [Vec<u32>], ids: &[u32]) -> Result<Vec<Vec<f64>>, DecodeError> {
        for (s, &id) in states.iter_mut().zip(ids) {
            s.push(id);
        }
        let refs: Vec<&[u32]> = states.iter().map(Vec::as_slice).collect();
        self.log_probs(&refs)
    }
}

/// Transformer adapter; caches are per-hypothesis KV caches.
#[derive(Debug, Clone, Copy)]
pub struct GptLm<'a> {
    pub params: &'a ModelParams<f32>,
    pub lang: Option<usize>,
}

impl LanguageModel for GptLm<'_> {
    type State = KvCache<f32>;

    fn vocab_size(&self) -> usize {
        self.params.config.vocab_size
    }

    fn max_positions(&self) -> Option<usize> {
        Some(self.params.config.n_ctx)
    }

    fn log_probs(&self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>, DecodeError> {
        prefixes
            .iter()
            .map(|p| {
                let logits = gptc::forward(self.params, p, self.lang, None)?;
                Ok(log_softmax(logits.row(p.len() - 1)))
            })
            .collect()
    }

    fn start(&self, context: &[u32]) -> Result<(KvCache<f32>, Vec<f64>), DecodeError> {
        let mut cache = KvCache::new(self.params);
        let logits = gptc::forward(self.params, context, self.lang, Some(&mut cache))?;
        Ok((cache, log_softmax(logits.row(context.len() - 1))))
    }

    fn extend(&self, states: &mut [KvCache<f32>], ids: &[u32]) -> Result<Vec<Vec<f64>>, DecodeError> {
        let logits = gptc::forward_batch_step(self.params, states, ids, self.lang)?;
        Ok((0..ids.len()).map(|i| log_softmax(logits.row(i))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gptc::{init, ModelConfig};
    use crate::ngram::train_ngram;

    /// Every path of length ≤ L that stops at the first break id.
    fn enumerate(lm: &TableLm, context: &[u32], max_len: usize, breaks: &[u32]) -> Vec<(Vec<u32>, f64)> {
        let mut done = Vec::new();
        let mut frontier = vec![(Vec::new(), 0.0)];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for (ids, score) in frontier {
                let prefix: Vec<u32> = context.iter().chain(&ids).copied().collect();
                for (id, p) in lm.probs(&prefix).into_iter().enumerate() {
                    let mut path: Vec<u32> = ids.clone();
                    path.push(id as u32);
                    let s = score + p.ln();
                    if breaks.contains(&(id as u32)) {
                        done.push((path, s));
                    } else {
                        next.push((path, s));
                    }
                }
            }
            frontier = next;
        }
        done.extend(frontier);
        done.sort_by(|a, b| rank(a.1, &a.0, b.1, &b.0));
        done
    }

    fn request(context: Vec<u32>, k: usize, l: usize, breaks: Vec<u32>, mode: Mode) -> DecodeRequest {
        DecodeRequest {
            context,
            beam_width: k,
            max_len: l,
            break_ids: breaks,
            mode,
        }
    }

    #[test]
    fn full_width_matches_enumeration() {
        for seed in 0..20 {
            let lm = TableLm::random(&[0], 4, 3, seed);
            let breaks = vec![3];
            let oracle = enumerate(&lm, &[0], 3, &breaks);
            let (hyps, _) = beam_search(&lm, &request(vec![0], 64, 3, breaks.clone(), Mode::Parallel)).unwrap();
            assert_eq!(hyps[0].ids, oracle[0].0);
            assert!((hyps[0].log_prob - oracle[0].1).abs() < 1e-12);
        }
    }

    #[test]
    fn beam_one_is_greedy() {
        let lm = TableLm::random(&[1], 4, 4, 9);
        let (hyps, _) = beam_search(&lm, &request(vec![1], 1, 4, vec![], Mode::Sequential)).unwrap();
        let mut prefix = vec![1u32];
        let mut score = 0.0;
        for _ in 0..4 {
            let probs = lm.probs(&prefix);
            let (best, p) = probs.iter().enumerate().fold((0, f64::MIN), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
            prefix.push(best as u32);
            score += p.ln();
        }
        assert_eq!(hyps[0].ids, prefix[1..]);
        assert!((hyps[0].log_prob - score).abs() < 1e-12);
    }

    #[test]
    fn immediate_break_finishes_after_one_step() {
        let mut table = HashMap::new();
        table.insert(vec![0u32], vec![0.1, 0.7, 0.1, 0.1]);
        let lm = TableLm { vocab_size: 4, table };
        let (hyps, stats) = beam_search(&lm, &request(vec![0], 1, 5, vec![1], Mode::ParallelCached)).unwrap();
        assert_eq!(hyps[0].ids, vec![1]);
        assert!(hyps[0].finished);
        assert_eq!(stats.steps, 1);
    }

    #[test]
    fn hypothesis_invariants() {
        let lm = TableLm::random(&[2], 4, 5, 4);
        let (hyps, _) = beam_search(&lm, &request(vec![2], 3, 5, vec![0], Mode::Parallel)).unwrap();
        for h in &hyps {
            let total: f64 = h.step_log_probs.iter().sum();
            assert!((total - h.log_prob).abs() < 1e-9);
            assert!(h.step_log_probs.iter().all(|&x| x <= 0.0));
            assert!(h.finished && (h.ids.last() == Some(&0) || h.ids.len() == 5));
        }
        for w in hyps.windows(2) {
            assert!(w[0].log_prob >= w[1].log_prob);
        }
    }

    #[test]
    fn call_counts_by_mode() {
        for (l, k) in [(10, 1), (10, 10)] {
            let lm = TableLm::random(&[0], 4, 0, 1);
            let report = mode_equivalence_check(&lm, &request(vec![0], k, l, vec![], Mode::Parallel)).unwrap();
            assert!(report.consistent(), "{:?}", report.mismatch);
            let calls: Vec<usize> = report.results.iter().map(|r| r.2.model_calls).collect();
            assert!(calls[0] <= l * k);
            assert!(calls[1] <= l && calls[2] <= l);
        }
    }

    #[test]
    fn argument_errors() {
        let lm = TableLm::random(&[0], 4, 1, 1);
        assert!(matches!(beam_search(&lm, &request(vec![0], 0, 3, vec![], Mode::Parallel)), Err(DecodeError::ZeroBeam)));
        assert!(matches!(beam_search(&lm, &request(vec![0], 1, 0, vec![], Mode::Parallel)), Err(DecodeError::ZeroLength)));
        assert!(matches!(beam_search(&lm, &request(vec![], 1, 1, vec![], Mode::Parallel)), Err(DecodeError::EmptyContext)));
    }

    #[test]
    fn transformer_modes_agree() {
        let config = ModelConfig {
            n_layers: 2,
            d_model: 16,
            d_x: 16,
            n_heads: 2,
            n_ctx: 16,
            vocab_size: 9,
            ..ModelConfig::desk(9)
        };
        let params = init::<f32>(&config, 3).unwrap();
        let lm = GptLm { params: &params, lang: None };
        let report = mode_equivalence_check(&lm, &request(vec![1, 2, 3], 3, 5, vec![0], Mode::Parallel)).unwrap();
        assert!(report.consistent(), "{:?}", report.mismatch);
        let too_long = request(vec![1; 12], 3, 5, vec![], Mode::Parallel);
        assert!(matches!(beam_search(&lm, &too_long), Err(DecodeError::ContextOverflow { .. })));
    }

    #[test]
    fn ngram_adapter_follows_the_chain() {
        let model = train_ngram([vec![0u32, 1, 2, 3, 0, 1, 2, 3]], 3, 4).unwrap();
        let lm = NGramLm { model: &model, smoothing: Smoothing::Backoff };
        let (hyps, _) = beam_search(&lm, &request(vec![0, 1], 2, 3, vec![], Mode::ParallelCached)).unwrap();
        assert_eq!(hyps[0].ids, vec![2, 3, 0]);
        assert!(hyps[0].log_prob.abs() < 1e-12);
    }
}
