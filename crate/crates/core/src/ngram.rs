//! Relative-frequency n-gram model over subtoken ids.
//!
//! Counts are kept for every order up to `n` so unseen contexts can back off.
//! Under [`Smoothing::Backoff`] a query uses the longest suffix of the context
//! that was observed. The stupid-backoff factor (0.4 per level) multiplies
//! every entry of that distribution alike, so it cancels on renormalization.
//! [`Smoothing::Strict`] answers an unseen full-order context with the uniform
//! distribution.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

pub const BACKOFF_FACTOR: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothing {
    #[default]
    Backoff,
    Strict,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum NGramError {
    #[error("n-gram order must be at least 2, got {0}")]
    OrderTooSmall(usize),
    #[error("id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("malformed n-gram file at line {line}: {reason}")]
    Format { line: usize, reason: String },
}

type Table = HashMap<Vec<u32>, HashMap<u32, u64>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramModel {
    n: usize,
    vocab_size: usize,
    /// `tables[k]` maps length-`k` contexts to next-id counts.
    tables: Vec<Table>,
    totals: Vec<HashMap<Vec<u32>, u64>>,
    /// Files shorter than `n` ids, which contribute no windows.
    pub skipped_files: usize,
}

/// Counts every stride-1 window of length `n` (and all shorter orders) within
/// each sequence. Windows never span sequences.
pub fn train_ngram<I, S>(sequences: I, n: usize, vocab_size: usize) -> Result<NGramModel, NGramError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u32]>,
{
    if n < 2 {
        return Err(NGramError::OrderTooSmall(n));
    }
    let mut model = NGramModel {
        n,
        vocab_size,
        tables: vec![Table::new(); n],
        totals: vec![HashMap::new(); n],
        skipped_files: 0,
    };
    for seq in sequences {
        let seq = seq.as_ref();
        if let Some(&id) = seq.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(NGramError::IdOutOfRange { id, size: vocab_size });
        }
        if seq.len() < n {
            model.skipped_files += 1;
            continue;
        }
        for end in 0..seq.len() {
            for k in 0..n.min(end + 1) {
                let context = &seq[end - k..end];
                model.add(context.to_vec(), seq[end], 1);
            }
        }
    }
    Ok(model)
}

impl NGramModel {
    fn add(&mut self, context: Vec<u32>, next: u32, count: u64) {
        let k = context.len();
        *self.totals[k].entry(context.clone()).or_default() += count;
        *self.tables[k].entry(context).or_default().entry(next).or_default() += count;
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Counts of continuations after an exact context of length < n.
    pub fn counts(&self, context: &[u32]) -> Option<&HashMap<u32, u64>> {
        self.tables.get(context.len())?.get(context)
    }

    /// Number of distinct contexts stored at full order.
    pub fn num_contexts(&self) -> usize {
        self.tables[self.n - 1].len()
    }

    fn full_context<'a>(&self, context: &'a [u32]) -> &'a [u32] {
        &context[context.len().saturating_sub(self.n - 1)..]
    }

    /// Whether the last n−1 ids of `context` were observed as a context.
    pub fn is_seen(&self, context: &[u32]) -> bool {
        let ctx = self.full_context(context);
        ctx.len() == self.n - 1 && self.tables[self.n - 1].contains_key(ctx)
    }

    /// Longest observed suffix of the context, capped at n−1 ids.
    fn backoff_context<'a>(&self, context: &'a [u32]) -> Option<&'a [u32]> {
        let ctx = self.full_context(context);
        (0..=ctx.len()).map(|skip| &ctx[skip..]).find(|c| self.tables[c.len()].contains_key(*c))
    }

    /// Next-id distribution over the whole vocabulary.
    pub fn next_distribution(&self, context: &[u32], smoothing: Smoothing) -> Vec<f64> {
        let uniform = || vec![1.0 / self.vocab_size as f64; self.vocab_size];
        let chosen = match smoothing {
            Smoothing::Strict if self.is_seen(context) => Some(self.full_context(context)),
            Smoothing::Strict => None,
            Smoothing::Backoff => self.backoff_context(context),
        };
        let Some(ctx) = chosen else { return uniform() };
        let total = self.totals[ctx.len()][ctx] as f64;
        let mut dist = vec![0.0; self.vocab_size];
        for (&next, &count) in &self.tables[ctx.len()][ctx] {
            dist[next as usize] = count as f64 / total;
        }
        dist
    }

    /// Probability of one continuation, without materializing the vector.
    pub fn prob(&self, context: &[u32], next: u32, smoothing: Smoothing) -> f64 {
        let chosen = match smoothing {
            Smoothing::Strict if self.is_seen(context) => Some(self.full_context(context)),
            Smoothing::Strict => None,
            Smoothing::Backoff => self.backoff_context(context),
        };
        match chosen {
            None => 1.0 / self.vocab_size as f64,
            Some(ctx) => {
                let count = self.tables[ctx.len()][ctx].get(&next).copied().unwrap_or(0);
                count as f64 / self.totals[ctx.len()][ctx] as f64
            }
        }
    }

    /// Header `ngram v1 n=<n> vocab=<|V|>`, then `context \t next \t count`
    /// lines, context ids comma-separated (empty for unigrams), sorted.
    pub fn to_text(&self) -> String {
        let mut out = format!("ngram v1 n={} vocab={}\n", self.n, self.vocab_size);
        for table in &self.tables {
            let sorted: BTreeMap<&Vec<u32>, BTreeMap<u32, u64>> =
                table.iter().map(|(c, m)| (c, m.iter().map(|(&k, &v)| (k, v)).collect())).collect();
            for (context, nexts) in sorted {
                let ctx: Vec<String> = context.iter().map(u32::to_string).collect();
                for (next, count) in nexts {
                    let _ = writeln!(out, "{}\t{}\t{}", ctx.join(","), next, count);
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, NGramError> {
        let bad = |line: usize, reason: &str| NGramError::Format {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("ngram") || fields.next() != Some("v1") {
            return Err(bad(1, "expected `ngram v1` header"));
        }
        let (mut n, mut vocab) = (None, None);
        for field in fields {
            match field.split_once('=') {
                Some(("n", v)) => n = v.parse::<usize>().ok(),
                Some(("vocab", v)) => vocab = v.parse::<usize>().ok(),
                _ => return Err(bad(1, "unknown header field")),
            }
        }
        let n = n.filter(|&n| n >= 2).ok_or_else(|| bad(1, "missing or invalid n"))?;
        let vocab_size = vocab.ok_or_else(|| bad(1, "missing vocab"))?;
        let mut model = NGramModel {
            n,
            vocab_size,
            tables: vec![Table::new(); n],
            totals: vec![HashMap::new(); n],
            skipped_files: 0,
        };
        for (i, line) in lines {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad(i + 1, "expected 3 columns"));
            }
            let context: Vec<u32> = if cols[0].is_empty() {
                Vec::new()
            } else {
                cols[0]
                    .split(',')
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad(i + 1, "bad context id"))?
            };
            let next: u32 = cols[1].parse().map_err(|_| bad(i + 1, "bad next id"))?;
            let count: u64 = cols[2].parse().map_err(|_| bad(i + 1, "bad count"))?;
            if context.len() >= n || count == 0 {
                return Err(bad(i + 1, "context too long or zero count"));
            }
            if context.iter().chain([&next]).any(|&id| id as usize >= vocab_size) {
                return Err(bad(i + 1, "id out of range"));
            }
            model.add(context, next, count);
        }
        Ok(model)
    }
}

/// Greedy rollout: appends the most probable id (lowest id on ties) until a
/// break id wins or `max_len` ids are produced. The break id is not returned.
pub fn complete_ngram(
    model: &NGramModel,
    context: &[u32],
    max_len: usize,
    break_ids: &[u32],
    smoothing: Smoothing,
) -> Vec<u32> {
    let mut history = context.to_vec();
    let mut out = Vec::new();
    while out.len() < max_len {
        let dist = model.next_distribution(&history, smoothing);
        let mut best = 0usize;
        for (id, &p) in dist.iter().enumerate() {
            if p > dist[best] {
                best = id;
            }
        }
        let id = best as u32;
        if break_ids.contains(&id) {
            break;
        }
        out.push(id);
        history.push(id);
    }
    out
}
