//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p wholeline-core --test acceptance`; extra
//! arguments select criteria whose name contains them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wholeline_core::corpus::SourceFile;
use wholeline_core::decoder::{mode_equivalence_check, DecodeRequest, GptLm, Mode, TableLm, MODE_TOLERANCE};
use wholeline_core::evalkit::{self, evaluate, sample_cuts, EvalConfig, EvalReport};
use wholeline_core::gptc::{
    self, count_params, distill_init, eval_loss, forward, forward_batch_step, init, loss_and_grad, KvCache, LangMode,
    LossOptions, ModelConfig, ModelParams, Sample, TrainSchedule,
};
use wholeline_core::lexnorm::{self, KeptCounts, LiteralTable};
use wholeline_core::ngram::{train_ngram, NGramModel, Smoothing};
use wholeline_core::pipeline::{self, DecodeSettings, Engine, EngineModel};
use wholeline_core::suggest::{early_stop_ratio, CompletionTrie};
use wholeline_core::vocab::{Scheme, SubtokenVocabulary};
use wholeline_core::{synth, Language};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    outcome(false, detail)
}

type Criterion = (&'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 11] = [
    ("metric-oracles", metric_oracles),
    ("ngram-correctness", ngram_correctness),
    ("gradient-check", gradient_check),
    ("kv-cache-equivalence", kv_cache_equivalence),
    ("beam-optimality", beam_optimality),
    ("weight-tying", weight_tying),
    ("early-stop-curve", early_stop_curve),
    ("end-to-end-overfit", end_to_end_overfit),
    ("multilingual", multilingual),
    ("distillation", distillation),
    ("privacy", privacy),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            fail(format!("panicked: {msg}"))
        });
        failed += usize::from(!result.pass);
        println!(
            "{} {name}: {} [{:.1}s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            started.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- metrics

fn oracle_lcs(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    if let Some(&v) = memo.get(&(a.len(), b.len())) {
        return v;
    }
    let v = if a[0] == b[0] {
        1 + oracle_lcs(&a[1..], &b[1..], memo)
    } else {
        oracle_lcs(&a[1..], b, memo).max(oracle_lcs(a, &b[1..], memo))
    };
    memo.insert((a.len(), b.len()), v);
    v
}

fn oracle_lev(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if let Some(&v) = memo.get(&(a.len(), b.len())) {
        return v;
    }
    let v = if a[0] == b[0] {
        oracle_lev(&a[1..], &b[1..], memo)
    } else {
        1 + oracle_lev(&a[1..], b, memo)
            .min(oracle_lev(a, &b[1..], memo))
            .min(oracle_lev(&a[1..], &b[1..], memo))
    };
    memo.insert((a.len(), b.len()), v);
    v
}

/// Collapses whitespace runs to one space and trims, character by character.
fn oracle_squash(s: &str) -> Vec<char> {
    let mut out = Vec::new();
    let mut gap = false;
    for c in s.chars() {
        if c.is_whitespace() {
            gap = !out.is_empty();
        } else {
            if gap {
                out.push(' ');
                gap = false;
            }
            out.push(c);
        }
    }
    out
}

fn metric_oracles() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let alphabet = ['a', 'b', 'c', ' ', '(', ')'];
    let random_string = |rng: &mut ChaCha8Rng| -> String {
        let len = rng.random_range(0..=30);
        (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
    };
    for i in 0..1000 {
        let (a, b) = (random_string(&mut rng), random_string(&mut rng));
        let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        let lcs = oracle_lcs(&ca, &cb, &mut HashMap::new());
        let lev = oracle_lev(&ca, &cb, &mut HashMap::new());
        if evalkit::lcs_len(&ca, &cb) != lcs || evalkit::levenshtein(&ca, &cb) != lev {
            return fail(format!("pair {i} ({a:?}, {b:?}): lcs/levenshtein disagree"));
        }
        let (na, nb) = (oracle_squash(&a), oracle_squash(&b));
        let nlcs = oracle_lcs(&na, &nb, &mut HashMap::new()) as f64;
        let nlev = oracle_lev(&na, &nb, &mut HashMap::new()) as f64;
        let rouge = evalkit::rouge_l(&a, &b);
        let (p, r) = if na.is_empty() {
            (0.0, 0.0)
        } else {
            (nlcs / na.len() as f64, if nb.is_empty() { 0.0 } else { nlcs / nb.len() as f64 })
        };
        let longest = na.len().max(nb.len());
        let es = if longest == 0 { 100.0 } else { 100.0 * (1.0 - nlev / longest as f64) };
        if rouge.precision != p || rouge.recall != r || rouge.empty_candidate != na.is_empty() {
            return fail(format!("pair {i} ({a:?}, {b:?}): rouge_l {rouge:?} vs oracle ({p}, {r})"));
        }
        if evalkit::edit_similarity(&a, &b) != es {
            return fail(format!("pair {i} ({a:?}, {b:?}): edit similarity disagrees"));
        }
    }
    let kitten = evalkit::edit_similarity("kitten", "sitting");
    let elapsed = started.elapsed();
    outcome(
        (kitten - 57.14).abs() <= 0.01 && elapsed < Duration::from_secs(10),
        format!("1000 pairs match, kitten/sitting = {kitten:.4}, {:.2}s", elapsed.as_secs_f64()),
    )
}

// ----------------------------------------------------------------- n-gram

/// (context, next) → count from every window of length ≤ n, skipping
/// sequences shorter than n.
fn brute_counts(seqs: &[Vec<u32>], n: usize) -> BTreeMap<(Vec<u32>, u32), u64> {
    let mut out = BTreeMap::new();
    for seq in seqs.iter().filter(|s| s.len() >= n) {
        for start in 0..seq.len() {
            for m in 1..=n {
                if start + m > seq.len() {
                    break;
                }
                let w = &seq[start..start + m];
                *out.entry((w[..m - 1].to_vec(), w[m - 1])).or_default() += 1;
            }
        }
    }
    out
}

fn dumped_counts(model: &NGramModel) -> BTreeMap<(Vec<u32>, u32), u64> {
    model
        .to_text()
        .lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            let ctx = f[0].split(',').filter(|s| !s.is_empty()).map(|s| s.parse().unwrap()).collect();
            ((ctx, f[1].parse().unwrap()), f[2].parse().unwrap())
        })
        .collect()
}

fn ngram_correctness() -> Outcome {
    let mut fixtures: Vec<(String, Vec<Vec<u32>>, usize, usize)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (v, n) in [(3usize, 2usize), (5, 3), (8, 4), (4, 5)] {
        let seqs = (0..12)
            .map(|_| {
                let len = rng.random_range(0..40);
                (0..len).map(|_| rng.random_range(0..v as u32)).collect()
            })
            .collect();
        fixtures.push((format!("random V={v} n={n}"), seqs, v, n));
    }
    let files = synth::generate(Language::ToyC, 10, 4, 3);
    let (_, streams) = pipeline::normalize_files(&files, KeptCounts::default()).unwrap();
    let vocab = pipeline::train_vocabulary(&streams, Scheme::Bpe, 250).unwrap();
    let encoded: Vec<Vec<u32>> = streams.iter().map(|s| vocab.encode(s).unwrap()).collect();
    fixtures.push(("toy-c corpus n=5".into(), encoded, vocab.size(), 5));

    let mut distributions = 0;
    for (name, seqs, v, n) in &fixtures {
        let model = train_ngram(seqs, *n, *v).unwrap();
        let brute = brute_counts(seqs, *n);
        if dumped_counts(&model) != brute {
            return fail(format!("{name}: counts differ from the window scan"));
        }
        let mut by_context: BTreeMap<&[u32], BTreeMap<u32, u64>> = BTreeMap::new();
        for ((ctx, next), count) in &brute {
            by_context.entry(ctx.as_slice()).or_default().insert(*next, *count);
            if model.counts(ctx).and_then(|m| m.get(next)) != Some(count) {
                return fail(format!("{name}: counts({ctx:?})[{next}] wrong"));
            }
        }
        for (ctx, nexts) in &by_context {
            let total: u64 = nexts.values().sum();
            for smoothing in [Smoothing::Backoff, Smoothing::Strict] {
                if smoothing == Smoothing::Strict && ctx.len() != n - 1 {
                    continue;
                }
                let dist = model.next_distribution(ctx, smoothing);
                let sum: f64 = dist.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return fail(format!("{name}: distribution after {ctx:?} sums to {sum}"));
                }
                for (id, p) in dist.iter().enumerate() {
                    let expected = nexts.get(&(id as u32)).copied().unwrap_or(0) as f64 / total as f64;
                    if (p - expected).abs() > 1e-12 {
                        return fail(format!("{name}: P({id} | {ctx:?}) = {p}, expected {expected}"));
                    }
                }
                distributions += 1;
            }
        }
    }
    outcome(true, format!("{} fixtures, {distributions} seen-context distributions exact", fixtures.len()))
}

// ---------------------------------------------------------------- gradient

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let config = ModelConfig {
        n_layers: 1,
        d_model: 8,
        d_x: 8,
        n_heads: 2,
        n_ctx: 8,
        ..ModelConfig::desk(11)
    };
    let mut params = init::<f64>(&config, 3).unwrap();
    // Non-trivial gains and biases so their gradients are exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (_, t) in params.tensors_mut() {
        for x in t.data.iter_mut() {
            *x += rng.random_range(-0.1..0.1);
        }
    }
    let batch = vec![Sample::new(vec![1, 4, 2, 9, 10, 0, 3], None), Sample::new(vec![5, 5, 7, 1], None)];
    let opts = LossOptions::default();
    let loss = |p: &ModelParams<f64>| loss_and_grad(p, &batch, &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().0;
    let (_, grads) = loss_and_grad(&params, &batch, &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let eps = 1e-5;
    let mut worst = (0.0f64, String::new());
    for (ti, name) in names.iter().enumerate() {
        let len = params.tensors()[ti].1.len();
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for i in 0..len {
            let orig = params.tensors()[ti].1.data[i];
            params.tensors_mut()[ti].1.data[i] = orig + eps;
            let up = loss(&params);
            params.tensors_mut()[ti].1.data[i] = orig - eps;
            let down = loss(&params);
            params.tensors_mut()[ti].1.data[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.tensors()[ti].1.data[i];
            diff += (numeric - analytic).powi(2);
            norm += numeric.abs().max(analytic.abs()).powi(2);
        }
        let rel = if norm == 0.0 { 0.0 } else { (diff / norm).sqrt() };
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    let elapsed = started.elapsed();
    outcome(
        worst.0 < 1e-3 && elapsed < Duration::from_secs(60),
        format!(
            "{} tensors, worst relative error {:.2e} ({}), {:.1}s",
            names.len(),
            worst.0,
            worst.1,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- KV cache

fn kv_cache_equivalence() -> Outcome {
    let config = ModelConfig::desk(500);
    let params = init::<f32>(&config, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    let mut control = f64::INFINITY;
    for _ in 0..100 {
        let len = rng.random_range(2..=64);
        let ids: Vec<u32> = (0..len).map(|_| rng.random_range(0..500)).collect();
        let full = forward(&params, &ids, None, None).unwrap();
        let split = rng.random_range(1..len);
        let mut cache = KvCache::new(&params);
        let head = forward(&params, &ids[..split], None, Some(&mut cache)).unwrap();
        let mut rows: Vec<Vec<f32>> = (0..split).map(|i| head.row(i).to_vec()).collect();
        for &id in &ids[split..] {
            let step = forward_batch_step(&params, std::slice::from_mut(&mut cache), &[id], None).unwrap();
            rows.push(step.row(0).to_vec());
        }
        for (i, row) in rows.iter().enumerate() {
            for (a, b) in row.iter().zip(full.row(i)) {
                worst = worst.max(f64::from((a - b).abs()));
            }
        }
        // Control: the last token stepped from an empty cache must differ.
        let mut fresh = KvCache::new(&params);
        let alone = forward_batch_step(&params, std::slice::from_mut(&mut fresh), &ids[len - 1..], None).unwrap();
        let gap = alone.row(0).iter().zip(full.row(len - 1)).map(|(a, b)| f64::from((a - b).abs())).fold(0.0, f64::max);
        control = control.min(gap);
    }
    outcome(
        worst < 1e-5 && control > 1e-3,
        format!("100 contexts, max |Δlogit| = {worst:.2e}; without the cache the gap is at least {control:.2e}"),
    )
}

// -------------------------------------------------------------------- beam

/// Every complete continuation (ending in a break id or at length `max_len`)
/// with its log-probability, best first.
fn enumerate(lm: &TableLm, context: &[u32], max_len: usize, breaks: &[u32]) -> Vec<(Vec<u32>, f64)> {
    fn walk(lm: &TableLm, prefix: &mut Vec<u32>, depth: usize, score: f64, max_len: usize, breaks: &[u32], out: &mut Vec<(Vec<u32>, f64, usize)>) {
        let probs = lm.probs(prefix);
        for (id, p) in probs.iter().enumerate() {
            let id = id as u32;
            prefix.push(id);
            let s = score + p.ln();
            if breaks.contains(&id) || depth + 1 == max_len {
                out.push((prefix.clone(), s, depth + 1));
            } else {
                walk(lm, prefix, depth + 1, s, max_len, breaks, out);
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    walk(lm, &mut context.to_vec(), 0, 0.0, max_len, breaks, &mut out);
    let mut ranked: Vec<(Vec<u32>, f64)> =
        out.into_iter().map(|(ids, s, depth)| (ids[ids.len() - depth..].to_vec(), s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

fn beam_optimality() -> Outcome {
    for seed in 0..50 {
        let context = [seed as u32 % 4];
        let lm = TableLm::random(&context, 4, 3, seed);
        let breaks = if seed % 2 == 0 { vec![3] } else { vec![] };
        let oracle = enumerate(&lm, &context, 3, &breaks);
        let request = DecodeRequest {
            context: context.to_vec(),
            beam_width: 64,
            max_len: 3,
            break_ids: breaks,
            mode: Mode::Sequential,
        };
        let report = mode_equivalence_check(&lm, &request).unwrap();
        if let Some(m) = report.mismatch {
            return fail(format!("table {seed}: modes disagree: {m}"));
        }
        let hyps = &report.results[0].1;
        if hyps.len() != oracle.len().min(64) {
            return fail(format!("table {seed}: {} hypotheses, {} sequences exist", hyps.len(), oracle.len()));
        }
        for (h, (ids, score)) in hyps.iter().zip(&oracle) {
            if &h.ids != ids || (h.log_prob - score).abs() > 1e-12 {
                return fail(format!("table {seed}: beam {:?} vs optimum {:?}", h.ids, ids));
            }
        }
    }

    let config = ModelConfig {
        n_layers: 2,
        d_model: 32,
        d_x: 32,
        n_heads: 4,
        n_ctx: 40,
        ..ModelConfig::desk(60)
    };
    let params = init::<f32>(&config, 5).unwrap();
    let lm = GptLm { params: &params, lang: None };
    let mut rows = Vec::new();
    for (l, k) in [(10usize, 1usize), (10, 10), (25, 15)] {
        let request = DecodeRequest {
            context: vec![1, 2, 3],
            beam_width: k,
            max_len: l,
            break_ids: Vec::new(),
            mode: Mode::Parallel,
        };
        let report = mode_equivalence_check(&lm, &request).unwrap();
        if let Some(m) = report.mismatch {
            return fail(format!("(L={l}, k={k}): {m}"));
        }
        for (mode, _, stats) in &report.results {
            if *mode != Mode::Sequential && stats.model_calls > l {
                return fail(format!("(L={l}, k={k}) {}: {} calls", mode.name(), stats.model_calls));
            }
        }
        let calls: Vec<String> = report.results.iter().map(|(m, _, s)| format!("{}={}", m.name(), s.model_calls)).collect();
        rows.push(format!("L={l},k={k}: {}", calls.join(" ")));
    }
    outcome(
        true,
        format!("50 tables optimal, modes agree within {MODE_TOLERANCE:e}; {}", rows.join("; ")),
    )
}

// ------------------------------------------------------------ weight tying

fn weight_tying() -> Outcome {
    let configs = [
        ModelConfig::desk(2000),
        ModelConfig {
            n_layers: 2,
            d_model: 64,
            d_x: 64,
            n_heads: 4,
            n_ctx: 32,
            ..ModelConfig::desk(300)
        },
        ModelConfig {
            lang_mode: LangMode::Embedding,
            n_lang: 2,
            ..ModelConfig::desk(120)
        },
        ModelConfig {
            lang_mode: LangMode::DoubleHeads,
            n_lang: 2,
            ..ModelConfig::desk(120)
        },
    ];
    for config in &configs {
        let params = init::<f32>(config, 0).unwrap();
        let brute: usize = params.tensors().iter().map(|(_, t)| t.rows * t.cols).sum();
        if count_params(config) != brute {
            return fail(format!("count_params {} vs element sum {brute}", count_params(config)));
        }
        let v = config.vocab_size;
        let tensors = params.tensors();
        let vocab_sized: Vec<&str> = tensors
            .iter()
            .filter(|(_, t)| t.rows == v && t.cols > 1 || t.cols == v && t.rows > 1)
            .map(|(n, _)| n.as_str())
            .collect();
        if vocab_sized != ["wte"] {
            return fail(format!("vocabulary-sized tensors: {vocab_sized:?}"));
        }
    }
    // The untied control replaces the d_model×d_x projection with its own
    // |V|×d_x output matrix.
    let desk = &configs[0];
    let tied = init::<f32>(desk, 0).unwrap();
    let tied_count: usize = tied.tensors().iter().map(|(_, t)| t.rows * t.cols).sum();
    let untied_count = tied_count - tied.proj_a.rows * tied.proj_a.cols + desk.vocab_size * desk.d_x;
    let saved = untied_count - tied_count;
    let expected = desk.vocab_size * desk.d_x - desk.d_model * desk.d_x;
    outcome(
        saved == expected && saved == 239_616,
        format!("no output vocabulary tensor; count_params exact on {} configs; tying saves {saved}", configs.len()),
    )
}

// -------------------------------------------------------------- early stop

fn early_stop_curve() -> Outcome {
    let (alpha, kappa) = (0.8, 10.0);
    if (early_stop_ratio(0.0, alpha, kappa) - alpha / 2.0).abs() > 1e-15 {
        return fail("R(0) != α/2");
    }
    let curve: Vec<f64> = (0..=400).map(|l| early_stop_ratio(l as f64, alpha, kappa)).collect();
    if curve.windows(2).any(|w| w[1] < w[0]) {
        return fail("R is not monotone in L");
    }
    if (early_stop_ratio(1e4, alpha, kappa) - alpha).abs() > 1e-12 {
        return fail("R does not approach α");
    }
    let r10 = early_stop_ratio(10.0, alpha, kappa);
    if (r10 - 0.5849).abs() > 1e-4 {
        return fail(format!("R(10) = {r10:.6}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let alphabet = ["a", "b", "c▁", "(▁", ")▁", "x_▁"];
    for t in 0..100 {
        let paths: Vec<(Vec<&str>, Vec<f64>)> = (0..rng.random_range(1..8))
            .map(|_| {
                let len = rng.random_range(1..7);
                let subs: Vec<&str> = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
                let probs: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..1.0)).collect();
                (subs, probs)
            })
            .collect();
        let trie = CompletionTrie::from_paths(&paths, rng.random_range(0..60));
        let alphas: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
        let lengths: Vec<usize> = alphas.iter().map(|&a| trie.traverse_greedy(a, kappa).len()).collect();
        if lengths.windows(2).any(|w| w[1] > w[0]) {
            return fail(format!("trie {t}: suggestion grows with α: {lengths:?}"));
        }
    }
    outcome(true, format!("R(0)=α/2, monotone, R→α, R(10)={r10:.4}; length monotone in α on 100 tries"))
}

// ----------------------------------------------------------------- overfit

/// Desk-scale harness shared by the transformer and the n-gram baselines.
struct Overfit {
    vocab: SubtokenVocabulary,
    files: Vec<SourceFile>,
    streams: Vec<lexnorm::TokenStream>,
}

fn overfit_corpus() -> Overfit {
    let files = synth::generate_lines(Language::ToyPy, 200, 3, 21);
    // The small corpus alone cannot support 2000 subtokens; the vocabulary is
    // learned on a larger corpus drawn from the same generator.
    let mut vocab_files = files.clone();
    vocab_files.extend(synth::generate(Language::ToyPy, 3000, 6, 22));
    let (_, vocab_streams) = pipeline::normalize_files(&vocab_files, KeptCounts::default()).unwrap();
    let vocab = pipeline::train_vocabulary(&vocab_streams, Scheme::Bpe, 2000).unwrap();
    let table = vocab.literal_table();
    let streams = pipeline::lex_files(&files)
        .unwrap()
        .iter()
        .map(|s| lexnorm::normalize(s, &table))
        .collect();
    Overfit { vocab, files, streams }
}

fn report_for(engine: &Engine, files: &[SourceFile]) -> EvalReport {
    evaluate(engine, files, &EvalConfig { seed: 5, max_samples: None }).unwrap()
}

fn end_to_end_overfit() -> Outcome {
    let started = Instant::now();
    let corpus = overfit_corpus();
    let lines: usize = corpus.files.iter().map(|f| f.text.lines().filter(|l| !l.trim().is_empty()).count()).sum();
    let config = ModelConfig::desk(corpus.vocab.size());
    let samples = pipeline::encode_samples(&corpus.vocab, &corpus.streams, config.lang_mode, config.n_ctx).unwrap();
    let longest = samples.iter().map(|s| s.ids.len()).max().unwrap_or(0);
    let schedule = TrainSchedule {
        epochs: 600,
        batch_size: 8,
        base_lr: 2e-3,
        warmup_epochs: 1,
        decay: 0.99,
        dropout: false,
        target_loss: Some(0.1),
        seed: 1,
        ..TrainSchedule::default()
    };
    let trained = gptc::train(init::<f32>(&config, 1).unwrap(), &samples, &schedule, None).unwrap();
    let final_loss = trained.epoch_losses.last().copied().unwrap_or(f64::NAN);
    let train_time = started.elapsed();

    let gpt = Engine::new(corpus.vocab.clone(), EngineModel::Gpt(trained.params)).unwrap();
    let gpt_report = report_for(&gpt, &corpus.files);
    let mut baselines = Vec::new();
    for n in [5, 3] {
        let model = pipeline::train_ngram_model(&corpus.vocab, &corpus.streams, n).unwrap();
        let engine = Engine::new(
            corpus.vocab.clone(),
            EngineModel::NGram {
                model,
                smoothing: Smoothing::Backoff,
            },
        )
        .unwrap();
        baselines.push(report_for(&engine, &corpus.files));
    }
    let elapsed = started.elapsed();
    let (g, five, three) = (
        gpt_report.edit_similarity,
        baselines[0].edit_similarity,
        baselines[1].edit_similarity,
    );
    let pass = corpus.vocab.size() == 2000
        && final_loss < 0.1
        && g >= 90.0
        && gpt_report.perplexity <= 1.5
        && g >= five
        && five >= three
        && elapsed < Duration::from_secs(15 * 60);
    outcome(
        pass,
        format!(
            "{} files/{lines} lines, |V|={}, longest sample {longest}, loss {final_loss:.4} after {} steps ({:.0}s); \
             edit sim GPT {g:.2} / 5-gram {five:.2} / 3-gram {three:.2}; PPL {:.3}; {} cuts",
            corpus.files.len(),
            corpus.vocab.size(),
            trained.steps,
            train_time.as_secs_f64(),
            gpt_report.perplexity,
            gpt_report.samples
        ),
    )
}

// ------------------------------------------------------------ multilingual

fn bilingual(count: usize, seed: u64) -> Vec<SourceFile> {
    let mut files = synth::generate(Language::ToyPy, count, 3, seed);
    files.extend(synth::generate(Language::ToyC, count, 3, seed + 1000));
    files
}

fn small_config(vocab: usize, lang_mode: LangMode) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 64,
        d_x: 64,
        n_heads: 4,
        n_ctx: 128,
        lang_mode,
        n_lang: if lang_mode == LangMode::None { 1 } else { 2 },
        ..ModelConfig::desk(vocab)
    }
}

fn quick_schedule(max_steps: usize, seed: u64, dropout: bool) -> TrainSchedule {
    TrainSchedule {
        epochs: 1000,
        batch_size: 8,
        base_lr: 2e-3,
        warmup_epochs: 1,
        decay: 0.98,
        dropout,
        max_steps: Some(max_steps),
        seed,
        ..TrainSchedule::default()
    }
}

/// Samples `len` ids after `prompt`, stopping early at `stop`.
fn sample_ids(params: &ModelParams<f32>, prompt: &[u32], len: usize, stop: u32, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut cache = KvCache::new(params);
    let logits = forward(params, prompt, None, Some(&mut cache)).unwrap();
    let mut last = gptc::tensor::log_softmax(logits.row(prompt.len() - 1));
    let mut out = Vec::new();
    let room = params.config.n_ctx - prompt.len();
    for _ in 0..len.min(room) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = last.len() - 1;
        for (i, lp) in last.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                next = i;
                break;
            }
        }
        if next as u32 == stop {
            break;
        }
        out.push(next as u32);
        let step = forward_batch_step(params, std::slice::from_mut(&mut cache), &[next as u32], None).unwrap();
        last = gptc::tensor::log_softmax(step.row(0));
    }
    out
}

fn multilingual() -> Outcome {
    let files = bilingual(300, 40);
    let (_, streams) = pipeline::normalize_files(&files, KeptCounts::default()).unwrap();
    let vocab = pipeline::train_vocabulary(&streams, Scheme::Bpe, 600).unwrap();

    // Control codes.
    let config = small_config(vocab.size(), LangMode::ControlCodes);
    let samples = pipeline::encode_samples(&vocab, &streams, config.lang_mode, config.n_ctx).unwrap();
    let mut seen: [BTreeSet<u32>; 2] = [BTreeSet::new(), BTreeSet::new()];
    for s in &samples {
        seen[s.lang.unwrap()].extend(s.ids.iter().skip(3).copied());
    }
    let trained = gptc::train(init::<f32>(&config, 2).unwrap(), &samples, &quick_schedule(1500, 2, true), None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut purity = Vec::new();
    for lang in Language::ALL {
        let prompt = [vocab.bof(), vocab.control_code(lang).unwrap(), vocab.sep()];
        let (mut pure, mut total) = (0usize, 0usize);
        for _ in 0..20 {
            let ids = sample_ids(&trained.params, &prompt, 80, vocab.eof(), &mut rng);
            total += ids.len();
            pure += ids.iter().filter(|id| seen[lang.index()].contains(id)).count();
        }
        purity.push((lang, pure as f64 / total.max(1) as f64, total));
    }

    // Double heads, scored on held-out programs.
    let config = small_config(vocab.size(), LangMode::DoubleHeads);
    let samples = pipeline::encode_samples(&vocab, &streams, config.lang_mode, config.n_ctx).unwrap();
    let heads = gptc::train(init::<f32>(&config, 4).unwrap(), &samples, &quick_schedule(800, 4, true), None).unwrap();
    let held_out = bilingual(40, 77);
    let (correct, mut total) = (
        &mut 0usize,
        0usize,
    );
    let table = vocab.literal_table();
    for (file, stream) in held_out.iter().zip(pipeline::lex_files(&held_out).unwrap()) {
        let ids = vocab.encode(&lexnorm::normalize(&stream, &table)).unwrap();
        let ids = &ids[..ids.len().min(config.n_ctx)];
        let (predicted, _) = gptc::classify_language(&heads.params, ids).unwrap();
        *correct += usize::from(predicted == file.language.index());
        total += 1;
    }
    let accuracy = *correct as f64 / total as f64;

    let pass = purity.iter().all(|p| p.1 >= 0.95) && accuracy >= 0.95;
    let purity_text: Vec<String> = purity.iter().map(|(l, p, n)| format!("{l} {:.1}% of {n}", 100.0 * p)).collect();
    outcome(
        pass,
        format!(
            "control-code purity {}; double-heads accuracy {:.1}% on {total} held-out files",
            purity_text.join(", "),
            100.0 * accuracy
        ),
    )
}

// ------------------------------------------------------------ distillation

fn distillation() -> Outcome {
    // Large enough that the teacher generalizes instead of memorizing.
    let files = synth::generate(Language::ToyPy, 1000, 4, 50);
    let held_out = synth::generate(Language::ToyPy, 20, 4, 51);
    let (_, streams) = pipeline::normalize_files(&files, KeptCounts::default()).unwrap();
    let vocab = pipeline::train_vocabulary(&streams, Scheme::Bpe, 500).unwrap();
    let table = vocab.literal_table();
    let held_streams: Vec<_> = pipeline::lex_files(&held_out)
        .unwrap()
        .iter()
        .map(|s| lexnorm::normalize(s, &table))
        .collect();
    let teacher_config = ModelConfig {
        n_layers: 4,
        ..small_config(vocab.size(), LangMode::None)
    };
    let samples = pipeline::encode_samples(&vocab, &streams, LangMode::None, teacher_config.n_ctx).unwrap();
    let eval = pipeline::encode_samples(&vocab, &held_streams, LangMode::None, teacher_config.n_ctx).unwrap();
    let teacher = gptc::train(init::<f32>(&teacher_config, 9).unwrap(), &samples, &quick_schedule(1000, 9, true), None)
        .unwrap()
        .params;
    let student_config = ModelConfig {
        n_layers: 2,
        ..teacher_config.clone()
    };
    let mut rows = Vec::new();
    let mut wins = 0;
    for seed in [1u64, 2, 3] {
        let schedule = quick_schedule(500, seed, true);
        let distilled = gptc::train(distill_init(&teacher, 2).unwrap(), &samples, &schedule, None).unwrap();
        let scratch = gptc::train(init::<f32>(&student_config, seed).unwrap(), &samples, &schedule, None).unwrap();
        let (d, s) = (eval_loss(&distilled.params, &eval).unwrap(), eval_loss(&scratch.params, &eval).unwrap());
        wins += usize::from(d < s && distilled.steps == 500 && scratch.steps == 500);
        rows.push(format!("seed {seed}: {d:.4} vs {s:.4}"));
    }
    outcome(
        wins == 3,
        format!(
            "teacher eval loss {:.4}; distilled vs random student after 500 steps: {}",
            eval_loss(&teacher, &eval).unwrap(),
            rows.join(", ")
        ),
    )
}

// ----------------------------------------------------------------- privacy

fn privacy() -> Outcome {
    let (files, secrets) = synth::privacy_corpus(Language::ToyPy, 30, 4, 8);
    let empty = LiteralTable::empty();
    let streams: Vec<_> = pipeline::lex_files(&files)
        .unwrap()
        .iter()
        .map(|s| lexnorm::normalize(s, &empty))
        .collect();
    let vocab = pipeline::train_vocabulary(&streams, Scheme::Bpe, 400).unwrap();
    let ngram = pipeline::train_ngram_model(&vocab, &streams, 5).unwrap();
    let config = small_config(vocab.size(), LangMode::None);
    let samples = pipeline::encode_samples(&vocab, &streams, LangMode::None, config.n_ctx).unwrap();
    let gpt = gptc::train(init::<f32>(&config, 6).unwrap(), &samples, &quick_schedule(300, 6, false), None).unwrap();
    let engines = [
        Engine::new(vocab.clone(), EngineModel::NGram { model: ngram, smoothing: Smoothing::Backoff }).unwrap(),
        Engine::new(vocab.clone(), EngineModel::Gpt(gpt.params)).unwrap(),
    ];
    let (cuts, _) = sample_cuts(&files, &empty, 1);
    let settings = DecodeSettings {
        alpha: 0.0,
        ..DecodeSettings::default()
    };
    let mut scanned = 0;
    let mut leaks = Vec::new();
    for engine in &engines {
        for cut in &cuts {
            let out = engine.complete(&cut.context, cut.language, &settings).unwrap();
            let mut texts = vec![out.suggestion.text];
            texts.extend(out.alternatives.into_iter().map(|a| a.text));
            for text in texts {
                scanned += 1;
                leaks.extend(secrets.iter().filter(|s| text.contains(s.as_str())).cloned());
                // Any 6+ digit run or key prefix is a fragment of some secret.
                let digits = text.split(|c: char| !c.is_ascii_digit()).any(|run| run.len() >= 6);
                if digits || text.contains("sk_") {
                    leaks.push(text);
                }
            }
        }
    }
    let vocab_leaks = (0..vocab.size() as u32)
        .filter_map(|id| vocab.subtoken(id))
        .filter(|s| s.contains("sk_") || secrets.iter().any(|x| x.contains(s.trim_end_matches('▁')) && s.len() > 4))
        .count();
    outcome(
        leaks.is_empty() && vocab_leaks == 0,
        format!(
            "{} secrets, {scanned} suggestions from {} cuts scanned, {} leaks, {vocab_leaks} secret-bearing subtokens",
            secrets.len(),
            cuts.len(),
            leaks.len()
        ),
    )
}
