use std::collections::{BTreeSet, HashMap};

use super::{base_symbols, is_special_kind, kept_images_in, special_images, Scheme, SubtokenVocabulary, VocabError, END_OF_TOKEN};
use crate::lexnorm::TokenStream;

type Word = Vec<String>;

fn symbols_of(text: &str) -> Word {
    let mut word: Word = text.chars().map(String::from).collect();
    word.push(END_OF_TOKEN.to_string());
    word
}

fn merge_word(word: &mut Word, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < word.len() {
        if word[i] == left && word[i + 1] == right {
            let right = word.remove(i + 1);
            word[i].push_str(&right);
        }
        i += 1;
    }
}

/// Learns merges over normalized streams. Kept-literal specials are taken
/// from the streams themselves.
pub fn train_bpe<'a, I>(streams: I, target_size: usize) -> Result<SubtokenVocabulary, VocabError>
where
    I: IntoIterator<Item = &'a TokenStream> + Clone,
{
    let kept = kept_images_in(streams.clone());
    train_bpe_with_specials(streams, target_size, &kept)
}

/// Greedy BPE: repeatedly merges the most frequent adjacent pair (ties broken
/// by the lexicographically smaller concatenation, then left symbol) until
/// the vocabulary reaches `target_size` or no pair occurs twice.
pub fn train_bpe_with_specials<'a, I>(
    streams: I,
    target_size: usize,
    kept_literals: &[String],
) -> Result<SubtokenVocabulary, VocabError>
where
    I: IntoIterator<Item = &'a TokenStream>,
{
    let specials = special_images(kept_literals);
    let mut word_freq: HashMap<&str, u64> = HashMap::new();
    let mut extra = BTreeSet::new();
    for stream in streams {
        for token in &stream.tokens {
            if is_special_kind(token.kind) || specials.contains(&token.text) {
                continue;
            }
            extra.extend(token.text.chars());
            *word_freq.entry(token.text.as_str()).or_default() += 1;
        }
    }
    let base = base_symbols(&extra);
    let floor = specials.len() + base.len();
    if target_size < floor {
        return Err(VocabError::TargetTooSmall { target: target_size, base: floor });
    }

    let mut words: Vec<(Word, u64)> = word_freq.into_iter().map(|(w, n)| (symbols_of(w), n)).collect();
    words.sort();
    let mut learned: Vec<String> = Vec::new();
    let mut merges: Vec<(String, String)> = Vec::new();
    let mut known: BTreeSet<String> = specials.iter().chain(&base).cloned().collect();

    while floor + learned.len() < target_size {
        let mut pairs: HashMap<(&str, &str), u64> = HashMap::new();
        for (word, n) in &words {
            for w in word.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += n;
            }
        }
        let best = pairs
            .into_iter()
            .filter(|&((l, r), n)| {
                let joined = format!("{l}{r}");
                n >= 2 && !specials.iter().any(|s| joined.contains(s.as_str()))
            })
            .max_by(|a, b| {
                a.1.cmp(&b.1).then_with(|| {
                    let ja = format!("{}{}", a.0 .0, a.0 .1);
                    let jb = format!("{}{}", b.0 .0, b.0 .1);
                    jb.cmp(&ja).then_with(|| b.0 .0.cmp(a.0 .0))
                })
            })
            .map(|((l, r), _)| (l.to_string(), r.to_string()));
        let Some((left, right)) = best else { break };
        for (word, _) in &mut words {
            merge_word(word, &left, &right);
        }
        let joined = format!("{left}{right}");
        merges.push((left, right));
        if known.insert(joined.clone()) {
            learned.push(joined);
        }
    }

    let reached = floor + learned.len();
    let mut vocab = SubtokenVocabulary::assemble(Scheme::Bpe, specials, base, learned, merges);
    if reached < target_size {
        vocab.warning = Some(format!(
            "corpus exhausted after {} merges: vocabulary size {} of {} requested",
            vocab.merges().len(),
            reached,
            target_size
        ));
        log::warn!("{}", vocab.warning.as_deref().unwrap_or_default());
    }
    Ok(vocab)
}

/// Applies learned merges to one token, lowest rank first.
pub(crate) fn apply_merges(text: &str, rank: &HashMap<(String, String), usize>) -> Vec<String> {
    let mut word = symbols_of(text);
    loop {
        let best = word
            .windows(2)
            .enumerate()
            .filter_map(|(i, w)| rank.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
            .min();
        let Some((_, i)) = best else { break };
        let (left, right) = (word[i].clone(), word[i + 1].clone());
        merge_word(&mut word, &left, &right);
    }
    word
}
