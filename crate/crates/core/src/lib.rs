//! Whole-line code completion engine.
//!
//! The pipeline runs from raw toy-language sources to ranked single-line
//! suggestions:
//!
//! 1. [`corpus`] ingests and deduplicates files and splits them by repository.
//! 2. [`lexnorm`] lexes sources, replaces literals and comments with sentinel
//!    tokens and renders canonical text.
//! 3. [`vocab`] learns a subtoken vocabulary (BPE or casing split) and encodes
//!    token streams to ids.
//! 4. [`ngram`] and [`gptc`] model the id sequences.
//! 5. [`decoder`] runs batched, KV-cached beam search over either model.
//! 6. [`suggest`] turns hypotheses into a completion trie and display text.
//! 7. [`evalkit`] scores suggestions with perplexity, ROUGE-L, edit similarity
//!    and a syntactic validity check.

pub mod corpus;
pub mod decoder;
pub mod evalkit;
pub mod gptc;
pub mod language;
pub mod lexnorm;
pub mod ngram;
pub mod pipeline;
pub mod suggest;
pub mod synth;
pub mod vocab;

pub use language::Language;

/// 64-bit FNV-1a digest.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}
