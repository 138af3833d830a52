//! Subtoken vocabularies: byte-pair encoding (default) and casing-convention
//! splitting.
//!
//! Ids are dense: specials first, then base symbols, then learned subtokens.
//! Every non-special token is encoded as its characters followed by the
//! end-of-token marker [`END_OF_TOKEN`], so a subtoken that closes a token is
//! distinct from the same characters in the middle of one. Merges never
//! cross token boundaries and never touch specials.

mod bpe;
mod casing;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::language::Language;
use crate::lexnorm::{
    self, parse_kept_literal, KeptCounts, LiteralKind, LiteralTable, TokenKind, TokenStream,
};

pub use bpe::{train_bpe, train_bpe_with_specials};
pub use casing::{split_by_casing, CasingSplit};

/// Suffix marking the last subtoken of a token (U+2581).
pub const END_OF_TOKEN: char = '\u{2581}';
/// Separator special placed after a control code.
pub const SEP: &str = "<SEP>";
/// Default vocabulary size for desk-scale training.
pub const DEFAULT_TARGET_SIZE: usize = 2000;

const STRUCTURAL: [&str; 8] = [
    lexnorm::BOF,
    lexnorm::EOF,
    lexnorm::EOL,
    lexnorm::INDENT,
    lexnorm::DEDENT,
    lexnorm::STR_LIT,
    lexnorm::NUM_LIT,
    lexnorm::COMMENT,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Bpe,
    Casing,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabError {
    #[error("character {0:?} is not in the vocabulary's base set")]
    UnknownChar(char),
    #[error("unknown special token `{0}`")]
    UnknownSpecial(String),
    #[error("id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("target size {target} does not exceed the {base} base symbols and specials")]
    TargetTooSmall { target: usize, base: usize },
    #[error("malformed vocabulary file at line {line}: {reason}")]
    Format { line: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct SubtokenVocabulary {
    scheme: Scheme,
    subtokens: Vec<String>,
    ids: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    merge_rank: HashMap<(String, String), usize>,
    num_specials: usize,
    num_base: usize,
    /// Set when training stopped before reaching the requested size.
    pub warning: Option<String>,
}

impl PartialEq for SubtokenVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.scheme == other.scheme
            && self.subtokens == other.subtokens
            && self.merges == other.merges
            && self.num_specials == other.num_specials
            && self.num_base == other.num_base
    }
}

impl Eq for SubtokenVocabulary {}

/// Special images in id order: structural tokens, `<SEP>`, one control code
/// per language, then kept literals.
pub fn special_images(kept_literals: &[String]) -> Vec<String> {
    let mut out: Vec<String> = STRUCTURAL.iter().map(|s| s.to_string()).collect();
    out.push(SEP.to_string());
    out.extend(Language::ALL.iter().map(|l| l.control_code()));
    for lit in kept_literals {
        if !out.contains(lit) {
            out.push(lit.clone());
        }
    }
    out
}

/// Base symbols: the marker, printable ASCII and any extra characters seen.
pub(crate) fn base_symbols(extra: &BTreeSet<char>) -> Vec<String> {
    let mut chars: BTreeSet<char> = (0x20u8..0x7f).map(char::from).collect();
    chars.extend(extra.iter().copied());
    chars.remove(&END_OF_TOKEN);
    let mut out = vec![END_OF_TOKEN.to_string()];
    out.extend(chars.into_iter().map(String::from));
    out
}

/// Kept-literal images found in normalized streams.
pub(crate) fn kept_images_in<'a, I>(streams: I) -> Vec<String>
where
    I: IntoIterator<Item = &'a TokenStream>,
{
    let mut set = BTreeSet::new();
    for stream in streams {
        for token in &stream.tokens {
            if token.kind == TokenKind::KeptLiteral {
                set.insert(token.text.clone());
            }
        }
    }
    set.into_iter().collect()
}

fn is_special_kind(kind: TokenKind) -> bool {
    kind.is_structural() || kind == TokenKind::KeptLiteral
}

impl SubtokenVocabulary {
    pub(crate) fn assemble(
        scheme: Scheme,
        specials: Vec<String>,
        base: Vec<String>,
        learned: Vec<String>,
        merges: Vec<(String, String)>,
    ) -> Self {
        let num_specials = specials.len();
        let num_base = base.len();
        let subtokens: Vec<String> = specials.into_iter().chain(base).chain(learned).collect();
        let ids = subtokens.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
        let merge_rank = merges.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        SubtokenVocabulary {
            scheme,
            subtokens,
            ids,
            merges,
            merge_rank,
            num_specials,
            num_base,
            warning: None,
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// |V|.
    pub fn size(&self) -> usize {
        self.subtokens.len()
    }

    /// Specials plus base symbols: the size of a vocabulary with no merges.
    pub fn base_size(&self) -> usize {
        self.num_specials + self.num_base
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn subtoken(&self, id: u32) -> Option<&str> {
        self.subtokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, subtoken: &str) -> Option<u32> {
        self.ids.get(subtoken).copied()
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < self.num_specials
    }

    pub fn special_ids(&self) -> impl Iterator<Item = u32> + '_ {
        0..self.num_specials as u32
    }

    /// Id of a special image such as `<EOL>`.
    pub fn special(&self, image: &str) -> Result<u32, VocabError> {
        match self.ids.get(image) {
            Some(&id) if self.is_special(id) => Ok(id),
            _ => Err(VocabError::UnknownSpecial(image.to_string())),
        }
    }

    pub fn bof(&self) -> u32 {
        self.special(lexnorm::BOF).expect("structural specials are always registered")
    }

    pub fn eof(&self) -> u32 {
        self.special(lexnorm::EOF).expect("structural specials are always registered")
    }

    pub fn eol(&self) -> u32 {
        self.special(lexnorm::EOL).expect("structural specials are always registered")
    }

    pub fn sep(&self) -> u32 {
        self.special(SEP).expect("structural specials are always registered")
    }

    pub fn control_code(&self, language: Language) -> Result<u32, VocabError> {
        self.special(&language.control_code())
    }

    /// Literal table implied by the kept-literal specials.
    pub fn literal_table(&self) -> LiteralTable {
        let mut strings = Vec::new();
        let mut numbers = Vec::new();
        for image in &self.subtokens[..self.num_specials] {
            match parse_kept_literal(image) {
                Some((LiteralKind::String, lit)) => strings.push((lit.to_string(), 0)),
                Some((LiteralKind::Number, lit)) => numbers.push((lit.to_string(), 0)),
                None => {}
            }
        }
        let kept = KeptCounts {
            string: strings.len(),
            number: numbers.len(),
        };
        LiteralTable::new(strings, numbers, kept)
    }

    /// Subtoken images of one non-special token, markers included.
    pub fn segment_token(&self, text: &str) -> Vec<String> {
        match self.scheme {
            Scheme::Bpe => bpe::apply_merges(text, &self.merge_rank),
            Scheme::Casing => self.casing_segments(text),
        }
    }

    fn casing_segments(&self, text: &str) -> Vec<String> {
        let is_ident = text.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
        let mut segments = if is_ident {
            split_by_casing(text).segments()
        } else {
            vec![text.to_string()]
        };
        if let Some(last) = segments.last_mut() {
            last.push(END_OF_TOKEN);
        }
        let mut out = Vec::new();
        for seg in segments {
            if self.ids.contains_key(&seg) {
                out.push(seg);
            } else {
                // Character fallback; the marker becomes its own symbol.
                out.extend(seg.chars().map(String::from));
            }
        }
        out
    }

    pub fn encode_token(&self, kind: TokenKind, text: &str, out: &mut Vec<u32>) -> Result<(), VocabError> {
        if is_special_kind(kind) || (self.ids.get(text).is_some_and(|&id| self.is_special(id))) {
            out.push(self.special(text)?);
            return Ok(());
        }
        for piece in self.segment_token(text) {
            match self.ids.get(&piece) {
                Some(&id) => out.push(id),
                None => {
                    let bad = piece.chars().find(|c| !self.ids.contains_key(&c.to_string()));
                    return Err(VocabError::UnknownChar(bad.unwrap_or(END_OF_TOKEN)));
                }
            }
        }
        Ok(())
    }

    /// Encodes a token stream; deterministic and reentrant.
    pub fn encode(&self, stream: &TokenStream) -> Result<Vec<u32>, VocabError> {
        let mut ids = Vec::with_capacity(stream.tokens.len() * 2);
        for token in &stream.tokens {
            self.encode_token(token.kind, &token.text, &mut ids)?;
        }
        Ok(ids)
    }

    fn check(&self, ids: &[u32]) -> Result<(), VocabError> {
        match ids.iter().find(|&&id| id as usize >= self.size()) {
            Some(&id) => Err(VocabError::IdOutOfRange { id, size: self.size() }),
            None => Ok(()),
        }
    }

    /// Surface text: token images separated by single spaces.
    pub fn decode(&self, ids: &[u32]) -> Result<String, VocabError> {
        Ok(self.decode_tokens(ids)?.join(" "))
    }

    /// Groups subtokens back into token images. A trailing token without its
    /// end marker is returned as-is.
    pub fn decode_tokens(&self, ids: &[u32]) -> Result<Vec<String>, VocabError> {
        self.check(ids)?;
        let mut tokens = Vec::new();
        let mut current = String::new();
        for &id in ids {
            let image = &self.subtokens[id as usize];
            if self.is_special(id) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(image.clone());
                continue;
            }
            for c in image.chars() {
                if c == END_OF_TOKEN {
                    tokens.push(std::mem::take(&mut current));
                } else {
                    current.push(c);
                }
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
        Ok(tokens)
    }

    /// Images of the given ids, markers included.
    pub fn images(&self, ids: &[u32]) -> Result<Vec<String>, VocabError> {
        self.check(ids)?;
        Ok(ids.iter().map(|&id| self.subtokens[id as usize].clone()).collect())
    }

    /// Text format: header, `id \t subtoken` lines, then `#merges` and
    /// `left \t right` lines in learned order.
    pub fn to_text(&self) -> String {
        let mut out = format!("bpe-vocab v1 size={} specials={}", self.size(), self.num_specials);
        let _ = write!(out, " base={}", self.num_base);
        if self.scheme == Scheme::Casing {
            out.push_str(" scheme=casing");
        }
        out.push('\n');
        for (id, sub) in self.subtokens.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}", id, lexnorm_escape(sub));
        }
        out.push_str("#merges\n");
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{}\t{}", lexnorm_escape(l), lexnorm_escape(r));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, VocabError> {
        let bad = |line: usize, reason: &str| VocabError::Format {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("bpe-vocab") || fields.next() != Some("v1") {
            return Err(bad(1, "expected `bpe-vocab v1` header"));
        }
        let (mut size, mut specials, mut base, mut scheme) = (None, None, None, Scheme::Bpe);
        for field in fields {
            match field.split_once('=') {
                Some(("size", v)) => size = v.parse::<usize>().ok(),
                Some(("specials", v)) => specials = v.parse::<usize>().ok(),
                Some(("base", v)) => base = v.parse::<usize>().ok(),
                Some(("scheme", "casing")) => scheme = Scheme::Casing,
                Some(("scheme", "bpe")) => scheme = Scheme::Bpe,
                _ => return Err(bad(1, "unknown header field")),
            }
        }
        let size = size.ok_or_else(|| bad(1, "missing size"))?;
        let specials = specials.ok_or_else(|| bad(1, "missing specials"))?;
        let base = base.ok_or_else(|| bad(1, "missing base"))?;
        let mut subtokens = Vec::with_capacity(size);
        let mut merges = Vec::new();
        let mut in_merges = false;
        for (i, line) in lines {
            if line == "#merges" {
                in_merges = true;
                continue;
            }
            let (a, b) = line.split_once('\t').ok_or_else(|| bad(i + 1, "expected two columns"))?;
            if in_merges {
                let l = lexnorm_unescape(a).ok_or_else(|| bad(i + 1, "bad escape"))?;
                let r = lexnorm_unescape(b).ok_or_else(|| bad(i + 1, "bad escape"))?;
                merges.push((l, r));
            } else {
                let id: usize = a.parse().map_err(|_| bad(i + 1, "bad id"))?;
                if id != subtokens.len() {
                    return Err(bad(i + 1, "ids must be dense and ordered"));
                }
                subtokens.push(lexnorm_unescape(b).ok_or_else(|| bad(i + 1, "bad escape"))?);
            }
        }
        if subtokens.len() != size || specials + base > size {
            return Err(bad(1, "size does not match entries"));
        }
        let learned = subtokens.split_off(specials + base);
        let base_syms = subtokens.split_off(specials);
        Ok(Self::assemble(scheme, subtokens, base_syms, learned, merges))
    }
}

fn lexnorm_escape(s: &str) -> String {
    lexnorm::literals_escape(s)
}

fn lexnorm_unescape(s: &str) -> Option<String> {
    lexnorm::literals_unescape(s)
}

/// Casing-split vocabulary: specials, base symbols, then the most frequent
/// casing segments (and whole non-identifier tokens) up to `target_size`.
pub fn train_casing<'a, I>(streams: I, target_size: usize) -> Result<SubtokenVocabulary, VocabError>
where
    I: IntoIterator<Item = &'a TokenStream> + Clone,
{
    let specials = special_images(&kept_images_in(streams.clone()));
    let mut extra = BTreeSet::new();
    let mut freq: HashMap<String, u64> = HashMap::new();
    for stream in streams {
        for token in &stream.tokens {
            if is_special_kind(token.kind) {
                continue;
            }
            extra.extend(token.text.chars());
            let is_ident = matches!(token.kind, TokenKind::Identifier | TokenKind::Keyword);
            let mut segments = if is_ident {
                split_by_casing(&token.text).segments()
            } else {
                vec![token.text.clone()]
            };
            if let Some(last) = segments.last_mut() {
                last.push(END_OF_TOKEN);
            }
            for seg in segments {
                *freq.entry(seg).or_default() += 1;
            }
        }
    }
    let base = base_symbols(&extra);
    let floor = specials.len() + base.len();
    if target_size < floor {
        return Err(VocabError::TargetTooSmall { target: target_size, base: floor });
    }
    let mut ranked: Vec<(String, u64)> = freq
        .into_iter()
        .filter(|(seg, _)| seg.chars().count() > 1 && !specials.contains(seg))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let room = target_size - floor;
    let mut vocab = SubtokenVocabulary::assemble(
        Scheme::Casing,
        specials,
        base,
        ranked.iter().take(room).map(|(s, _)| s.clone()).collect(),
        Vec::new(),
    );
    if ranked.len() < room {
        vocab.warning = Some(format!(
            "corpus yields {} casing segments; vocabulary stops at {} of {}",
            ranked.len(),
            vocab.size(),
            target_size
        ));
    }
    Ok(vocab)
}
