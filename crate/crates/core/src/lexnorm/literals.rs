use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{kept_literal_image, Token, TokenKind, TokenStream, COMMENT, NUM_LIT, STR_LIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LiteralKind {
    String,
    Number,
}

impl LiteralKind {
    fn as_str(self) -> &'static str {
        match self {
            LiteralKind::String => "string",
            LiteralKind::Number => "number",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeptCounts {
    pub string: usize,
    pub number: usize,
}

impl Default for KeptCounts {
    /// 200 strings / 50 numbers at full scale, divided by ten.
    fn default() -> Self {
        KeptCounts { string: 20, number: 5 }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("malformed literal table line {line}: {reason}")]
pub struct LiteralTableError {
    pub line: usize,
    pub reason: String,
}

/// Most frequent literals per kind, kept verbatim through normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiteralTable {
    pub strings: Vec<(String, u64)>,
    pub numbers: Vec<(String, u64)>,
    pub kept_counts: KeptCounts,
    string_set: HashSet<String>,
    number_set: HashSet<String>,
}

impl LiteralTable {
    pub fn new(strings: Vec<(String, u64)>, numbers: Vec<(String, u64)>, kept_counts: KeptCounts) -> Self {
        let string_set = strings.iter().map(|(s, _)| s.clone()).collect();
        let number_set = numbers.iter().map(|(s, _)| s.clone()).collect();
        LiteralTable {
            strings,
            numbers,
            kept_counts,
            string_set,
            number_set,
        }
    }

    /// Keeps nothing: every literal becomes a sentinel.
    pub fn empty() -> Self {
        LiteralTable::new(Vec::new(), Vec::new(), KeptCounts { string: 0, number: 0 })
    }

    pub fn contains(&self, kind: LiteralKind, lit: &str) -> bool {
        match kind {
            LiteralKind::String => self.string_set.contains(lit),
            LiteralKind::Number => self.number_set.contains(lit),
        }
    }

    /// Kept-literal images in table order, strings first.
    pub fn images(&self) -> Vec<String> {
        self.strings
            .iter()
            .map(|(s, _)| kept_literal_image(LiteralKind::String, s))
            .chain(self.numbers.iter().map(|(s, _)| kept_literal_image(LiteralKind::Number, s)))
            .collect()
    }

    /// `kind \t literal \t count` lines after a `# kept` header.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# kept string={} number={}\n", self.kept_counts.string, self.kept_counts.number);
        for (kind, list) in [(LiteralKind::String, &self.strings), (LiteralKind::Number, &self.numbers)] {
            for (lit, count) in list {
                let _ = writeln!(out, "{}\t{}\t{}", kind.as_str(), escape(lit), count);
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, LiteralTableError> {
        let mut strings = Vec::new();
        let mut numbers = Vec::new();
        let mut kept = KeptCounts::default();
        for (i, line) in text.lines().enumerate() {
            let bad = |reason: &str| LiteralTableError {
                line: i + 1,
                reason: reason.to_string(),
            };
            if let Some(header) = line.strip_prefix("# kept") {
                for field in header.split_whitespace() {
                    match field.split_once('=') {
                        Some(("string", v)) => kept.string = v.parse().map_err(|_| bad("bad string count"))?,
                        Some(("number", v)) => kept.number = v.parse().map_err(|_| bad("bad number count"))?,
                        _ => return Err(bad("unknown header field")),
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad("expected 3 columns"));
            }
            let count = cols[2].parse().map_err(|_| bad("bad count"))?;
            let lit = unescape(cols[1]).ok_or_else(|| bad("bad escape"))?;
            match cols[0] {
                "string" => strings.push((lit, count)),
                "number" => numbers.push((lit, count)),
                _ => return Err(bad("unknown literal kind")),
            }
        }
        Ok(LiteralTable::new(strings, numbers, kept))
    }
}

pub(crate) fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out
}

pub(crate) fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next()? {
            '\\' => out.push('\\'),
            't' => out.push('\t'),
            'n' => out.push('\n'),
            'r' => out.push('\r'),
            _ => return None,
        }
    }
    Some(out)
}

/// Content between the quotes of a terminated string literal, if it can be
/// shown back inside double quotes.
fn string_content(image: &str) -> Option<&str> {
    let quote = image.chars().next()?;
    if image.len() < 2 || !image.ends_with(quote) {
        return None;
    }
    let inner = &image[1..image.len() - 1];
    let mut escaped = false;
    for c in inner.chars() {
        if c == '"' && !escaped {
            return None;
        }
        escaped = c == '\\' && !escaped;
    }
    Some(inner)
}

fn literal_of(token: &Token) -> Option<(LiteralKind, &str)> {
    match token.kind {
        TokenKind::StrLit => string_content(&token.text).map(|s| (LiteralKind::String, s)),
        TokenKind::NumLit => Some((LiteralKind::Number, token.text.as_str())),
        _ => None,
    }
}

/// Counts literals across raw streams and keeps the top `kept_counts` of each
/// kind, most frequent first, ties broken by ascending literal text.
pub fn build_literal_table<'a, I>(streams: I, kept_counts: KeptCounts) -> LiteralTable
where
    I: IntoIterator<Item = &'a TokenStream>,
{
    let mut freq: HashMap<(LiteralKind, &str), u64> = HashMap::new();
    for stream in streams {
        debug_assert!(!stream.normalized, "literal table needs raw streams");
        for token in &stream.tokens {
            if let Some(key) = literal_of(token) {
                *freq.entry(key).or_default() += 1;
            }
        }
    }
    let top = |kind: LiteralKind, k: usize| {
        let mut items: Vec<(String, u64)> = freq
            .iter()
            .filter(|((kd, _), _)| *kd == kind)
            .map(|((_, lit), n)| (lit.to_string(), *n))
            .collect();
        items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        items.truncate(k);
        items
    };
    LiteralTable::new(
        top(LiteralKind::String, kept_counts.string),
        top(LiteralKind::Number, kept_counts.number),
        kept_counts,
    )
}

/// Replaces literal and comment images with sentinels, or with kept-literal
/// images for literals present in `table`. Identifiers are left untouched.
pub fn normalize(stream: &TokenStream, table: &LiteralTable) -> TokenStream {
    let tokens = stream
        .tokens
        .iter()
        .map(|token| match token.kind {
            TokenKind::Comment => Token::new(TokenKind::Comment, COMMENT),
            TokenKind::StrLit | TokenKind::NumLit if stream.normalized => token.clone(),
            TokenKind::StrLit | TokenKind::NumLit => match literal_of(token) {
                Some((kind, lit)) if table.contains(kind, lit) => {
                    Token::new(TokenKind::KeptLiteral, kept_literal_image(kind, lit))
                }
                _ if token.kind == TokenKind::StrLit => Token::new(TokenKind::StrLit, STR_LIT),
                _ => Token::new(TokenKind::NumLit, NUM_LIT),
            },
            _ => token.clone(),
        })
        .collect();
    TokenStream {
        tokens,
        language: stream.language,
        diagnostics: stream.diagnostics.clone(),
        normalized: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::language::Language;
    use crate::lexnorm::lex;

    fn streams(sources: &[&str]) -> Vec<TokenStream> {
        sources.iter().map(|s| lex(s, Language::ToyPy).unwrap()).collect()
    }

    #[test]
    fn most_frequent_string_is_kept() {
        let mut lines = vec!["if name == \"__main__\":\n    run()\n"; 10];
        lines.push("a = \"x\"\n");
        lines.push("b = \"x\"\n");
        let table = build_literal_table(&streams(&lines), KeptCounts { string: 1, number: 0 });
        assert_eq!(table.strings, vec![("__main__".to_string(), 10)]);
        assert!(table.numbers.is_empty());
    }

    #[test]
    fn ties_break_lexicographically() {
        let lines = ["a = \"b\"\nc = \"b\"\nd = \"b\"\n", "e = \"a\"\nf = \"a\"\ng = \"a\"\n"];
        let table = build_literal_table(&streams(&lines), KeptCounts { string: 1, number: 1 });
        assert_eq!(table.strings[0].0, "a");
    }

    #[test]
    fn frequencies_are_non_increasing() {
        let lines = ["x = 1 + 2 + 2 + 3 + 3 + 3\n"];
        let table = build_literal_table(&streams(&lines), KeptCounts { string: 5, number: 5 });
        let counts: Vec<u64> = table.numbers.iter().map(|(_, c)| *c).collect();
        assert_eq!(counts, vec![3, 2, 1]);
    }

    #[test]
    fn normalize_keeps_table_literals() {
        let table = LiteralTable::new(vec![("__main__".into(), 3)], vec![], KeptCounts::default());
        let stream = normalize(&lex("s = \"__main__\"\n", Language::ToyPy).unwrap(), &table);
        assert_eq!(stream.texts()[1..4], ["s", "=", "<STR_LIT:__main__>"]);
        assert_eq!(stream.tokens[3].kind, TokenKind::KeptLiteral);
    }

    #[test]
    fn normalize_defaults_to_sentinels() {
        let stream = normalize(&lex("n = 42\n", Language::ToyPy).unwrap(), &LiteralTable::empty());
        assert_eq!(stream.texts()[1..4], ["n", "=", "<NUM_LIT>"]);
        let stream = normalize(&lex("# secret key abc\n", Language::ToyPy).unwrap(), &LiteralTable::empty());
        assert_eq!(stream.texts(), vec!["<BOF>", "<COMMENT>", "<EOL>", "<EOF>"]);
    }

    #[test]
    fn single_quoted_literals_share_content() {
        let lines = ["a = 'POST'\nb = \"POST\"\n"];
        let table = build_literal_table(&streams(&lines), KeptCounts { string: 1, number: 0 });
        assert_eq!(table.strings, vec![("POST".to_string(), 2)]);
    }

    #[test]
    fn tsv_roundtrip_with_escapes() {
        let table = LiteralTable::new(
            vec![("a\\tb".into(), 4), ("tab\there".into(), 2)],
            vec![("0".into(), 9)],
            KeptCounts { string: 2, number: 1 },
        );
        assert_eq!(LiteralTable::from_tsv(&table.to_tsv()).unwrap(), table);
    }
}
