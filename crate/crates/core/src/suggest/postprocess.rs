use serde::{Deserialize, Serialize};

use crate::lexnorm::{needs_space, parse_kept_literal, LiteralKind, EOL, NUM_LIT, STR_LIT};
use crate::vocab::END_OF_TOKEN;

/// Character range `[start, end)` of an editable placeholder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub text: String,
    pub placeholders: Vec<Span>,
}

fn is_special_image(image: &str) -> bool {
    image.len() > 2 && image.starts_with('<') && image.ends_with('>') && image[1..].starts_with(|c: char| c.is_ascii_uppercase())
}

/// Display atom and placeholder range (relative to the atom) for one token.
fn atom(token: &str) -> Option<(String, Option<(usize, usize)>)> {
    if token == STR_LIT {
        return Some(("\"\"".into(), Some((1, 1))));
    }
    if token == NUM_LIT {
        return Some(("0".into(), Some((0, 1))));
    }
    if let Some((kind, lit)) = parse_kept_literal(token) {
        let n = lit.chars().count();
        return Some(match kind {
            LiteralKind::String => (format!("\"{lit}\""), Some((1, 1 + n))),
            LiteralKind::Number => (lit.to_string(), Some((0, n))),
        });
    }
    if is_special_image(token) {
        return None;
    }
    Some((token.to_string(), None))
}

/// Where a suggestion starts within the current line.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LineState<'a> {
    /// Display atom just before the query point on the same line.
    pub prev_atom: Option<&'a str>,
    /// Identifier characters typed after the query point; they are part of
    /// the first suggested token but not of the returned text.
    pub partial: &'a str,
    /// The context already ends in whitespace.
    pub trailing_space: bool,
}

/// Display text for a subtoken sequence: structural and control tokens are
/// dropped, output stops at `<EOL>`, literal sentinels become placeholders,
/// and tokens are joined with canonical spacing.
pub fn postprocess<S: AsRef<str>>(subtokens: &[S]) -> Suggestion {
    postprocess_continuation(&LineState::default(), subtokens)
}

/// [`postprocess`] for a suggestion continuing `state`: the text carries a
/// leading space only when canonical spacing after `prev_atom` needs one and
/// the context does not already end in whitespace.
pub fn postprocess_continuation<S: AsRef<str>>(state: &LineState<'_>, subtokens: &[S]) -> Suggestion {
    let mut tokens: Vec<String> = Vec::new();
    let mut current = state.partial.to_string();
    for s in subtokens {
        let s = s.as_ref();
        if is_special_image(s) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(s.to_string());
            continue;
        }
        for c in s.chars() {
            if c == END_OF_TOKEN {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
            } else {
                current.push(c);
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }

    let mut text = String::new();
    let mut len = 0usize;
    let mut placeholders = Vec::new();
    let mut prev = state.prev_atom.unwrap_or("").to_string();
    let mut skip = state.partial.len();
    for token in tokens.iter().take_while(|t| *t != EOL) {
        let Some((image, span)) = atom(token) else { continue };
        if skip > 0 {
            // The typed part of the first token is already in the editor.
            let rest = image.get(skip..).unwrap_or("");
            text.push_str(rest);
            len += rest.chars().count();
            skip = 0;
            prev = image;
            continue;
        }
        if needs_space(&prev, &image) && !(text.is_empty() && state.trailing_space) {
            text.push(' ');
            len += 1;
        }
        if let Some((a, b)) = span {
            placeholders.push(Span { start: len + a, end: len + b });
        }
        len += image.chars().count();
        text.push_str(&image);
        prev = image;
    }
    Suggestion { text, placeholders }
}
