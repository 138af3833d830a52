//! Simplified syntactic validity for toy-language prefixes.
//!
//! A text is valid when it lexes without errors or diagnostics, `(` and `[`
//! balance within every line, `}` never closes more braces than were opened
//! (open braces may remain at the end of a prefix), and in toy-py an indent
//! only follows a line ending in `:`.

use crate::language::Language;
use crate::lexnorm::{lex_prefix, TokenKind};

pub fn syntax_valid(text: &str, language: Language) -> bool {
    let Ok(stream) = lex_prefix(text, language) else {
        return false;
    };
    if stream.has_errors() {
        return false;
    }
    let mut line_stack: Vec<char> = Vec::new();
    let mut braces = 0usize;
    let mut last_code: Option<&str> = None;
    for token in &stream.tokens {
        match token.kind {
            TokenKind::Eol => {
                if !line_stack.is_empty() {
                    return false;
                }
            }
            TokenKind::Indent => {
                if language == Language::ToyPy && last_code != Some(":") {
                    return false;
                }
            }
            TokenKind::Punct => {
                match token.text.as_str() {
                    "(" => line_stack.push(')'),
                    "[" => line_stack.push(']'),
                    "{" => braces += 1,
                    ")" | "]" => {
                        if line_stack.pop() != token.text.chars().next() {
                            return false;
                        }
                    }
                    "}" => {
                        if !line_stack.is_empty() {
                            return false;
                        }
                        let Some(b) = braces.checked_sub(1) else { return false };
                        braces = b;
                    }
                    _ => {}
                }
                last_code = Some(token.text.as_str());
            }
            TokenKind::Comment | TokenKind::Bof | TokenKind::Dedent => {}
            _ => last_code = Some(token.text.as_str()),
        }
    }
    line_stack.is_empty()
}

/// Percentage of `context + suggestion` texts that pass [`syntax_valid`].
pub fn syntax_valid_rate<S: AsRef<str>, T: AsRef<str>>(pairs: &[(S, T)], language: Language) -> f64 {
    if pairs.is_empty() {
        return 100.0;
    }
    let valid = pairs
        .iter()
        .filter(|(c, s)| syntax_valid(&format!("{}{}", c.as_ref(), s.as_ref()), language))
        .count();
    100.0 * valid as f64 / pairs.len() as f64
}
