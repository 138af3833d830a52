//! Lexing, literal normalization and canonical rendering for the toy languages.
//!
//! Grammar (shared by both languages unless noted):
//!
//! ```text
//! line       = { token } [ comment ] EOL
//! token      = identifier | keyword | number | string | operator
//! identifier = ( letter | "_" ) { letter | digit | "_" }
//! keyword    = "if" | "else" | "def" | "return" | "for" | "var"
//! number     = digit { digit } [ "." digit { digit } ]
//! string     = '"' { char | "\" char } '"' | "'" { char | "\" char } "'"
//! comment    = "#" { char }            (toy-py)
//!            | "//" { char }           (toy-c)
//! operator   = "==" | "!=" | "<=" | ">=" | "+=" | "-=" | "->" | "&&" | "||"
//!            | one of + - * / % = < > ! . , : ; ( ) [ ] { }
//! ```
//!
//! `toy-py` derives `<INDENT>`/`<DEDENT>` from leading columns (tab = 4).
//! Blank and comment-only lines never change the indentation level. A string
//! literal standing alone as the first statement of a file or block is a
//! docstring and lexes as a comment. `toy-c` scopes with braces and emits no
//! indentation tokens.
//!
//! Canonical style (see [`render`]): one space between atoms, none before
//! `, : ; ) ] }`, none after `( [ {`, none around `.` (unless next to a
//! number), and none between a callee or subscripted expression and its `(`
//! or `[`. Each `<EOL>` is a newline, blocks indent by 4 spaces.

mod lexer;
mod literals;
mod render;

use serde::{Deserialize, Serialize};

use crate::language::Language;

pub use lexer::{lex, lex_prefix, LexError};
pub(crate) use literals::{escape as literals_escape, unescape as literals_unescape};
pub use literals::{build_literal_table, normalize, KeptCounts, LiteralKind, LiteralTable, LiteralTableError};
pub use render::{needs_space, render, render_line, RenderError};

pub const BOF: &str = "<BOF>";
pub const EOF: &str = "<EOF>";
pub const EOL: &str = "<EOL>";
pub const INDENT: &str = "<INDENT>";
pub const DEDENT: &str = "<DEDENT>";
pub const STR_LIT: &str = "<STR_LIT>";
pub const NUM_LIT: &str = "<NUM_LIT>";
pub const COMMENT: &str = "<COMMENT>";

pub const KEYWORDS: [&str; 6] = ["if", "else", "def", "return", "for", "var"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Identifier,
    Keyword,
    Punct,
    /// String literal. Raw streams hold the surface image, normalized
    /// streams hold `<STR_LIT>`.
    StrLit,
    /// Numeric literal, surface image or `<NUM_LIT>`.
    NumLit,
    /// Comment or docstring, surface image or `<COMMENT>`.
    Comment,
    /// `<STR_LIT:lit>` / `<NUM_LIT:lit>` for literals kept by the table.
    KeptLiteral,
    Bof,
    Eof,
    Eol,
    Indent,
    Dedent,
    LangPrefix,
}

impl TokenKind {
    /// Kinds whose image is a fixed special token rather than program text.
    pub fn is_structural(self) -> bool {
        matches!(
            self,
            TokenKind::Bof | TokenKind::Eof | TokenKind::Eol | TokenKind::Indent | TokenKind::Dedent | TokenKind::LangPrefix
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
}

impl Token {
    pub fn new(kind: TokenKind, text: impl Into<String>) -> Self {
        Token { kind, text: text.into() }
    }

    pub fn structural(kind: TokenKind) -> Self {
        let text = match kind {
            TokenKind::Bof => BOF,
            TokenKind::Eof => EOF,
            TokenKind::Eol => EOL,
            TokenKind::Indent => INDENT,
            TokenKind::Dedent => DEDENT,
            _ => panic!("{kind:?} is not structural"),
        };
        Token::new(kind, text)
    }
}

/// Recoverable problem found while lexing; the stream is still produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexDiagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
    pub language: Language,
    /// Unterminated strings and similar recoverable errors.
    pub diagnostics: Vec<LexDiagnostic>,
    /// True once [`normalize`] has replaced literal and comment images.
    pub normalized: bool,
}

impl TokenStream {
    pub fn has_errors(&self) -> bool {
        !self.diagnostics.is_empty()
    }

    pub fn kinds(&self) -> Vec<TokenKind> {
        self.tokens.iter().map(|t| t.kind).collect()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    /// Token texts joined by single spaces.
    pub fn surface_text(&self) -> String {
        self.texts().join(" ")
    }
}

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

/// Image of a kept literal special, e.g. `<STR_LIT:__main__>`.
pub fn kept_literal_image(kind: LiteralKind, lit: &str) -> String {
    match kind {
        LiteralKind::String => format!("<STR_LIT:{lit}>"),
        LiteralKind::Number => format!("<NUM_LIT:{lit}>"),
    }
}

/// Inverse of [`kept_literal_image`].
pub fn parse_kept_literal(image: &str) -> Option<(LiteralKind, &str)> {
    let inner = image.strip_suffix('>')?;
    if let Some(lit) = inner.strip_prefix("<STR_LIT:") {
        Some((LiteralKind::String, lit))
    } else {
        inner.strip_prefix("<NUM_LIT:").map(|lit| (LiteralKind::Number, lit))
    }
}
