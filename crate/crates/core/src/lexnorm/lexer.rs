use super::{is_keyword, LexDiagnostic, Token, TokenKind, TokenStream};
use crate::language::Language;

const TAB_WIDTH: usize = 4;

const OPERATORS_2: [&str; 9] = ["==", "!=", "<=", ">=", "+=", "-=", "->", "&&", "||"];
const OPERATORS_1: &str = "+-*/%=<>!.,:;()[]{}";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LexError {
    #[error("illegal character {ch:?} at line {line}, column {column}")]
    IllegalChar { ch: char, line: usize, column: usize },
    #[error("dedent to column {column} at line {line} matches no enclosing block")]
    InconsistentDedent { line: usize, column: usize },
}

/// Lexes a complete file: `<BOF> ... <EOF>`, with an `<EOL>` closing every
/// non-empty line and all open blocks dedented before `<EOF>`.
pub fn lex(source: &str, language: Language) -> Result<TokenStream, LexError> {
    Lexer::new(language).run(source, true)
}

/// Lexes an editor prefix. The stream starts with `<BOF>` but is left open:
/// no `<EOF>`, no closing dedents, and no `<EOL>` after an unterminated last
/// line.
pub fn lex_prefix(source: &str, language: Language) -> Result<TokenStream, LexError> {
    Lexer::new(language).run(source, false)
}

struct Lexer {
    language: Language,
    tokens: Vec<Token>,
    diagnostics: Vec<LexDiagnostic>,
    indents: Vec<usize>,
    /// Next code line opens a block (file start or right after an indent).
    block_start: bool,
}

impl Lexer {
    fn new(language: Language) -> Self {
        Lexer {
            language,
            tokens: vec![Token::structural(TokenKind::Bof)],
            diagnostics: Vec::new(),
            indents: vec![0],
            block_start: true,
        }
    }

    fn run(mut self, source: &str, complete: bool) -> Result<TokenStream, LexError> {
        let lines: Vec<&str> = source.split('\n').collect();
        let last = lines.len() - 1;
        for (i, raw) in lines.iter().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            let terminated = i < last;
            if !terminated && line.is_empty() {
                break;
            }
            self.line(line, i + 1)?;
            if terminated || complete {
                self.tokens.push(Token::structural(TokenKind::Eol));
            }
        }
        if complete {
            while self.indents.len() > 1 {
                self.indents.pop();
                self.tokens.push(Token::structural(TokenKind::Dedent));
            }
            self.tokens.push(Token::structural(TokenKind::Eof));
        }
        Ok(TokenStream {
            tokens: self.tokens,
            language: self.language,
            diagnostics: self.diagnostics,
            normalized: false,
        })
    }

    fn line(&mut self, line: &str, lineno: usize) -> Result<(), LexError> {
        let chars: Vec<char> = line.chars().collect();
        let mut column = 0;
        let mut pos = 0;
        while pos < chars.len() && (chars[pos] == ' ' || chars[pos] == '\t') {
            column = if chars[pos] == '\t' { (column / TAB_WIDTH + 1) * TAB_WIDTH } else { column + 1 };
            pos += 1;
        }
        if pos == chars.len() {
            return Ok(());
        }
        let comment_only = self.comment_at(&chars, pos);
        if !comment_only && self.language == Language::ToyPy {
            self.indentation(column, lineno)?;
        }
        let first = self.tokens.len();
        self.line_tokens(&chars, pos, lineno)?;
        if comment_only {
            return Ok(());
        }
        if self.language == Language::ToyPy
            && self.block_start
            && self.tokens.len() == first + 1
            && self.tokens[first].kind == TokenKind::StrLit
        {
            self.tokens[first].kind = TokenKind::Comment;
        }
        self.block_start = false;
        Ok(())
    }

    fn indentation(&mut self, column: usize, lineno: usize) -> Result<(), LexError> {
        let current = *self.indents.last().expect("indent stack never empty");
        if column > current {
            self.indents.push(column);
            self.tokens.push(Token::structural(TokenKind::Indent));
            self.block_start = true;
        } else if column < current {
            while *self.indents.last().unwrap() > column {
                self.indents.pop();
                self.tokens.push(Token::structural(TokenKind::Dedent));
            }
            if *self.indents.last().unwrap() != column {
                return Err(LexError::InconsistentDedent { line: lineno, column: column + 1 });
            }
        }
        Ok(())
    }

    fn comment_at(&self, chars: &[char], pos: usize) -> bool {
        match self.language {
            Language::ToyPy => chars[pos] == '#',
            Language::ToyC => chars[pos] == '/' && chars.get(pos + 1) == Some(&'/'),
        }
    }

    fn line_tokens(&mut self, chars: &[char], mut pos: usize, lineno: usize) -> Result<(), LexError> {
        while pos < chars.len() {
            let c = chars[pos];
            if c == ' ' || c == '\t' || c == '\r' {
                pos += 1;
                continue;
            }
            if self.comment_at(chars, pos) {
                let text: String = chars[pos..].iter().collect();
                self.tokens.push(Token::new(TokenKind::Comment, text.trim_end()));
                return Ok(());
            }
            let start = pos;
            if c.is_ascii_alphabetic() || c == '_' {
                while pos < chars.len() && (chars[pos].is_ascii_alphanumeric() || chars[pos] == '_') {
                    pos += 1;
                }
                let word: String = chars[start..pos].iter().collect();
                let kind = if is_keyword(&word) { TokenKind::Keyword } else { TokenKind::Identifier };
                self.tokens.push(Token::new(kind, word));
            } else if c.is_ascii_digit() {
                while pos < chars.len() && chars[pos].is_ascii_digit() {
                    pos += 1;
                }
                if pos + 1 < chars.len() && chars[pos] == '.' && chars[pos + 1].is_ascii_digit() {
                    pos += 1;
                    while pos < chars.len() && chars[pos].is_ascii_digit() {
                        pos += 1;
                    }
                }
                self.tokens.push(Token::new(TokenKind::NumLit, chars[start..pos].iter().collect::<String>()));
            } else if c == '"' || c == '\'' {
                pos += 1;
                let mut closed = false;
                while pos < chars.len() {
                    if chars[pos] == '\\' {
                        pos += 2;
                        continue;
                    }
                    if chars[pos] == c {
                        closed = true;
                        pos += 1;
                        break;
                    }
                    pos += 1;
                }
                let pos_end = pos.min(chars.len());
                if !closed {
                    self.diagnostics.push(LexDiagnostic {
                        line: lineno,
                        column: start + 1,
                        message: "unterminated string literal".to_string(),
                    });
                }
                let text: String = chars[start..pos_end].iter().collect();
                self.tokens.push(Token::new(TokenKind::StrLit, text));
                pos = pos_end;
            } else if let Some(op) = OPERATORS_2
                .iter()
                .find(|op| chars[pos..].iter().take(2).copied().eq(op.chars()))
            {
                self.tokens.push(Token::new(TokenKind::Punct, *op));
                pos += 2;
            } else if OPERATORS_1.contains(c) {
                self.tokens.push(Token::new(TokenKind::Punct, c.to_string()));
                pos += 1;
            } else {
                return Err(LexError::IllegalChar { ch: c, line: lineno, column: start + 1 });
            }
        }
        Ok(())
    }
}
