use super::{is_keyword, TokenKind, TokenStream};
use crate::language::Language;

const INDENT_WIDTH: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenderError {
    #[error("dedent below column zero at token {index}")]
    NegativeIndent { index: usize },
    #[error("stream ends with {depth} unclosed indentation level(s)")]
    DanglingIndent { depth: usize },
}

fn starts_numeric(text: &str) -> bool {
    text.chars().next().is_some_and(|c| c.is_ascii_digit())
}

fn is_word(text: &str) -> bool {
    text.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') && !is_keyword(text)
}

/// Canonical spacing between two adjacent atoms on one line.
pub fn needs_space(prev: &str, next: &str) -> bool {
    if prev.is_empty() || next.is_empty() {
        return false;
    }
    if matches!(next, "," | ":" | ";" | ")" | "]" | "}") {
        return false;
    }
    if matches!(prev, "(" | "[" | "{") {
        return false;
    }
    if prev == "." {
        return starts_numeric(next);
    }
    if next == "." {
        return starts_numeric(prev);
    }
    if matches!(next, "(" | "[") && (is_word(prev) || matches!(prev, ")" | "]")) {
        return false;
    }
    true
}

/// Joins the atoms of one line with canonical spacing.
pub fn render_line<S: AsRef<str>>(atoms: &[S]) -> String {
    let mut out = String::new();
    let mut prev = "";
    for atom in atoms {
        let atom = atom.as_ref();
        if needs_space(prev, atom) {
            out.push(' ');
        }
        out.push_str(atom);
        prev = atom;
    }
    out
}

/// Regenerates source text in the canonical style.
///
/// `toy-py` indentation follows `<INDENT>`/`<DEDENT>`; `toy-c` lines indent by
/// brace depth. Fails on a dedent below zero or indentation left open at the
/// end of a complete stream.
pub fn render(stream: &TokenStream) -> Result<String, RenderError> {
    let mut out = String::new();
    let mut depth = 0usize;
    let mut braces = 0usize;
    let mut line: Vec<&str> = Vec::new();
    let mut complete = false;

    let flush = |line: &mut Vec<&str>, depth: usize, braces: &mut usize, out: &mut String| {
        if line.is_empty() {
            return;
        }
        let level = match stream.language {
            Language::ToyPy => depth,
            Language::ToyC => {
                let closers = line.iter().take_while(|t| **t == "}").count();
                let level = braces.saturating_sub(closers);
                for atom in line.iter() {
                    match *atom {
                        "{" => *braces += 1,
                        "}" => *braces = braces.saturating_sub(1),
                        _ => {}
                    }
                }
                level
            }
        };
        out.push_str(&" ".repeat(level * INDENT_WIDTH));
        out.push_str(&render_line(line));
        line.clear();
    };

    for (index, token) in stream.tokens.iter().enumerate() {
        match token.kind {
            TokenKind::Bof | TokenKind::LangPrefix => {}
            TokenKind::Eof => complete = true,
            TokenKind::Indent => depth += 1,
            TokenKind::Dedent => {
                depth = depth.checked_sub(1).ok_or(RenderError::NegativeIndent { index })?;
            }
            TokenKind::Eol => {
                flush(&mut line, depth, &mut braces, &mut out);
                out.push('\n');
            }
            _ => line.push(token.text.as_str()),
        }
    }
    flush(&mut line, depth, &mut braces, &mut out);
    if complete && depth != 0 {
        return Err(RenderError::DanglingIndent { depth });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexnorm::{lex, normalize, LiteralTable, Token};

    #[test]
    fn normalized_assignment() {
        let stream = normalize(&lex("x=1", Language::ToyPy).unwrap(), &LiteralTable::empty());
        assert_eq!(render(&stream).unwrap(), "x = <NUM_LIT>\n");
    }

    #[test]
    fn canonical_spacing() {
        let stream = lex("def  f( a,b ):\n\treturn a . b[ 0 ]+g(1)\n", Language::ToyPy).unwrap();
        assert_eq!(render(&stream).unwrap(), "def f(a, b):\n    return a.b[0] + g(1)\n");
        let stream = lex("if(a){\nx=1;\n}\n", Language::ToyC).unwrap();
        assert_eq!(render(&stream).unwrap(), "if (a) {\n    x = 1;\n}\n");
    }

    #[test]
    fn dangling_indent_is_rejected() {
        let mut stream = lex("x\n", Language::ToyPy).unwrap();
        stream.tokens.insert(1, Token::structural(TokenKind::Indent));
        assert!(matches!(render(&stream), Err(RenderError::DanglingIndent { depth: 1 })));
        let mut stream = lex("x\n", Language::ToyPy).unwrap();
        stream.tokens.insert(1, Token::structural(TokenKind::Dedent));
        assert!(matches!(render(&stream), Err(RenderError::NegativeIndent { .. })));
    }

    #[test]
    fn numbers_keep_dots_spaced() {
        let stream = lex("a = x . 5\n", Language::ToyPy).unwrap();
        let text = render(&stream).unwrap();
        assert_eq!(text, "a = x. 5\n");
        assert_eq!(lex(&text, Language::ToyPy).unwrap(), stream);
    }
}
