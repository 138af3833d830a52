//! Seeded generator of small toy-py and toy-c programs.
//!
//! Both languages render the same statement trees over the same identifier
//! pools, so a pair of corpora differs only in syntax: `def f(a):` with
//! indentation against `def f(a) {` with braces, `x = 1` against
//! `var x = 1;`, `#` against `//` comments.

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::SourceFile;
use crate::language::Language;

const NOUNS: [&str; 25] = [
    "user", "count", "item", "total", "value", "node", "list", "index", "name", "data", "size", "buffer", "cache", "key", "path",
    "file", "line", "token", "score", "state", "queue", "table", "price", "order", "event",
];
const VERBS: [&str; 12] = [
    "get", "set", "load", "make", "find", "update", "parse", "read", "write", "build", "check", "compute",
];
const STRINGS: [&str; 8] = ["ok", "error", "done", "missing", "user", "empty", "%s", "retry"];
const COMPARE: [&str; 4] = [">", "<", "==", "!="];
const ARITH: [&str; 3] = ["+", "-", "*"];
const NOTES: [&str; 5] = ["check bounds", "fast path", "keep order", "see caller", "cache result"];

#[derive(Debug, Clone)]
enum Expr {
    Name(String),
    Num(String),
    Str(String),
    Call(String, Vec<Expr>),
    Binary(Box<Expr>, &'static str, Box<Expr>),
    Index(String, Box<Expr>),
}

#[derive(Debug, Clone)]
enum Stmt {
    Assign { name: String, value: Expr, declare: bool },
    Expr(Expr),
    If { cond: Expr, body: Vec<Stmt>, orelse: Vec<Stmt> },
    Return(Expr),
    Comment(&'static str),
}

#[derive(Debug, Clone)]
struct Function {
    name: String,
    params: Vec<String>,
    body: Vec<Stmt>,
}

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    literal: &'a mut dyn FnMut(&mut ChaCha8Rng, bool) -> Expr,
}

impl Gen<'_> {
    fn noun(&mut self) -> String {
        let a = *NOUNS.choose(self.rng).expect("non-empty");
        if self.rng.random_bool(0.5) {
            let b = *NOUNS.choose(self.rng).expect("non-empty");
            if a != b {
                return format!("{a}_{b}");
            }
        }
        a.to_string()
    }

    fn function_name(&mut self) -> String {
        let v = *VERBS.choose(self.rng).expect("non-empty");
        format!("{v}_{}", self.noun())
    }

    fn atom(&mut self, scope: &[String]) -> Expr {
        match self.rng.random_range(0..10) {
            0..=5 if !scope.is_empty() => Expr::Name(scope.choose(self.rng).expect("non-empty").clone()),
            6 => (self.literal)(self.rng, true),
            _ => (self.literal)(self.rng, false),
        }
    }

    fn expr(&mut self, scope: &[String], depth: usize) -> Expr {
        match self.rng.random_range(0..6) {
            0 | 1 if depth > 0 => {
                let f = self.function_name();
                let n = self.rng.random_range(0..3);
                Expr::Call(f, (0..n).map(|_| self.expr(scope, depth - 1)).collect())
            }
            2 if depth > 0 => {
                let op = *ARITH.choose(self.rng).expect("non-empty");
                Expr::Binary(Box::new(self.atom(scope)), op, Box::new(self.atom(scope)))
            }
            3 if !scope.is_empty() => {
                let base = scope.choose(self.rng).expect("non-empty").clone();
                Expr::Index(base, Box::new(self.atom(scope)))
            }
            _ => self.atom(scope),
        }
    }

    fn block(&mut self, scope: &mut Vec<String>, len: usize, depth: usize) -> Vec<Stmt> {
        let mut body = Vec::new();
        for _ in 0..len {
            let stmt = match self.rng.random_range(0..10) {
                0..=4 => {
                    let name = self.noun();
                    let value = self.expr(scope, 2);
                    let declare = !scope.contains(&name);
                    scope.push(name.clone());
                    Stmt::Assign { name, value, declare }
                }
                5 | 6 if depth > 0 => {
                    let cond = Expr::Binary(
                        Box::new(self.atom(scope)),
                        COMPARE.choose(self.rng).expect("non-empty"),
                        Box::new(self.atom(scope)),
                    );
                    let n = self.rng.random_range(1..3);
                    let body = self.block(&mut scope.clone(), n, depth - 1);
                    let orelse = if self.rng.random_bool(0.3) {
                        self.block(&mut scope.clone(), 1, depth - 1)
                    } else {
                        Vec::new()
                    };
                    Stmt::If { cond, body, orelse }
                }
                7 if depth > 0 && matches!(body.last(), Some(Stmt::Assign { .. } | Stmt::Expr(_))) => Stmt::Comment(NOTES.choose(self.rng).expect("non-empty")),
                _ => {
                    let f = self.function_name();
                    let n = self.rng.random_range(1..3);
                    Stmt::Expr(Expr::Call(f, (0..n).map(|_| self.expr(scope, 1)).collect()))
                }
            };
            body.push(stmt);
        }
        body
    }

    fn function(&mut self, statements: usize) -> Function {
        let name = self.function_name();
        let n = self.rng.random_range(1..3);
        let mut params: Vec<String> = Vec::new();
        while params.len() < n {
            let p = self.noun();
            if !params.contains(&p) {
                params.push(p);
            }
        }
        let mut scope = params.clone();
        let mut body = self.block(&mut scope, statements.saturating_sub(1).max(1), 1);
        body.push(Stmt::Return(self.expr(&scope, 1)));
        Function { name, params, body }
    }
}

fn render_expr(e: &Expr) -> String {
    match e {
        Expr::Name(n) | Expr::Num(n) => n.clone(),
        Expr::Str(s) => format!("\"{s}\""),
        Expr::Call(f, args) => format!("{f}({})", args.iter().map(render_expr).collect::<Vec<_>>().join(", ")),
        Expr::Binary(a, op, b) => format!("{} {op} {}", render_expr(a), render_expr(b)),
        Expr::Index(base, i) => format!("{base}[{}]", render_expr(i)),
    }
}

fn render_block(body: &[Stmt], language: Language, depth: usize, out: &mut String) {
    let pad = "    ".repeat(depth);
    for stmt in body {
        match (stmt, language) {
            (Stmt::Assign { name, value, .. }, Language::ToyPy) => out.push_str(&format!("{pad}{name} = {}\n", render_expr(value))),
            (Stmt::Assign { name, value, declare }, Language::ToyC) => {
                let var = if *declare { "var " } else { "" };
                out.push_str(&format!("{pad}{var}{name} = {};\n", render_expr(value)));
            }
            (Stmt::Expr(e), Language::ToyPy) => out.push_str(&format!("{pad}{}\n", render_expr(e))),
            (Stmt::Expr(e), Language::ToyC) => out.push_str(&format!("{pad}{};\n", render_expr(e))),
            (Stmt::Return(e), Language::ToyPy) => out.push_str(&format!("{pad}return {}\n", render_expr(e))),
            (Stmt::Return(e), Language::ToyC) => out.push_str(&format!("{pad}return {};\n", render_expr(e))),
            (Stmt::Comment(text), _) => out.push_str(&format!("{pad}{} {text}\n", language.comment_prefix())),
            (Stmt::If { cond, body, orelse }, Language::ToyPy) => {
                out.push_str(&format!("{pad}if {}:\n", render_expr(cond)));
                render_block(body, language, depth + 1, out);
                if !orelse.is_empty() {
                    out.push_str(&format!("{pad}else:\n"));
                    render_block(orelse, language, depth + 1, out);
                }
            }
            (Stmt::If { cond, body, orelse }, Language::ToyC) => {
                out.push_str(&format!("{pad}if ({}) {{\n", render_expr(cond)));
                render_block(body, language, depth + 1, out);
                if orelse.is_empty() {
                    out.push_str(&format!("{pad}}}\n"));
                } else {
                    out.push_str(&format!("{pad}}} else {{\n"));
                    render_block(orelse, language, depth + 1, out);
                    out.push_str(&format!("{pad}}}\n"));
                }
            }
        }
    }
}

fn render_function(f: &Function, language: Language) -> String {
    let params = f.params.join(", ");
    let mut out = match language {
        Language::ToyPy => format!("def {}({params}):\n", f.name),
        Language::ToyC => format!("def {}({params}) {{\n", f.name),
    };
    render_block(&f.body, language, 1, &mut out);
    if language == Language::ToyC {
        out.push_str("}\n");
    }
    out
}

fn plain_literal(rng: &mut ChaCha8Rng, string: bool) -> Expr {
    if string {
        Expr::Str(STRINGS.choose(rng).expect("non-empty").to_string())
    } else {
        Expr::Num(rng.random_range(1..20u32).to_string())
    }
}

fn file_path(language: Language, index: usize) -> String {
    format!("repo{:03}/f{:03}.{}", index / 4, index, language.extension())
}

/// `count` files of one function each with about `statements` top-level
/// statements. The same seed gives the same programs in either language.
pub fn generate(language: Language, count: usize, statements: usize, seed: u64) -> Vec<SourceFile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut literal = plain_literal;
    (0..count)
        .map(|i| {
            let f = Gen {
                rng: &mut rng,
                literal: &mut literal,
            }
            .function(statements);
            SourceFile {
                path: file_path(language, i),
                language,
                text: render_function(&f, language),
            }
        })
        .collect()
}

/// Files with distinct text until at least `lines` non-blank lines exist.
pub fn generate_lines(language: Language, lines: usize, statements: usize, seed: u64) -> Vec<SourceFile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut literal = plain_literal;
    let mut files: Vec<SourceFile> = Vec::new();
    let mut total = 0;
    while total < lines {
        let f = Gen {
            rng: &mut rng,
            literal: &mut literal,
        }
        .function(statements);
        let text = render_function(&f, language);
        if files.iter().any(|g| g.text == text) {
            continue;
        }
        total += text.lines().filter(|l| !l.trim().is_empty()).count();
        files.push(SourceFile {
            path: file_path(language, files.len()),
            language,
            text,
        });
    }
    files
}

/// Programs whose string and number literals are random secrets (hex keys
/// and large integers). Returns the files and every literal they contain.
pub fn privacy_corpus(language: Language, count: usize, statements: usize, seed: u64) -> (Vec<SourceFile>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut secrets: Vec<String> = Vec::new();
    let mut files = Vec::new();
    for i in 0..count {
        let mut literal = |rng: &mut ChaCha8Rng, string: bool| {
            if string {
                let key: String = (0..16).map(|_| char::from_digit(rng.random_range(0..16), 16).expect("hex digit")).collect();
                let s = format!("sk_{key}");
                secrets.push(s.clone());
                Expr::Str(s)
            } else {
                let n = rng.random_range(100_000..10_000_000u32).to_string();
                secrets.push(n.clone());
                Expr::Num(n)
            }
        };
        let f = Gen {
            rng: &mut rng,
            literal: &mut literal,
        }
        .function(statements);
        files.push(SourceFile {
            path: file_path(language, i),
            language,
            text: render_function(&f, language),
        });
    }
    secrets.sort();
    secrets.dedup();
    (files, secrets)
}

/// Writes files under `dir` at their relative paths.
pub fn write_corpus(dir: &Path, files: &[SourceFile]) -> io::Result<()> {
    for f in files {
        let path = dir.join(&f.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, &f.text)?;
    }
    Ok(())
}
