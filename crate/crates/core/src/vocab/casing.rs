/// An identifier split at casing and underscore boundaries.
///
/// `leading`, `separators` and `trailing` hold the underscore runs that sit
/// before, between and after `pieces`, so [`CasingSplit::reconstruct`] returns
/// the original identifier exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CasingSplit {
    pub leading: String,
    pub pieces: Vec<String>,
    pub separators: Vec<String>,
    pub trailing: String,
}

impl CasingSplit {
    pub fn reconstruct(&self) -> String {
        let mut out = self.leading.clone();
        for (i, piece) in self.pieces.iter().enumerate() {
            if i > 0 {
                out.push_str(&self.separators[i - 1]);
            }
            out.push_str(piece);
        }
        out.push_str(&self.trailing);
        out
    }

    /// Pieces interleaved with non-empty separators, in source order.
    pub fn segments(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.leading.is_empty() {
            out.push(self.leading.clone());
        }
        for (i, piece) in self.pieces.iter().enumerate() {
            if i > 0 && !self.separators[i - 1].is_empty() {
                out.push(self.separators[i - 1].clone());
            }
            out.push(piece.clone());
        }
        if !self.trailing.is_empty() {
            out.push(self.trailing.clone());
        }
        out
    }
}

/// Splits an identifier on camelCase / PascalCase boundaries and underscores.
///
/// An uppercase run followed by a lowercase letter splits before its last
/// capital (`HTTPServer` -> `HTTP`, `Server`). Digits stay with the preceding
/// piece.
pub fn split_by_casing(identifier: &str) -> CasingSplit {
    let chars: Vec<char> = identifier.chars().collect();
    let mut split = CasingSplit {
        leading: String::new(),
        pieces: Vec::new(),
        separators: Vec::new(),
        trailing: String::new(),
    };
    let mut i = 0;
    while i < chars.len() && chars[i] == '_' {
        split.leading.push('_');
        i += 1;
    }
    let mut pending_sep = String::new();
    let mut current = String::new();
    while i < chars.len() {
        let c = chars[i];
        if c == '_' {
            if !current.is_empty() {
                split.pieces.push(std::mem::take(&mut current));
            }
            pending_sep.push('_');
            i += 1;
            continue;
        }
        let boundary = !current.is_empty() && {
            let prev = chars[i - 1];
            let next = chars.get(i + 1).copied();
            (prev.is_lowercase() || prev.is_ascii_digit()) && c.is_uppercase()
                || prev.is_uppercase() && c.is_uppercase() && next.is_some_and(|n| n.is_lowercase())
        };
        if boundary {
            split.pieces.push(std::mem::take(&mut current));
        }
        if current.is_empty() && !split.pieces.is_empty() {
            split.separators.push(std::mem::take(&mut pending_sep));
        }
        current.push(c);
        i += 1;
    }
    if !current.is_empty() {
        split.pieces.push(current);
    }
    split.trailing = pending_sep;
    split
}
