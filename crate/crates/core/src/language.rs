use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The two toy languages understood by the lexer.
///
/// `toy-py` scopes blocks by indentation, `toy-c` by braces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Language {
    #[serde(rename = "toy-py")]
    ToyPy,
    #[serde(rename = "toy-c")]
    ToyC,
}

impl Language {
    pub const ALL: [Language; 2] = [Language::ToyPy, Language::ToyC];

    pub fn id(self) -> &'static str {
        match self {
            Language::ToyPy => "toy-py",
            Language::ToyC => "toy-c",
        }
    }

    /// Dense index used by language embeddings and the classification head.
    pub fn index(self) -> usize {
        match self {
            Language::ToyPy => 0,
            Language::ToyC => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Language> {
        Self::ALL.get(index).copied()
    }

    /// Default file extension used by the synthetic corpus and `ingest`.
    pub fn extension(self) -> &'static str {
        match self {
            Language::ToyPy => "tpy",
            Language::ToyC => "tc",
        }
    }

    pub fn comment_prefix(self) -> &'static str {
        match self {
            Language::ToyPy => "#",
            Language::ToyC => "//",
        }
    }

    /// Image of the control-code special announcing this language.
    pub fn control_code(self) -> String {
        format!("<LANG:{}>", self.id())
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown language id `{0}`")]
pub struct UnknownLanguage(pub String);

impl FromStr for Language {
    type Err = UnknownLanguage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "toy-py" => Ok(Language::ToyPy),
            "toy-c" => Ok(Language::ToyC),
            other => Err(UnknownLanguage(other.to_string())),
        }
    }
}
