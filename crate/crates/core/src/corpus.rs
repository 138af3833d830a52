//! Corpus ingestion, content deduplication and repository-level splitting.
//!
//! A corpus root holds one directory per repository. Every file whose
//! extension is registered in the language map becomes a [`CorpusEntry`];
//! files with identical bytes are kept once. [`split`] shuffles repositories
//! with a seeded PRNG, sends 70% of them to the development side and 30% to
//! test, then splits development files 80/20 into train and validation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::fnv1a64;
use crate::language::Language;

pub const DEV_FRACTION: f64 = 0.7;
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read `{path}`: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no files with a registered extension under the given roots")]
    Empty,
    #[error("no language extensions registered")]
    NoExtensions,
    #[error("malformed manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
}

/// Extension (without the dot) to language map.
pub type LanguageConfig = BTreeMap<String, Language>;

pub fn default_language_config() -> LanguageConfig {
    Language::ALL
        .iter()
        .map(|&lang| (lang.extension().to_string(), lang))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub repo_id: String,
    pub file_path: String,
    pub language: Language,
    pub content_hash: u64,
}

impl CorpusEntry {
    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.content_hash)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub entries: Vec<CorpusEntry>,
    pub languages: BTreeSet<Language>,
}

impl CorpusIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn repo_ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.repo_id.as_str()).collect()
    }
}

/// Walks every root and builds a deduplicated index.
///
/// The repository id of a file is the first path component below its root.
/// When two files share content, the one seen first (roots in the given
/// order, paths sorted within a root) is kept.
pub fn ingest<P: AsRef<Path>>(roots: &[P], config: &LanguageConfig) -> Result<CorpusIndex, CorpusError> {
    if config.is_empty() {
        return Err(CorpusError::NoExtensions);
    }
    let mut candidates = Vec::new();
    for root in roots {
        let root = root.as_ref();
        let meta = fs::metadata(root).map_err(|source| CorpusError::Unreadable {
            path: root.to_path_buf(),
            source,
        })?;
        if !meta.is_dir() {
            return Err(CorpusError::Unreadable {
                path: root.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
            });
        }
        let mut files = Vec::new();
        for item in WalkDir::new(root).sort_by_file_name() {
            let item = item.map_err(|err| {
                let path = err.path().unwrap_or(root).to_path_buf();
                CorpusError::Unreadable {
                    path,
                    source: err.into_io_error().unwrap_or_else(|| std::io::Error::other("walk error")),
                }
            })?;
            if !item.file_type().is_file() {
                continue;
            }
            let Some(lang) = item
                .path()
                .extension()
                .and_then(|ext| ext.to_str())
                .and_then(|ext| config.get(ext))
            else {
                continue;
            };
            let rel = item.path().strip_prefix(root).unwrap_or(item.path());
            let repo_id = rel
                .components()
                .next()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .unwrap_or_default();
            files.push((item.path().to_path_buf(), repo_id, *lang));
        }
        candidates.extend(files);
    }

    let hashed: Vec<Result<(PathBuf, String, Language, u64), CorpusError>> = candidates
        .into_par_iter()
        .map(|(path, repo_id, lang)| {
            let bytes = fs::read(&path).map_err(|source| CorpusError::Unreadable {
                path: path.clone(),
                source,
            })?;
            Ok((path, repo_id, lang, fnv1a64(&bytes)))
        })
        .collect();

    let mut seen = HashSet::new();
    let mut index = CorpusIndex::default();
    for item in hashed {
        let (path, repo_id, language, content_hash) = item?;
        if !seen.insert(content_hash) {
            continue;
        }
        index.languages.insert(language);
        index.entries.push(CorpusEntry {
            repo_id,
            file_path: path.to_string_lossy().into_owned(),
            language,
            content_hash,
        });
    }
    if index.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Validation => "validation",
            SplitKind::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<CorpusEntry>,
    pub validation: Vec<CorpusEntry>,
    pub test: Vec<CorpusEntry>,
    pub seed: u64,
    pub dev_fraction: f64,
    pub train_fraction: f64,
    /// Set when the split could not honour the ratios (a single repository).
    pub warning: Option<String>,
}

impl SplitManifest {
    pub fn get(&self, kind: SplitKind) -> &[CorpusEntry] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Test => &self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    /// Line-delimited form: `split \t repo_id \t path \t language \t hash-hex`.
    ///
    /// A leading `#` line records the seed and ratios so the manifest can be
    /// read back losslessly.
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "# seed={} dev_fraction={} train_fraction={}",
            self.seed, self.dev_fraction, self.train_fraction
        );
        if let Some(warning) = &self.warning {
            let _ = write!(out, " warning={}", warning.replace(['\n', '\t'], " "));
        }
        out.push('\n');
        for kind in [SplitKind::Train, SplitKind::Validation, SplitKind::Test] {
            for e in self.get(kind) {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    kind.as_str(),
                    e.repo_id,
                    e.file_path,
                    e.language,
                    e.hash_hex()
                );
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<SplitManifest, CorpusError> {
        let mut manifest = SplitManifest {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
            seed: 0,
            dev_fraction: DEV_FRACTION,
            train_fraction: TRAIN_FRACTION,
            warning: None,
        };
        let bad = |line: usize, reason: &str| CorpusError::Manifest {
            line,
            reason: reason.to_string(),
        };
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if let Some(header) = line.strip_prefix('#') {
                let header = header.trim();
                let (fields, warning) = match header.split_once(" warning=") {
                    Some((f, w)) => (f, Some(w.to_string())),
                    None => (header, None),
                };
                manifest.warning = warning;
                for field in fields.split_whitespace() {
                    let (key, value) = field.split_once('=').ok_or_else(|| bad(lineno, "header field without `=`"))?;
                    match key {
                        "seed" => manifest.seed = value.parse().map_err(|_| bad(lineno, "bad seed"))?,
                        "dev_fraction" => {
                            manifest.dev_fraction = value.parse().map_err(|_| bad(lineno, "bad dev_fraction"))?
                        }
                        "train_fraction" => {
                            manifest.train_fraction = value.parse().map_err(|_| bad(lineno, "bad train_fraction"))?
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(bad(lineno, "expected 5 tab-separated columns"));
            }
            let language = cols[3].parse().map_err(|_| bad(lineno, "unknown language"))?;
            let content_hash = u64::from_str_radix(cols[4], 16).map_err(|_| bad(lineno, "bad hash"))?;
            let entry = CorpusEntry {
                repo_id: cols[1].to_string(),
                file_path: cols[2].to_string(),
                language,
                content_hash,
            };
            match cols[0] {
                "train" => manifest.train.push(entry),
                "validation" => manifest.validation.push(entry),
                "test" => manifest.test.push(entry),
                _ => return Err(bad(lineno, "unknown split name")),
            }
        }
        Ok(manifest)
    }
}

/// Number of repositories sent to the development side.
pub fn dev_repo_count(repos: usize) -> usize {
    if repos < 2 {
        return repos;
    }
    ((DEV_FRACTION * repos as f64).floor() as usize).max(1)
}

/// Number of development files used for training.
pub fn train_file_count(files: usize) -> usize {
    if files == 0 {
        return 0;
    }
    ((TRAIN_FRACTION * files as f64).floor() as usize).max(1)
}

/// Repository-level split, deterministic for a given `(index, seed)`.
pub fn split(index: &CorpusIndex, seed: u64) -> SplitManifest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_repo: BTreeMap<&str, Vec<&CorpusEntry>> = BTreeMap::new();
    for entry in &index.entries {
        by_repo.entry(entry.repo_id.as_str()).or_default().push(entry);
    }
    let mut manifest = SplitManifest {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
        dev_fraction: DEV_FRACTION,
        train_fraction: TRAIN_FRACTION,
        warning: None,
    };
    if by_repo.len() <= 1 {
        manifest.train = index.entries.clone();
        manifest.train.sort();
        manifest.warning = Some(format!(
            "degenerate split: {} repository, all files assigned to train",
            by_repo.len()
        ));
        return manifest;
    }

    let mut repos: Vec<&str> = by_repo.keys().copied().collect();
    repos.shuffle(&mut rng);
    let n_dev = dev_repo_count(repos.len());
    let (dev_repos, test_repos) = repos.split_at(n_dev);

    let mut dev_files: Vec<&CorpusEntry> = dev_repos.iter().flat_map(|r| by_repo[r].iter().copied()).collect();
    dev_files.sort();
    dev_files.shuffle(&mut rng);
    let n_train = train_file_count(dev_files.len());
    manifest.train = dev_files[..n_train].iter().map(|e| (*e).clone()).collect();
    manifest.validation = dev_files[n_train..].iter().map(|e| (*e).clone()).collect();
    manifest.test = test_repos.iter().flat_map(|r| by_repo[r].iter().map(|e| (*e).clone())).collect();
    manifest.train.sort();
    manifest.validation.sort();
    manifest.test.sort();
    manifest
}

/// A source file loaded into memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub language: Language,
    pub text: String,
}

/// Reads the files behind manifest entries, in order.
pub fn load_sources(entries: &[CorpusEntry]) -> Result<Vec<SourceFile>, CorpusError> {
    entries
        .iter()
        .map(|e| {
            let text = fs::read_to_string(&e.file_path).map_err(|source| CorpusError::Unreadable {
                path: PathBuf::from(&e.file_path),
                source,
            })?;
            Ok(SourceFile {
                path: e.file_path.clone(),
                language: e.language,
                text,
            })
        })
        .collect()
}
