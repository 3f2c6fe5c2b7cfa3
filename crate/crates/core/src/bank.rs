//! Concept bank construction from POS-tagged caption corpora.
//!
//! Pipeline: noun-phrase chunking, case-folded string dedup, optional
//! frequency floor, length filter, optional blocklist, embedding fetch,
//! similarity dedup over nearest neighbours, optional class-name filter.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::{self, RetrievalError, Retriever};
use crate::vecstore::{self, dot, EmbeddingMatrix, Embedder, ProviderError, VecError};

pub const DEFAULT_MAX_CHARS: usize = 30;
pub const DEFAULT_MAX_WORDS: usize = 5;
pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.9;
pub const DEFAULT_DEDUP_TOP_M: usize = 64;
pub const DEFAULT_CLASS_THRESHOLD: f64 = 0.85;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EMBEDDING_FILE: &str = "embeddings.zcbm";
pub const VOCAB_FILE: &str = "vocab.txt";

/// Universal POS tag set.
pub const UPOS_TAGS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN", "PUNCT",
    "SCONJ", "SYM", "VERB", "X",
];

// Nominal words that carry no visual content on their own.
const STOP_WORDS: &[&str] = &[
    "thing", "things", "something", "anything", "nothing", "everything", "someone", "anyone", "everyone",
    "one", "ones", "other", "others", "lot", "lots", "kind", "sort", "type", "way", "part", "bit", "image",
    "picture", "photo", "view", "stock", "front", "side", "top", "bottom", "background", "foreground",
];

#[derive(Debug, Error)]
pub enum BankError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no concepts survived filtering")]
    EmptyBank,
    #[error("dimension mismatch: bank has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid bank configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid bank on disk: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Input { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Vector(#[from] VecError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A caption as a sequence of `(surface, UPOS tag)` tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedCaption {
    pub tokens: Vec<(String, String)>,
}

impl TaggedCaption {
    /// Parses `surface_TAG` tokens separated by single spaces. Underscores
    /// inside a surface are escaped as `\_`.
    pub fn parse(line: &str) -> Result<Self, String> {
        let mut tokens = Vec::new();
        for raw in line.split(' ').filter(|t| !t.is_empty()) {
            let split = last_unescaped_underscore(raw).ok_or_else(|| format!("token {raw:?} lacks a _TAG suffix"))?;
            let (surface, tag) = (&raw[..split], &raw[split + 1..]);
            if !UPOS_TAGS.contains(&tag) {
                return Err(format!("unknown POS tag {tag:?} in token {raw:?}"));
            }
            let surface = surface.replace("\\_", "_");
            if surface.is_empty() {
                return Err(format!("empty surface in token {raw:?}"));
            }
            tokens.push((surface, tag.to_string()));
        }
        Ok(Self { tokens })
    }
}

fn last_unescaped_underscore(token: &str) -> Option<usize> {
    let bytes = token.as_bytes();
    (0..bytes.len())
        .rev()
        .find(|&i| bytes[i] == b'_' && (i == 0 || bytes[i - 1] != b'\\'))
}

/// Streams captions from a tagged caption file, one per non-empty line.
pub fn read_tagged_file(path: &Path) -> Result<impl Iterator<Item = Result<TaggedCaption, BankError>>, BankError> {
    let file = File::open(path).map_err(|source| BankError::Input {
        path: path.to_path_buf(),
        source,
    })?;
    let path = path.to_path_buf();
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Err(source) => Some(Err(BankError::Input {
                path: path.clone(),
                source,
            })),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(TaggedCaption::parse(&l).map_err(|message| BankError::Parse { line: i + 1, message })),
        }))
}

/// Lowercases, trims and collapses internal whitespace.
pub fn case_fold(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_nominal(tag: &str) -> bool {
    matches!(tag, "NOUN" | "PROPN")
}

/// Maximal chunks matching `(ADJ|NOUN|PROPN)* (NOUN|PROPN)`, case-folded and
/// in left-to-right order. Chunks made only of stop words are dropped.
pub fn extract_noun_phrases(caption: &TaggedCaption) -> Vec<String> {
    let toks = &caption.tokens;
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        if !matches!(toks[i].1.as_str(), "ADJ" | "NOUN" | "PROPN") {
            i += 1;
            continue;
        }
        let start = i;
        let mut last_noun = None;
        while i < toks.len() && matches!(toks[i].1.as_str(), "ADJ" | "NOUN" | "PROPN") {
            if is_nominal(&toks[i].1) {
                last_noun = Some(i);
            }
            i += 1;
        }
        let Some(end) = last_noun else { continue };
        let words: Vec<String> = toks[start..=end].iter().map(|(s, _)| case_fold(s)).collect();
        if words.iter().all(|w| STOP_WORDS.contains(&w.as_str())) {
            continue;
        }
        out.push(words.join(" "));
        // trailing adjectives after the last noun start no new chunk
    }
    out
}

/// Keeps concepts with at most `max_chars` characters and `max_words` words.
pub fn filter_length(concepts: Vec<String>, max_chars: usize, max_words: usize) -> Vec<String> {
    concepts
        .into_iter()
        .filter(|c| c.chars().count() <= max_chars && c.split_whitespace().count() <= max_words)
        .collect()
}

/// Case-folded entries of a blocklist file, one per line; `#` starts a comment.
pub fn read_blocklist(path: &Path) -> Result<HashSet<String>, BankError> {
    let text = std::fs::read_to_string(path).map_err(|source| BankError::Input {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(case_fold)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiltersApplied {
    pub max_chars: usize,
    pub max_words: usize,
    pub dedup_threshold: f64,
    pub dedup_top_m: usize,
    pub class_filter_threshold: Option<f64>,
    #[serde(default = "one")]
    pub min_count: usize,
}

fn one() -> usize {
    1
}

impl Default for FiltersApplied {
    fn default() -> Self {
        Self {
            max_chars: DEFAULT_MAX_CHARS,
            max_words: DEFAULT_MAX_WORDS,
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            dedup_top_m: DEFAULT_DEDUP_TOP_M,
            class_filter_threshold: None,
            min_count: 1,
        }
    }
}

impl FiltersApplied {
    pub fn validate(&self) -> Result<(), BankError> {
        let bad = |m: &str| Err(BankError::InvalidConfig(m.to_string()));
        if self.max_chars == 0 || self.max_words == 0 {
            return bad("max_chars and max_words must be >= 1");
        }
        if !(-1.0..=1.0).contains(&self.dedup_threshold) {
            return bad("dedup_threshold must be in [-1, 1]");
        }
        if self.dedup_top_m == 0 {
            return bad("dedup_top_m must be >= 1");
        }
        if let Some(t) = self.class_filter_threshold {
            if !(-1.0..=1.0).contains(&t) {
                return bad("class_filter_threshold must be in [-1, 1]");
            }
        }
        if self.min_count == 0 {
            return bad("min_count must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub name: String,
    pub dim: usize,
    pub count: usize,
    pub sources: Vec<String>,
    pub filters_applied: FiltersApplied,
    pub embedding_file: String,
    pub vocab_file: String,
}

/// Concept vocabulary with one normalized embedding row per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptBank {
    vocab: Vec<String>,
    embeddings: EmbeddingMatrix,
    manifest: BankManifest,
    lookup: HashMap<String, usize>,
}

impl ConceptBank {
    /// Assembles a bank from parts; rows are normalized and vocabulary
    /// entries must be distinct after case folding.
    pub fn from_parts(name: &str, vocab: Vec<String>, embeddings: EmbeddingMatrix) -> Result<Self, BankError> {
        let manifest = BankManifest {
            name: name.to_string(),
            dim: embeddings.dim(),
            count: embeddings.count(),
            sources: Vec::new(),
            filters_applied: FiltersApplied::default(),
            embedding_file: EMBEDDING_FILE.into(),
            vocab_file: VOCAB_FILE.into(),
        };
        Self::with_manifest(vocab, embeddings, manifest)
    }

    fn with_manifest(vocab: Vec<String>, embeddings: EmbeddingMatrix, mut manifest: BankManifest) -> Result<Self, BankError> {
        if vocab.len() != embeddings.count() {
            return Err(BankError::Manifest(format!(
                "{} vocabulary entries for {} embedding rows",
                vocab.len(),
                embeddings.count()
            )));
        }
        let embeddings = if embeddings.is_normalized() {
            embeddings
        } else {
            embeddings.normalized()?
        };
        let mut lookup = HashMap::with_capacity(vocab.len());
        for (i, v) in vocab.iter().enumerate() {
            if lookup.insert(case_fold(v), i).is_some() {
                return Err(BankError::Manifest(format!("duplicate concept {v:?}")));
            }
        }
        manifest.dim = embeddings.dim();
        manifest.count = embeddings.count();
        Ok(Self {
            vocab,
            embeddings,
            manifest,
            lookup,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn manifest(&self) -> &BankManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn concept(&self, i: usize) -> &str {
        &self.vocab[i]
    }

    /// Row index of a concept string, compared after case folding.
    pub fn find(&self, concept: &str) -> Option<usize> {
        self.lookup.get(&case_fold(concept)).copied()
    }

    fn retain(&self, keep: &[bool]) -> Result<Self, BankError> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep[i]).collect();
        let vocab = idx.iter().map(|&i| self.vocab[i].clone()).collect();
        Self::with_manifest(vocab, self.embeddings.select_rows(&idx), self.manifest.clone())
    }

    /// Persists manifest, embedding matrix and vocabulary into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf, BankError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        vecstore::save_matrix(&self.embeddings, dir.join(&self.manifest.embedding_file))?;
        vecstore::write_vocab(&self.vocab, dir.join(&self.manifest.vocab_file))?;
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest).map_err(|e| BankError::Manifest(e.to_string()))?;
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }

    /// Loads a bank from a directory holding `manifest.json`, or from the
    /// manifest path itself.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BankError> {
        let path = path.as_ref();
        let manifest_path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let text = std::fs::read_to_string(&manifest_path).map_err(|source| BankError::Input {
            path: manifest_path.clone(),
            source,
        })?;
        let manifest: BankManifest = serde_json::from_str(&text).map_err(|e| BankError::Manifest(e.to_string()))?;
        manifest.filters_applied.validate()?;
        let embeddings = vecstore::load_matrix(dir.join(&manifest.embedding_file))?;
        let vocab = vecstore::read_vocab(dir.join(&manifest.vocab_file))?;
        if embeddings.count() != manifest.count || vocab.len() != manifest.count || embeddings.dim() != manifest.dim {
            return Err(BankError::Manifest(format!(
                "manifest declares {} x {}, files hold {} rows x {} and {} vocabulary lines",
                manifest.count,
                manifest.dim,
                embeddings.count(),
                embeddings.dim(),
                vocab.len()
            )));
        }
        Self::with_manifest(vocab, embeddings, manifest)
    }
}

/// Neighbour search used by [`dedup_similar_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DedupSearch {
    Exact,
    Ivf { n_list: usize, n_probe: usize, seed: u64 },
}

/// Greedy near-duplicate removal using exact neighbour search.
pub fn dedup_similar(bank: &ConceptBank, threshold: f64, top_m: usize) -> Result<ConceptBank, BankError> {
    dedup_similar_with(bank, threshold, top_m, DedupSearch::Exact)
}

/// Visits concepts in ascending index order; each survivor removes every
/// later concept among its `top_m` nearest neighbours whose cosine reaches
/// `threshold`.
pub fn dedup_similar_with(
    bank: &ConceptBank,
    threshold: f64,
    top_m: usize,
    search: DedupSearch,
) -> Result<ConceptBank, BankError> {
    if top_m == 0 {
        return Err(BankError::InvalidConfig("dedup_top_m must be >= 1".into()));
    }
    let rows = bank.embeddings();
    let mut out = if bank.is_empty() {
        bank.clone()
    } else {
        let retriever = match search {
            DedupSearch::Exact => Retriever::Exact,
            DedupSearch::Ivf { n_list, n_probe, seed } => {
                Retriever::Ivf(retrieval::build_ivf(rows, n_list.min(rows.count()), seed)?.with_n_probe(n_probe.min(n_list))?)
            }
        };
        let n = bank.len();
        let mut removed = vec![false; n];
        for i in 0..n {
            if removed[i] {
                continue;
            }
            let query = rows.row_vector(i);
            let hits = retriever.search(&query, rows, (top_m + 1).min(n))?;
            let neighbours = hits.indices.iter().zip(&hits.scores).filter(|(&j, _)| j != i).take(top_m);
            for (&j, &score) in neighbours {
                if j > i && score >= threshold {
                    removed[j] = true;
                }
            }
        }
        let keep: Vec<bool> = removed.iter().map(|r| !r).collect();
        bank.retain(&keep)?
    };
    out.manifest.filters_applied.dedup_threshold = threshold;
    out.manifest.filters_applied.dedup_top_m = top_m;
    Ok(out)
}

/// Drops concepts whose best cosine to any class embedding reaches `threshold`.
pub fn filter_class_similar(bank: &ConceptBank, classes: &EmbeddingMatrix, threshold: f64) -> Result<ConceptBank, BankError> {
    if !classes.is_empty() && classes.dim() != bank.dim() {
        return Err(BankError::DimensionMismatch {
            expected: bank.dim(),
            actual: classes.dim(),
        });
    }
    let classes = if classes.is_normalized() { classes.clone() } else { classes.normalized()? };
    let keep: Vec<bool> = bank
        .embeddings()
        .rows()
        .map(|row| classes.rows().all(|c| dot(row, c) < threshold))
        .collect();
    let mut out = bank.retain(&keep)?;
    out.manifest.filters_applied.class_filter_threshold = Some(threshold);
    Ok(out)
}

/// Settings for [`build_bank`].
#[derive(Debug, Clone)]
pub struct BankConfig {
    pub name: String,
    pub filters: FiltersApplied,
    pub class_embeddings: Option<EmbeddingMatrix>,
    pub blocklist: Option<HashSet<String>>,
    pub dedup_search: DedupSearch,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            name: "concept-bank".into(),
            filters: FiltersApplied::default(),
            class_embeddings: None,
            blocklist: None,
            dedup_search: DedupSearch::Exact,
        }
    }
}

/// Concept counts after each stage of [`build_bank`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildStats {
    pub captions: usize,
    pub phrases: usize,
    pub unique: usize,
    pub after_min_count: usize,
    pub after_length: usize,
    pub after_blocklist: usize,
    pub after_dedup: usize,
    pub after_class_filter: usize,
}

/// Builds a concept bank from named caption streams.
pub fn build_bank<I>(
    corpora: Vec<(String, I)>,
    cfg: &BankConfig,
    embedder: &dyn Embedder,
) -> Result<(ConceptBank, BuildStats), BankError>
where
    I: IntoIterator<Item = Result<TaggedCaption, BankError>>,
{
    if corpora.is_empty() {
        return Err(BankError::InvalidConfig("at least one corpus is required".into()));
    }
    cfg.filters.validate()?;
    let mut stats = BuildStats::default();
    let mut sources = Vec::new();
    let mut order: Vec<String> = Vec::new();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for (name, captions) in corpora {
        sources.push(name);
        for caption in captions {
            let caption = caption?;
            stats.captions += 1;
            for phrase in extract_noun_phrases(&caption) {
                stats.phrases += 1;
                let c = counts.entry(phrase.clone()).or_insert(0);
                if *c == 0 {
                    order.push(phrase);
                }
                *c += 1;
            }
        }
    }
    stats.unique = order.len();
    let f = &cfg.filters;
    let concepts: Vec<String> = order.into_iter().filter(|c| counts[c] >= f.min_count).collect();
    stats.after_min_count = concepts.len();
    let concepts = filter_length(concepts, f.max_chars, f.max_words);
    stats.after_length = concepts.len();
    let concepts: Vec<String> = match &cfg.blocklist {
        Some(block) => concepts.into_iter().filter(|c| !block.contains(c)).collect(),
        None => concepts,
    };
    stats.after_blocklist = concepts.len();
    if concepts.is_empty() {
        return Err(BankError::EmptyBank);
    }

    let embeddings = embedder.embed(&concepts)?;
    let mut bank = ConceptBank::from_parts(&cfg.name, concepts, embeddings)?;
    bank.manifest.sources = sources;
    bank.manifest.filters_applied = f.clone();
    let mut bank = dedup_similar_with(&bank, f.dedup_threshold, f.dedup_top_m, cfg.dedup_search)?;
    stats.after_dedup = bank.len();
    if let Some(classes) = &cfg.class_embeddings {
        let threshold = f.class_filter_threshold.unwrap_or(DEFAULT_CLASS_THRESHOLD);
        bank = filter_class_similar(&bank, classes, threshold)?;
    }
    stats.after_class_filter = bank.len();
    if bank.is_empty() {
        return Err(BankError::EmptyBank);
    }
    Ok((bank, stats))
}
