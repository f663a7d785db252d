//! Passages, queries, relevance judgments and multiview identifier extraction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pseudo_queries: Vec<String>,
}

/// The three identifier views of a passage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum View {
    Title,
    Substring,
    PseudoQuery,
}

impl View {
    pub const ALL: [View; 3] = [View::Title, View::Substring, View::PseudoQuery];

    pub fn name(self) -> &'static str {
        match self {
            View::Title => "title",
            View::Substring => "substring",
            View::PseudoQuery => "pseudo_query",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "title" => Ok(View::Title),
            "substring" | "sub" => Ok(View::Substring),
            "pseudo_query" | "pseudoquery" | "pq" | "query" => Ok(View::PseudoQuery),
            other => Err(Error::Config(format!("unknown identifier view `{other}`"))),
        }
    }
}

/// A typed token sequence standing in for one view of a passage. Tokens never
/// include the terminating EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Identifier {
    pub view: View,
    pub tokens: Vec<TokenId>,
    pub source_passage: Option<String>,
}

impl Identifier {
    pub fn new(view: View, tokens: Vec<TokenId>) -> Self {
        Self {
            view,
            tokens,
            source_passage: None,
        }
    }
}

/// Which views to extract, plus substring sampling parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractConfig {
    pub views: Vec<View>,
    pub substring_len: usize,
    pub n_substrings: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            views: View::ALL.to_vec(),
            substring_len: 10,
            n_substrings: 3,
        }
    }
}

impl ExtractConfig {
    pub fn has(&self, view: View) -> bool {
        self.views.contains(&view)
    }
}

/// Loaded passages with their tokenizations and the closed vocabulary.
#[derive(Debug, Clone)]
pub struct Corpus {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
    vocab: Vocabulary,
    titles: Vec<Vec<TokenId>>,
    bodies: Vec<Vec<TokenId>>,
    pseudo_queries: Vec<Vec<Vec<TokenId>>>,
    idf: Vec<f64>,
}

impl Corpus {
    /// Validates passages and derives the vocabulary from their titles,
    /// bodies and pseudo-queries.
    pub fn from_passages(passages: Vec<Passage>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            validate_passage(p).map_err(|m| Error::Validation(format!("passage {}: {m}", i + 1)))?;
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate passage id `{}`", p.id)));
            }
        }
        let vocab = Vocabulary::from_texts(passages.iter().flat_map(|p| {
            std::iter::once(p.title.as_str())
                .chain(std::iter::once(p.text.as_str()))
                .chain(p.pseudo_queries.iter().map(String::as_str))
        }));
        Ok(Self::with_vocab(passages, by_id, vocab))
    }

    fn with_vocab(passages: Vec<Passage>, by_id: HashMap<String, usize>, vocab: Vocabulary) -> Self {
        let titles = passages.iter().map(|p| vocab.encode(&p.title)).collect();
        let bodies: Vec<Vec<TokenId>> = passages.iter().map(|p| vocab.encode(&p.text)).collect();
        let pseudo_queries = passages
            .iter()
            .map(|p| {
                p.pseudo_queries
                    .iter()
                    .map(|q| vocab.encode(q))
                    .filter(|t| !t.is_empty())
                    .collect()
            })
            .collect();

        let mut df = vec![0usize; vocab.len()];
        for body in &bodies {
            let uniq: HashSet<TokenId> = body.iter().copied().collect();
            for t in uniq {
                df[t as usize] += 1;
            }
        }
        let n = bodies.len().max(1) as f64;
        let idf = df
            .iter()
            .map(|&d| if d == 0 { 0.0 } else { (1.0 + n / d as f64).ln() })
            .collect();

        Self {
            passages,
            by_id,
            vocab,
            titles,
            bodies,
            pseudo_queries,
            idf,
        }
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn passage(&self, idx: usize) -> &Passage {
        &self.passages[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn title_tokens(&self, idx: usize) -> &[TokenId] {
        &self.titles[idx]
    }

    pub fn body_tokens(&self, idx: usize) -> &[TokenId] {
        &self.bodies[idx]
    }

    pub fn bodies(&self) -> &[Vec<TokenId>] {
        &self.bodies
    }

    /// Stored pseudo-queries, tokenized.
    pub fn pseudo_query_tokens(&self, idx: usize) -> &[Vec<TokenId>] {
        &self.pseudo_queries[idx]
    }

    /// `ln(1 + N / df)` over passage bodies; zero for tokens absent from every body.
    pub fn idf(&self, token: TokenId) -> f64 {
        self.idf.get(token as usize).copied().unwrap_or(0.0)
    }

    /// Pseudo-queries for a passage: the stored ones, or the body sentence
    /// with the largest summed IDF when none are stored.
    pub fn pseudo_queries_or_heuristic(&self, idx: usize) -> Vec<Vec<TokenId>> {
        let stored = &self.pseudo_queries[idx];
        if !stored.is_empty() {
            return stored.clone();
        }
        self.heuristic_pseudo_query(idx).into_iter().collect()
    }

    fn heuristic_pseudo_query(&self, idx: usize) -> Option<Vec<TokenId>> {
        let mut best: Option<(f64, &[TokenId])> = None;
        for sentence in split_sentences(&self.bodies[idx], &self.vocab) {
            let score: f64 = sentence.iter().map(|&t| self.idf(t)).sum();
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, sentence));
            }
        }
        best.map(|(_, s)| s.to_vec())
    }

    /// Extracts the requested views of passage `idx`. Deterministic in
    /// `(passage id, config, seed)`.
    pub fn extract_identifiers(&self, idx: usize, cfg: &ExtractConfig, seed: u64) -> Vec<Identifier> {
        let passage = &self.passages[idx];
        let source = Some(passage.id.clone());
        let mut out = Vec::new();

        if cfg.has(View::Title) && !self.titles[idx].is_empty() {
            out.push(Identifier {
                view: View::Title,
                tokens: self.titles[idx].clone(),
                source_passage: source.clone(),
            });
        }

        if cfg.has(View::Substring) && cfg.n_substrings > 0 {
            let body = &self.bodies[idx];
            let len = cfg.substring_len.max(1).min(body.len());
            let n_starts = body.len() - len + 1;
            let mut rng = ChaCha8Rng::seed_from_u64(passage_seed(seed, &passage.id));
            let mut starts = index::sample(&mut rng, n_starts, cfg.n_substrings.min(n_starts)).into_vec();
            starts.sort_unstable();
            for s in starts {
                out.push(Identifier {
                    view: View::Substring,
                    tokens: body[s..s + len].to_vec(),
                    source_passage: source.clone(),
                });
            }
        }

        if cfg.has(View::PseudoQuery) {
            for tokens in self.pseudo_queries_or_heuristic(idx) {
                out.push(Identifier {
                    view: View::PseudoQuery,
                    tokens,
                    source_passage: source.clone(),
                });
            }
        }
        out
    }

    /// Writes the corpus back as JSON lines.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.passages)
    }
}

fn validate_passage(p: &Passage) -> std::result::Result<(), String> {
    if p.id.trim().is_empty() {
        return Err("empty id".into());
    }
    if crate::vocab::tokenize(&p.text).is_empty() {
        return Err(format!("passage `{}` has an empty body", p.id));
    }
    Ok(())
}

/// Sentences are maximal runs of tokens ending at `.`, `!` or `?` (the
/// terminator itself is dropped).
fn split_sentences<'a>(body: &'a [TokenId], vocab: &Vocabulary) -> Vec<&'a [TokenId]> {
    let is_end = |t: TokenId| matches!(vocab.token(t), Some(".") | Some("!") | Some("?"));
    body.split(|&t| is_end(t)).filter(|s| !s.is_empty()).collect()
}

/// Per-passage RNG seed: global seed mixed with a digest of the passage id.
pub fn passage_seed(seed: u64, passage_id: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(passage_id.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

/// Reads a JSON-lines corpus file. Blank lines are skipped.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut passages = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Passage = serde_json::from_str(&line)
            .map_err(|e| Error::parse(file_label(path), lineno, format!("malformed record: {e}")))?;
        validate_passage(&p).map_err(|m| Error::parse(file_label(path), lineno, m))?;
        if let Some(first) = seen.insert(p.id.clone(), lineno) {
            return Err(Error::Validation(format!(
                "{}:{lineno}: duplicate passage id `{}` (first seen on line {first})",
                file_label(path),
                p.id
            )));
        }
        passages.push(p);
    }
    Corpus::from_passages(passages)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Reads `qid<TAB>text` lines, preserving file order.
pub fn load_queries(path: &Path) -> Result<Vec<Query>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(file_label(path), i + 1, "expected `qid<TAB>text`"))?;
        if !seen.insert(id.to_string()) {
            return Err(Error::parse(
                file_label(path),
                i + 1,
                format!("duplicate query id `{id}`"),
            ));
        }
        out.push(Query::new(id, text));
    }
    Ok(out)
}

pub fn write_queries(path: &Path, queries: &[Query]) -> Result<()> {
    let mut out = String::new();
    for q in queries {
        out.push_str(&format!("{}\t{}\n", q.id, q.text));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Graded relevance judgments keyed by query id, then passage id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    entries: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: impl Into<String>, passage: impl Into<String>, grade: u32) {
        self.entries
            .entry(query.into())
            .or_default()
            .insert(passage.into(), grade);
    }

    pub fn grade(&self, query: &str, passage: &str) -> u32 {
        self.entries
            .get(query)
            .and_then(|m| m.get(passage))
            .copied()
            .unwrap_or(0)
    }

    pub fn judgments(&self, query: &str) -> Option<&BTreeMap<String, u32>> {
        self.entries.get(query)
    }

    /// True when the query has at least one passage with grade > 0.
    pub fn is_judged(&self, query: &str) -> bool {
        self.entries.get(query).is_some_and(|m| m.values().any(|&g| g > 0))
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// All `(query, passage, grade)` triples in sorted order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.entries
            .iter()
            .flat_map(|(q, m)| m.iter().map(move |(p, &g)| (q.as_str(), p.as_str(), g)))
    }

    pub fn positives(&self, query: &str) -> Vec<&str> {
        self.entries
            .get(query)
            .map(|m| m.iter().filter(|(_, &g)| g > 0).map(|(p, _)| p.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn restrict_to(&self, queries: &[Query]) -> Qrels {
        let keep: HashSet<&str> = queries.iter().map(|q| q.id.as_str()).collect();
        Qrels {
            entries: self
                .entries
                .iter()
                .filter(|(q, _)| keep.contains(q.as_str()))
                .map(|(q, m)| (q.clone(), m.clone()))
                .collect(),
        }
    }
}

/// Parses TREC qrels lines `qid 0 pid grade`.
pub fn parse_qrels(content: &str, label: &str) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in content.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 4 {
            return Err(Error::parse(
                label,
                i + 1,
                format!("expected 4 columns, found {}", cols.len()),
            ));
        }
        let grade: i64 = cols[3]
            .parse()
            .map_err(|_| Error::parse(label, i + 1, format!("bad grade `{}`", cols[3])))?;
        if grade < 0 {
            return Err(Error::parse(label, i + 1, "grade must be nonnegative"));
        }
        qrels.insert(cols[0], cols[2], grade as u32);
    }
    Ok(qrels)
}

pub fn load_qrels(path: &Path) -> Result<Qrels> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qrels(&content, &file_label(path))
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for (q, p, g) in qrels.iter() {
        writeln!(out, "{q} 0 {p} {g}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub query_id: String,
    pub query: String,
    pub target: Identifier,
}

/// One example per (positive judgment, extracted identifier), in a seeded
/// shuffled order.
pub fn build_training_pairs(
    corpus: &Corpus,
    qrels: &Qrels,
    queries: &[Query],
    cfg: &ExtractConfig,
    seed: u64,
) -> Result<Vec<TrainingExample>> {
    let texts: HashMap<&str, &str> = queries.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect();
    let missing: Vec<&str> = qrels
        .iter()
        .filter(|(_, p, g)| *g > 0 && corpus.index_of(p).is_none())
        .map(|(_, p, _)| p)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "judged passages missing from corpus: {}",
            missing.join(", ")
        )));
    }

    let mut examples = Vec::new();
    for (qid, pid, grade) in qrels.iter() {
        if grade == 0 {
            continue;
        }
        let Some(text) = texts.get(qid) else {
            continue;
        };
        let idx = corpus.index_of(pid).expect("checked above");
        for target in corpus.extract_identifiers(idx, cfg, seed) {
            examples.push(TrainingExample {
                query_id: qid.to_string(),
                query: text.to_string(),
                target,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    examples.shuffle(&mut rng);
    Ok(examples)
}
