//! Identifier indexes: an FM-index over passage bodies for the substring
//! view and exact-match tables for titles and pseudo-queries.

mod exact;
mod fm;
pub mod suffix;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use exact::ExactTable;
pub use fm::{FmIndex, SaRange};

use crate::corpus::{Corpus, ExtractConfig, Identifier, View};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, EOS};

pub const DEFAULT_MAX_MATCHES: usize = 10_000;

const MAGIC: &[u8; 8] = b"DGRINDEX";
pub const INDEX_FORMAT_VERSION: u32 = 1;

/// Anything that can tell a decoder which tokens may extend a prefix.
pub trait ContinuationOracle {
    /// Sorted allowed next tokens; contains EOS iff `prefix` is itself a
    /// complete valid string. Empty when the prefix is a dead end.
    fn continuations(&self, prefix: &[TokenId]) -> Vec<TokenId>;
}

/// Substring-view oracle backed by the FM-index.
pub struct SubstringOracle<'a>(pub &'a FmIndex);

impl ContinuationOracle for SubstringOracle<'_> {
    fn continuations(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        let range = self.0.range_of(prefix);
        if range.is_empty() {
            return Vec::new();
        }
        let mut out = self.0.next_tokens(range);
        if !prefix.is_empty() {
            out.push(EOS);
            out.sort_unstable();
        }
        out
    }
}

impl ContinuationOracle for ExactTable {
    fn continuations(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        ExactTable::continuations(self, prefix)
    }
}

/// Passages matched by one identifier. `truncated` is set when the match
/// list hit the per-identifier cap.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchSet {
    pub passages: Vec<usize>,
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct PassageIndex {
    substrings: FmIndex,
    titles: ExactTable,
    pseudo_queries: ExactTable,
    passage_ids: Vec<String>,
    max_matches: usize,
}

impl PassageIndex {
    /// Builds all three view indexes. Titles and pseudo-queries are taken
    /// from the corpus (heuristic pseudo-queries where none are stored).
    pub fn build(corpus: &Corpus, cfg: &ExtractConfig) -> Self {
        let substrings = FmIndex::build(corpus.bodies());
        let mut titles = ExactTable::default();
        let mut pseudo_queries = ExactTable::default();
        for idx in 0..corpus.len() {
            if cfg.has(View::Title) {
                titles.insert(corpus.title_tokens(idx), idx);
            }
            if cfg.has(View::PseudoQuery) {
                for pq in corpus.pseudo_queries_or_heuristic(idx) {
                    pseudo_queries.insert(&pq, idx);
                }
            }
        }
        Self {
            substrings,
            titles,
            pseudo_queries,
            passage_ids: corpus.passages().iter().map(|p| p.id.clone()).collect(),
            max_matches: DEFAULT_MAX_MATCHES,
        }
    }

    pub fn with_max_matches(mut self, cap: usize) -> Self {
        self.max_matches = cap.max(1);
        self
    }

    pub fn max_matches(&self) -> usize {
        self.max_matches
    }

    pub fn n_passages(&self) -> usize {
        self.passage_ids.len()
    }

    pub fn passage_id(&self, idx: usize) -> &str {
        &self.passage_ids[idx]
    }

    pub fn passage_ids(&self) -> &[String] {
        &self.passage_ids
    }

    pub fn fm_index(&self) -> &FmIndex {
        &self.substrings
    }

    pub fn exact_table(&self, view: View) -> Option<&ExactTable> {
        match view {
            View::Title => Some(&self.titles),
            View::PseudoQuery => Some(&self.pseudo_queries),
            View::Substring => None,
        }
    }

    /// Passages whose bodies contain `pattern` contiguously (uncapped).
    pub fn locate(&self, pattern: &[TokenId]) -> Vec<usize> {
        let range = self.substrings.range_of(pattern);
        self.substrings.locate(range, pattern.len())
    }

    pub fn allowed_continuations(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        SubstringOracle(&self.substrings).continuations(prefix)
    }

    /// The continuation oracle for one identifier view.
    pub fn oracle(&self, view: View) -> Box<dyn ContinuationOracle + '_> {
        match view {
            View::Substring => Box::new(SubstringOracle(&self.substrings)),
            View::Title => Box::new(&self.titles),
            View::PseudoQuery => Box::new(&self.pseudo_queries),
        }
    }

    pub fn match_passages(&self, identifier: &Identifier) -> MatchSet {
        self.match_tokens(identifier.view, &identifier.tokens)
    }

    pub fn match_tokens(&self, view: View, tokens: &[TokenId]) -> MatchSet {
        if tokens.is_empty() {
            return MatchSet::default();
        }
        let mut passages = match view {
            View::Substring => self.locate(tokens),
            View::Title => self.titles.lookup(tokens).to_vec(),
            View::PseudoQuery => self.pseudo_queries.lookup(tokens).to_vec(),
        };
        let truncated = passages.len() > self.max_matches;
        passages.truncate(self.max_matches);
        MatchSet { passages, truncated }
    }

    /// Writes the index with a binary magic/version header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let payload = IndexPayload {
            substrings: self.substrings.clone(),
            titles: self.titles.to_entries(),
            pseudo_queries: self.pseudo_queries.to_entries(),
            passage_ids: self.passage_ids.clone(),
            max_matches: self.max_matches,
        };
        let body = serde_json::to_vec(&payload).map_err(|e| Error::Format(e.to_string()))?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        f.write_all(MAGIC).map_err(io)?;
        f.write_all(&INDEX_FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        f.write_all(&(body.len() as u64).to_le_bytes()).map_err(io)?;
        f.write_all(&body).map_err(io)?;
        f.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Format(format!("{} is not an index file", path.display())));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != INDEX_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "index format version {version} is not supported (expected {INDEX_FORMAT_VERSION})"
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        if bytes.len() != 20 + len {
            return Err(Error::Format("truncated index payload".into()));
        }
        let p: IndexPayload = serde_json::from_slice(&bytes[20..]).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self {
            substrings: p.substrings,
            titles: ExactTable::from_entries(p.titles),
            pseudo_queries: ExactTable::from_entries(p.pseudo_queries),
            passage_ids: p.passage_ids,
            max_matches: p.max_matches,
        })
    }
}

impl<T: ContinuationOracle + ?Sized> ContinuationOracle for &T {
    fn continuations(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        (**self).continuations(prefix)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexPayload {
    substrings: FmIndex,
    titles: Vec<(Vec<TokenId>, Vec<usize>)>,
    pseudo_queries: Vec<(Vec<TokenId>, Vec<usize>)>,
    passage_ids: Vec<String>,
    max_matches: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;

    fn corpus(bodies: &[(&str, &str, &str)]) -> Corpus {
        Corpus::from_passages(
            bodies
                .iter()
                .map(|(id, title, text)| Passage {
                    id: id.to_string(),
                    title: title.to_string(),
                    text: text.to_string(),
                    pseudo_queries: vec![],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn locate_by_inspection() {
        let c = corpus(&[("p1", "Cats", "the cat sat"), ("p2", "", "cat nap")]);
        let idx = PassageIndex::build(&c, &ExtractConfig::default());
        let v = c.vocab();
        assert_eq!(idx.locate(&v.encode("cat")), vec![0, 1]);
        assert_eq!(idx.locate(&v.encode("cat sat")), vec![0]);
        let sub = Identifier::new(View::Substring, v.encode("cat"));
        assert_eq!(idx.match_passages(&sub).passages, vec![0, 1]);
        let title = Identifier::new(View::Title, v.encode("Cats"));
        assert_eq!(idx.match_passages(&title).passages, vec![0]);
        assert!(idx
            .match_passages(&Identifier::new(View::Title, v.encode("cat")))
            .passages
            .is_empty());
    }

    #[test]
    fn continuations_by_construction() {
        let c = corpus(&[("p1", "", "a b c"), ("p2", "", "a b d")]);
        let idx = PassageIndex::build(&c, &ExtractConfig::default());
        let v = c.vocab();
        let mut expected = vec![v.id("c").unwrap(), v.id("d").unwrap(), EOS];
        expected.sort();
        assert_eq!(idx.allowed_continuations(&v.encode("a b")), expected);
        assert!(idx.allowed_continuations(&[v.len() as TokenId + 5]).is_empty());
        assert!(!idx.allowed_continuations(&[]).contains(&EOS));
    }

    #[test]
    fn match_cap_is_reported() {
        let c = corpus(&[("p1", "", "x y"), ("p2", "", "x"), ("p3", "", "y x")]);
        let idx = PassageIndex::build(&c, &ExtractConfig::default()).with_max_matches(2);
        let m = idx.match_tokens(View::Substring, &c.vocab().encode("x"));
        assert_eq!(m.passages, vec![0, 1]);
        assert!(m.truncated);
    }

    #[test]
    fn save_load_and_version_check() {
        let c = corpus(&[("p1", "T", "a b c. d e"), ("p2", "U", "a b d")]);
        let idx = PassageIndex::build(&c, &ExtractConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        idx.save(&path).unwrap();
        let loaded = PassageIndex::load(&path).unwrap();
        let v = c.vocab();
        assert_eq!(loaded.locate(&v.encode("a b")), vec![0, 1]);
        assert_eq!(loaded.exact_table(View::Title).unwrap().lookup(&v.encode("u")), &[1]);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99;
        std::fs::write(&path, &bytes).unwrap();
        let err = PassageIndex::load(&path).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }
}
