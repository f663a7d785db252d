//! Turning generated identifiers into a passage rank list.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Query, View};
use crate::decode::{beam_search, BeamConfig, ScoredIdentifier};
use crate::index::PassageIndex;
use crate::model::Model;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Student,
    Teacher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub passage: String,
    pub score: f64,
}

/// An ordered list of passages for one query: score descending, ties by
/// passage id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankList {
    pub query_id: String,
    pub entries: Vec<RankEntry>,
    pub provenance: Provenance,
}

impl RankList {
    pub fn new(query_id: impl Into<String>, mut entries: Vec<RankEntry>, provenance: Provenance) -> Self {
        entries.sort_by(|a, b| order_by_score(a.score, &a.passage, b.score, &b.passage));
        Self {
            query_id: query_id.into(),
            entries,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn passages(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.passage.as_str())
    }
}

/// Score descending, then passage id ascending.
pub fn order_by_score(sa: f64, ida: &str, sb: f64, idb: &str) -> Ordering {
    sb.partial_cmp(&sa)
        .unwrap_or(Ordering::Equal)
        .then_with(|| ida.cmp(idb))
}

/// A retrieved passage with the distinct identifiers that matched it.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub passage: usize,
    pub score: f64,
    /// Indices into [`Retrieved::identifiers`].
    pub matched: Vec<usize>,
}

/// Student retrieval output, keeping the identifier cache that differentiable
/// rescoring needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    /// Distinct generated identifier strings, in generation order.
    pub identifiers: Vec<ScoredIdentifier>,
    /// Ranked candidates, at most `top_n`.
    pub candidates: Vec<Candidate>,
    /// Number of identifiers whose match list hit the cap.
    pub capped_identifiers: usize,
}

impl Retrieved {
    pub fn rank_list(&self, query_id: &str, index: &PassageIndex) -> RankList {
        RankList {
            query_id: query_id.to_string(),
            entries: self
                .candidates
                .iter()
                .map(|c| RankEntry {
                    passage: index.passage_id(c.passage).to_string(),
                    score: c.score,
                })
                .collect(),
            provenance: Provenance::Student,
        }
    }

    pub fn candidate(&self, passage: usize) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.passage == passage)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    pub beam: BeamConfig,
    pub top_n: usize,
    /// Score identifiers by `exp(logprob / (len + 1))` instead of `exp(logprob)`.
    pub length_normalize: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            beam: BeamConfig::default(),
            top_n: 200,
            length_normalize: false,
        }
    }
}

/// Identifier score entering the passage sum.
pub fn identifier_score(logprob: f64, n_tokens: usize, length_normalize: bool) -> f64 {
    if length_normalize {
        (logprob / (n_tokens + 1) as f64).exp()
    } else {
        logprob.exp()
    }
}

/// Sums identifier scores per passage over distinct identifier strings.
///
/// Identical token strings generated under several views count once; the
/// passages they match are the union over those views.
pub fn aggregate(scored: &[ScoredIdentifier], index: &PassageIndex, top_n: usize, length_normalize: bool) -> Retrieved {
    let mut distinct: Vec<ScoredIdentifier> = Vec::new();
    let mut views: Vec<Vec<View>> = Vec::new();
    let mut seen: HashMap<&[TokenId], usize> = HashMap::new();
    for s in scored {
        match seen.get(s.identifier.tokens.as_slice()) {
            Some(&i) => {
                if !views[i].contains(&s.identifier.view) {
                    views[i].push(s.identifier.view);
                }
            }
            None => {
                seen.insert(&s.identifier.tokens, distinct.len());
                let mut s = s.clone();
                s.score = identifier_score(s.logprob, s.identifier.tokens.len(), length_normalize);
                views.push(vec![s.identifier.view]);
                distinct.push(s);
            }
        }
    }

    let mut per_passage: HashMap<usize, (f64, Vec<usize>)> = HashMap::new();
    let mut capped = 0;
    for (i, ident) in distinct.iter().enumerate() {
        let mut matched: Vec<usize> = Vec::new();
        for &view in &views[i] {
            let m = index.match_tokens(view, &ident.identifier.tokens);
            capped += m.truncated as usize;
            matched.extend(m.passages);
        }
        matched.sort_unstable();
        matched.dedup();
        for p in matched {
            let e = per_passage.entry(p).or_insert((0.0, Vec::new()));
            e.0 += ident.score;
            e.1.push(i);
        }
    }

    let mut candidates: Vec<Candidate> = per_passage
        .into_iter()
        .map(|(passage, (score, matched))| Candidate {
            passage,
            score,
            matched,
        })
        .collect();
    candidates.sort_by(|a, b| {
        order_by_score(
            a.score,
            index.passage_id(a.passage),
            b.score,
            index.passage_id(b.passage),
        )
    });
    candidates.truncate(top_n);
    Retrieved {
        identifiers: distinct,
        candidates,
        capped_identifiers: capped,
    }
}

/// Beam search followed by aggregation.
pub fn retrieve(model: &Model, index: &PassageIndex, query: &[TokenId], cfg: &RetrievalConfig) -> Retrieved {
    let scored = beam_search(model, index, query, &cfg.beam);
    aggregate(&scored, index, cfg.top_n, cfg.length_normalize)
}

/// Retrieves every query and returns the student rank lists in query order.
pub fn run_queries(
    model: &Model,
    index: &PassageIndex,
    vocab: &Vocabulary,
    queries: &[Query],
    cfg: &RetrievalConfig,
) -> Vec<RankList> {
    queries
        .iter()
        .map(|q| retrieve(model, index, &vocab.encode(&q.text), cfg).rank_list(&q.id, index))
        .collect()
}
