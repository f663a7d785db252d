use std::collections::HashSet;

use crate::corpus::{Corpus, Qrels};
use crate::retrieval::{order_by_score, Provenance, RankEntry, RankList};
use crate::vocab::{TokenId, NUM_RESERVED};

/// A deterministic relevance scorer for (query, passage) pairs.
pub trait Teacher {
    fn score(&self, query_id: &str, query: &[TokenId], passage: usize) -> f64;

    /// Whether `score` values are meaningful beyond their order.
    fn exposes_scores(&self) -> bool {
        true
    }

    fn name(&self) -> &'static str;
}

/// IDF-weighted query-term overlap with the passage body, divided by the
/// square root of the body length.
pub struct SurrogateTeacher<'a> {
    corpus: &'a Corpus,
}

impl<'a> SurrogateTeacher<'a> {
    pub fn new(corpus: &'a Corpus) -> Self {
        Self { corpus }
    }
}

impl Teacher for SurrogateTeacher<'_> {
    fn score(&self, _query_id: &str, query: &[TokenId], passage: usize) -> f64 {
        let body = self.corpus.body_tokens(passage);
        if body.is_empty() {
            return 0.0;
        }
        let terms: HashSet<TokenId> = query.iter().copied().filter(|&t| t as usize >= NUM_RESERVED).collect();
        let body: HashSet<TokenId> = body.iter().copied().collect();
        let mut overlap: Vec<TokenId> = terms.intersection(&body).copied().collect();
        overlap.sort_unstable();
        let total: f64 = overlap.iter().map(|&t| self.corpus.idf(t)).sum();
        total / (self.corpus.body_tokens(passage).len() as f64).sqrt()
    }

    fn name(&self) -> &'static str {
        "surrogate"
    }
}

/// Judged grade first, surrogate score as a tie-break: `grade + 0.5·x/(1+x)`.
pub struct OracleTeacher<'a> {
    corpus: &'a Corpus,
    qrels: &'a Qrels,
    surrogate: SurrogateTeacher<'a>,
}

impl<'a> OracleTeacher<'a> {
    pub fn new(corpus: &'a Corpus, qrels: &'a Qrels) -> Self {
        Self {
            corpus,
            qrels,
            surrogate: SurrogateTeacher::new(corpus),
        }
    }
}

impl Teacher for OracleTeacher<'_> {
    fn score(&self, query_id: &str, query: &[TokenId], passage: usize) -> f64 {
        let grade = self.qrels.grade(query_id, &self.corpus.passage(passage).id) as f64;
        let x = self.surrogate.score(query_id, query, passage);
        grade + 0.5 * x / (1.0 + x)
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

/// A teacher ordering of sampled passages, with ranks and scores aligned to
/// the input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Reranked {
    pub list: RankList,
    /// `ranks[i]` is the teacher rank (1 = best) of input passage `i`.
    pub ranks: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Orders `passages` by teacher score descending, ties by passage id.
pub fn teacher_rerank(
    teacher: &dyn Teacher,
    corpus: &Corpus,
    query_id: &str,
    query: &[TokenId],
    passages: &[usize],
) -> Reranked {
    let scores: Vec<f64> = passages.iter().map(|&p| teacher.score(query_id, query, p)).collect();
    let id = |i: usize| corpus.passage(passages[i]).id.as_str();
    let mut order: Vec<usize> = (0..passages.len()).collect();
    order.sort_by(|&a, &b| order_by_score(scores[a], id(a), scores[b], id(b)));
    let mut ranks = vec![0; passages.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    let list = RankList {
        query_id: query_id.to_string(),
        entries: order
            .iter()
            .map(|&i| RankEntry {
                passage: id(i).to_string(),
                score: scores[i],
            })
            .collect(),
        provenance: Provenance::Teacher,
    };
    Reranked { list, ranks, scores }
}
