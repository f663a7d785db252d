//! Constrained beam search over identifier views.

use std::cmp::Ordering;

use crate::corpus::{Identifier, View};
use crate::index::{ContinuationOracle, PassageIndex};
use crate::model::Model;
use crate::vocab::{TokenId, EOS};

/// A generated identifier with its full-sequence log-probability (EOS
/// included) and the corresponding probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredIdentifier {
    pub identifier: Identifier,
    pub logprob: f64,
    pub score: f64,
}

impl ScoredIdentifier {
    pub fn new(view: View, tokens: Vec<TokenId>, logprob: f64) -> Self {
        Self {
            identifier: Identifier::new(view, tokens),
            logprob,
            score: logprob.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Maximum number of tokens before the forced EOS.
    pub max_len: usize,
    pub views: Vec<View>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 15,
            max_len: 10,
            views: View::ALL.to_vec(),
        }
    }
}

/// Best first; equal scores ordered by token ids.
fn rank(a: &(Vec<TokenId>, f64), b: &(Vec<TokenId>, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

/// Beam search for one view. Hypotheses that emit EOS leave the beam and are
/// kept in a separate pool of the `beam_size` best finished sequences.
pub fn beam_search_view(
    model: &Model,
    oracle: &dyn ContinuationOracle,
    query_enc: &[f64],
    view: View,
    beam_size: usize,
    max_len: usize,
) -> Vec<ScoredIdentifier> {
    assert!(beam_size >= 1 && max_len >= 1, "beam_size and max_len must be positive");
    let mut live: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<(Vec<TokenId>, f64)> = Vec::new();

    for _ in 0..=max_len {
        let mut candidates = Vec::new();
        for (prefix, lp) in &live {
            let allowed = oracle.continuations(prefix);
            if allowed.is_empty() {
                continue;
            }
            let logp = model.step_logprobs(query_enc, prefix);
            for t in allowed {
                if t == EOS {
                    if !prefix.is_empty() {
                        finished.push((prefix.clone(), lp + logp[EOS as usize]));
                    }
                } else if prefix.len() < max_len {
                    let mut ext = prefix.clone();
                    ext.push(t);
                    candidates.push((ext, lp + logp[t as usize]));
                }
            }
        }
        candidates.sort_by(rank);
        candidates.truncate(beam_size);
        finished.sort_by(rank);
        finished.truncate(beam_size);
        live = candidates;

        let Some(best_live) = live.first().map(|h| h.1) else {
            break;
        };
        if finished.len() >= beam_size && best_live < finished[beam_size - 1].1 {
            break;
        }
    }

    finished
        .into_iter()
        .map(|(tokens, lp)| ScoredIdentifier::new(view, tokens, lp))
        .collect()
}

/// Independent per-view beams over the index, pooled in view order.
pub fn beam_search(model: &Model, index: &PassageIndex, query: &[TokenId], cfg: &BeamConfig) -> Vec<ScoredIdentifier> {
    let q = model.encode_query(query);
    let mut out = Vec::new();
    for &view in &cfg.views {
        let oracle = index.oracle(view);
        out.extend(beam_search_view(
            model,
            oracle.as_ref(),
            &q,
            view,
            cfg.beam_size,
            cfg.max_len,
        ));
    }
    out
}
