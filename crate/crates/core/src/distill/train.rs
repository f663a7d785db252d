use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::corpus::{passage_seed, Corpus, ExtractConfig, Qrels, Query};
use crate::error::{Error, Result};
use crate::index::PassageIndex;
use crate::metrics::MetricsTable;
use crate::model::{apply_step, AdamW, Model, ModelConfig};
use crate::retrieval::{retrieve, run_queries, RetrievalConfig, Retrieved};
use crate::vocab::{TokenId, EOS};

use super::{combined_loss, ranking_loss, sample_candidates, teacher_rerank, DistillConfig, LossKind, Teacher};

/// Taped step distributions and sequence log-probabilities shared across
/// identifiers on one tape.
#[derive(Default)]
pub struct ScoreCache {
    steps: HashMap<Vec<TokenId>, Var>,
    sequences: HashMap<Vec<TokenId>, Var>,
}

impl ScoreCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Taped `log p(tokens·EOS | q)`, summed in the same order as the plain path.
    pub fn sequence_logprob(
        &mut self,
        cfg: &ModelConfig,
        tape: &mut Tape<'_>,
        query_enc: Var,
        tokens: &[TokenId],
    ) -> Var {
        if let Some(&v) = self.sequences.get(tokens) {
            return v;
        }
        let mut terms = Vec::with_capacity(tokens.len() + 1);
        for j in 0..=tokens.len() {
            let prefix = &tokens[..j];
            let lp = match self.steps.get(prefix) {
                Some(&v) => v,
                None => {
                    let v = cfg.step_logprobs(tape, query_enc, prefix);
                    self.steps.insert(prefix.to_vec(), v);
                    v
                }
            };
            let target = if j < tokens.len() { tokens[j] } else { EOS };
            terms.push(tape.pick(lp, target as usize));
        }
        let v = tape.sum(&terms);
        self.sequences.insert(tokens.to_vec(), v);
        v
    }
}

/// Differentiable student scores of the candidates at `positions` of
/// `retrieved`: the sum of the (optionally length-normalized) probabilities
/// of each candidate's cached identifiers. A candidate without identifiers
/// scores a constant 0.
pub fn student_scores_for(
    tape: &mut Tape<'_>,
    cfg: &ModelConfig,
    query_enc: Var,
    retrieved: &Retrieved,
    positions: &[usize],
    length_normalize: bool,
    cache: &mut ScoreCache,
) -> Vec<Var> {
    positions
        .iter()
        .map(|&pos| {
            let matched = &retrieved.candidates[pos].matched;
            if matched.is_empty() {
                return tape.constant(0.0);
            }
            let terms: Vec<Var> = matched
                .iter()
                .map(|&i| {
                    let tokens = &retrieved.identifiers[i].identifier.tokens;
                    let lp = cache.sequence_logprob(cfg, tape, query_enc, tokens);
                    let lp = if length_normalize {
                        tape.scale(lp, 1.0 / (tokens.len() + 1) as f64)
                    } else {
                        lp
                    };
                    tape.exp(lp)
                })
                .collect();
            tape.sum(&terms)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillTrainConfig {
    pub distill: DistillConfig,
    /// Decoding settings; the student list length comes from `distill.n`.
    pub retrieval: RetrievalConfig,
    /// Identifier extraction for the generation term.
    pub extract: ExtractConfig,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for DistillTrainConfig {
    fn default() -> Self {
        Self {
            distill: DistillConfig::default(),
            retrieval: RetrievalConfig::default(),
            extract: ExtractConfig::default(),
            epochs: 5,
            lr: 3e-3,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_gen_loss: f64,
    pub mean_distill_loss: f64,
    pub dev_hits_5: Option<f64>,
    pub dev_hits_20: Option<f64>,
    pub dev_hits_100: Option<f64>,
    pub seconds: f64,
    pub steps: usize,
    pub skipped_nonfinite: usize,
    pub short_lists: usize,
    pub empty_retrievals: usize,
}

/// Judged evaluation queries.
#[derive(Debug, Clone, Copy)]
pub struct DevSet<'a> {
    pub queries: &'a [Query],
    pub qrels: &'a Qrels,
}

/// Distills `teacher` into `model`, one optimizer step per training query.
///
/// For each query: retrieve the top `N`, sample `M`, rerank them with the
/// teacher, rescore them differentiably and minimize
/// `α·L_gen + L_distill`, with `L_gen` taken on one identifier of a judged
/// positive passage. A non-finite loss skips the step and is logged.
#[allow(clippy::too_many_arguments)]
pub fn distill_train(
    corpus: &Corpus,
    index: &PassageIndex,
    model: &mut Model,
    queries: &[Query],
    qrels: &Qrels,
    teacher: &dyn Teacher,
    dev: Option<DevSet<'_>>,
    cfg: &DistillTrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<EpochReport>> {
    let dc = &cfg.distill;
    dc.validate()?;
    if dc.loss_kind == LossKind::Kl && !teacher.exposes_scores() {
        return Err(Error::Config(
            "KL distillation needs a teacher that exposes scores".into(),
        ));
    }
    let params = dc.loss_params();
    let mut rcfg = cfg.retrieval.clone();
    rcfg.top_n = dc.n;
    let mut dev_cfg = cfg.retrieval.clone();
    dev_cfg.top_n = dev_cfg.top_n.max(100);
    let mut opt = AdamW::new(cfg.lr).with_weight_decay(cfg.weight_decay);
    let vocab = corpus.vocab();
    let encoded: Vec<Vec<TokenId>> = queries.iter().map(|q| vocab.encode(&q.text)).collect();

    let mut reports = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let epoch_seed = cfg.seed.wrapping_add(epoch as u64);
        let mut order: Vec<usize> = (0..queries.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));

        let (mut gen_sum, mut distill_sum) = (0.0, 0.0);
        let mut r = EpochReport {
            epoch,
            mean_gen_loss: 0.0,
            mean_distill_loss: 0.0,
            dev_hits_5: None,
            dev_hits_20: None,
            dev_hits_100: None,
            seconds: 0.0,
            steps: 0,
            skipped_nonfinite: 0,
            short_lists: 0,
            empty_retrievals: 0,
        };
        for qi in order {
            let (query, q_tokens) = (&queries[qi], &encoded[qi]);
            let qseed = passage_seed(epoch_seed, &query.id);
            let retrieved = retrieve(model, index, q_tokens, &rcfg);
            let target = positive_identifier(corpus, qrels, &query.id, &cfg.extract, cfg.seed, qseed);

            let grads = {
                let mut tape = Tape::new(model.params());
                let mcfg = model.config();
                let l_distill = if retrieved.candidates.is_empty() {
                    r.empty_retrievals += 1;
                    tape.constant(0.0)
                } else {
                    let sampled = sample_candidates(retrieved.candidates.len(), dc.strategy, dc.m, qseed)?;
                    r.short_lists += sampled.short as usize;
                    let passages: Vec<usize> = sampled
                        .positions
                        .iter()
                        .map(|&p| retrieved.candidates[p].passage)
                        .collect();
                    let reranked = teacher_rerank(teacher, corpus, &query.id, q_tokens, &passages);
                    let q_enc = mcfg.encode_query(&mut tape, q_tokens);
                    let mut cache = ScoreCache::new();
                    let s = student_scores_for(
                        &mut tape,
                        mcfg,
                        q_enc,
                        &retrieved,
                        &sampled.positions,
                        rcfg.length_normalize,
                        &mut cache,
                    );
                    let t = teacher.exposes_scores().then_some(reranked.scores.as_slice());
                    ranking_loss(&mut tape, dc.loss_kind, &s, &reranked.ranks, t, &params)?
                };
                let l_gen = match &target {
                    Some(tokens) => mcfg.generation_loss(&mut tape, q_tokens, tokens),
                    None => tape.constant(0.0),
                };
                let total = combined_loss(&mut tape, l_gen, l_distill, dc.alpha);
                let value = tape.scalar(total);
                if !value.is_finite() {
                    log::warn!("non-finite loss {value} for query {}; step skipped", query.id);
                    r.skipped_nonfinite += 1;
                    None
                } else {
                    gen_sum += tape.scalar(l_gen);
                    distill_sum += tape.scalar(l_distill);
                    Some(tape.backward(total))
                }
            };
            if let Some(g) = grads {
                apply_step(model, &g, &mut opt)?;
                r.steps += 1;
            }
        }
        if r.steps > 0 {
            r.mean_gen_loss = gen_sum / r.steps as f64;
            r.mean_distill_loss = distill_sum / r.steps as f64;
        }
        if let Some(dev) = dev {
            let runs = run_queries(model, index, vocab, dev.queries, &dev_cfg);
            let ids: Vec<&str> = dev.queries.iter().map(|q| q.id.as_str()).collect();
            let t = MetricsTable::compute(&runs, dev.qrels, &ids);
            r.dev_hits_5 = Some(t.hits_5);
            r.dev_hits_20 = Some(t.hits_20);
            r.dev_hits_100 = Some(t.hits_100);
        }
        r.seconds = start.elapsed().as_secs_f64();
        on_epoch(&r);
        reports.push(r);
    }
    Ok(reports)
}

/// One identifier of one judged positive passage, drawn with `pick_seed`.
/// Identifiers are extracted exactly as for generation training.
fn positive_identifier(
    corpus: &Corpus,
    qrels: &Qrels,
    query_id: &str,
    extract: &ExtractConfig,
    extract_seed: u64,
    pick_seed: u64,
) -> Option<Vec<TokenId>> {
    let positives: Vec<usize> = qrels
        .positives(query_id)
        .into_iter()
        .filter_map(|p| corpus.index_of(p))
        .collect();
    if positives.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(pick_seed ^ 0x9e37_79b9_7f4a_7c15);
    let p = positives[rng.random_range(0..positives.len())];
    let ids = corpus.extract_identifiers(p, extract, extract_seed);
    let ids: Vec<_> = ids.into_iter().filter(|i| !i.tokens.is_empty()).collect();
    if ids.is_empty() {
        return None;
    }
    Some(ids[rng.random_range(0..ids.len())].tokens.clone())
}
