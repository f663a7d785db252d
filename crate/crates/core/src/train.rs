//! Generation-only (warm-start) training on query → identifier pairs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{GradBuffer, Tape};
use crate::corpus::{build_training_pairs, Corpus, ExtractConfig, Qrels, Query};
use crate::error::{Error, Result};
use crate::model::{apply_step, AdamW, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStartConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Examples whose gradients are averaged into one update.
    pub batch_size: usize,
    pub seed: u64,
    pub extract: ExtractConfig,
    /// Draw fresh substring identifiers every epoch instead of reusing the
    /// first epoch's.
    pub resample_substrings: bool,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-2,
            weight_decay: 0.01,
            batch_size: 8,
            seed: 0,
            extract: ExtractConfig::default(),
            resample_substrings: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WarmStartEpoch {
    pub epoch: usize,
    pub mean_gen_loss: f64,
    pub examples: usize,
}

/// Minimizes the identifier negative log-likelihood over every
/// (judged-positive query, identifier) pair.
pub fn warm_start(
    model: &mut Model,
    corpus: &Corpus,
    qrels: &Qrels,
    queries: &[Query],
    cfg: &WarmStartConfig,
    mut on_epoch: impl FnMut(&WarmStartEpoch),
) -> Result<Vec<WarmStartEpoch>> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let vocab = corpus.vocab();
    let mut opt = AdamW::new(cfg.lr).with_weight_decay(cfg.weight_decay);
    let mut out = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let extract_seed = if cfg.resample_substrings {
            cfg.seed.wrapping_add(epoch as u64 - 1)
        } else {
            cfg.seed
        };
        let mut examples = build_training_pairs(corpus, qrels, queries, &cfg.extract, extract_seed)?;
        examples.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        let encoded: Vec<(Vec<u32>, &[u32])> = examples
            .iter()
            .map(|e| (vocab.encode(&e.query), e.target.tokens.as_slice()))
            .collect();
        let mut total = 0.0;
        for batch in encoded.chunks(cfg.batch_size) {
            let mut grads = GradBuffer::zeros_like(model.params());
            let weight = 1.0 / batch.len() as f64;
            for (q, target) in batch {
                let mut tape = Tape::new(model.params());
                let loss = model.config().generation_loss(&mut tape, q, target);
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        query: String::new(),
                        value,
                    });
                }
                total += value;
                tape.backward_into(loss, weight, &mut grads);
            }
            apply_step(model, &grads, &mut opt)?;
        }
        let e = WarmStartEpoch {
            epoch,
            mean_gen_loss: if encoded.is_empty() {
                0.0
            } else {
                total / encoded.len() as f64
            },
            examples: encoded.len(),
        };
        on_epoch(&e);
        out.push(e);
    }
    Ok(out)
}
