//! The student: a compact autoregressive next-token scorer conditioned on a
//! bag-of-words query encoding.
//!
//! ```text
//! q   = mean(query_emb[query tokens])
//! c   = mean(token_emb[last k of (BOS · prefix)])
//! h   = tanh(W_h [q; c] + b_h)
//! out = log_softmax(W_o h + b_o)
//! ```
//!
//! Two forward paths exist: a plain one used by the decoder, and a taped
//! one used for training. They perform the same arithmetic in the same order.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{affine_forward, log_softmax, GradBuffer, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, BOS, EOS, NUM_RESERVED};

pub const QUERY_EMB: usize = 0;
pub const TOKEN_EMB: usize = 1;
pub const W_HIDDEN: usize = 2;
pub const B_HIDDEN: usize = 3;
pub const W_OUT: usize = 4;
pub const B_OUT: usize = 5;

pub const PARAM_NAMES: [&str; 6] = ["query_emb", "token_emb", "w_hidden", "b_hidden", "w_out", "b_out"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Number of trailing prefix tokens averaged into the context vector.
    pub context: usize,
    /// Half-width of the uniform distribution used for embeddings.
    pub init_scale: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 32,
            hidden_dim: 64,
            context: 4,
            init_scale: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < NUM_RESERVED {
            return Err(Error::Validation(format!(
                "vocab_size {} < {NUM_RESERVED} reserved tokens",
                self.vocab_size
            )));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.context == 0 {
            return Err(Error::Validation("model dimensions must be positive".into()));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::Validation("init_scale must be positive".into()));
        }
        Ok(())
    }

    fn context_rows(&self, prefix: &[TokenId]) -> Vec<usize> {
        let total = prefix.len() + 1;
        let take = self.context.min(total);
        let mut rows = Vec::with_capacity(take);
        for pos in total - take..total {
            let t = if pos == 0 { BOS } else { prefix[pos - 1] };
            rows.push(t as usize);
        }
        rows
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            Some(&token) => Err(Error::OutOfVocabulary {
                token,
                vocab_size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Taped query encoding.
    pub fn encode_query(&self, tape: &mut Tape<'_>, query: &[TokenId]) -> Var {
        let rows: Vec<usize> = query.iter().map(|&t| t as usize).collect();
        tape.embed_mean(QUERY_EMB, &rows)
    }

    /// Taped next-token log-distribution after `prefix`.
    pub fn step_logprobs(&self, tape: &mut Tape<'_>, query_enc: Var, prefix: &[TokenId]) -> Var {
        let ctx = tape.embed_mean(TOKEN_EMB, &self.context_rows(prefix));
        let joined = tape.concat(&[query_enc, ctx]);
        let z = tape.affine(W_HIDDEN, B_HIDDEN, joined);
        let h = tape.tanh(z);
        let logits = tape.affine(W_OUT, B_OUT, h);
        tape.log_softmax(logits)
    }

    /// Taped `Σ_j log p(i_j | q; I_<j)` over `tokens` followed by EOS.
    pub fn sequence_logprob(&self, tape: &mut Tape<'_>, query_enc: Var, tokens: &[TokenId]) -> Var {
        let mut terms = Vec::with_capacity(tokens.len() + 1);
        for j in 0..=tokens.len() {
            let target = if j < tokens.len() { tokens[j] } else { EOS };
            let lp = self.step_logprobs(tape, query_enc, &tokens[..j]);
            terms.push(tape.pick(lp, target as usize));
        }
        tape.sum(&terms)
    }

    /// Taped generation loss: negative log-likelihood of `tokens`·EOS.
    pub fn generation_loss(&self, tape: &mut Tape<'_>, query: &[TokenId], tokens: &[TokenId]) -> Var {
        let q = self.encode_query(tape, query);
        let lp = self.sequence_logprob(tape, q, tokens);
        tape.scale(lp, -1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    vocab_hash: u64,
}

/// Draws every parameter from a bounded symmetric uniform distribution
/// (Glorot range for weight matrices, `init_scale` for embeddings, zero biases).
pub fn init_model(config: ModelConfig, vocab_hash: u64, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (v, d, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
    let mut uniform = |rows: usize, cols: usize, half: f64| Tensor {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.random_range(-half..half)).collect(),
    };
    let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
    let tensors = vec![
        uniform(v, d, config.init_scale),
        uniform(v, d, config.init_scale),
        uniform(h, 2 * d, glorot(2 * d, h)),
        Tensor::zeros(1, h),
        uniform(v, h, glorot(h, v)),
        Tensor::zeros(1, v),
    ];
    Ok(Model {
        config,
        params: ParamSet { tensors },
        vocab_hash,
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    /// Sets the output projection and bias to zero, making every emitted
    /// distribution uniform.
    pub fn zero_output_layer(&mut self) {
        self.params.tensors[W_OUT].data.fill(0.0);
        self.params.tensors[B_OUT].data.fill(0.0);
    }

    pub fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        self.config.check_tokens(tokens)
    }

    /// Plain (untaped) query encoding.
    pub fn encode_query(&self, query: &[TokenId]) -> Vec<f64> {
        let t = &self.params.tensors[QUERY_EMB];
        let mut out = vec![0.0; t.cols];
        for &q in query {
            for (o, x) in out.iter_mut().zip(t.row(q as usize)) {
                *o += x;
            }
        }
        if !query.is_empty() {
            let inv = 1.0 / query.len() as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        out
    }

    /// Plain next-token log-distribution given an encoded query.
    pub fn step_logprobs(&self, query_enc: &[f64], prefix: &[TokenId]) -> Vec<f64> {
        let emb = &self.params.tensors[TOKEN_EMB];
        let rows = self.config.context_rows(prefix);
        let mut joined = query_enc.to_vec();
        let mut ctx = vec![0.0; emb.cols];
        for &r in &rows {
            for (o, x) in ctx.iter_mut().zip(emb.row(r)) {
                *o += x;
            }
        }
        let inv = 1.0 / rows.len() as f64;
        ctx.iter_mut().for_each(|o| *o *= inv);
        joined.extend_from_slice(&ctx);
        let z = affine_forward(
            &self.params.tensors[W_HIDDEN],
            &self.params.tensors[B_HIDDEN].data,
            &joined,
        );
        let h: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
        let logits = affine_forward(&self.params.tensors[W_OUT], &self.params.tensors[B_OUT].data, &h);
        log_softmax(&logits)
    }

    /// `log p(· | q; prefix)` over the whole vocabulary.
    pub fn token_logprobs(&self, query: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>> {
        self.check_tokens(query)?;
        self.check_tokens(prefix)?;
        Ok(self.step_logprobs(&self.encode_query(query), prefix))
    }

    /// `Σ_j log p(i_j | q; I_<j)` over `tokens`·EOS.
    pub fn sequence_logprob(&self, query: &[TokenId], tokens: &[TokenId]) -> Result<f64> {
        self.check_tokens(query)?;
        self.check_tokens(tokens)?;
        let q = self.encode_query(query);
        Ok(self.sequence_logprob_encoded(&q, tokens))
    }

    pub fn sequence_logprob_encoded(&self, query_enc: &[f64], tokens: &[TokenId]) -> f64 {
        let terms: Vec<f64> = (0..=tokens.len())
            .map(|j| {
                let target = if j < tokens.len() { tokens[j] } else { EOS };
                self.step_logprobs(query_enc, &tokens[..j])[target as usize]
            })
            .collect();
        terms.iter().sum()
    }

    /// Negative log-likelihood of the identifier tokens followed by EOS.
    pub fn generation_loss(&self, query: &[TokenId], tokens: &[TokenId]) -> Result<f64> {
        Ok(-self.sequence_logprob(query, tokens)?)
    }

    /// Sequence probability `exp(Σ log p)`.
    pub fn score_sequence(&self, query: &[TokenId], tokens: &[TokenId]) -> Result<f64> {
        Ok(self.sequence_logprob(query, tokens)?.exp())
    }

    /// Writes a checkpoint: header, hyperparameters, metadata, then raw
    /// little-endian `f64` tensors.
    pub fn save(&self, path: &Path, metadata: &BTreeMap<String, String>) -> Result<()> {
        let bytes = self.to_bytes(metadata)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn to_bytes(&self, metadata: &BTreeMap<String, String>) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.vocab_hash.to_le_bytes());
        for dim in [
            self.config.vocab_size,
            self.config.embed_dim,
            self.config.hidden_dim,
            self.config.context,
        ] {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.config.init_scale.to_le_bytes());
        let meta = serde_json::to_vec(metadata).map_err(|e| Error::Format(e.to_string()))?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.tensors.len() as u32).to_le_bytes());
        for t in &self.params.tensors {
            out.extend_from_slice(&(t.rows as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols as u64).to_le_bytes());
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Reads a checkpoint. When `expected_vocab_hash` is given, a mismatch is
    /// an error.
    pub fn load(path: &Path, expected_vocab_hash: Option<u64>) -> Result<(Model, BTreeMap<String, String>)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, expected_vocab_hash)
    }

    pub fn from_bytes(bytes: &[u8], expected_vocab_hash: Option<u64>) -> Result<(Model, BTreeMap<String, String>)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CKPT_MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version} is not supported (expected {CKPT_VERSION})"
            )));
        }
        let vocab_hash = r.u64()?;
        if let Some(expected) = expected_vocab_hash {
            if expected != vocab_hash {
                return Err(Error::Format(format!(
                    "checkpoint vocabulary hash {vocab_hash:016x} does not match corpus vocabulary {expected:016x}"
                )));
            }
        }
        let config = ModelConfig {
            vocab_size: r.u64()? as usize,
            embed_dim: r.u64()? as usize,
            hidden_dim: r.u64()? as usize,
            context: r.u64()? as usize,
            init_scale: f64::from_le_bytes(r.take(8)?.try_into().unwrap()),
        };
        config.validate()?;
        let meta_len = r.u32()? as usize;
        let metadata: BTreeMap<String, String> =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Format(e.to_string()))?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let raw = r.take(rows * cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor { rows, cols, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint payload".into()));
        }
        let model = Model {
            config,
            params: ParamSet { tensors },
            vocab_hash,
        };
        model.check_shapes()?;
        Ok((model, metadata))
    }

    fn check_shapes(&self) -> Result<()> {
        let (v, d, h) = (self.config.vocab_size, self.config.embed_dim, self.config.hidden_dim);
        let expected = [(v, d), (v, d), (h, 2 * d), (1, h), (v, h), (1, v)];
        let actual: Vec<(usize, usize)> = self.params.tensors.iter().map(|t| (t.rows, t.cols)).collect();
        if actual != expected {
            return Err(Error::Format(format!(
                "tensor shapes {actual:?} do not match {expected:?}"
            )));
        }
        Ok(())
    }
}

const CKPT_MAGIC: &[u8; 8] = b"DGRCKPT\0";
pub const CKPT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Option<ParamSet>,
    v: Option<ParamSet>,
    t: u64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

impl AdamW {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            m: None,
            v: None,
            t: 0,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. An all-zero gradient is a no-op: neither parameters nor
    /// moments change. Non-finite gradients are rejected.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradBuffer) -> Result<bool> {
        if !grads.all_finite() {
            return Err(Error::Validation("non-finite gradient".into()));
        }
        if grads.is_zero() {
            return Ok(false);
        }
        let m = self.m.get_or_insert_with(|| ParamSet::zeros_like(params));
        let v = self.v.get_or_insert_with(|| ParamSet::zeros_like(params));
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, p) in params.tensors.iter_mut().enumerate() {
            let g = &grads.tensors[k].data;
            let mk = &mut m.tensors[k].data;
            let vk = &mut v.tensors[k].data;
            for i in 0..p.data.len() {
                mk[i] = self.beta1 * mk[i] + (1.0 - self.beta1) * g[i];
                vk[i] = self.beta2 * vk[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = mk[i] / bc1;
                let vhat = vk[i] / bc2;
                p.data[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * p.data[i]);
            }
        }
        Ok(true)
    }
}

/// Reverse sweep with a finiteness check on the loss value.
pub fn backward(tape: &Tape<'_>, loss: Var) -> Result<GradBuffer> {
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            query: String::new(),
            value,
        });
    }
    Ok(tape.backward(loss))
}

/// Applies one optimizer update to the model. Returns whether parameters changed.
pub fn apply_step(model: &mut Model, grads: &GradBuffer, opt: &mut AdamW) -> Result<bool> {
    let changed = opt.step(&mut model.params, grads)?;
    if !model.params.all_finite() {
        return Err(Error::Validation("parameters became non-finite".into()));
    }
    Ok(changed)
}
