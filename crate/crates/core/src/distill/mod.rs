//! Rank distillation: candidate sampling, teacher reranking, ranking losses
//! and the distillation training loop.

mod loss;
mod sample;
mod teacher;
mod train;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use loss::{
    combined_loss, distilled_ranknet, listwise_loss, loss_value, ranking_loss, ranknet_loss, validate_ranks, LossParams,
};
pub use sample::{sample_candidates, Sampled};
pub use teacher::{teacher_rerank, OracleTeacher, Reranked, SurrogateTeacher, Teacher};
pub use train::{distill_train, student_scores_for, DevSet, DistillTrainConfig, EpochReport, ScoreCache};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    DistilledRankNet,
    RankNet,
    ListNet,
    ListMle,
    ApproxNdcg,
    LambdaLoss,
    Kl,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::DistilledRankNet,
        LossKind::RankNet,
        LossKind::ListNet,
        LossKind::ListMle,
        LossKind::ApproxNdcg,
        LossKind::LambdaLoss,
        LossKind::Kl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::DistilledRankNet => "DistilledRankNet",
            LossKind::RankNet => "RankNet",
            LossKind::ListNet => "ListNet",
            LossKind::ListMle => "ListMLE",
            LossKind::ApproxNdcg => "ApproxNDCG",
            LossKind::LambdaLoss => "LambdaLoss",
            LossKind::Kl => "KL",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown loss kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Random,
    Top,
    TopAndRandom,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "Random",
            Strategy::Top => "Top",
            Strategy::TopAndRandom => "TopAndRandom",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Strategy::Random, Strategy::Top, Strategy::TopAndRandom]
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown sampling strategy `{s}`")))
    }
}

/// Distillation hyperparameters. Margins and `alpha` are in student score
/// units (sums of sequence probabilities).
#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// Teacher list length.
    pub m: usize,
    /// Student list length.
    pub n: usize,
    pub m_base: f64,
    pub m_gap: f64,
    pub alpha: f64,
    pub loss_kind: LossKind,
    pub strategy: Strategy,
    pub hinge: bool,
    pub temperature: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            m: 6,
            n: 200,
            m_base: 0.3,
            m_gap: 0.1,
            alpha: 0.5,
            loss_kind: LossKind::DistilledRankNet,
            strategy: Strategy::TopAndRandom,
            hinge: true,
            temperature: 1.0,
        }
    }
}

const KEYS: [&str; 9] = [
    "M",
    "N",
    "m_base",
    "m_gap",
    "alpha",
    "loss_kind",
    "strategy",
    "hinge",
    "temperature",
];

impl DistillConfig {
    /// Values on the score scale of a large pretrained backbone.
    pub fn paper() -> Self {
        Self {
            m_base: 300.0,
            m_gap: 100.0,
            alpha: 500.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m < 1 || self.m > self.n {
            return bad(format!("need 1 <= M <= N, got M={} N={}", self.m, self.n));
        }
        for (name, v) in [("m_base", self.m_base), ("m_gap", self.m_gap), ("alpha", self.alpha)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        Ok(())
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            m_base: self.m_base,
            m_gap: self.m_gap,
            hinge: self.hinge,
            temperature: self.temperature,
        }
    }

    /// Sets one field from its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for {key}")))
        }
        match key {
            "M" => self.m = num(key, value)?,
            "N" => self.n = num(key, value)?,
            "m_base" => self.m_base = num(key, value)?,
            "m_gap" => self.m_gap = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "loss_kind" => self.loss_kind = value.parse()?,
            "strategy" => self.strategy = value.parse()?,
            "hinge" => self.hinge = num(key, value)?,
            "temperature" => self.temperature = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown distillation key `{key}`"))),
        }
        Ok(())
    }

    pub fn is_key(key: &str) -> bool {
        KEYS.contains(&key)
    }

    /// Parses `key = value` lines (`#` comments and blank lines ignored)
    /// over the defaults, then validates.
    pub fn parse(content: &str, label: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in content.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::parse(label, n + 1, "expected `key = value`"));
            };
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::parse(label, n + 1, e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&content, &path.display().to_string())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "M = {}\nN = {}\nm_base = {}\nm_gap = {}\nalpha = {}\nloss_kind = {}\nstrategy = {}\nhinge = {}\ntemperature = {}\n",
            self.m, self.n, self.m_base, self.m_gap, self.alpha, self.loss_kind, self.strategy, self.hinge, self.temperature
        )
    }
}
