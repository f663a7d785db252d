//! Experiment settings: a TOML file plus command-line flags, flags winning.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::Failure;

/// Declares a settings section usable both as clap flags and as a TOML table.
/// Every field is optional so the two sources can be merged.
macro_rules! section {
    ($(#[$m:meta])* $name:ident { $($(#[$fm:meta])* $field:ident : $ty:ty),* $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Default, clap::Args, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            $($(#[$fm])* #[arg(long)] pub $field: Option<$ty>,)*
        }

        impl $name {
            /// Fills fields left unset on the command line from the file.
            pub fn or(&self, file: &Self) -> Self {
                Self { $($field: self.$field.clone().or_else(|| file.$field.clone()),)* }
            }
        }
    };
}

section!(PathArgs {
    /// Corpus, JSON lines of {id, title, text, pseudo_queries}
    corpus: PathBuf,
    /// Queries, `qid<TAB>text` per line
    queries: PathBuf,
    /// Judgments, `qid 0 pid grade` per line
    qrels: PathBuf,
    /// Held-out queries evaluated after each distillation epoch
    dev_queries: PathBuf,
    index: PathBuf,
    /// Input checkpoint
    checkpoint: PathBuf,
    /// Output file or directory
    out: PathBuf,
    /// TREC run file
    run: PathBuf,
    /// Per-epoch JSON-lines report
    report: PathBuf,
});

section!(ModelArgs {
    embed_dim: usize,
    hidden_dim: usize,
    /// Trailing prefix tokens averaged into the decoder context
    context: usize,
    init_scale: f64,
});

section!(ExtractArgs {
    /// Tokens per sampled body substring identifier
    substring_len: usize,
    /// Substring identifiers sampled per passage
    n_substrings: usize,
});

section!(DecodeArgs {
    /// Beam size per identifier view
    beam: usize,
    /// Maximum identifier length in tokens
    max_len: usize,
    /// Passages kept per query
    top_n: usize,
    /// Score identifiers by exp(logprob / (len + 1))
    length_normalize: bool,
});

section!(TrainArgs {
    epochs: usize,
    lr: f64,
    batch_size: usize,
    weight_decay: f64,
    /// Draw fresh substring identifiers every epoch
    resample_substrings: bool,
});

section!(DistillArgs {
    /// Candidates sampled per query (M)
    m: usize,
    /// Student list length (N)
    n: usize,
    m_base: f64,
    m_gap: f64,
    /// Weight of the generation loss
    alpha: f64,
    /// DistilledRankNet, RankNet, ListNet, ListMLE, ApproxNDCG, LambdaLoss or KL
    loss: String,
    /// Random, Top or TopAndRandom
    strategy: String,
    /// Clamp margin violations at zero
    hinge: bool,
    temperature: f64,
    /// oracle (judgments first) or surrogate (term overlap)
    teacher: String,
    epochs: usize,
    lr: f64,
    weight_decay: f64,
});

section!(SynthArgs {
    families: usize,
    family_size: usize,
    member_words: usize,
    template_words: usize,
    noise_words: usize,
    template_len: usize,
    noise_per_query: usize,
    train: usize,
    test: usize,
});

/// Layout of the `--config` file. Sections mirror the flag groups.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub paths: PathArgs,
    pub model: ModelArgs,
    pub extract: ExtractArgs,
    pub decode: DecodeArgs,
    pub train: TrainArgs,
    pub distill: DistillArgs,
    pub synth: SynthArgs,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
    }
}

/// A required input path that must already exist.
pub fn input(p: &Option<PathBuf>, flag: &str) -> Result<PathBuf, Failure> {
    let p = output(p, flag)?;
    if !p.exists() {
        return Err(Failure::Usage(format!("--{flag}: {} does not exist", p.display())));
    }
    Ok(p)
}

pub fn output(p: &Option<PathBuf>, flag: &str) -> Result<PathBuf, Failure> {
    p.clone()
        .ok_or_else(|| Failure::Usage(format!("--{flag} is required (flag or [paths] in the config)")))
}

/// An optional input path; must exist when given.
pub fn optional_input(p: &Option<PathBuf>, flag: &str) -> Result<Option<PathBuf>, Failure> {
    match p {
        Some(_) => input(p, flag).map(Some),
        None => Ok(None),
    }
}
