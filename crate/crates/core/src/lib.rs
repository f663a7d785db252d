//! Generative passage retrieval with multiview identifiers, constrained
//! decoding and distillation from a ranking teacher.

pub mod autodiff;
pub mod corpus;
pub mod decode;
pub mod distill;
pub mod error;
pub mod gradcheck;
pub mod index;
pub mod metrics;
pub mod model;
pub mod retrieval;
pub mod synth;
pub mod train;
pub mod trec;
pub mod vocab;

pub use corpus::{Corpus, ExtractConfig, Identifier, Passage, Qrels, Query, View};
pub use error::{Error, Result};
pub use index::PassageIndex;
pub use model::{Model, ModelConfig};
pub use retrieval::{RankList, RetrievalConfig};
pub use vocab::{TokenId, Vocabulary};
