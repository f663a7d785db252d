//! Seeded synthetic retrieval task.
//!
//! Passages come in families that share a title and a body template; each
//! member is told apart only by an adjacent pair of member words inserted into
//! the template. A query names the family, the member pair and some noise
//! words, and has exactly one relevant passage.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Passage, Qrels, Query};
use crate::error::{Error, Result};
use crate::vocab::NUM_RESERVED;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_families: usize,
    pub family_size: usize,
    pub n_member_words: usize,
    pub n_template_words: usize,
    pub n_noise_words: usize,
    pub template_len: usize,
    pub noise_per_query: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_families: 20,
            family_size: 25,
            n_member_words: 25,
            n_template_words: 40,
            n_noise_words: 20,
            template_len: 8,
            noise_per_query: 1,
            n_train: 100,
            n_test: 50,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_passages(&self) -> usize {
        self.n_families * self.family_size
    }

    /// Vocabulary size including reserved tokens.
    pub fn vocab_size(&self) -> usize {
        NUM_RESERVED + self.n_families + self.n_member_words + self.n_template_words + self.n_noise_words
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_families == 0 || self.family_size == 0 {
            return bad("need at least one family with one member".into());
        }
        let pairs = self.n_member_words * self.n_member_words.saturating_sub(1);
        if pairs < self.n_passages() {
            return bad(format!(
                "{} member words give only {pairs} distinct pairs for {} passages",
                self.n_member_words,
                self.n_passages()
            ));
        }
        if self.template_len == 0 || self.template_len > self.n_template_words {
            return bad(format!("template_len must be in 1..={}", self.n_template_words));
        }
        if self.n_train + self.n_test > self.n_passages() {
            return bad("more queries requested than passages".into());
        }
        if self.noise_per_query > self.n_noise_words {
            return bad("noise_per_query exceeds the noise vocabulary".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthTask {
    pub corpus: Corpus,
    pub train_queries: Vec<Query>,
    pub test_queries: Vec<Query>,
    /// Judgments for train and test queries.
    pub qrels: Qrels,
}

fn words(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:02}")).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthTask> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let families = words("fam", cfg.n_families);
    let members = words("mem", cfg.n_member_words);
    let template_words = words("tpl", cfg.n_template_words);
    let noise = words("nz", cfg.n_noise_words);

    let mut pairs: Vec<(usize, usize)> = (0..cfg.n_member_words)
        .flat_map(|a| (0..cfg.n_member_words).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    pairs.shuffle(&mut rng);

    let mut passages = Vec::with_capacity(cfg.n_passages());
    let mut member_of = Vec::with_capacity(cfg.n_passages());
    for (f, fam) in families.iter().enumerate() {
        let template: Vec<&String> = template_words.choose_multiple(&mut rng, cfg.template_len).collect();
        for k in 0..cfg.family_size {
            let (a, b) = pairs[f * cfg.family_size + k];
            let at = rng.random_range(0..=template.len());
            let mut body: Vec<&str> = template.iter().map(|s| s.as_str()).collect();
            body.insert(at, &members[b]);
            body.insert(at, &members[a]);
            passages.push(Passage {
                id: format!("f{f:02}m{k:02}"),
                title: fam.clone(),
                text: body.join(" "),
                pseudo_queries: vec![],
            });
            member_of.push((f, a, b));
        }
    }
    let corpus = Corpus::from_passages(passages)?;

    let mut targets: Vec<usize> = (0..cfg.n_passages()).collect();
    targets.shuffle(&mut rng);
    let mut qrels = Qrels::new();
    let mut queries = Vec::with_capacity(cfg.n_train + cfg.n_test);
    for (i, &p) in targets.iter().take(cfg.n_train + cfg.n_test).enumerate() {
        let (f, a, b) = member_of[p];
        let mut q: Vec<&str> = vec![&families[f], &members[a], &members[b]];
        q.extend(noise.choose_multiple(&mut rng, cfg.noise_per_query).map(|s| s.as_str()));
        q.shuffle(&mut rng);
        let split = if i < cfg.n_train { "train" } else { "test" };
        let id = format!("{split}{i:03}");
        qrels.insert(id.clone(), corpus.passage(p).id.clone(), 1);
        queries.push(Query::new(id, q.join(" ")));
    }
    let test_queries = queries.split_off(cfg.n_train);
    Ok(SynthTask {
        corpus,
        train_queries: queries,
        test_queries,
        qrels,
    })
}
