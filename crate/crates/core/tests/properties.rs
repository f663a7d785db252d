use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use dgr::corpus::{Corpus, ExtractConfig, Passage, Qrels, View};
use dgr::decode::ScoredIdentifier;
use dgr::distill::{loss_value, LossKind, LossParams};
use dgr::index::PassageIndex;
use dgr::metrics::{hits_at_k, mrr_at_k, ndcg_at_k, recall_at_k};
use dgr::retrieval::{aggregate, Provenance, RankEntry, RankList};
use dgr::vocab::TokenId;

fn corpus_from(bodies: &[Vec<u8>]) -> Corpus {
    let passages = bodies
        .iter()
        .enumerate()
        .map(|(i, b)| Passage {
            id: format!("p{i:02}"),
            title: format!("title{}", i % 3),
            text: b.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" "),
            pseudo_queries: vec![],
        })
        .collect();
    Corpus::from_passages(passages).unwrap()
}

fn bodies_strategy() -> impl Strategy<Value = Vec<Vec<u8>>> {
    prop::collection::vec(prop::collection::vec(0u8..5, 1..30), 1..12)
}

fn contains(body: &[TokenId], pattern: &[TokenId]) -> bool {
    body.windows(pattern.len()).any(|w| w == pattern)
}

fn params() -> LossParams {
    LossParams {
        m_base: 0.3,
        m_gap: 0.1,
        hinge: true,
        temperature: 1.0,
    }
}

fn scores_and_ranks() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (1usize..=8).prop_flat_map(|m| {
        (
            prop::collection::vec(-5.0f64..5.0, m),
            Just((1..=m).collect::<Vec<usize>>()).prop_shuffle(),
        )
    })
}

fn run(q: &str, ids: &[usize]) -> RankList {
    RankList {
        query_id: q.into(),
        entries: ids
            .iter()
            .enumerate()
            .map(|(i, p)| RankEntry {
                passage: format!("d{p}"),
                score: -(i as f64),
            })
            .collect(),
        provenance: Provenance::Student,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn locate_matches_scan_and_narrows(bodies in bodies_strategy(), pat in prop::collection::vec(0u8..5, 1..5)) {
        let corpus = corpus_from(&bodies);
        let index = PassageIndex::build(&corpus, &ExtractConfig::default());
        let pattern: Vec<TokenId> = pat.iter().map(|w| corpus.vocab().id(&format!("w{w}")).unwrap_or(2)).collect();
        let mut previous: Option<BTreeSet<usize>> = None;
        for len in 1..=pattern.len() {
            let got = index.locate(&pattern[..len]);
            let want: Vec<usize> = (0..corpus.len()).filter(|&i| contains(corpus.body_tokens(i), &pattern[..len])).collect();
            prop_assert_eq!(&got, &want);
            let got: BTreeSet<usize> = got.into_iter().collect();
            if let Some(prev) = &previous {
                prop_assert!(got.is_subset(prev));
            }
            previous = Some(got);
        }
    }

    #[test]
    fn metrics_bounded_and_monotone_in_k(
        ranked in Just((0..25).collect::<Vec<usize>>()).prop_shuffle(),
        cut in 0usize..25,
        judged in prop::collection::btree_map(0usize..25, 0u32..4, 1..6),
    ) {
        let mut qrels = Qrels::new();
        for (p, g) in &judged {
            qrels.insert("q", format!("d{p}"), *g);
        }
        let runs = [run("q", &ranked[..cut])];
        let mut last = [f64::NEG_INFINITY; 3];
        for k in 1..=30 {
            let h = hits_at_k(&runs, &qrels, &["q"], k).unwrap().value;
            let r = recall_at_k(&runs, &qrels, &["q"], k).unwrap().value;
            let m = mrr_at_k(&runs, &qrels, &["q"], k).unwrap().value;
            let n = ndcg_at_k(&runs, &qrels, &["q"], k).unwrap().value;
            prop_assert!((0.0..=100.0).contains(&h));
            prop_assert!((0.0..=1.0).contains(&r) && (0.0..=1.0).contains(&m) && (0.0..=1.0 + 1e-12).contains(&n));
            for (prev, v) in last.iter_mut().zip([h, r, m]) {
                prop_assert!(v >= *prev);
                *prev = v;
            }
        }
    }

    #[test]
    fn losses_invariant_under_joint_permutation((s, r) in scores_and_ranks(), seed in any::<u64>()) {
        let t: Vec<f64> = s.iter().map(|v| v * 0.5 + 1.0).collect();
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by_key(|&i| (seed.rotate_left(i as u32 * 7) ^ i as u64, i));
        let ps: Vec<f64> = order.iter().map(|&i| s[i]).collect();
        let pr: Vec<usize> = order.iter().map(|&i| r[i]).collect();
        let pt: Vec<f64> = order.iter().map(|&i| t[i]).collect();
        for kind in LossKind::ALL {
            let a = loss_value(kind, &s, &r, Some(&t), &params()).unwrap();
            let b = loss_value(kind, &ps, &pr, Some(&pt), &params()).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{} {} {}", kind, a, b);
        }
    }

    #[test]
    fn uniform_scores_count_each_pair_once(m in 1usize..=10) {
        let s = vec![0.0; m];
        let r: Vec<usize> = (1..=m).collect();
        let p = LossParams { m_base: 1.0, m_gap: 0.0, ..params() };
        let l = loss_value(LossKind::DistilledRankNet, &s, &r, None, &p).unwrap();
        prop_assert_eq!(l, (m * (m - 1) / 2) as f64);
    }

    #[test]
    fn raising_top_score_never_hurts((s, r) in scores_and_ranks(), bump in 0.0f64..3.0) {
        let top = r.iter().position(|&x| x == 1).unwrap();
        let mut raised = s.clone();
        raised[top] += bump;
        for kind in [LossKind::DistilledRankNet, LossKind::RankNet] {
            let before = loss_value(kind, &s, &r, None, &params()).unwrap();
            let after = loss_value(kind, &raised, &r, None, &params()).unwrap();
            prop_assert!(after <= before + 1e-12);
        }
    }

    #[test]
    fn aggregate_equals_brute_force(
        bodies in bodies_strategy(),
        picks in prop::collection::vec((0usize..12, 0usize..30, 1usize..4, -6.0f64..0.0, any::<bool>()), 1..20),
    ) {
        let corpus = corpus_from(&bodies);
        let index = PassageIndex::build(&corpus, &ExtractConfig::default());
        let scored: Vec<ScoredIdentifier> = picks
            .iter()
            .map(|&(p, start, len, lp, title)| {
                let p = p % corpus.len();
                if title {
                    ScoredIdentifier::new(View::Title, corpus.title_tokens(p).to_vec(), lp)
                } else {
                    let b = corpus.body_tokens(p);
                    let start = start % b.len();
                    let end = (start + len).min(b.len());
                    ScoredIdentifier::new(View::Substring, b[start..end].to_vec(), lp)
                }
            })
            .collect();

        let mut first: BTreeMap<Vec<TokenId>, (f64, BTreeSet<View>)> = BTreeMap::new();
        for s in &scored {
            let e = first.entry(s.identifier.tokens.clone()).or_insert((s.logprob, BTreeSet::new()));
            e.1.insert(s.identifier.view);
        }
        let mut want: BTreeMap<usize, f64> = BTreeMap::new();
        for p in 0..corpus.len() {
            for (tokens, (lp, views)) in &first {
                let hit = views.iter().any(|v| match v {
                    View::Title => corpus.title_tokens(p) == tokens.as_slice(),
                    _ => contains(corpus.body_tokens(p), tokens),
                });
                if hit {
                    *want.entry(p).or_default() += lp.exp();
                }
            }
        }

        let got = aggregate(&scored, &index, usize::MAX, false);
        prop_assert_eq!(got.candidates.len(), want.len());
        for c in &got.candidates {
            prop_assert!((c.score - want[&c.passage]).abs() <= 1e-12);
        }
        prop_assert!(got.candidates.windows(2).all(|w| w[0].score >= w[1].score));

        let doubled: Vec<ScoredIdentifier> = scored
            .iter()
            .map(|s| ScoredIdentifier::new(s.identifier.view, s.identifier.tokens.clone(), s.logprob + 2f64.ln()))
            .collect();
        let again = aggregate(&doubled, &index, usize::MAX, false);
        let order = |r: &dgr::retrieval::Retrieved| r.candidates.iter().map(|c| c.passage).collect::<Vec<_>>();
        prop_assert_eq!(order(&got), order(&again));
    }
}
