//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Reference implementations here are written
//! independently of the library code they check.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dgr::autodiff::{Tape, Var};
use dgr::corpus::{Corpus, ExtractConfig, Passage, Qrels, View};
use dgr::decode::{beam_search_view, BeamConfig};
use dgr::distill::{
    combined_loss, distill_train, loss_value, ranking_loss, sample_candidates, student_scores_for, teacher_rerank,
    DevSet, DistillTrainConfig, LossKind, LossParams, OracleTeacher, ScoreCache, Strategy,
};
use dgr::gradcheck::{finite_diff_check, GradCheckOptions};
use dgr::index::{ContinuationOracle, ExactTable, PassageIndex, SubstringOracle};
use dgr::metrics::{hits_at_k, mrr_at_k, ndcg_at_k, recall_at_k, MetricsTable};
use dgr::model::{init_model, Model, ModelConfig};
use dgr::retrieval::{retrieve, run_queries, Provenance, RankEntry, RankList, RetrievalConfig};
use dgr::synth::{generate, SynthConfig, SynthTask};
use dgr::train::{warm_start, WarmStartConfig};
use dgr::trec::{format_run, parse_run};
use dgr::vocab::{TokenId, EOS};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

fn random_perm(rng: &mut ChaCha8Rng, m: usize) -> Vec<usize> {
    let mut r: Vec<usize> = (1..=m).collect();
    r.shuffle(rng);
    r
}

// ---------------------------------------------------------------------------
// Reference losses by direct enumeration.

fn ref_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn ref_gain(g: f64) -> f64 {
    2f64.powf(g) - 1.0
}

/// NDCG of the passage order `order` (indices, best first) for gains `gains`.
fn ref_ndcg_of_order(order: &[usize], gains: &[f64]) -> f64 {
    let dcg: f64 = order
        .iter()
        .enumerate()
        .map(|(p, &i)| gains[i] / ((p + 2) as f64).log2())
        .sum();
    let mut ideal = gains.to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg: f64 = ideal.iter().enumerate().map(|(p, g)| g / ((p + 2) as f64).log2()).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

fn reference_loss(kind: LossKind, s: &[f64], r: &[usize], t: &[f64], p: &LossParams) -> f64 {
    let m = s.len();
    let tau = p.temperature;
    let grades: Vec<f64> = r.iter().map(|&ri| (m - ri) as f64).collect();
    match kind {
        LossKind::DistilledRankNet => {
            let mut total = 0.0;
            for i in 0..m {
                for j in 0..m {
                    if r[i] < r[j] {
                        let mij = p.m_base + p.m_gap * (r[j] as f64 - r[i] as f64 - 1.0);
                        let x = s[j] - s[i] + mij;
                        total += if p.hinge { x.max(0.0) } else { x };
                    }
                }
            }
            total
        }
        LossKind::RankNet => {
            let mut total = 0.0;
            for i in 0..m {
                for j in 0..m {
                    if r[i] < r[j] {
                        total += (1.0 + (s[j] - s[i]).exp()).ln();
                    }
                }
            }
            total
        }
        LossKind::ListNet => {
            let pt = ref_softmax(&grades.iter().map(|g| g / tau).collect::<Vec<_>>());
            let ps = ref_softmax(&s.iter().map(|v| v / tau).collect::<Vec<_>>());
            -(0..m).map(|i| pt[i] * ps[i].ln()).sum::<f64>()
        }
        LossKind::ListMle => {
            // Probability of the teacher permutation under Plackett–Luce.
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by_key(|&i| r[i]);
            let mut prob = 1.0;
            for k in 0..m {
                let denom: f64 = order[k..].iter().map(|&i| s[i].exp()).sum();
                prob *= s[order[k]].exp() / denom;
            }
            -prob.ln()
        }
        LossKind::ApproxNdcg => {
            let gains: Vec<f64> = grades.iter().map(|&g| ref_gain(g)).collect();
            let mut ideal = gains.clone();
            ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let idcg: f64 = ideal.iter().enumerate().map(|(p, g)| g / ((p + 2) as f64).log2()).sum();
            if idcg == 0.0 {
                return 0.0;
            }
            let mut dcg = 0.0;
            for i in 0..m {
                let mut pos = 1.0;
                for j in 0..m {
                    if j != i {
                        pos += 1.0 / (1.0 + (-(s[j] - s[i]) / tau).exp());
                    }
                }
                dcg += gains[i] / (1.0 + pos).log2();
            }
            1.0 - dcg / idcg
        }
        LossKind::LambdaLoss => {
            let gains: Vec<f64> = grades.iter().map(|&g| ref_gain(g)).collect();
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
            let base = ref_ndcg_of_order(&order, &gains);
            let mut total = 0.0;
            for i in 0..m {
                for j in 0..m {
                    if r[i] < r[j] {
                        let mut swapped = order.clone();
                        let pi = swapped.iter().position(|&x| x == i).unwrap();
                        let pj = swapped.iter().position(|&x| x == j).unwrap();
                        swapped.swap(pi, pj);
                        let delta = (base - ref_ndcg_of_order(&swapped, &gains)).abs();
                        total += delta * (1.0 + (s[j] - s[i]).exp()).ln();
                    }
                }
            }
            total
        }
        LossKind::Kl => {
            let pt = ref_softmax(&t.iter().map(|v| v / tau).collect::<Vec<_>>());
            let ps = ref_softmax(&s.iter().map(|v| v / tau).collect::<Vec<_>>());
            (0..m)
                .map(|i| {
                    if pt[i] > 0.0 {
                        pt[i] * (pt[i].ln() - ps[i].ln())
                    } else {
                        0.0
                    }
                })
                .sum()
        }
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for kind in LossKind::ALL {
        for _ in 0..1000 {
            let m = rng.random_range(1..=8);
            let s: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
            let t: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
            let r = random_perm(&mut rng, m);
            let p = LossParams {
                m_base: rng.random_range(0.0..2.0),
                m_gap: rng.random_range(0.0..1.0),
                hinge: rng.random_bool(0.75),
                temperature: rng.random_range(0.5..2.0),
            };
            let got = loss_value(kind, &s, &r, Some(&t), &p).expect("valid instance");
            let want = reference_loss(kind, &s, &r, &t, &p);
            let e = rel_err(got, want);
            if e > worst {
                worst = e;
                worst_at = format!("{kind} got {got} want {want}");
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs < 10.0,
        format!("7000 instances, max rel err {worst:.2e} {worst_at}, {secs:.2}s"),
    )
}

// ---------------------------------------------------------------------------

fn small_corpus(rng: &mut ChaCha8Rng, n: usize, len: usize, alphabet: usize) -> Corpus {
    let passages = (0..n)
        .map(|i| {
            let l = rng.random_range(1..=len);
            let words: Vec<String> = (0..l).map(|_| format!("w{}", rng.random_range(0..alphabet))).collect();
            Passage {
                id: format!("p{i:03}"),
                title: format!("t{}", rng.random_range(0..alphabet)),
                text: words.join(" "),
                pseudo_queries: vec![],
            }
        })
        .collect();
    Corpus::from_passages(passages).unwrap()
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let corpus = small_corpus(&mut rng, 10, 8, 8);
    let index = PassageIndex::build(&corpus, &ExtractConfig::default());
    let cfg = ModelConfig {
        vocab_size: corpus.vocab().len(),
        embed_dim: 4,
        hidden_dim: 6,
        context: 2,
        init_scale: 0.5,
    };
    let model = init_model(cfg, corpus.vocab().fingerprint(), 7).unwrap();
    let q_tokens = corpus.body_tokens(3)[..2.min(corpus.body_tokens(3).len())].to_vec();
    let mut qrels = Qrels::new();
    qrels.insert("q", corpus.passage(3).id.clone(), 1);
    let rc = RetrievalConfig {
        beam: BeamConfig {
            beam_size: 6,
            max_len: 3,
            views: View::ALL.to_vec(),
        },
        top_n: 10,
        length_normalize: false,
    };
    let retrieved = retrieve(&model, &index, &q_tokens, &rc);
    let sampled = sample_candidates(retrieved.candidates.len(), Strategy::Top, 6, 0).unwrap();
    let passages: Vec<usize> = sampled
        .positions
        .iter()
        .map(|&p| retrieved.candidates[p].passage)
        .collect();
    let teacher = OracleTeacher::new(&corpus, &qrels);
    let reranked = teacher_rerank(&teacher, &corpus, "q", &q_tokens, &passages);
    let target = corpus.extract_identifiers(3, &ExtractConfig::default(), 0)[1]
        .tokens
        .clone();

    let params = LossParams {
        m_base: 0.3,
        m_gap: 0.1,
        hinge: true,
        temperature: 0.5,
    };
    let mut lines = Vec::new();
    let mut pass = retrieved.candidates.len() >= 3;
    let mut kinds: Vec<Option<LossKind>> = LossKind::ALL.iter().copied().map(Some).collect();
    kinds.push(None);
    for kind in kinds {
        let loss_fn = |tape: &mut Tape<'_>| -> Var {
            let mcfg = model.config();
            let l_gen = mcfg.generation_loss(tape, &q_tokens, &target);
            let Some(kind) = kind else { return l_gen };
            let q = mcfg.encode_query(tape, &q_tokens);
            let s = student_scores_for(
                tape,
                mcfg,
                q,
                &retrieved,
                &sampled.positions,
                false,
                &mut ScoreCache::new(),
            );
            // Student scores are sums of probabilities; stretch them so the
            // ranking terms are not negligible next to the generation term.
            let s: Vec<Var> = s.into_iter().map(|v| tape.scale(v, 20.0)).collect();
            let l = ranking_loss(tape, kind, &s, &reranked.ranks, Some(&reranked.scores), &params).unwrap();
            combined_loss(tape, l_gen, l, 0.5)
        };
        let report = finite_diff_check(
            model.params(),
            loss_fn,
            GradCheckOptions {
                n_coords: 160,
                seed: 3,
                ..GradCheckOptions::default()
            },
        );
        let name = kind.map_or("generation".to_string(), |k| k.to_string());
        let ok = report.max_rel_error <= 1e-4 && report.checked >= 100;
        pass &= ok;
        lines.push(format!("{name} {:.1e}/{}", report.max_rel_error, report.checked));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        pass && secs < 60.0,
        format!("max rel err/coords: {}, {secs:.2}s", lines.join(", ")),
    )
}

// ---------------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut iff_ok = 0;
    let mut zero_cases = 0;
    let mut uniform_ok = 0;
    for n in 0..500 {
        let m = rng.random_range(1..=8);
        let r = random_perm(&mut rng, m);
        let m_base = rng.random_range(0.0..1.0);
        let m_gap = rng.random_range(0.0..0.5);
        // Half the instances are built to satisfy every margin.
        let s: Vec<f64> = if n % 2 == 0 {
            let step = m_base + m_gap * m as f64 + rng.random_range(0.0..0.5);
            r.iter().map(|&ri| (m - ri) as f64 * step).collect()
        } else {
            (0..m).map(|_| rng.random_range(-2.0..2.0)).collect()
        };
        let p = LossParams {
            m_base,
            m_gap,
            hinge: true,
            temperature: 1.0,
        };
        let l = loss_value(LossKind::DistilledRankNet, &s, &r, None, &p).unwrap();
        let mut satisfied = true;
        for i in 0..m {
            for j in 0..m {
                if r[i] < r[j] && s[i] < s[j] + m_base + m_gap * (r[j] - r[i] - 1) as f64 {
                    satisfied = false;
                }
            }
        }
        zero_cases += satisfied as usize;
        iff_ok += ((l == 0.0) == satisfied) as usize;

        let p0 = LossParams { m_gap: 0.0, ..p };
        let l0 = loss_value(LossKind::DistilledRankNet, &s, &r, None, &p0).unwrap();
        let mut uniform = 0.0;
        for i in 0..m {
            for j in 0..m {
                if r[i] < r[j] {
                    uniform += (s[j] - s[i] + m_base).max(0.0);
                }
            }
        }
        uniform_ok += (l0 == uniform) as usize;
    }
    outcome(
        iff_ok == 500 && uniform_ok == 500,
        format!("zero iff satisfied {iff_ok}/500 ({zero_cases} satisfied), uniform-margin equal {uniform_ok}/500"),
    )
}

// ---------------------------------------------------------------------------

struct Desk {
    task: SynthTask,
    index: PassageIndex,
    warm: Model,
    warm_hits: f64,
    retrieval: RetrievalConfig,
    extract: ExtractConfig,
}

fn desk_warm_start(seed: u64) -> Desk {
    let task = generate(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let extract = ExtractConfig {
        substring_len: 3,
        n_substrings: 3,
        ..ExtractConfig::default()
    };
    let index = PassageIndex::build(&task.corpus, &extract);
    let vocab = task.corpus.vocab();
    let mut warm = init_model(ModelConfig::new(vocab.len()), vocab.fingerprint(), seed).unwrap();
    let ws = WarmStartConfig {
        seed,
        extract: extract.clone(),
        ..WarmStartConfig::default()
    };
    warm_start(&mut warm, &task.corpus, &task.qrels, &task.train_queries, &ws, |_| {}).unwrap();
    let retrieval = RetrievalConfig::default();
    let warm_hits = test_hits(&task, &index, &warm, &retrieval);
    Desk {
        task,
        index,
        warm,
        warm_hits,
        retrieval,
        extract,
    }
}

fn test_hits(task: &SynthTask, index: &PassageIndex, model: &Model, rc: &RetrievalConfig) -> f64 {
    let runs = run_queries(model, index, task.corpus.vocab(), &task.test_queries, rc);
    let ids: Vec<&str> = task.test_queries.iter().map(|q| q.id.as_str()).collect();
    MetricsTable::compute(&runs, &task.qrels, &ids).hits_5
}

/// Final test hits@5 and the per-epoch dev (= test) hits@5 trajectory.
fn desk_distill(desk: &Desk, kind: LossKind, seed: u64) -> (f64, Vec<f64>) {
    let mut model = desk.warm.clone();
    let mut cfg = DistillTrainConfig {
        retrieval: desk.retrieval.clone(),
        extract: desk.extract.clone(),
        seed,
        ..DistillTrainConfig::default()
    };
    cfg.distill.loss_kind = kind;
    let t = &desk.task;
    let teacher = OracleTeacher::new(&t.corpus, &t.qrels);
    let dev = DevSet {
        queries: &t.test_queries,
        qrels: &t.qrels,
    };
    let reports = distill_train(
        &t.corpus,
        &desk.index,
        &mut model,
        &t.train_queries,
        &t.qrels,
        &teacher,
        Some(dev),
        &cfg,
        |_| {},
    )
    .unwrap();
    assert!(reports.len() >= 3);
    let trajectory = reports.iter().map(|r| r.dev_hits_5.unwrap()).collect();
    (test_hits(t, &desk.index, &model, &desk.retrieval), trajectory)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn criteria_4_and_5() -> (Outcome, Outcome) {
    let start = Instant::now();
    let runs: Vec<(Desk, (f64, Vec<f64>))> = std::thread::scope(|sc| {
        let handles: Vec<_> = SEEDS
            .iter()
            .map(|&seed| {
                sc.spawn(move || {
                    let desk = desk_warm_start(seed);
                    let hits = desk_distill(&desk, LossKind::DistilledRankNet, seed);
                    (desk, hits)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let secs4 = start.elapsed().as_secs_f64();
    let gains: Vec<f64> = runs.iter().map(|(d, (h, _))| h - d.warm_hits).collect();
    let per_seed: Vec<String> = runs
        .iter()
        .map(|(d, (h, traj))| {
            format!(
                "{:.0}->{:.0} (by epoch {})",
                d.warm_hits,
                h,
                traj.iter().map(|v| format!("{v:.0}")).collect::<Vec<_>>().join(" ")
            )
        })
        .collect();
    let c4 = outcome(
        median(gains.clone()) >= 5.0 && secs4 < 600.0,
        format!(
            "test hits@5 per seed {}, median gain {:+.1}, {secs4:.1}s",
            per_seed.join(" "),
            median(gains)
        ),
    );

    let others: Vec<LossKind> = LossKind::ALL[1..].to_vec();
    let mut table: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    table.insert(
        LossKind::DistilledRankNet.name(),
        runs.iter().map(|(_, (h, _))| *h).collect(),
    );
    let results: Vec<(LossKind, usize, f64)> = std::thread::scope(|sc| {
        let handles: Vec<_> = others
            .iter()
            .flat_map(|&kind| (0..SEEDS.len()).map(move |i| (kind, i)))
            .map(|(kind, i)| {
                let desk = &runs[i].0;
                sc.spawn(move || (kind, i, desk_distill(desk, kind, SEEDS[i]).0))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for kind in &others {
        let mut v = vec![0.0; SEEDS.len()];
        for (k, i, h) in &results {
            if k == kind {
                v[*i] = *h;
            }
        }
        table.insert(kind.name(), v);
    }
    println!(
        "loss comparison, test hits@5 per seed {SEEDS:?} (warm start {:?}):",
        runs.iter().map(|(d, _)| d.warm_hits).collect::<Vec<_>>()
    );
    for (name, v) in &table {
        println!("  {name:<18} {v:?} median {:.1}", median(v.clone()));
    }
    let drn = median(table[LossKind::DistilledRankNet.name()].clone());
    let rn = median(table[LossKind::RankNet.name()].clone());
    let c5 = outcome(
        drn >= rn,
        format!("median hits@5 DistilledRankNet {drn:.1} vs RankNet {rn:.1}"),
    );
    (c4, c5)
}

// ---------------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let mut always_top = true;
    for seed in 0..2000 {
        let len = 2 + (seed as usize % 40);
        let m = 1 + (seed as usize % 7);
        let s = sample_candidates(len, Strategy::TopAndRandom, m, seed).unwrap();
        always_top &= s.positions.contains(&0);
    }
    let mut counts = [0usize; 10];
    for seed in 0..10_000 {
        let s = sample_candidates(10, Strategy::Random, 1, seed).unwrap();
        counts[s.positions[0]] += 1;
    }
    let sigma = (0.1f64 * 0.9 / 10_000.0).sqrt();
    let worst_dev = counts
        .iter()
        .map(|&c| (c as f64 / 10_000.0 - 0.1).abs())
        .fold(0.0, f64::max);
    let uniform = worst_dev <= 3.0 * sigma;
    let mut prefix = true;
    for len in 1..30 {
        for m in 1..=len {
            prefix &=
                sample_candidates(len, Strategy::Top, m, len as u64).unwrap().positions == (0..m).collect::<Vec<_>>();
        }
    }
    outcome(
        always_top && uniform && prefix,
        format!(
            "TopAndRandom keeps rank 1: {always_top}; Random counts {counts:?} max dev {worst_dev:.4} (3σ {:.4}); Top prefix: {prefix}",
            3.0 * sigma
        ),
    )
}

// ---------------------------------------------------------------------------

fn naive_locate(bodies: &[Vec<TokenId>], pattern: &[TokenId]) -> Vec<usize> {
    (0..bodies.len())
        .filter(|&i| pattern.is_empty() || bodies[i].windows(pattern.len()).any(|w| w == pattern))
        .collect()
}

fn naive_continuations(bodies: &[Vec<TokenId>], prefix: &[TokenId]) -> Vec<TokenId> {
    let mut out = BTreeSet::new();
    let mut occurs = false;
    for b in bodies {
        for start in 0..b.len() {
            if b[start..].starts_with(prefix) {
                occurs = true;
                if let Some(&t) = b.get(start + prefix.len()) {
                    out.insert(t);
                }
            }
        }
    }
    if occurs && !prefix.is_empty() {
        out.insert(EOS);
    }
    out.into_iter().collect()
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut mismatches = 0;
    let mut nonempty = 0;
    for trial in 0..1000 {
        let n = rng.random_range(1..=50);
        let alphabet = rng.random_range(2..=12);
        let corpus = small_corpus(&mut rng, n, 200, alphabet);
        let bodies = corpus.bodies();
        let index = PassageIndex::build(&corpus, &ExtractConfig::default());
        let pattern: Vec<TokenId> = if trial % 3 == 0 {
            let len = rng.random_range(0..=4);
            let v = corpus.vocab().len() as TokenId;
            (0..len).map(|_| rng.random_range(4..v + 1)).collect()
        } else {
            let b = &bodies[rng.random_range(0..n)];
            let start = rng.random_range(0..b.len());
            let len = rng.random_range(1..=(b.len() - start).min(6));
            b[start..start + len].to_vec()
        };
        let locate = if pattern.is_empty() {
            (0..n).collect()
        } else {
            index.locate(&pattern)
        };
        let want = naive_locate(bodies, &pattern);
        nonempty += !want.is_empty() as usize;
        if locate != want || index.allowed_continuations(&pattern) != naive_continuations(bodies, &pattern) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("1000 pairs, {mismatches} mismatches, {nonempty} with matches"),
    )
}

// ---------------------------------------------------------------------------

type Validity<'a> = dyn Fn(&[TokenId]) -> bool + 'a;

fn enumerate_valid(v: usize, l: usize, valid: &dyn Fn(&[TokenId]) -> bool) -> Vec<Vec<TokenId>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<TokenId>> = vec![vec![]];
    for _ in 0..l {
        let mut next = Vec::new();
        for p in &frontier {
            for t in 0..v {
                let mut q = p.clone();
                q.push(4 + t as TokenId);
                if valid(&q) {
                    out.push(q.clone());
                }
                next.push(q);
            }
        }
        frontier = next;
    }
    out
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut trials = 0;
    let mut mismatches = 0;
    for trial in 0..200 {
        let v: usize = rng.random_range(1..=5);
        let l = rng.random_range(1..=4);
        let b = v.pow(l as u32);
        let vocab_size = 4 + v;
        let cfg = ModelConfig {
            vocab_size,
            embed_dim: 3,
            hidden_dim: 5,
            context: 2,
            init_scale: 1.0,
        };
        let model = init_model(cfg, 0, trial).unwrap();
        let query: Vec<TokenId> = (0..2).map(|_| 4 + rng.random_range(0..v) as TokenId).collect();
        let q_enc = model.encode_query(&query);
        let bodies: Vec<Vec<TokenId>> = (0..rng.random_range(1..4))
            .map(|_| {
                (0..rng.random_range(1..6))
                    .map(|_| 4 + rng.random_range(0..v) as TokenId)
                    .collect()
            })
            .collect();
        let titles: Vec<Vec<TokenId>> = (0..rng.random_range(1..6))
            .map(|_| {
                (0..rng.random_range(1..=l))
                    .map(|_| 4 + rng.random_range(0..v) as TokenId)
                    .collect()
            })
            .collect();
        let fm = dgr::index::FmIndex::build(&bodies);
        let mut table = ExactTable::default();
        for (i, t) in titles.iter().enumerate() {
            table.insert(t, i);
        }
        let sub_valid = |s: &[TokenId]| bodies.iter().any(|b| b.windows(s.len()).any(|w| w == s));
        let title_valid = |s: &[TokenId]| titles.iter().any(|t| t == s);
        let oracles: [(&dyn ContinuationOracle, &Validity); 2] =
            [(&SubstringOracle(&fm), &sub_valid), (&table, &title_valid)];
        for (oracle, valid) in oracles {
            let mut expected: Vec<(Vec<TokenId>, f64)> = enumerate_valid(v, l, valid)
                .into_iter()
                .map(|s| {
                    let lp = model.sequence_logprob_encoded(&q_enc, &s);
                    (s, lp)
                })
                .collect();
            expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
            expected.truncate(b);
            let got: Vec<(Vec<TokenId>, f64)> = beam_search_view(&model, oracle, &q_enc, View::Substring, b, l)
                .into_iter()
                .map(|s| (s.identifier.tokens, s.logprob))
                .collect();
            trials += 1;
            if got != expected {
                mismatches += 1;
            }
        }
    }
    outcome(
        mismatches == 0,
        format!("{trials} searches (V<=5, L<=4, B=V^L), {mismatches} mismatches"),
    )
}

// ---------------------------------------------------------------------------

fn ref_metrics(ranked: &[String], grades: &HashMap<String, u32>, k: usize) -> [f64; 4] {
    let rel = |p: &String| grades.get(p).copied().unwrap_or(0) > 0;
    let top = &ranked[..k.min(ranked.len())];
    let hit = if top.iter().any(rel) { 1.0 } else { 0.0 };
    let n_rel = grades.values().filter(|&&g| g > 0).count();
    let recall = if n_rel == 0 {
        0.0
    } else {
        top.iter().filter(|p| rel(p)).count() as f64 / n_rel as f64
    };
    let mut mrr = 0.0;
    for (i, p) in top.iter().enumerate() {
        if rel(p) {
            mrr = 1.0 / (i as f64 + 1.0);
            break;
        }
    }
    let mut dcg = 0.0;
    for (i, p) in top.iter().enumerate() {
        let g = grades.get(p).copied().unwrap_or(0);
        dcg += (2f64.powi(g as i32) - 1.0) / (i as f64 + 2.0).log2();
    }
    let mut ideal: Vec<u32> = grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let mut idcg = 0.0;
    for (i, g) in ideal.iter().take(k).enumerate() {
        idcg += (2f64.powi(*g as i32) - 1.0) / (i as f64 + 2.0).log2();
    }
    [hit * 100.0, recall, mrr, if idcg > 0.0 { dcg / idcg } else { 0.0 }]
}

fn rank_list(q: &str, ids: &[String]) -> RankList {
    RankList {
        query_id: q.to_string(),
        entries: ids
            .iter()
            .enumerate()
            .map(|(i, p)| RankEntry {
                passage: p.clone(),
                score: 1.0 / (i + 1) as f64,
            })
            .collect(),
        provenance: Provenance::Student,
    }
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n_queries = rng.random_range(1..8);
        let mut qrels = Qrels::new();
        let mut runs = Vec::new();
        let mut ids = Vec::new();
        let mut judged: Vec<HashMap<String, u32>> = Vec::new();
        let mut ranked_all = Vec::new();
        for qi in 0..n_queries {
            let q = format!("q{qi}");
            let pool: Vec<String> = (0..30).map(|p| format!("p{p}")).collect();
            let mut grades = HashMap::new();
            let n_judged = rng.random_range(1..6);
            for p in pool.choose_multiple(&mut rng, n_judged) {
                let g = rng.random_range(0..4);
                qrels.insert(q.clone(), p.clone(), g);
                grades.insert(p.clone(), g);
            }
            let mut ranked = pool.clone();
            ranked.shuffle(&mut rng);
            ranked.truncate(rng.random_range(0..30));
            runs.push(rank_list(&q, &ranked));
            ids.push(q);
            judged.push(grades);
            ranked_all.push(ranked);
        }
        let qids: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
        for k in [1, 5, 10, 20] {
            let mut want = [0.0; 4];
            for (ranked, grades) in ranked_all.iter().zip(&judged) {
                let m = ref_metrics(ranked, grades, k);
                for i in 0..4 {
                    want[i] += m[i] / n_queries as f64;
                }
            }
            let got = [
                hits_at_k(&runs, &qrels, &qids, k).unwrap().value,
                recall_at_k(&runs, &qrels, &qids, k).unwrap().value,
                mrr_at_k(&runs, &qrels, &qids, k).unwrap().value,
                ndcg_at_k(&runs, &qrels, &qids, k).unwrap().value,
            ];
            for i in 0..4 {
                worst = worst.max((got[i] - want[i]).abs());
            }
        }
    }
    let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut qrels = Qrels::new();
    qrels.insert("q", "rel", 1);
    let mrr = mrr_at_k(&[rank_list("q", &ids(&["a", "b", "c", "rel"]))], &qrels, &["q"], 10)
        .unwrap()
        .value;
    let ndcg = ndcg_at_k(&[rank_list("q", &ids(&["a", "rel"]))], &qrels, &["q"], 10)
        .unwrap()
        .value;
    let hand = mrr == 0.25 && (ndcg - 1.0 / 3f64.log2()).abs() <= 1e-12;
    outcome(
        worst <= 1e-9 && hand,
        format!("200 random pairs max abs diff {worst:.1e}; MRR@10 {mrr}, nDCG@10 {ndcg:.6}"),
    )
}

// ---------------------------------------------------------------------------

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut trec_ok = true;
    for _ in 0..100 {
        let runs: Vec<RankList> = (0..rng.random_range(1..5))
            .map(|q| {
                let entries = (0..rng.random_range(1..20))
                    .map(|p| RankEntry {
                        passage: format!("doc{p}"),
                        score: rng.random_range(-10.0..10.0),
                    })
                    .collect();
                RankList::new(format!("q{q}"), entries, Provenance::Student)
            })
            .collect();
        let first = format_run(&runs, "dgr").unwrap();
        let (back, tag) = parse_run(&first, "run").unwrap();
        trec_ok &= format_run(&back, &tag).unwrap() == first;
    }
    let mut ckpt_ok = true;
    for seed in 0..5 {
        let model = init_model(ModelConfig::new(30 + seed as usize), 0xfeed + seed, seed).unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("seed".to_string(), seed.to_string());
        let first = model.to_bytes(&meta).unwrap();
        let (loaded, meta2) = Model::from_bytes(&first, Some(0xfeed + seed)).unwrap();
        ckpt_ok &= loaded.to_bytes(&meta2).unwrap() == first;
    }
    outcome(
        trec_ok && ckpt_ok,
        format!("TREC byte-identical: {trec_ok}; checkpoint byte-identical: {ckpt_ok}"),
    )
}

fn main() {
    // Respect a name filter so `cargo test <other test>` does not run the suite.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let (c4, c5) = std::thread::scope(|sc| {
        let heavy = sc.spawn(criteria_4_and_5);
        results.push((1, "loss-oracle equivalence", criterion_1()));
        results.push((2, "gradient correctness", criterion_2()));
        results.push((3, "distilled RankNet characterization", criterion_3()));
        results.push((6, "sampling strategies", criterion_6()));
        results.push((7, "index equivalence", criterion_7()));
        results.push((8, "beam-search exhaustive equivalence", criterion_8()));
        results.push((9, "metric fidelity", criterion_9()));
        results.push((10, "format round-trips", criterion_10()));
        heavy.join().unwrap()
    });
    results.push((4, "end-to-end distillation improvement", c4));
    results.push((5, "loss comparison direction", c5));
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, o) in &results {
        println!(
            "criterion {n:>2} {name}: {} ({})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += !o.pass as usize;
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
