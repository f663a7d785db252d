use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use dgr::autodiff::{Tape, Var};
use dgr::corpus::{
    load_corpus, load_qrels, load_queries, write_qrels, write_queries, Corpus, ExtractConfig, Qrels, Query,
};
use dgr::decode::BeamConfig;
use dgr::distill::{
    combined_loss, distill_train, ranking_loss, student_scores_for, teacher_rerank, DevSet, DistillConfig,
    DistillTrainConfig, LossKind, OracleTeacher, Sampled, ScoreCache, SurrogateTeacher, Teacher,
};
use dgr::gradcheck::{finite_diff_check, GradCheckOptions, KINK_MARGIN};
use dgr::index::PassageIndex;
use dgr::metrics::MetricsTable;
use dgr::model::{init_model, Model, ModelConfig, PARAM_NAMES};
use dgr::retrieval::{retrieve, run_queries, RetrievalConfig};
use dgr::synth::{generate, SynthConfig};
use dgr::train::{warm_start, WarmStartConfig};
use dgr::trec::{read_run, write_run};
use dgr::vocab::TokenId;

use crate::config::{
    input, optional_input, output, DecodeArgs, DistillArgs, ExtractArgs, FileConfig, ModelArgs, PathArgs, SynthArgs,
    TrainArgs,
};
use crate::{Cli, Command, Failure, SweepParam};

type Res<T = ()> = Result<T, Failure>;

pub fn run(cli: Cli) -> Res {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = |s: &crate::Seed| s.seed.or(file.seed).unwrap_or(0);
    match cli.command {
        Command::Synth { seed: s, paths, synth } => synth_cmd(seed(&s), &paths.or(&file.paths), &synth.or(&file.synth)),
        Command::BuildIndex { paths, extract } => build_index(&paths.or(&file.paths), &extract.or(&file.extract)),
        Command::Train {
            seed: s,
            paths,
            model,
            extract,
            train,
        } => train_cmd(
            seed(&s),
            &paths.or(&file.paths),
            &model.or(&file.model),
            &extract.or(&file.extract),
            &train.or(&file.train),
        ),
        Command::Distill {
            seed: s,
            paths,
            extract,
            decode,
            distill,
        } => distill_cmd(
            seed(&s),
            &paths.or(&file.paths),
            &extract.or(&file.extract),
            &decode.or(&file.decode),
            &distill.or(&file.distill),
        ),
        Command::Retrieve { paths, decode, tag } => {
            retrieve_cmd(&paths.or(&file.paths), &decode.or(&file.decode), &tag)
        }
        Command::Evaluate { paths, label } => evaluate_cmd(&paths.or(&file.paths), label),
        Command::Gradcheck { seed: s, coords, tol } => gradcheck_cmd(seed(&s), coords, tol),
        Command::Sweep {
            seed: s,
            paths,
            extract,
            decode,
            distill,
            param,
            values,
        } => sweep_cmd(
            seed(&s),
            &paths.or(&file.paths),
            &extract.or(&file.extract),
            &decode.or(&file.decode),
            &distill.or(&file.distill),
            param,
            &values,
        ),
    }
}

fn runtime(context: &str) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{context}: {e}"))
}

fn write_text(path: &Path, text: &str) -> Res {
    std::fs::write(path, text).map_err(runtime(&path.display().to_string()))
}

fn extract_config(a: &ExtractArgs) -> ExtractConfig {
    let d = ExtractConfig::default();
    ExtractConfig {
        substring_len: a.substring_len.unwrap_or(d.substring_len),
        n_substrings: a.n_substrings.unwrap_or(d.n_substrings),
        ..d
    }
}

fn retrieval_config(a: &DecodeArgs) -> RetrievalConfig {
    let d = RetrievalConfig::default();
    RetrievalConfig {
        beam: BeamConfig {
            beam_size: a.beam.unwrap_or(d.beam.beam_size),
            max_len: a.max_len.unwrap_or(d.beam.max_len),
            ..d.beam
        },
        top_n: a.top_n.unwrap_or(d.top_n),
        length_normalize: a.length_normalize.unwrap_or(d.length_normalize),
    }
}

fn distill_config(a: &DistillArgs) -> Res<DistillConfig> {
    let mut c = DistillConfig::default();
    let s = |v: &Option<f64>| v.map(|x| x.to_string());
    let fields = [
        ("M", a.m.map(|x| x.to_string())),
        ("N", a.n.map(|x| x.to_string())),
        ("m_base", s(&a.m_base)),
        ("m_gap", s(&a.m_gap)),
        ("alpha", s(&a.alpha)),
        ("loss_kind", a.loss.clone()),
        ("strategy", a.strategy.clone()),
        ("hinge", a.hinge.map(|x| x.to_string())),
        ("temperature", s(&a.temperature)),
    ];
    for (key, value) in fields {
        if let Some(v) = value {
            c.set(key, &v)?;
        }
    }
    c.validate()?;
    Ok(c)
}

fn distill_train_config(seed: u64, e: &ExtractArgs, d: &DecodeArgs, a: &DistillArgs) -> Res<DistillTrainConfig> {
    let def = DistillTrainConfig::default();
    Ok(DistillTrainConfig {
        distill: distill_config(a)?,
        retrieval: retrieval_config(d),
        extract: extract_config(e),
        epochs: a.epochs.unwrap_or(def.epochs),
        lr: a.lr.unwrap_or(def.lr),
        weight_decay: a.weight_decay.unwrap_or(def.weight_decay),
        seed,
    })
}

fn make_teacher<'a>(name: Option<&str>, corpus: &'a Corpus, qrels: &'a Qrels) -> Res<Box<dyn Teacher + 'a>> {
    match name.unwrap_or("oracle") {
        "oracle" => Ok(Box::new(OracleTeacher::new(corpus, qrels))),
        "surrogate" => Ok(Box::new(SurrogateTeacher::new(corpus))),
        other => Err(Failure::Usage(format!(
            "unknown teacher `{other}` (oracle or surrogate)"
        ))),
    }
}

fn load_model(path: &Path, corpus: &Corpus) -> Res<(Model, BTreeMap<String, String>)> {
    Ok(Model::load(path, Some(corpus.vocab().fingerprint()))?)
}

fn query_ids(queries: &[Query]) -> Vec<&str> {
    queries.iter().map(|q| q.id.as_str()).collect()
}

/// Adds `seed` to a serializable record and renders it as one JSON line.
fn json_line(record: &impl Serialize, extra: &[(&str, serde_json::Value)]) -> String {
    let mut v = serde_json::to_value(record).expect("report serializes");
    for (k, x) in extra {
        v[*k] = x.clone();
    }
    v.to_string()
}

fn synth_cmd(seed: u64, paths: &PathArgs, a: &SynthArgs) -> Res {
    let out = output(&paths.out, "out")?;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        n_families: a.families.unwrap_or(d.n_families),
        family_size: a.family_size.unwrap_or(d.family_size),
        n_member_words: a.member_words.unwrap_or(d.n_member_words),
        n_template_words: a.template_words.unwrap_or(d.n_template_words),
        n_noise_words: a.noise_words.unwrap_or(d.n_noise_words),
        template_len: a.template_len.unwrap_or(d.template_len),
        noise_per_query: a.noise_per_query.unwrap_or(d.noise_per_query),
        n_train: a.train.unwrap_or(d.n_train),
        n_test: a.test.unwrap_or(d.n_test),
        seed,
    };
    cfg.validate()?;
    let task = generate(&cfg)?;
    std::fs::create_dir_all(&out).map_err(runtime(&out.display().to_string()))?;
    task.corpus.write_jsonl(&out.join("corpus.jsonl"))?;
    write_queries(&out.join("train.tsv"), &task.train_queries)?;
    write_queries(&out.join("test.tsv"), &task.test_queries)?;
    write_qrels(&out.join("qrels.txt"), &task.qrels)?;
    let meta = serde_json::json!({
        "seed": seed,
        "families": cfg.n_families,
        "family_size": cfg.family_size,
        "member_words": cfg.n_member_words,
        "template_words": cfg.n_template_words,
        "noise_words": cfg.n_noise_words,
        "template_len": cfg.template_len,
        "noise_per_query": cfg.noise_per_query,
        "train": cfg.n_train,
        "test": cfg.n_test,
        "passages": task.corpus.len(),
        "vocab_size": task.corpus.vocab().len(),
    });
    write_text(&out.join("synth.json"), &format!("{meta:#}\n"))?;
    println!(
        "wrote {} passages, {} train and {} test queries to {}",
        task.corpus.len(),
        task.train_queries.len(),
        task.test_queries.len(),
        out.display()
    );
    Ok(())
}

fn build_index(paths: &PathArgs, e: &ExtractArgs) -> Res {
    let corpus = load_corpus(&input(&paths.corpus, "corpus")?)?;
    let out = output(&paths.out, "out")?;
    let index = PassageIndex::build(&corpus, &extract_config(e));
    index.save(&out)?;
    println!("indexed {} passages into {}", index.n_passages(), out.display());
    Ok(())
}

fn train_cmd(seed: u64, paths: &PathArgs, m: &ModelArgs, e: &ExtractArgs, t: &TrainArgs) -> Res {
    let corpus = load_corpus(&input(&paths.corpus, "corpus")?)?;
    let queries = load_queries(&input(&paths.queries, "queries")?)?;
    let qrels = load_qrels(&input(&paths.qrels, "qrels")?)?;
    let out = output(&paths.out, "out")?;

    let d = ModelConfig::new(corpus.vocab().len());
    let mcfg = ModelConfig {
        embed_dim: m.embed_dim.unwrap_or(d.embed_dim),
        hidden_dim: m.hidden_dim.unwrap_or(d.hidden_dim),
        context: m.context.unwrap_or(d.context),
        init_scale: m.init_scale.unwrap_or(d.init_scale),
        ..d
    };
    mcfg.validate()?;
    let wd = WarmStartConfig::default();
    let cfg = WarmStartConfig {
        epochs: t.epochs.unwrap_or(wd.epochs),
        lr: t.lr.unwrap_or(wd.lr),
        weight_decay: t.weight_decay.unwrap_or(wd.weight_decay),
        batch_size: t.batch_size.unwrap_or(wd.batch_size),
        seed,
        extract: extract_config(e),
        resample_substrings: t.resample_substrings.unwrap_or(wd.resample_substrings),
    };
    let mut model = init_model(mcfg, corpus.vocab().fingerprint(), seed)?;
    let mut lines = String::new();
    warm_start(&mut model, &corpus, &qrels, &queries, &cfg, |ep| {
        let line = json_line(ep, &[("seed", seed.into())]);
        println!("{line}");
        lines.push_str(&line);
        lines.push('\n');
    })?;
    let meta = BTreeMap::from([
        ("stage".to_string(), "warm_start".to_string()),
        ("seed".to_string(), seed.to_string()),
        ("epochs".to_string(), cfg.epochs.to_string()),
        ("lr".to_string(), cfg.lr.to_string()),
        ("batch_size".to_string(), cfg.batch_size.to_string()),
        ("substring_len".to_string(), cfg.extract.substring_len.to_string()),
        ("n_substrings".to_string(), cfg.extract.n_substrings.to_string()),
    ]);
    model.save(&out, &meta)?;
    if let Some(report) = &paths.report {
        write_text(report, &lines)?;
    }
    Ok(())
}

fn distill_cmd(seed: u64, paths: &PathArgs, e: &ExtractArgs, d: &DecodeArgs, a: &DistillArgs) -> Res {
    let corpus = load_corpus(&input(&paths.corpus, "corpus")?)?;
    let index = PassageIndex::load(&input(&paths.index, "index")?)?;
    let queries = load_queries(&input(&paths.queries, "queries")?)?;
    let qrels = load_qrels(&input(&paths.qrels, "qrels")?)?;
    let dev_queries = optional_input(&paths.dev_queries, "dev-queries")?
        .map(|p| load_queries(&p))
        .transpose()?;
    let (mut model, _) = load_model(&input(&paths.checkpoint, "checkpoint")?, &corpus)?;
    let out = output(&paths.out, "out")?;
    let cfg = distill_train_config(seed, e, d, a)?;
    let teacher = make_teacher(a.teacher.as_deref(), &corpus, &qrels)?;
    let dev = dev_queries.as_deref().map(|q| DevSet {
        queries: q,
        qrels: &qrels,
    });

    let mut lines = String::new();
    distill_train(
        &corpus,
        &index,
        &mut model,
        &queries,
        &qrels,
        teacher.as_ref(),
        dev,
        &cfg,
        |ep| {
            let line = json_line(ep, &[("seed", seed.into())]);
            println!("{line}");
            lines.push_str(&line);
            lines.push('\n');
        },
    )?;
    let mut meta = BTreeMap::from([
        ("stage".to_string(), "distill".to_string()),
        ("seed".to_string(), seed.to_string()),
        ("epochs".to_string(), cfg.epochs.to_string()),
        ("lr".to_string(), cfg.lr.to_string()),
        ("teacher".to_string(), teacher.name().to_string()),
    ]);
    for line in cfg.distill.to_kv().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            meta.insert(k.to_string(), v.to_string());
        }
    }
    model.save(&out, &meta)?;
    if let Some(report) = &paths.report {
        write_text(report, &lines)?;
    }
    Ok(())
}

fn retrieve_cmd(paths: &PathArgs, d: &DecodeArgs, tag: &str) -> Res {
    let corpus = load_corpus(&input(&paths.corpus, "corpus")?)?;
    let index = PassageIndex::load(&input(&paths.index, "index")?)?;
    let checkpoint = input(&paths.checkpoint, "checkpoint")?;
    let (model, meta) = load_model(&checkpoint, &corpus)?;
    let queries = load_queries(&input(&paths.queries, "queries")?)?;
    let run_path = output(&paths.run, "run")?;
    let rcfg = retrieval_config(d);
    let mut runs = Vec::with_capacity(queries.len());
    let mut capped = 0;
    for q in &queries {
        let r = retrieve(&model, &index, &corpus.vocab().encode(&q.text), &rcfg);
        capped += r.capped_identifiers;
        runs.push(r.rank_list(&q.id, &index));
    }
    write_run(&run_path, &runs, tag)?;
    let sidecar = serde_json::json!({
        "checkpoint": checkpoint.display().to_string(),
        "seed": meta.get("seed"),
        "beam": rcfg.beam.beam_size,
        "max_len": rcfg.beam.max_len,
        "top_n": rcfg.top_n,
        "length_normalize": rcfg.length_normalize,
        "queries": queries.len(),
        "max_matches": index.max_matches(),
        "capped_identifiers": capped,
    });
    let mut meta_path = run_path.clone().into_os_string();
    meta_path.push(".meta.json");
    write_text(Path::new(&meta_path), &format!("{sidecar:#}\n"))?;
    println!("wrote {} rank lists to {}", runs.len(), run_path.display());
    Ok(())
}

fn evaluate_cmd(paths: &PathArgs, label: Option<String>) -> Res {
    let (runs, tag) = read_run(&input(&paths.run, "run")?)?;
    let qrels = load_qrels(&input(&paths.qrels, "qrels")?)?;
    let ids: Vec<String> = match optional_input(&paths.queries, "queries")? {
        Some(p) => load_queries(&p)?.into_iter().map(|q| q.id).collect(),
        None => qrels.queries().map(str::to_string).collect(),
    };
    let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
    let table = MetricsTable::compute(&runs, &qrels, &ids);
    let label = label.unwrap_or(tag);
    print!("{}", table.to_text(&label));
    println!("{}", table.to_json_line(&label));
    if let Some(out) = &paths.out {
        write_text(out, &format!("{}\n", table.to_json_line(&label)))?;
    }
    Ok(())
}

const SCORE_SPREAD: f64 = 20.0;
const MIN_CHECKED: usize = 100;

/// Every distillation loss (plus the generation loss alone) checked on one
/// retrieval from a tiny synthetic corpus and model.
fn gradcheck_cmd(seed: u64, coords: usize, tol: f64) -> Res {
    let task = generate(&SynthConfig {
        n_families: 3,
        family_size: 4,
        n_member_words: 5,
        n_template_words: 6,
        n_noise_words: 3,
        template_len: 4,
        noise_per_query: 1,
        n_train: 12,
        n_test: 0,
        seed,
    })?;
    let corpus = &task.corpus;
    let extract = ExtractConfig::default();
    let index = PassageIndex::build(corpus, &extract);
    let mcfg = ModelConfig {
        embed_dim: 4,
        hidden_dim: 6,
        context: 2,
        init_scale: 0.5,
        ..ModelConfig::new(corpus.vocab().len())
    };
    let model = init_model(mcfg, corpus.vocab().fingerprint(), seed)?;
    let rcfg = RetrievalConfig {
        beam: BeamConfig {
            beam_size: 6,
            max_len: 3,
            ..BeamConfig::default()
        },
        top_n: 20,
        length_normalize: false,
    };
    // Candidates whose scores are pairwise apart, so sort-order kinks do not
    // swallow the sampled coordinates; the first query giving six wins.
    let spread_positions = |r: &dgr::retrieval::Retrieved| {
        let mut kept: Vec<usize> = Vec::new();
        for (p, c) in r.candidates.iter().enumerate() {
            let far = kept
                .iter()
                .all(|&k| (r.candidates[k].score - c.score).abs() * SCORE_SPREAD > 2.0 * KINK_MARGIN);
            if far && kept.len() < 6 {
                kept.push(p);
            }
        }
        kept
    };
    let mut best: Option<(&Query, Vec<TokenId>, dgr::retrieval::Retrieved, Vec<usize>)> = None;
    for q in &task.train_queries {
        let tokens = corpus.vocab().encode(&q.text);
        let r = retrieve(&model, &index, &tokens, &rcfg);
        let positions = spread_positions(&r);
        if best.as_ref().is_none_or(|b| positions.len() > b.3.len()) {
            let done = positions.len() == 6;
            best = Some((q, tokens, r, positions));
            if done {
                break;
            }
        }
    }
    let Some((query, q_tokens, retrieved, positions)) = best.filter(|b| !b.3.is_empty()) else {
        return Err(Failure::Runtime("no candidates retrieved for any check query".into()));
    };
    let sampled = Sampled {
        positions,
        short: false,
    };
    let passages: Vec<usize> = sampled
        .positions
        .iter()
        .map(|&p| retrieved.candidates[p].passage)
        .collect();
    let teacher = OracleTeacher::new(corpus, &task.qrels);
    let reranked = teacher_rerank(&teacher, corpus, &query.id, &q_tokens, &passages);
    let positive = corpus
        .index_of(task.qrels.positives(&query.id)[0])
        .expect("judged passage exists");
    let target = corpus.extract_identifiers(positive, &extract, seed)[0].tokens.clone();
    let dc = DistillConfig::default();
    let params = dc.loss_params();

    let mut kinds: Vec<Option<LossKind>> = LossKind::ALL.into_iter().map(Some).collect();
    kinds.push(None);
    let mut failed = false;
    println!(
        "{:<18} {:>12} {:>8} {:>8}  worst (analytic vs numeric)",
        "loss", "max_rel_err", "checked", "skipped"
    );
    for kind in kinds {
        let loss_fn = |tape: &mut Tape<'_>| -> Var {
            let cfg = model.config();
            let l_gen = cfg.generation_loss(tape, &q_tokens, &target);
            let Some(kind) = kind else { return l_gen };
            let q = cfg.encode_query(tape, &q_tokens);
            let s = student_scores_for(
                tape,
                cfg,
                q,
                &retrieved,
                &sampled.positions,
                false,
                &mut ScoreCache::new(),
            );
            // Untrained scores are nearly tied probabilities; spreading them
            // keeps sort-order kinks away from the perturbed coordinates.
            let s: Vec<Var> = s.into_iter().map(|v| tape.scale(v, SCORE_SPREAD)).collect();
            let l =
                ranking_loss(tape, kind, &s, &reranked.ranks, Some(&reranked.scores), &params).expect("valid ranks");
            combined_loss(tape, l_gen, l, dc.alpha)
        };
        let opts = GradCheckOptions {
            n_coords: coords,
            seed,
            ..GradCheckOptions::default()
        };
        let report = finite_diff_check(model.params(), loss_fn, opts);
        let name = kind.map_or("generation", LossKind::name);
        let worst = report.worst.map_or(String::new(), |(t, i, a, n)| {
            format!("{}[{i}] {a:.6e} vs {n:.6e}", PARAM_NAMES[t])
        });
        println!(
            "{name:<18} {:>12.3e} {:>8} {:>8}  {worst}",
            report.max_rel_error, report.checked, report.skipped_near_kink
        );
        failed |= !report.passes(tol) || report.checked < coords.min(MIN_CHECKED);
    }
    if failed {
        return Err(Failure::Runtime(format!(
            "relative error above {tol:e} or fewer than {} coordinates checked",
            coords.min(MIN_CHECKED)
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    param: &'static str,
    value: String,
    seed: u64,
    #[serde(flatten)]
    metrics: MetricsTable,
}

#[allow(clippy::too_many_arguments)]
fn sweep_cmd(
    seed: u64,
    paths: &PathArgs,
    e: &ExtractArgs,
    d: &DecodeArgs,
    a: &DistillArgs,
    param: SweepParam,
    values: &[String],
) -> Res {
    let corpus = load_corpus(&input(&paths.corpus, "corpus")?)?;
    let index = PassageIndex::load(&input(&paths.index, "index")?)?;
    let queries = load_queries(&input(&paths.queries, "queries")?)?;
    let qrels = load_qrels(&input(&paths.qrels, "qrels")?)?;
    let eval_queries = load_queries(&input(&paths.dev_queries, "dev-queries")?)?;
    let (warm, _) = load_model(&input(&paths.checkpoint, "checkpoint")?, &corpus)?;
    let teacher = make_teacher(a.teacher.as_deref(), &corpus, &qrels)?;
    let name = match param {
        SweepParam::MGap => "m_gap",
        SweepParam::M => "M",
    };

    let mut cfgs = Vec::with_capacity(values.len());
    for v in values {
        let mut args = a.clone();
        match param {
            SweepParam::MGap => {
                args.m_gap = Some(
                    v.trim()
                        .parse()
                        .map_err(|_| Failure::Usage(format!("bad m_gap `{v}`")))?,
                )
            }
            SweepParam::M => args.m = Some(v.trim().parse().map_err(|_| Failure::Usage(format!("bad M `{v}`")))?),
        }
        cfgs.push((v.trim().to_string(), distill_train_config(seed, e, d, &args)?));
    }

    let mut rows = Vec::new();
    for (value, cfg) in cfgs {
        let mut model = warm.clone();
        distill_train(
            &corpus,
            &index,
            &mut model,
            &queries,
            &qrels,
            teacher.as_ref(),
            None,
            &cfg,
            |_| {},
        )?;
        let mut eval_cfg = cfg.retrieval.clone();
        eval_cfg.top_n = eval_cfg.top_n.max(100);
        let runs = run_queries(&model, &index, corpus.vocab(), &eval_queries, &eval_cfg);
        let metrics = MetricsTable::compute(&runs, &qrels, &query_ids(&eval_queries));
        log::info!("{name} = {value}: hits@5 {:.2}", metrics.hits_5);
        rows.push(SweepRow {
            param: name,
            value,
            seed,
            metrics,
        });
    }

    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        name, "hits@5", "hits@20", "hits@100", "MRR@10", "nDCG@10"
    );
    for r in &rows {
        let m = &r.metrics;
        let _ = writeln!(
            table,
            "{:<8} {:>8.2} {:>8.2} {:>8.2} {:>8.4} {:>8.4}",
            r.value, m.hits_5, m.hits_20, m.hits_100, m.mrr_10, m.ndcg_10
        );
    }
    print!("{table}");
    let jsonl: String = rows.iter().map(|r| json_line(r, &[]) + "\n").collect();
    print!("{jsonl}");
    if let Some(out) = &paths.out {
        write_text(out, &jsonl)?;
    }
    Ok(())
}
