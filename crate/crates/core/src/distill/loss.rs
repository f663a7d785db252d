//! Pairwise and listwise ranking losses on the tape.
//!
//! Every loss takes `M` scalar student scores `s` and the teacher ranks `r`
//! (a permutation of `1..=M`, rank 1 best) aligned with them.

use crate::autodiff::{ParamSet, Tape, Var};
use crate::error::{Error, Result};

use super::LossKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub m_base: f64,
    pub m_gap: f64,
    pub hinge: bool,
    pub temperature: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            m_base: 0.3,
            m_gap: 0.1,
            hinge: true,
            temperature: 1.0,
        }
    }
}

/// Checks that `ranks` is a permutation of `1..=len`.
pub fn validate_ranks(ranks: &[usize]) -> Result<()> {
    let mut seen = vec![false; ranks.len()];
    for &r in ranks {
        if r == 0 || r > ranks.len() || seen[r - 1] {
            return Err(Error::Validation(format!(
                "ranks {ranks:?} are not a permutation of 1..={}",
                ranks.len()
            )));
        }
        seen[r - 1] = true;
    }
    Ok(())
}

fn check(tape: &Tape<'_>, s: &[Var], ranks: &[usize]) -> Result<()> {
    if s.len() != ranks.len() {
        return Err(Error::Validation(format!(
            "{} scores but {} ranks",
            s.len(),
            ranks.len()
        )));
    }
    validate_ranks(ranks)?;
    if let Some(v) = s.iter().map(|&v| tape.scalar(v)).find(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite student score {v}")));
    }
    Ok(())
}

/// Indices `(i, j)` with `r_i < r_j`, `i` and `j` in ascending order.
fn ordered_pairs(ranks: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
    let m = ranks.len();
    (0..m).flat_map(move |i| (0..m).filter(move |&j| ranks[i] < ranks[j]).map(move |j| (i, j)))
}

/// `Σ_{r_i<r_j} h(s_j − s_i + m_base + m_gap·(r_j − r_i − 1))` with
/// `h = max(0, ·)` when `hinge`, identity otherwise.
pub fn distilled_ranknet(
    tape: &mut Tape<'_>,
    s: &[Var],
    ranks: &[usize],
    m_base: f64,
    m_gap: f64,
    hinge: bool,
) -> Result<Var> {
    check(tape, s, ranks)?;
    let mut terms = Vec::new();
    for (i, j) in ordered_pairs(ranks) {
        let margin = m_base + m_gap * (ranks[j] - ranks[i] - 1) as f64;
        let d = tape.sub(s[j], s[i]);
        let x = tape.offset(d, margin);
        terms.push(if hinge { tape.relu(x) } else { x });
    }
    Ok(tape.sum(&terms))
}

/// `Σ_{r_i<r_j} ln(1 + e^{s_j − s_i})`.
pub fn ranknet_loss(tape: &mut Tape<'_>, s: &[Var], ranks: &[usize]) -> Result<Var> {
    check(tape, s, ranks)?;
    let mut terms = Vec::new();
    for (i, j) in ordered_pairs(ranks) {
        let d = tape.sub(s[j], s[i]);
        terms.push(tape.softplus(d));
    }
    Ok(tape.sum(&terms))
}

fn softmax(x: &[f64]) -> Vec<f64> {
    crate::autodiff::log_softmax(x).into_iter().map(f64::exp).collect()
}

fn gain(g: usize) -> f64 {
    2f64.powi(g as i32) - 1.0
}

fn discount(pos: usize) -> f64 {
    ((pos + 1) as f64).log2()
}

/// Ideal DCG of the rank-derived gains `g_i = M − r_i`.
fn ideal_dcg(m: usize) -> f64 {
    (1..=m).map(|pos| gain(m - pos) / discount(pos)).sum()
}

/// Log-softmax of `s / τ` as a vector node.
fn scaled_log_softmax(tape: &mut Tape<'_>, s: &[Var], tau: f64) -> Var {
    let v = tape.concat(s);
    let z = tape.scale(v, 1.0 / tau);
    tape.log_softmax(z)
}

/// Listwise baselines. Grades are `g_i = M − r_i`; KL needs raw teacher scores.
pub fn listwise_loss(
    tape: &mut Tape<'_>,
    kind: LossKind,
    s: &[Var],
    ranks: &[usize],
    teacher_scores: Option<&[f64]>,
    tau: f64,
) -> Result<Var> {
    check(tape, s, ranks)?;
    let m = s.len();
    match kind {
        LossKind::ListNet => {
            let g: Vec<f64> = ranks.iter().map(|&r| (m - r) as f64 / tau).collect();
            let p = softmax(&g);
            let lq = scaled_log_softmax(tape, s, tau);
            let terms: Vec<Var> = (0..m)
                .map(|i| {
                    let x = tape.pick(lq, i);
                    tape.scale(x, -p[i])
                })
                .collect();
            Ok(tape.sum(&terms))
        }
        LossKind::ListMle => {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by_key(|&i| ranks[i]);
            let mut terms = Vec::with_capacity(m);
            for k in 0..m {
                let rest: Vec<Var> = order[k..].iter().map(|&i| s[i]).collect();
                let lse = tape.log_sum_exp(&rest);
                terms.push(tape.sub(lse, s[order[k]]));
            }
            Ok(tape.sum(&terms))
        }
        LossKind::ApproxNdcg => {
            let idcg = ideal_dcg(m);
            if idcg == 0.0 {
                return Ok(tape.constant(0.0));
            }
            let mut dcg_terms = Vec::with_capacity(m);
            for i in 0..m {
                let mut parts = Vec::with_capacity(m - 1);
                for j in (0..m).filter(|&j| j != i) {
                    let d = tape.sub(s[j], s[i]);
                    let z = tape.scale(d, 1.0 / tau);
                    parts.push(tape.sigmoid(z));
                }
                let sum = tape.sum(&parts);
                // ln(1 + π̂_i) with π̂_i = 1 + Σ σ(·).
                let inner = tape.offset(sum, 2.0);
                let ln = tape.ln(inner);
                let inv = tape.recip(ln);
                dcg_terms.push(tape.scale(inv, gain(m - ranks[i]) * std::f64::consts::LN_2 / idcg));
            }
            let ndcg = tape.sum(&dcg_terms);
            let neg = tape.scale(ndcg, -1.0);
            Ok(tape.offset(neg, 1.0))
        }
        LossKind::LambdaLoss => {
            let idcg = ideal_dcg(m);
            let values: Vec<f64> = s.iter().map(|&v| tape.scalar(v)).collect();
            for i in 0..m {
                for j in i + 1..m {
                    tape.note_kink(values[i] - values[j]);
                }
            }
            if idcg == 0.0 {
                return Ok(tape.constant(0.0));
            }
            let mut by_score: Vec<usize> = (0..m).collect();
            by_score.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
            let mut pos = vec![0; m];
            for (p, &i) in by_score.iter().enumerate() {
                pos[i] = p + 1;
            }
            let mut terms = Vec::new();
            for (i, j) in ordered_pairs(ranks) {
                let w = (gain(m - ranks[i]) - gain(m - ranks[j])).abs()
                    * (1.0 / discount(pos[i]) - 1.0 / discount(pos[j])).abs()
                    / idcg;
                let d = tape.sub(s[j], s[i]);
                let sp = tape.softplus(d);
                terms.push(tape.scale(sp, w));
            }
            Ok(tape.sum(&terms))
        }
        LossKind::Kl => {
            let t = teacher_scores
                .ok_or_else(|| Error::Config("KL distillation needs a teacher that exposes scores".into()))?;
            if t.len() != m {
                return Err(Error::Validation(format!(
                    "{} teacher scores for {m} passages",
                    t.len()
                )));
            }
            let lp = crate::autodiff::log_softmax(&t.iter().map(|x| x / tau).collect::<Vec<_>>());
            let lq = scaled_log_softmax(tape, s, tau);
            let mut terms = Vec::with_capacity(m);
            let mut constant = 0.0;
            for (i, &lpi) in lp.iter().enumerate() {
                let p = lpi.exp();
                if p == 0.0 {
                    continue;
                }
                constant += p * lpi;
                let x = tape.pick(lq, i);
                terms.push(tape.scale(x, -p));
            }
            let cross = tape.sum(&terms);
            Ok(tape.offset(cross, constant))
        }
        LossKind::DistilledRankNet | LossKind::RankNet => {
            Err(Error::Validation(format!("{kind} is not a listwise loss")))
        }
    }
}

/// Dispatches on `kind`.
pub fn ranking_loss(
    tape: &mut Tape<'_>,
    kind: LossKind,
    s: &[Var],
    ranks: &[usize],
    teacher_scores: Option<&[f64]>,
    p: &LossParams,
) -> Result<Var> {
    match kind {
        LossKind::DistilledRankNet => distilled_ranknet(tape, s, ranks, p.m_base, p.m_gap, p.hinge),
        LossKind::RankNet => ranknet_loss(tape, s, ranks),
        _ => listwise_loss(tape, kind, s, ranks, teacher_scores, p.temperature),
    }
}

/// `α·L_gen + L_distill`.
pub fn combined_loss(tape: &mut Tape<'_>, l_gen: Var, l_distill: Var, alpha: f64) -> Var {
    let g = tape.scale(l_gen, alpha);
    tape.add(g, l_distill)
}

/// Loss value for plain scores.
pub fn loss_value(
    kind: LossKind,
    scores: &[f64],
    ranks: &[usize],
    teacher_scores: Option<&[f64]>,
    p: &LossParams,
) -> Result<f64> {
    let empty = ParamSet::default();
    let mut tape = Tape::new(&empty);
    let s: Vec<Var> = scores.iter().map(|&x| tape.constant(x)).collect();
    let l = ranking_loss(&mut tape, kind, &s, ranks, teacher_scores, p)?;
    Ok(tape.scalar(l))
}
