//! Ranking metrics over rank lists and graded judgments.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::Qrels;
use crate::error::{Error, Result};
use crate::retrieval::RankList;

/// A metric averaged over the evaluated queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricValue {
    pub value: f64,
    pub evaluated: usize,
    /// Queries in the evaluation set that have no judgments at all.
    pub excluded: usize,
}

/// Per-query scoring function: `(ranked passage ids, judgments) -> score`.
type PerQuery<'a> = dyn Fn(&[&str], &HashMap<&str, u32>) -> f64 + 'a;

fn average(runs: &[RankList], qrels: &Qrels, queries: &[&str], f: &PerQuery<'_>) -> MetricValue {
    let by_id: HashMap<&str, &RankList> = runs.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let mut total = 0.0;
    let mut evaluated = 0;
    let mut excluded = 0;
    for &q in queries {
        let Some(judged) = qrels.judgments(q).filter(|j| !j.is_empty()) else {
            excluded += 1;
            continue;
        };
        let grades: HashMap<&str, u32> = judged.iter().map(|(p, &g)| (p.as_str(), g)).collect();
        let ranked: Vec<&str> = by_id.get(q).map(|r| r.passages().collect()).unwrap_or_default();
        total += f(&ranked, &grades);
        evaluated += 1;
    }
    MetricValue {
        value: if evaluated == 0 { 0.0 } else { total / evaluated as f64 },
        evaluated,
        excluded,
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Validation("metric cutoff k must be at least 1".into()));
    }
    Ok(())
}

fn relevant(grades: &HashMap<&str, u32>, p: &str) -> bool {
    grades.get(p).is_some_and(|&g| g > 0)
}

/// Percentage of queries with a relevant passage in the top `k`.
pub fn hits_at_k(runs: &[RankList], qrels: &Qrels, queries: &[&str], k: usize) -> Result<MetricValue> {
    check_k(k)?;
    let mut m = average(runs, qrels, queries, &|ranked, grades| {
        ranked.iter().take(k).any(|p| relevant(grades, p)) as u8 as f64
    });
    m.value *= 100.0;
    Ok(m)
}

/// Mean fraction of relevant passages found in the top `k`.
pub fn recall_at_k(runs: &[RankList], qrels: &Qrels, queries: &[&str], k: usize) -> Result<MetricValue> {
    check_k(k)?;
    Ok(average(runs, qrels, queries, &|ranked, grades| {
        let total = grades.values().filter(|&&g| g > 0).count();
        if total == 0 {
            return 0.0;
        }
        let found = ranked.iter().take(k).filter(|p| relevant(grades, p)).count();
        found as f64 / total as f64
    }))
}

/// Mean reciprocal rank of the first relevant passage within the top `k`.
pub fn mrr_at_k(runs: &[RankList], qrels: &Qrels, queries: &[&str], k: usize) -> Result<MetricValue> {
    check_k(k)?;
    Ok(average(runs, qrels, queries, &|ranked, grades| {
        ranked
            .iter()
            .take(k)
            .position(|p| relevant(grades, p))
            .map_or(0.0, |i| 1.0 / (i + 1) as f64)
    }))
}

/// nDCG with gain `2^grade − 1` and discount `log2(1 + rank)`.
pub fn ndcg_at_k(runs: &[RankList], qrels: &Qrels, queries: &[&str], k: usize) -> Result<MetricValue> {
    check_k(k)?;
    Ok(average(runs, qrels, queries, &|ranked, grades| {
        let gain = |g: u32| 2f64.powi(g as i32) - 1.0;
        let discount = |i: usize| ((i + 2) as f64).log2();
        let dcg: f64 = ranked
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, p)| gain(grades.get(p).copied().unwrap_or(0)) / discount(i))
            .sum();
        let mut ideal: Vec<u32> = grades.values().copied().collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| gain(g) / discount(i))
            .sum();
        if idcg == 0.0 {
            0.0
        } else {
            dcg / idcg
        }
    }))
}

/// The standard evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTable {
    pub hits_5: f64,
    pub hits_20: f64,
    pub hits_100: f64,
    pub recall_5: f64,
    pub recall_20: f64,
    pub recall_100: f64,
    pub mrr_10: f64,
    pub ndcg_10: f64,
    pub evaluated: usize,
    pub excluded: usize,
}

impl MetricsTable {
    pub fn compute(runs: &[RankList], qrels: &Qrels, queries: &[&str]) -> Self {
        let h = |k| hits_at_k(runs, qrels, queries, k).unwrap();
        let r = |k| recall_at_k(runs, qrels, queries, k).unwrap().value;
        let h5 = h(5);
        Self {
            hits_5: h5.value,
            hits_20: h(20).value,
            hits_100: h(100).value,
            recall_5: r(5),
            recall_20: r(20),
            recall_100: r(100),
            mrr_10: mrr_at_k(runs, qrels, queries, 10).unwrap().value,
            ndcg_10: ndcg_at_k(runs, qrels, queries, 10).unwrap().value,
            evaluated: h5.evaluated,
            excluded: h5.excluded,
        }
    }

    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("hits@5", self.hits_5),
            ("hits@20", self.hits_20),
            ("hits@100", self.hits_100),
            ("R@5", self.recall_5),
            ("R@20", self.recall_20),
            ("R@100", self.recall_100),
            ("MRR@10", self.mrr_10),
            ("nDCG@10", self.ndcg_10),
        ]
    }

    /// Aligned plain-text table, optionally labelled with a system name.
    pub fn to_text(&self, label: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>10}", "metric", label);
        for (name, v) in self.rows() {
            let _ = writeln!(s, "{name:<10} {v:>10.4}");
        }
        let _ = writeln!(s, "{:<10} {:>10}", "queries", self.evaluated);
        let _ = writeln!(s, "{:<10} {:>10}", "excluded", self.excluded);
        s
    }

    pub fn to_json_line(&self, label: &str) -> String {
        let mut v = serde_json::to_value(self).expect("metrics serialize");
        v["system"] = serde_json::Value::String(label.to_string());
        v.to_string()
    }
}
