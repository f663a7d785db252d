//! TREC run files: `qid Q0 pid rank score tag`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::retrieval::{Provenance, RankEntry, RankList};

fn check_field(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::Validation(format!(
            "{kind} `{s}` cannot be written to a run file"
        )));
    }
    Ok(())
}

/// Renders rank lists in list order, ranks from 1, scores with six decimals.
pub fn format_run(runs: &[RankList], tag: &str) -> Result<String> {
    check_field("run tag", tag)?;
    let mut out = String::new();
    for r in runs {
        check_field("query id", &r.query_id)?;
        for (i, e) in r.entries.iter().enumerate() {
            check_field("passage id", &e.passage)?;
            let _ = writeln!(out, "{} Q0 {} {} {:.6} {}", r.query_id, e.passage, i + 1, e.score, tag);
        }
    }
    Ok(out)
}

/// Parses a run. Lines for one query must be contiguous with ranks 1, 2, ...;
/// entry order is taken from the file. Returns the lists and the run tag.
pub fn parse_run(content: &str, label: &str) -> Result<(Vec<RankList>, String)> {
    let mut runs: Vec<RankList> = Vec::new();
    let mut tag: Option<String> = None;
    for (n, line) in content.lines().enumerate() {
        let n = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::parse(label, n, format!("expected 6 fields, found {}", f.len())));
        }
        let rank: usize = f[3]
            .parse()
            .map_err(|_| Error::parse(label, n, format!("bad rank `{}`", f[3])))?;
        let score: f64 = f[4]
            .parse()
            .map_err(|_| Error::parse(label, n, format!("bad score `{}`", f[4])))?;
        match &tag {
            Some(t) if t != f[5] => {
                return Err(Error::parse(label, n, format!("run tag `{}` differs from `{t}`", f[5])))
            }
            Some(_) => {}
            None => tag = Some(f[5].to_string()),
        }
        let start_new = runs.last().is_none_or(|r| r.query_id != f[0]);
        if start_new {
            if runs.iter().any(|r| r.query_id == f[0]) {
                return Err(Error::parse(
                    label,
                    n,
                    format!("lines for query `{}` are not contiguous", f[0]),
                ));
            }
            runs.push(RankList {
                query_id: f[0].to_string(),
                entries: Vec::new(),
                provenance: Provenance::Student,
            });
        }
        let r = runs.last_mut().unwrap();
        if rank != r.entries.len() + 1 {
            return Err(Error::parse(
                label,
                n,
                format!("expected rank {}, found {rank}", r.entries.len() + 1),
            ));
        }
        if r.entries.iter().any(|e| e.passage == f[2]) {
            return Err(Error::parse(
                label,
                n,
                format!("duplicate passage `{}` for query `{}`", f[2], f[0]),
            ));
        }
        r.entries.push(RankEntry {
            passage: f[2].to_string(),
            score,
        });
    }
    Ok((runs, tag.unwrap_or_default()))
}

pub fn write_run(path: &Path, runs: &[RankList], tag: &str) -> Result<()> {
    std::fs::write(path, format_run(runs, tag)?).map_err(|e| Error::io(path, e))
}

pub fn read_run(path: &Path) -> Result<(Vec<RankList>, String)> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run(&content, &path.display().to_string())
}
