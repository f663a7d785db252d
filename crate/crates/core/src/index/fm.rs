//! FM-index over the reversed passage stream.
//!
//! Indexing the reversed text turns backward search into left-to-right
//! pattern extension: the range of `P·t` is one LF step away from the range
//! of `P`, and the tokens that may follow `P` are exactly the distinct BWT
//! symbols inside the range of `P`. That is the query a constrained decoder
//! issues at every step.

use serde::{Deserialize, Serialize};

use super::suffix::suffix_array;
use crate::vocab::{TokenId, SEP};

const OCC_BLOCK: usize = 64;
const SA_SAMPLE: u32 = 8;
const SENTINEL: u32 = 0;

#[inline]
fn sym(token: TokenId) -> u32 {
    token + 1
}

#[inline]
fn token(sym: u32) -> TokenId {
    sym - 1
}

/// Half-open row interval in the BWT matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SaRange {
    pub lo: usize,
    pub hi: usize,
}

impl SaRange {
    pub fn is_empty(&self) -> bool {
        self.lo >= self.hi
    }

    pub fn len(&self) -> usize {
        self.hi.saturating_sub(self.lo)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FmIndex {
    sigma: usize,
    bwt: Vec<u32>,
    /// `c_table[s]` = number of symbols strictly smaller than `s`.
    c_table: Vec<usize>,
    /// Occurrence checkpoints, `occ[s * n_blocks + b]` = count of `s` in `bwt[..b * OCC_BLOCK]`.
    occ: Vec<u32>,
    n_blocks: usize,
    /// Bitset over rows whose suffix-array value is sampled.
    sampled: Vec<u64>,
    sampled_rank: Vec<u32>,
    samples: Vec<u32>,
    /// Length of the forward text without the sentinel.
    text_len: usize,
    /// Forward-text start offset of every passage body.
    starts: Vec<usize>,
}

impl FmIndex {
    /// Indexes `bodies` joined as `b0 SEP b1 SEP … SEP`.
    pub fn build(bodies: &[Vec<TokenId>]) -> Self {
        let mut forward = Vec::new();
        let mut starts = Vec::with_capacity(bodies.len());
        for body in bodies {
            starts.push(forward.len());
            forward.extend(body.iter().map(|&t| sym(t)));
            forward.push(sym(SEP));
        }
        let text_len = forward.len();
        let mut rev: Vec<u32> = forward.iter().rev().copied().collect();
        rev.push(SENTINEL);

        let sigma = rev.iter().copied().max().unwrap_or(0) as usize + 1;
        let sa = suffix_array(&rev);
        let n = rev.len();
        let bwt: Vec<u32> = sa
            .iter()
            .map(|&p| if p == 0 { rev[n - 1] } else { rev[p as usize - 1] })
            .collect();

        let mut counts = vec![0usize; sigma];
        for &s in &rev {
            counts[s as usize] += 1;
        }
        let mut c_table = vec![0usize; sigma + 1];
        for s in 0..sigma {
            c_table[s + 1] = c_table[s] + counts[s];
        }

        let n_blocks = n / OCC_BLOCK + 1;
        let mut occ = vec![0u32; sigma * n_blocks];
        let mut running = vec![0u32; sigma];
        for b in 0..n_blocks {
            for s in 0..sigma {
                occ[s * n_blocks + b] = running[s];
            }
            let end = ((b + 1) * OCC_BLOCK).min(n);
            for &s in &bwt[(b * OCC_BLOCK).min(n)..end] {
                running[s as usize] += 1;
            }
        }

        let mut sampled = vec![0u64; n.div_ceil(64)];
        let mut samples = Vec::new();
        for (row, &p) in sa.iter().enumerate() {
            if p % SA_SAMPLE == 0 {
                sampled[row / 64] |= 1 << (row % 64);
                samples.push(p);
            }
        }
        let mut sampled_rank = Vec::with_capacity(sampled.len());
        let mut acc = 0u32;
        for w in &sampled {
            sampled_rank.push(acc);
            acc += w.count_ones();
        }

        Self {
            sigma,
            bwt,
            c_table,
            occ,
            n_blocks,
            sampled,
            sampled_rank,
            samples,
            text_len,
            starts,
        }
    }

    pub fn n_passages(&self) -> usize {
        self.starts.len()
    }

    /// Number of occurrences of `s` in `bwt[..row]`.
    fn occ(&self, s: u32, row: usize) -> usize {
        let s = s as usize;
        if s >= self.sigma {
            return 0;
        }
        let b = row / OCC_BLOCK;
        let base = self.occ[s * self.n_blocks + b] as usize;
        let s = s as u32;
        base + self.bwt[b * OCC_BLOCK..row].iter().filter(|&&x| x == s).count()
    }

    pub fn full_range(&self) -> SaRange {
        SaRange {
            lo: 0,
            hi: self.bwt.len(),
        }
    }

    /// Extends the pattern behind `range` by one token on the right.
    pub fn extend(&self, range: SaRange, t: TokenId) -> SaRange {
        let s = sym(t);
        if range.is_empty() || s as usize >= self.sigma || t == SEP {
            return SaRange { lo: 0, hi: 0 };
        }
        let c = self.c_table[s as usize];
        SaRange {
            lo: c + self.occ(s, range.lo),
            hi: c + self.occ(s, range.hi),
        }
    }

    pub fn range_of(&self, pattern: &[TokenId]) -> SaRange {
        let mut r = self.full_range();
        for &t in pattern {
            r = self.extend(r, t);
            if r.is_empty() {
                break;
            }
        }
        r
    }

    /// Sorted distinct tokens that can follow the pattern behind `range`,
    /// excluding the separator and the sentinel.
    pub fn next_tokens(&self, range: SaRange) -> Vec<TokenId> {
        if range.is_empty() {
            return Vec::new();
        }
        let sep = sym(SEP);
        let mut out: Vec<TokenId>;
        if range.len() <= 2 * self.sigma {
            let mut syms: Vec<u32> = self.bwt[range.lo..range.hi]
                .iter()
                .copied()
                .filter(|&s| s != SENTINEL && s != sep)
                .collect();
            syms.sort_unstable();
            syms.dedup();
            out = syms.into_iter().map(token).collect();
        } else {
            out = Vec::new();
            for s in 1..self.sigma as u32 {
                if s != sep && self.occ(s, range.hi) > self.occ(s, range.lo) {
                    out.push(token(s));
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn is_sampled(&self, row: usize) -> bool {
        self.sampled[row / 64] >> (row % 64) & 1 == 1
    }

    fn sample_at(&self, row: usize) -> u32 {
        let word = self.sampled[row / 64] & ((1u64 << (row % 64)) - 1);
        let rank = self.sampled_rank[row / 64] + word.count_ones();
        self.samples[rank as usize]
    }

    /// Suffix-array value of a row of the reversed text.
    fn sa_value(&self, mut row: usize) -> usize {
        let mut steps = 0usize;
        while !self.is_sampled(row) {
            let s = self.bwt[row];
            row = self.c_table[s as usize] + self.occ(s, row);
            steps += 1;
        }
        self.sample_at(row) as usize + steps
    }

    /// Passage indices (sorted, distinct) whose bodies contain a pattern of
    /// length `pattern_len` with the given range.
    pub fn locate(&self, range: SaRange, pattern_len: usize) -> Vec<usize> {
        if range.is_empty() || pattern_len == 0 {
            return Vec::new();
        }
        let mut out: Vec<usize> = (range.lo..range.hi)
            .map(|row| {
                let rev_start = self.sa_value(row);
                let fwd_start = self.text_len - rev_start - pattern_len;
                self.starts.partition_point(|&s| s <= fwd_start) - 1
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn heap_bytes(&self) -> usize {
        4 * (self.bwt.len() + self.occ.len() + self.samples.len() + self.sampled_rank.len())
            + 8 * (self.sampled.len() + self.c_table.len() + self.starts.len())
    }
}
