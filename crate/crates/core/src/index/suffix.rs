//! Suffix array construction by prefix doubling.

/// Returns the suffix array of `text`. The text should end with a unique
/// smallest symbol so that no suffix is a prefix of another.
pub fn suffix_array(text: &[u32]) -> Vec<u32> {
    let n = text.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sa: Vec<u32> = (0..n as u32).collect();
    let mut rank: Vec<u32> = text.to_vec();
    let mut next = vec![0u32; n];
    let mut k = 1usize;
    loop {
        let key = |i: u32| -> u64 {
            let i = i as usize;
            let hi = rank[i] as u64 + 1;
            let lo = if i + k < n { rank[i + k] as u64 + 1 } else { 0 };
            (hi << 32) | lo
        };
        sa.sort_unstable_by_key(|&i| key(i));
        next[sa[0] as usize] = 0;
        for w in 1..n {
            let bump = (key(sa[w]) != key(sa[w - 1])) as u32;
            next[sa[w] as usize] = next[sa[w - 1] as usize] + bump;
        }
        std::mem::swap(&mut rank, &mut next);
        if rank[sa[n - 1] as usize] as usize == n - 1 || k >= n {
            break;
        }
        k *= 2;
    }
    sa
}
