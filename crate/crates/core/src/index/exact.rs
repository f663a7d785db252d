use std::collections::{BTreeMap, HashMap};

use crate::vocab::{TokenId, EOS};

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: BTreeMap<TokenId, usize>,
    terminal: bool,
}

/// Exact-match table from full identifier strings to passages, with a prefix
/// trie over the same strings for constrained decoding.
#[derive(Debug, Clone)]
pub struct ExactTable {
    entries: HashMap<Vec<TokenId>, Vec<usize>>,
    trie: Vec<TrieNode>,
}

impl Default for ExactTable {
    fn default() -> Self {
        Self {
            entries: HashMap::new(),
            trie: vec![TrieNode::default()],
        }
    }
}

impl ExactTable {
    pub fn insert(&mut self, tokens: &[TokenId], passage: usize) {
        if tokens.is_empty() {
            return;
        }
        let list = self.entries.entry(tokens.to_vec()).or_default();
        if let Err(pos) = list.binary_search(&passage) {
            list.insert(pos, passage);
        }
        let mut node = 0;
        for &t in tokens {
            node = match self.trie[node].children.get(&t) {
                Some(&n) => n,
                None => {
                    self.trie.push(TrieNode::default());
                    let n = self.trie.len() - 1;
                    self.trie[node].children.insert(t, n);
                    n
                }
            };
        }
        self.trie[node].terminal = true;
    }

    pub fn from_entries(entries: Vec<(Vec<TokenId>, Vec<usize>)>) -> Self {
        let mut table = Self::default();
        for (tokens, passages) in entries {
            for p in passages {
                table.insert(&tokens, p);
            }
        }
        table
    }

    /// Entries sorted by token sequence.
    pub fn to_entries(&self) -> Vec<(Vec<TokenId>, Vec<usize>)> {
        let mut out: Vec<_> = self.entries.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        out.sort();
        out
    }

    pub fn lookup(&self, tokens: &[TokenId]) -> &[usize] {
        self.entries.get(tokens).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tokens extending `prefix` towards some stored string, plus EOS when
    /// `prefix` is itself a stored string. Sorted ascending.
    pub fn continuations(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        let mut node = 0;
        for t in prefix {
            match self.trie[node].children.get(t) {
                Some(&n) => node = n,
                None => return Vec::new(),
            }
        }
        let n = &self.trie[node];
        let mut out = Vec::with_capacity(n.children.len() + 1);
        if n.terminal {
            out.push(EOS);
        }
        out.extend(n.children.keys().copied());
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_lookup_and_prefixes() {
        let mut t = ExactTable::default();
        t.insert(&[5, 6], 0);
        t.insert(&[5, 6], 2);
        t.insert(&[5, 6, 7], 1);
        t.insert(&[5, 6], 0);
        assert_eq!(t.lookup(&[5, 6]), &[0, 2]);
        assert_eq!(t.lookup(&[5]), &[] as &[usize]);
        assert_eq!(t.continuations(&[]), vec![5]);
        assert_eq!(t.continuations(&[5, 6]), vec![EOS, 7]);
        assert_eq!(t.continuations(&[5, 6, 7]), vec![EOS]);
        assert!(t.continuations(&[9]).is_empty());
    }
}
