use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::Strategy;

/// Positions (0-based, ascending) into a student list of candidates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sampled {
    pub positions: Vec<usize>,
    /// The list held fewer than `M` entries, so all of them were taken.
    pub short: bool,
}

/// Picks `min(M, len)` candidates from a ranked list of length `len`.
pub fn sample_candidates(len: usize, strategy: Strategy, m: usize, seed: u64) -> Result<Sampled> {
    if len == 0 {
        return Err(Error::Validation("cannot sample from an empty rank list".into()));
    }
    if m == 0 {
        return Err(Error::Validation("M must be at least 1".into()));
    }
    if len <= m {
        return Ok(Sampled {
            positions: (0..len).collect(),
            short: len < m,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: Vec<usize> = match strategy {
        Strategy::Top => (0..m).collect(),
        Strategy::Random => index::sample(&mut rng, len, m).into_vec(),
        Strategy::TopAndRandom => std::iter::once(0)
            .chain(index::sample(&mut rng, len - 1, m - 1).into_iter().map(|i| i + 1))
            .collect(),
    };
    positions.sort_unstable();
    Ok(Sampled {
        positions,
        short: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_is_prefix() {
        let s = sample_candidates(10, Strategy::Top, 3, 1).unwrap();
        assert_eq!(s.positions, vec![0, 1, 2]);
    }

    #[test]
    fn short_lists_are_flagged() {
        let s = sample_candidates(2, Strategy::Random, 6, 1).unwrap();
        assert_eq!(
            s,
            Sampled {
                positions: vec![0, 1],
                short: true
            }
        );
        assert!(sample_candidates(0, Strategy::Top, 1, 0).is_err());
    }

    #[test]
    fn top_and_random_keeps_first_and_is_seeded() {
        for seed in 0..50 {
            let s = sample_candidates(20, Strategy::TopAndRandom, 4, seed).unwrap();
            assert_eq!(s.positions[0], 0);
            assert_eq!(s.positions.len(), 4);
            assert!(s.positions.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(s, sample_candidates(20, Strategy::TopAndRandom, 4, seed).unwrap());
        }
    }
}
