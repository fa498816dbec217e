use std::collections::HashMap;

use crate::vocab::TokenId;

/// Multiset of the order-`n` n-grams of a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramCounts<'a> {
    order: usize,
    counts: HashMap<&'a [TokenId], usize>,
}

impl<'a> NGramCounts<'a> {
    /// # Panics
    /// If `order` is zero.
    pub fn new(tokens: &'a [TokenId], order: usize) -> Self {
        assert!(order >= 1, "n-gram order must be positive");
        let mut counts = HashMap::new();
        for gram in tokens.windows(order) {
            *counts.entry(gram).or_insert(0) += 1;
        }
        Self { order, counts }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn get(&self, gram: &[TokenId]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    /// Clipped overlap: sum over n-grams of `min(self[g], other[g])`.
    pub fn overlap(&self, other: &NGramCounts<'_>) -> usize {
        self.counts
            .iter()
            .map(|(g, &c)| c.min(other.get(g)))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_bigrams() {
        let c = NGramCounts::new(&[1, 2, 1, 2], 2);
        assert_eq!(c.get(&[1, 2]), 2);
        assert_eq!(c.get(&[2, 1]), 1);
        assert_eq!(c.total(), 3);
    }

    proptest! {
        #[test]
        fn total_matches_window_count(toks in prop::collection::vec(0u32..5, 0..12), n in 1usize..5) {
            let c = NGramCounts::new(&toks, n);
            prop_assert_eq!(c.total(), toks.len().saturating_sub(n - 1));
        }
    }
}
