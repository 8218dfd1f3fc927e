//! Vocabulary construction and the unigram^0.75 noise distribution used
//! for negative sampling.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

/// One retained token with its corpus frequency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub token: String,
    pub count: u64,
}

/// Token table with dense ids. Ordering is deterministic: count descending,
/// then token lexicographic, so identical corpora always produce identical
/// id assignments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    index: BTreeMap<String, u32>,
    total_kept: u64,
}

impl Vocabulary {
    /// Count tokens across `documents` and keep those with
    /// `count >= min_count`. Returns `None` if nothing survives the filter.
    pub fn build<'a, I, D>(documents: I, min_count: u64) -> Option<Vocabulary>
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = &'a String>,
    {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for doc in documents {
            for token in doc {
                *counts.entry(token.clone()).or_insert(0) += 1;
            }
        }
        Vocabulary::from_counts(counts, min_count)
    }

    /// Build from precomputed counts (used by streaming callers that count
    /// tokens during their own corpus pass).
    pub fn from_counts(counts: BTreeMap<String, u64>, min_count: u64) -> Option<Vocabulary> {
        let mut entries: Vec<VocabEntry> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .map(|(token, count)| VocabEntry { token, count })
            .collect();
        if entries.is_empty() {
            return None;
        }
        entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.token.cmp(&b.token)));
        let mut index = BTreeMap::new();
        let mut total_kept = 0u64;
        for (i, e) in entries.iter().enumerate() {
            index.insert(e.token.clone(), i as u32);
            total_kept += e.count;
        }
        Some(Vocabulary {
            entries,
            index,
            total_kept,
        })
    }

    /// Reassemble a vocabulary from a persisted entry table. The entries
    /// must already be in id order; the index and totals are rebuilt.
    pub fn from_entries(entries: Vec<VocabEntry>) -> Vocabulary {
        let mut index = BTreeMap::new();
        let mut total_kept = 0u64;
        for (i, e) in entries.iter().enumerate() {
            index.insert(e.token.clone(), i as u32);
            total_kept += e.count;
        }
        Vocabulary {
            entries,
            index,
            total_kept,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn count_of(&self, id: u32) -> u64 {
        self.entries[id as usize].count
    }

    /// Total occurrences of retained tokens; one training epoch visits
    /// exactly this many center positions (subsampling aside).
    pub fn total_kept(&self) -> u64 {
        self.total_kept
    }

    /// Map tokens to vocabulary ids, dropping out-of-vocabulary tokens.
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().filter_map(|t| self.id(t)).collect()
    }
}

/// Negative-sampling noise distribution: `p(w) ∝ count(w)^0.75`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl NoiseTable {
    pub fn build(vocab: &Vocabulary) -> NoiseTable {
        let weights: Vec<f64> = vocab
            .entries()
            .iter()
            .map(|e| libm::pow(e.count as f64, 0.75))
            .collect();
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cumulative.push(acc);
        }
        // guard the final bucket against rounding drift
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        NoiseTable { probs, cumulative }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Draw one word id from the distribution.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.gen_range(0.0..1.0);
        self.cumulative.partition_point(|&c| c < u) as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn doc(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn counts_and_ordering() {
        let docs = vec![doc(&["a", "b", "a"]), doc(&["a"])];
        let v = Vocabulary::build(docs.iter().map(|d| d.iter()), 1).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.id("a"), Some(0));
        assert_eq!(v.id("b"), Some(1));
        assert_eq!(v.count_of(0), 3);
        assert_eq!(v.total_kept(), 4);
    }

    #[test]
    fn min_count_filters() {
        let docs = vec![doc(&["a", "b", "a"]), doc(&["a"])];
        let v = Vocabulary::build(docs.iter().map(|d| d.iter()), 2).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.id("a"), Some(0));
        assert_eq!(v.id("b"), None);
    }

    #[test]
    fn lexicographic_tie_break() {
        let docs = vec![doc(&["y", "x", "y", "x"])];
        let v = Vocabulary::build(docs.iter().map(|d| d.iter()), 1).unwrap();
        assert_eq!(v.id("x"), Some(0));
        assert_eq!(v.id("y"), Some(1));
    }

    #[test]
    fn empty_after_filter_is_none() {
        let docs = vec![doc(&["rare"])];
        assert!(Vocabulary::build(docs.iter().map(|d| d.iter()), 2).is_none());
    }

    #[test]
    fn noise_table_formula() {
        // counts {a:4, b:1}: p(a) = 4^0.75 / (4^0.75 + 1)
        let docs = vec![doc(&["a", "a", "a", "a", "b"])];
        let v = Vocabulary::build(docs.iter().map(|d| d.iter()), 1).unwrap();
        let t = NoiseTable::build(&v);
        let w = libm::pow(4.0, 0.75);
        let expected = w / (w + 1.0);
        assert!((t.probs()[0] - expected).abs() < 1e-12);
        assert!((t.probs()[1] - (1.0 - expected)).abs() < 1e-12);
        assert!((t.probs()[0] - 0.7388).abs() < 1e-4);
    }

    #[test]
    fn noise_table_symmetry_and_single() {
        let docs = vec![doc(&["a", "b"])];
        let v = Vocabulary::build(docs.iter().map(|d| d.iter()), 1).unwrap();
        let t = NoiseTable::build(&v);
        assert!((t.probs()[0] - 0.5).abs() < 1e-12);

        let single = vec![doc(&["only"])];
        let v1 = Vocabulary::build(single.iter().map(|d| d.iter()), 1).unwrap();
        let t1 = NoiseTable::build(&v1);
        assert_eq!(t1.probs(), &[1.0]);
    }

    #[test]
    fn noise_probs_sum_to_one() {
        let docs = vec![doc(&["a", "a", "a", "b", "b", "c", "d", "d", "d", "d"])];
        let v = Vocabulary::build(docs.iter().map(|d| d.iter()), 1).unwrap();
        let t = NoiseTable::build(&v);
        let sum: f64 = t.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sampling_tracks_distribution() {
        let docs = vec![doc(&["a", "a", "a", "a", "a", "a", "a", "a", "b"])];
        let v = Vocabulary::build(docs.iter().map(|d| d.iter()), 1).unwrap();
        let t = NoiseTable::build(&v);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = 20_000;
        let hits_a = (0..draws).filter(|_| t.sample(&mut rng) == 0).count();
        let frac = hits_a as f64 / draws as f64;
        assert!((frac - t.probs()[0]).abs() < 0.02);
    }
}
