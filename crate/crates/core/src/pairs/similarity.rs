//! Precomputed similarity scores between embed keys.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{read_jsonl, write_jsonl, DatasetError};
use crate::scalar::Scalar;
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Image,
    Text,
}

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("score {score} for ({a}, {b}) outside [0, 1]")]
    OutOfRange { a: String, b: String, score: f64 },
    #[error("asymmetric scores for ({a}, {b})")]
    Asymmetric { a: String, b: String },
    #[error("table mixes {0:?} and {1:?} rows")]
    MixedKinds(SimilarityKind, SimilarityKind),
    #[error("similarity file is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] DatasetError),
}

/// One line of a similarity file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityRow {
    pub a: String,
    pub b: String,
    pub score: f64,
    pub kind: SimilarityKind,
}

/// Symmetric pairwise scores in `[0, 1]`, keyed by unordered key pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityScores<S> {
    kind: SimilarityKind,
    entries: HashMap<(String, String), S>,
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl<S: Scalar> SimilarityScores<S> {
    pub fn new(kind: SimilarityKind) -> Self {
        Self { kind, entries: HashMap::new() }
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts a score. Re-inserting a pair with a different score is an asymmetry error.
    pub fn insert(&mut self, a: &str, b: &str, score: S) -> Result<(), SimilarityError> {
        if score < S::zero() || score > S::one() {
            return Err(SimilarityError::OutOfRange { a: a.into(), b: b.into(), score: score.to_f64_lossy() });
        }
        let key = ordered(a, b);
        match self.entries.get(&key) {
            Some(existing) if *existing != score => Err(SimilarityError::Asymmetric { a: a.into(), b: b.into() }),
            _ => {
                self.entries.insert(key, score);
                Ok(())
            }
        }
    }

    pub fn score(&self, a: &str, b: &str) -> Option<S> {
        self.entries.get(&ordered(a, b)).copied()
    }

    /// True when `key` appears in at least one pair.
    pub fn contains_key(&self, key: &str) -> bool {
        self.entries.keys().any(|(a, b)| a == key || b == key)
    }

    pub fn keys(&self) -> BTreeSet<&str> {
        self.entries.keys().flat_map(|(a, b)| [a.as_str(), b.as_str()]).collect()
    }

    pub fn from_rows(rows: impl IntoIterator<Item = SimilarityRow>) -> Result<Self, SimilarityError> {
        let mut table: Option<Self> = None;
        for row in rows {
            let t = table.get_or_insert_with(|| Self::new(row.kind));
            if t.kind != row.kind {
                return Err(SimilarityError::MixedKinds(t.kind, row.kind));
            }
            let score = S::from_f64(row.score).ok_or(SimilarityError::OutOfRange {
                a: row.a.clone(),
                b: row.b.clone(),
                score: row.score,
            })?;
            t.insert(&row.a, &row.b, score)?;
        }
        table.ok_or(SimilarityError::Empty)
    }

    pub fn load(path: &Path) -> Result<Self, SimilarityError> {
        let rows: Vec<(usize, SimilarityRow)> = read_jsonl(path)?;
        Self::from_rows(rows.into_iter().map(|(_, r)| r))
    }

    /// Rows sorted by key pair, for stable output.
    pub fn rows(&self) -> Vec<SimilarityRow> {
        let mut rows: Vec<_> = self
            .entries
            .iter()
            .map(|((a, b), s)| SimilarityRow { a: a.clone(), b: b.clone(), score: s.to_f64_lossy(), kind: self.kind })
            .collect();
        rows.sort_by(|x, y| (&x.a, &x.b).cmp(&(&y.a, &y.b)));
        rows
    }

    pub fn save(&self, path: &Path) -> Result<(), SimilarityError> {
        Ok(write_jsonl(path, &self.rows())?)
    }

    /// Scores every unordered pair of `keys` with seeded uniform draws.
    /// Useful as a stand-in when no embedding model is available.
    pub fn random(keys: &[&str], kind: SimilarityKind, seed: u64) -> Self {
        let mut table = Self::new(kind);
        let mut sorted: Vec<&str> = keys.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for (i, a) in sorted.iter().enumerate() {
            for b in &sorted[i + 1..] {
                let mut rng = rng_for(seed, &["similarity", a, b]);
                // Millesimal scores keep ties possible and exactly representable across scalars.
                let millis: u64 = rng.gen_range(0..=1000);
                let score = S::from_count(millis) / S::from_count(1000);
                table.insert(a, b, score).expect("score in range");
            }
        }
        table
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;

    #[test]
    fn symmetric_lookup() {
        let mut t = SimilarityScores::<f64>::new(SimilarityKind::Image);
        t.insert("a", "b", 0.4).unwrap();
        assert_eq!(t.score("b", "a"), Some(0.4));
        assert!(t.insert("b", "a", 0.4).is_ok());
        assert!(matches!(t.insert("b", "a", 0.5), Err(SimilarityError::Asymmetric { .. })));
        assert!(t.contains_key("a"));
        assert!(!t.contains_key("c"));
    }

    #[test]
    fn rejects_out_of_range() {
        let mut t = SimilarityScores::<f32>::new(SimilarityKind::Text);
        assert!(t.insert("a", "b", 1.5).is_err());
    }

    #[test]
    fn mixed_kinds_rejected() {
        let rows = vec![
            SimilarityRow { a: "a".into(), b: "b".into(), score: 0.1, kind: SimilarityKind::Image },
            SimilarityRow { a: "a".into(), b: "c".into(), score: 0.1, kind: SimilarityKind::Text },
        ];
        assert!(matches!(SimilarityScores::<f64>::from_rows(rows), Err(SimilarityError::MixedKinds(..))));
    }

    #[test]
    fn random_tables_agree_across_scalars() {
        let keys = ["k1", "k2", "k3", "k4"];
        let f = SimilarityScores::<f64>::random(&keys, SimilarityKind::Image, 3);
        let r = SimilarityScores::<Rational>::random(&keys, SimilarityKind::Image, 3);
        assert_eq!(f.len(), 6);
        for row in f.rows() {
            let exact = r.score(&row.a, &row.b).unwrap();
            assert_eq!(exact.to_f64_lossy(), row.score);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.jsonl");
        let t = SimilarityScores::<f64>::random(&["x", "y", "z"], SimilarityKind::Text, 1);
        t.save(&path).unwrap();
        assert_eq!(SimilarityScores::<f64>::load(&path).unwrap(), t);
    }
}
