use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::format::g9;
use crate::error::{Error, Result};

/// Sparse `(source index, target index)` pairs with a confidence per pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pairs: Vec<(usize, usize)>,
    scores: Vec<f64>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(usize, usize)>, scores: Vec<f64>) -> Result<Self> {
        if pairs.len() != scores.len() {
            return Err(Error::ShapeMismatch {
                expected: pairs.len(),
                actual: scores.len(),
            });
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Precondition(format!("score {s} outside [0, 1]")));
        }
        let mut seen = HashSet::with_capacity(pairs.len());
        if let Some(p) = pairs.iter().find(|p| !seen.insert(**p)) {
            return Err(Error::Precondition(format!("duplicate pair {p:?}")));
        }
        Ok(CorrespondenceSet { pairs, scores })
    }

    /// Pairs `(i, i)` for `i < n`, all with score 1.
    pub fn identity(n: usize) -> Self {
        CorrespondenceSet {
            pairs: (0..n).map(|i| (i, i)).collect(),
            scores: vec![1.0; n],
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Checks every index against the cloud sizes.
    pub fn validate(&self, n_source: usize, n_target: usize) -> Result<()> {
        if let Some(&(u, v)) = self
            .pairs
            .iter()
            .find(|&&(u, v)| u >= n_source || v >= n_target)
        {
            return Err(Error::Precondition(format!(
                "pair ({u}, {v}) out of range for clouds of {n_source} and {n_target} points"
            )));
        }
        Ok(())
    }

    /// Distinct source indices in ascending order.
    pub fn source_indices(&self) -> Vec<usize> {
        let mut u: Vec<usize> = self.pairs.iter().map(|p| p.0).collect();
        u.sort_unstable();
        u.dedup();
        u
    }

    /// Keeps the pairs for which `keep` is true.
    pub fn filter(&self, mut keep: impl FnMut(usize, (usize, usize)) -> bool) -> Self {
        let (pairs, scores) = self
            .pairs
            .iter()
            .zip(&self.scores)
            .enumerate()
            .filter(|(i, (p, _))| keep(*i, **p))
            .map(|(_, (p, s))| (*p, *s))
            .unzip();
        CorrespondenceSet { pairs, scores }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (&(u, v), &s) in self.pairs.iter().zip(&self.scores) {
            let _ = writeln!(out, "{u} {v} {}", g9(s));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        let mut scores = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            let bad = || Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("expected `u v score`, got {line:?}"),
            };
            if f.len() != 3 {
                return Err(bad());
            }
            pairs.push((
                f[0].parse().map_err(|_| bad())?,
                f[1].parse().map_err(|_| bad())?,
            ));
            scores.push(f[2].parse().map_err(|_| bad())?);
        }
        Self::new(pairs, scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_bad_scores() {
        assert!(CorrespondenceSet::new(vec![(0, 1), (0, 1)], vec![1.0, 1.0]).is_err());
        assert!(CorrespondenceSet::new(vec![(0, 1)], vec![1.5]).is_err());
        let c = CorrespondenceSet::new(vec![(0, 1), (2, 1)], vec![0.5, 1.0]).unwrap();
        assert!(c.validate(3, 2).is_ok());
        assert!(c.validate(2, 2).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corr.txt");
        let c = CorrespondenceSet::new(vec![(3, 1), (0, 7)], vec![0.666666666666, 1.0]).unwrap();
        c.save(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "3 1 0.666666667\n0 7 1\n");
        let back = CorrespondenceSet::load(&path).unwrap();
        assert_eq!(back.pairs(), c.pairs());
    }
}
