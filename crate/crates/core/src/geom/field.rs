use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::format::g9;
use super::Vec3;
use crate::error::{Error, Result};

/// One displacement vector (mm) per source point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DisplacementField {
    vectors: Vec<Vec3>,
}

impl DisplacementField {
    pub fn new(vectors: Vec<Vec3>) -> Result<Self> {
        if let Some(i) = vectors.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidCloud(format!("displacement {i} is not finite")));
        }
        Ok(DisplacementField { vectors })
    }

    pub fn zeros(n: usize) -> Self {
        DisplacementField {
            vectors: vec![Vec3::zeros(); n],
        }
    }

    /// `after[i] - before[i]` for every point.
    pub fn between(before: &[Vec3], after: &[Vec3]) -> Result<Self> {
        if before.len() != after.len() {
            return Err(Error::ShapeMismatch {
                expected: before.len(),
                actual: after.len(),
            });
        }
        Self::new(before.iter().zip(after).map(|(a, b)| b - a).collect())
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Mean Euclidean norm of the vectors.
    pub fn mean_norm(&self) -> f64 {
        if self.vectors.is_empty() {
            return 0.0;
        }
        self.vectors.iter().map(|v| v.norm()).sum::<f64>() / self.vectors.len() as f64
    }

    /// `points[i] + self[i]`.
    pub fn apply(&self, points: &[Vec3]) -> Result<Vec<Vec3>> {
        if points.len() != self.vectors.len() {
            return Err(Error::ShapeMismatch {
                expected: self.vectors.len(),
                actual: points.len(),
            });
        }
        Ok(points.iter().zip(&self.vectors).map(|(p, v)| p + v).collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.vectors.len() * 36);
        for v in &self.vectors {
            let _ = writeln!(out, "{} {} {}", g9(v.x), g9(v.y), g9(v.z));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vectors = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            let bad = || Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("expected `dx dy dz`, got {line:?}"),
            };
            if f.len() != 3 {
                return Err(bad());
            }
            let mut v = Vec3::zeros();
            for k in 0..3 {
                v[k] = f[k].parse().map_err(|_| bad())?;
            }
            vectors.push(v);
        }
        Self::new(vectors)
    }
}
