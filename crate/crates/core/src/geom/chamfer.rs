use super::{KdTree, Vec3};
use crate::error::{Error, Result};

/// Mean distance from each point of `from` to its nearest point in `to`.
pub fn directed_mean_distance(from: &[Vec3], to: &KdTree) -> f64 {
    let sum: f64 = from
        .iter()
        .map(|p| to.nearest(p).map_or(f64::INFINITY, |(_, d)| d))
        .sum();
    sum / from.len() as f64
}

/// Symmetric Chamfer distance with plain (non-squared) Euclidean norms:
/// the mean nearest-neighbour distance from `a` to `b` plus the mean from
/// `b` to `a`.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let ta = KdTree::new(a);
    let tb = KdTree::new(b);
    Ok(directed_mean_distance(a, &tb) + directed_mean_distance(b, &ta))
}
