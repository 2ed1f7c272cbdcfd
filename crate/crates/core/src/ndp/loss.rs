use crate::error::{Error, Result};
use crate::geom::{CorrespondenceSet, KdTree, Vec3};

/// Distinct source indices of `sigma`, ascending.
pub fn masked_indices(sigma: &CorrespondenceSet) -> Vec<usize> {
    let mut idx = sigma.source_indices();
    idx.sort_unstable();
    idx.dedup();
    idx
}

/// Symmetric mean nearest-neighbour distance between `points` and `target`,
/// with the gradient with respect to `points`. Assignments are held fixed.
pub fn chamfer_with_gradient(points: &[Vec3], target: &[Vec3], target_tree: &KdTree) -> (f64, Vec<Vec3>) {
    let mut grad = vec![Vec3::zeros(); points.len()];
    if points.is_empty() || target.is_empty() {
        return (0.0, grad);
    }
    let ns = points.len() as f64;
    let nt = target.len() as f64;
    let mut forward = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (j, d) = target_tree.nearest(p).expect("non-empty target");
        forward += d;
        if d > 0.0 {
            grad[i] += (p - target[j]) / (d * ns);
        }
    }
    let src_tree = KdTree::new(points);
    let mut backward = 0.0;
    for y in target {
        let (i, d) = src_tree.nearest(y).expect("non-empty source");
        backward += d;
        if d > 0.0 {
            grad[i] += (points[i] - y) / (d * nt);
        }
    }
    (forward / ns + backward / nt, grad)
}

/// Chamfer distance between the `sigma`-masked subset of the deformed source
/// and the whole target. The gradient has one entry per source point and is
/// zero outside the mask.
pub fn correspondence_loss(
    deformed_source: &[Vec3],
    sigma: &CorrespondenceSet,
    target: &[Vec3],
) -> Result<(f64, Vec<Vec3>)> {
    if sigma.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    if target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mask = masked_indices(sigma);
    if let Some(&bad) = mask.iter().find(|&&i| i >= deformed_source.len()) {
        return Err(Error::InvalidCloud(format!(
            "masked index {bad} outside source of {} points",
            deformed_source.len()
        )));
    }
    let subset: Vec<Vec3> = mask.iter().map(|&i| deformed_source[i]).collect();
    let tree = KdTree::new(target);
    let (loss, g) = chamfer_with_gradient(&subset, target, &tree);
    let mut grad = vec![Vec3::zeros(); deformed_source.len()];
    for (&i, gi) in mask.iter().zip(g) {
        grad[i] = gi;
    }
    Ok((loss, grad))
}

/// Undirected k-nearest-neighbour edges `(i, j)` with `i < j`, sorted.
pub fn knn_graph(points: &[Vec3], k: usize) -> Vec<(usize, usize)> {
    let tree = KdTree::new(points);
    let mut edges: Vec<(usize, usize)> = points
        .iter()
        .enumerate()
        .flat_map(|(i, p)| {
            tree.knn_sq(p, k + 1)
                .into_iter()
                .filter(move |&(j, _)| j != i)
                .take(k)
                .map(move |(j, _)| (i.min(j), i.max(j)))
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Motion coherence: mean over edges of the squared difference of the
/// displacements at the two endpoints, with its gradient.
pub fn regularization_loss(field: &[Vec3], edges: &[(usize, usize)]) -> (f64, Vec<Vec3>) {
    let mut grad = vec![Vec3::zeros(); field.len()];
    if edges.is_empty() {
        return (0.0, grad);
    }
    let inv = 1.0 / edges.len() as f64;
    let mut loss = 0.0;
    for &(i, j) in edges {
        let d = field[i] - field[j];
        loss += d.norm_squared();
        grad[i] += d * (2.0 * inv);
        grad[j] -= d * (2.0 * inv);
    }
    (loss * inv, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::chamfer_distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
            .collect()
    }

    #[test]
    fn singleton() {
        let sigma = CorrespondenceSet::new(vec![(0, 0)], vec![1.0]).unwrap();
        let (l, g) = correspondence_loss(&[Vec3::zeros()], &sigma, &[Vec3::x()]).unwrap();
        assert_eq!(l, 2.0);
        assert_eq!(g[0], Vec3::new(-2.0, 0.0, 0.0));
    }

    #[test]
    fn coincident_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = cloud(50, &mut rng);
        let (l, g) = correspondence_loss(&pts, &CorrespondenceSet::identity(50), &pts).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn matches_chamfer_of_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = cloud(80, &mut rng);
        let tgt = cloud(60, &mut rng);
        let pairs: Vec<(usize, usize)> = (0..80).step_by(3).map(|i| (i, i % 60)).collect();
        let n = pairs.len();
        let sigma = CorrespondenceSet::new(pairs, vec![0.5; n]).unwrap();
        let (l, _) = correspondence_loss(&src, &sigma, &tgt).unwrap();
        let subset: Vec<Vec3> = masked_indices(&sigma).iter().map(|&i| src[i]).collect();
        assert!((l - chamfer_distance(&subset, &tgt).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn empty_sigma() {
        let sigma = CorrespondenceSet::new(vec![], vec![]).unwrap();
        assert!(matches!(
            correspondence_loss(&[Vec3::zeros()], &sigma, &[Vec3::x()]),
            Err(Error::NoCorrespondences)
        ));
    }

    #[test]
    fn regularizer_cases() {
        let edges = vec![(0, 1)];
        let (l, _) = regularization_loss(&[Vec3::zeros(), Vec3::x()], &edges);
        assert_eq!(l, 1.0);
        let constant = vec![Vec3::new(0.3, -1.0, 2.0); 20];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = knn_graph(&cloud(20, &mut rng), 4);
        assert_eq!(regularization_loss(&constant, &g).0, 0.0);
    }

    #[test]
    fn regularizer_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = cloud(100, &mut rng);
        let field = cloud(100, &mut rng);
        let edges = knn_graph(&pts, 8);
        let direct: f64 = edges.iter().map(|&(i, j)| (field[i] - field[j]).norm_squared()).sum::<f64>()
            / edges.len() as f64;
        assert!((regularization_loss(&field, &edges).0 - direct).abs() < 1e-12);
        assert!(edges.iter().all(|&(i, j)| i < j));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = cloud(20, &mut rng);
        let tgt = cloud(25, &mut rng);
        let field = cloud(20, &mut rng);
        let edges = knn_graph(&src, 4);
        let sigma = CorrespondenceSet::identity(20);
        let lambda = 0.1;
        let total = |f: &[Vec3]| {
            let moved: Vec<Vec3> = src.iter().zip(f).map(|(p, d)| p + d).collect();
            correspondence_loss(&moved, &sigma, &tgt).unwrap().0 + lambda * regularization_loss(f, &edges).0
        };
        let moved: Vec<Vec3> = src.iter().zip(&field).map(|(p, d)| p + d).collect();
        let (_, gc) = correspondence_loss(&moved, &sigma, &tgt).unwrap();
        let (_, gr) = regularization_loss(&field, &edges);
        let h = 1e-6;
        for i in 0..20 {
            for c in 0..3 {
                let mut fp = field.clone();
                fp[i][c] += h;
                let mut fm = field.clone();
                fm[i][c] -= h;
                let fd = (total(&fp) - total(&fm)) / (2.0 * h);
                let an = gc[i][c] + lambda * gr[i][c];
                assert!((fd - an).abs() <= 1e-3 * an.abs().max(1e-3), "{i},{c}: {fd} vs {an}");
            }
        }
    }
}
