use crate::error::{Error, Result};
use crate::geom::{DisplacementField, KdTree, Landmark, Vec3};

/// Mean over points of `|est[i] - gt[i]|` (mm).
pub fn mde(est: &DisplacementField, gt: &DisplacementField) -> Result<f64> {
    if est.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            expected: gt.len(),
            actual: est.len(),
        });
    }
    if gt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let sum: f64 = est
        .vectors()
        .iter()
        .zip(gt.vectors())
        .map(|(a, b)| (a - b).norm())
        .sum();
    Ok(sum / gt.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkError {
    /// Mean over evaluated landmarks of the distance to the closest target
    /// landmark of the same structure (mm).
    pub mean: f64,
    pub evaluated: usize,
    /// Structures with source landmarks but no target landmark.
    pub skipped_structures: Vec<usize>,
}

/// For every source landmark, the distance to the nearest target landmark
/// of the same structure, averaged. Structures absent from the target are
/// skipped and listed.
pub fn landmark_error(deformed: &[Landmark], target: &[Landmark]) -> Result<LandmarkError> {
    let mut sum = 0.0;
    let mut evaluated = 0;
    let mut skipped = Vec::new();
    for l in deformed {
        let best = target
            .iter()
            .filter(|t| t.structure == l.structure)
            .map(|t| (t.position - l.position).norm())
            .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))));
        match best {
            Some(d) => {
                sum += d;
                evaluated += 1;
            }
            None => {
                if !skipped.contains(&l.structure) {
                    skipped.push(l.structure);
                }
            }
        }
    }
    if evaluated == 0 {
        return Err(Error::EmptyLandmarks);
    }
    skipped.sort_unstable();
    Ok(LandmarkError {
        mean: sum / evaluated as f64,
        evaluated,
        skipped_structures: skipped,
    })
}

/// Field value at each query by inverse-distance weighting over the `k`
/// nearest `points`; a query on a point takes that point's vector.
pub fn interpolate_field(points: &[Vec3], field: &DisplacementField, queries: &[Vec3], k: usize) -> Result<Vec<Vec3>> {
    if points.len() != field.len() {
        return Err(Error::ShapeMismatch {
            expected: points.len(),
            actual: field.len(),
        });
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = KdTree::new(points);
    Ok(queries
        .iter()
        .map(|q| {
            let nn = tree.knn_sq(q, k.max(1));
            if let Some(&(i, _)) = nn.iter().find(|(_, d2)| *d2 == 0.0) {
                return field.vectors()[i];
            }
            let mut acc = Vec3::zeros();
            let mut wsum = 0.0;
            for (i, d2) in nn {
                let w = 1.0 / d2.sqrt();
                acc += field.vectors()[i] * w;
                wsum += w;
            }
            acc / wsum
        })
        .collect())
}

/// Moves landmarks by the field interpolated at their positions.
pub fn deform_landmarks(points: &[Vec3], field: &DisplacementField, landmarks: &[Landmark]) -> Result<Vec<Landmark>> {
    let pos: Vec<Vec3> = landmarks.iter().map(|l| l.position).collect();
    let moved = interpolate_field(points, field, &pos, 4)?;
    Ok(landmarks
        .iter()
        .zip(moved)
        .map(|(l, v)| Landmark {
            structure: l.structure,
            position: l.position + v,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(v: Vec<Vec3>) -> DisplacementField {
        DisplacementField::new(v).unwrap()
    }

    #[test]
    fn mde_cases() {
        let gt = field(vec![Vec3::new(1.0, 2.0, 3.0); 5]);
        assert_eq!(mde(&gt, &gt).unwrap(), 0.0);
        let off = field(gt.vectors().iter().map(|v| v + Vec3::x()).collect());
        assert!((mde(&off, &gt).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(mde(&field(vec![Vec3::zeros(); 4]), &gt), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn landmark_cases() {
        let a = [Landmark { structure: 1, position: Vec3::zeros() }];
        let b = [Landmark { structure: 1, position: Vec3::new(0.0, 2.0, 0.0) }];
        assert_eq!(landmark_error(&a, &a).unwrap().mean, 0.0);
        assert!((landmark_error(&a, &b).unwrap().mean - 2.0).abs() < 1e-15);
        let other = [Landmark { structure: 2, position: Vec3::zeros() }];
        assert!(matches!(landmark_error(&a, &other), Err(Error::EmptyLandmarks)));
        let mixed = [a[0], Landmark { structure: 3, position: Vec3::zeros() }];
        let r = landmark_error(&mixed, &b).unwrap();
        assert_eq!((r.evaluated, r.skipped_structures), (1, vec![3]));
    }

    #[test]
    fn interpolation_reproduces_constant_and_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec3> = (0..50).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let c = field(vec![Vec3::new(0.5, -1.0, 2.0); 50]);
        let q = [Vec3::new(0.3, 0.3, 0.3), pts[7]];
        let out = interpolate_field(&pts, &c, &q, 4).unwrap();
        assert!((out[0] - c.vectors()[0]).norm() < 1e-12);
        let varied = field(pts.iter().map(|p| p * 2.0).collect());
        let out = interpolate_field(&pts, &varied, &q[1..], 4).unwrap();
        assert_eq!(out[0], varied.vectors()[7]);
    }
}
