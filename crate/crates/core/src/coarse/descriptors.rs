//! Rotation-invariant multi-scale point descriptors.
//!
//! Each keypoint gets one 33-bin fast point feature histogram per radius:
//! three 11-bin histograms of the Darboux-frame pair angles between a point
//! and its neighbours, reweighted over the neighbourhood and L1-normalised.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{centroid, KdTree, LabeledCloud, Vec3};

pub const BINS: usize = 11;
pub const DIM: usize = 3 * BINS;

pub type Feature = [f64; DIM];

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    radii: Vec<f64>,
    keypoints: Vec<usize>,
    positions: Vec<Vec3>,
    /// `features[scale][k]` belongs to `keypoints[k]`.
    features: Vec<Vec<Feature>>,
}

impl DescriptorSet {
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Indices of the keypoints in the full cloud.
    pub fn keypoints(&self) -> &[usize] {
        &self.keypoints
    }

    /// Coordinates of the keypoints.
    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn features(&self, scale: usize) -> &[Feature] {
        &self.features[scale]
    }

    pub fn scales(&self) -> usize {
        self.radii.len()
    }
}

/// `ceil(n * fraction)` indices spread evenly over `0..n`.
pub fn uniform_keypoints(n: usize, fraction: f64) -> Vec<usize> {
    let m = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
    (0..m).map(|j| j * n / m).collect()
}

/// Unit normals from a local plane fit over the neighbours within `radius`
/// (eight nearest neighbours when the ball holds fewer than three points),
/// oriented away from the cloud centroid.
pub fn estimate_normals(points: &[Vec3], tree: &KdTree, radius: f64) -> Vec<Vec3> {
    let c = centroid(points);
    let scale = points.iter().map(|p| (p - c).norm()).fold(0.0, f64::max).max(1e-12);
    points
        .par_iter()
        .map(|p| {
            let mut nb = tree.within_radius(p, radius);
            if nb.len() < 3 {
                nb = tree.knn_sq(p, 8).into_iter().map(|e| e.0).collect();
            }
            let nbp: Vec<Vec3> = nb.iter().map(|&i| points[i]).collect();
            let mut n = plane_normal(&nbp);
            let s = n.dot(&(p - c));
            if s < -1e-9 * scale || (s.abs() <= 1e-9 * scale && canonical_negative(&n)) {
                n = -n;
            }
            n
        })
        .collect()
}

fn canonical_negative(n: &Vec3) -> bool {
    n.iter().find(|c| c.abs() > 1e-12).is_some_and(|c| *c < 0.0)
}

fn plane_normal(points: &[Vec3]) -> Vec3 {
    if points.len() < 3 {
        return Vec3::z();
    }
    let c = centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    eig.eigenvectors.column(k).normalize()
}

/// Darboux-frame pair features `(theta, alpha, phi)`: the angle between the
/// normals about the frame, and two cosines. The source of the frame is the
/// endpoint whose normal makes the smaller angle with the connecting line.
fn pair_features(p1: &Vec3, n1: &Vec3, p2: &Vec3, n2: &Vec3) -> Option<(f64, f64, f64)> {
    let mut d = p2 - p1;
    let len = d.norm();
    if len == 0.0 {
        return None;
    }
    let a1 = n1.dot(&d) / len;
    let a2 = n2.dot(&d) / len;
    let (u, n_other, phi) = if a1.abs().acos() > a2.abs().acos() {
        d = -d;
        (n2, n1, -a2)
    } else {
        (n1, n2, a1)
    };
    let v = d.cross(u);
    let vn = v.norm();
    if vn == 0.0 {
        return None;
    }
    let v = v / vn;
    let w = u.cross(&v);
    let alpha = v.dot(n_other);
    let theta = w.dot(n_other).atan2(u.dot(n_other));
    Some((theta, alpha, phi))
}

fn bin(x: f64, lo: f64, hi: f64) -> usize {
    let b = ((x - lo) / (hi - lo) * BINS as f64).floor();
    (b.max(0.0) as usize).min(BINS - 1)
}

fn spfh(i: usize, neighbors: &[usize], points: &[Vec3], normals: &[Vec3]) -> Feature {
    let mut h = [0.0; DIM];
    let mut count = 0usize;
    for &j in neighbors {
        if j == i {
            continue;
        }
        if let Some((theta, alpha, phi)) =
            pair_features(&points[i], &normals[i], &points[j], &normals[j])
        {
            h[bin(theta, -PI, PI)] += 1.0;
            h[BINS + bin(alpha, -1.0, 1.0)] += 1.0;
            h[2 * BINS + bin(phi, -1.0, 1.0)] += 1.0;
            count += 1;
        }
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        h.iter_mut().for_each(|x| *x *= inv);
    }
    h
}

fn l1_normalize(mut f: Feature) -> Feature {
    let s: f64 = f.iter().sum();
    if s > 0.0 {
        f.iter_mut().for_each(|x| *x /= s);
    } else {
        f = [1.0 / DIM as f64; DIM];
    }
    f
}

/// Computes descriptors at each radius for an evenly subsampled keypoint set.
pub fn compute_descriptors(
    cloud: &LabeledCloud,
    radii: &[f64],
    keypoint_fraction: f64,
) -> Result<DescriptorSet> {
    compute_point_descriptors(cloud.points(), radii, keypoint_fraction)
}

pub fn compute_point_descriptors(
    points: &[Vec3],
    radii: &[f64],
    keypoint_fraction: f64,
) -> Result<DescriptorSet> {
    if points.len() < 30 {
        return Err(Error::Precondition(format!(
            "descriptors need at least 30 points, got {}",
            points.len()
        )));
    }
    if radii.is_empty()
        || radii.iter().any(|r| !(*r > 0.0 && r.is_finite()))
        || radii.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::Precondition(format!(
            "radii {radii:?} must be positive and strictly ascending"
        )));
    }
    if !(keypoint_fraction > 0.0 && keypoint_fraction <= 1.0) {
        return Err(Error::Precondition(format!(
            "keypoint fraction {keypoint_fraction} outside (0, 1]"
        )));
    }
    let tree = KdTree::new(points);
    let keypoints = uniform_keypoints(points.len(), keypoint_fraction);

    let sparse = keypoints
        .par_iter()
        .filter(|&&k| tree.within_radius(&points[k], radii[0]).len() < 6)
        .count();
    if 2 * sparse > keypoints.len() {
        return Err(Error::InsufficientDensity(format!(
            "{sparse} of {} keypoints have fewer than 5 neighbours within {} mm",
            keypoints.len(),
            radii[0]
        )));
    }

    let normals = estimate_normals(points, &tree, radii[0]);
    let features = radii
        .iter()
        .map(|&r| {
            let neighborhoods: Vec<Vec<usize>> = points
                .par_iter()
                .map(|p| tree.within_radius(p, r))
                .collect();
            let spfhs: Vec<Feature> = (0..points.len())
                .into_par_iter()
                .map(|i| spfh(i, &neighborhoods[i], points, &normals))
                .collect();
            keypoints
                .par_iter()
                .map(|&k| {
                    let mut f = spfhs[k];
                    let others: Vec<usize> =
                        neighborhoods[k].iter().copied().filter(|&j| j != k).collect();
                    if !others.is_empty() {
                        let inv_k = 1.0 / others.len() as f64;
                        for &j in &others {
                            let w = inv_k / (points[k] - points[j]).norm();
                            for (a, b) in f.iter_mut().zip(&spfhs[j]) {
                                *a += w * b;
                            }
                        }
                    }
                    l1_normalize(f)
                })
                .collect()
        })
        .collect();
    Ok(DescriptorSet {
        radii: radii.to_vec(),
        positions: keypoints.iter().map(|&k| points[k]).collect(),
        keypoints,
        features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::RigidTransform;
    use crate::synth::{build_template, TemplateConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const RADII: [f64; 3] = [0.75, 1.5, 3.0];

    #[test]
    fn features_sum_to_one() {
        let t = build_template(&TemplateConfig::default(), 7).unwrap();
        let d = compute_descriptors(&t, &RADII, 0.3).unwrap();
        assert_eq!(d.keypoints().len(), (t.len() as f64 * 0.3).ceil() as usize);
        for s in 0..3 {
            for f in d.features(s) {
                assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invariant_under_rigid_motion() {
        let t = build_template(&TemplateConfig::default(), 7).unwrap();
        let tr = RigidTransform::from_axis_angle(&Vec3::new(1.0, -2.0, 0.5), 0.9, Vec3::new(5.0, 1.0, -3.0));
        let moved: Vec<Vec3> = t.points().iter().map(|p| tr.apply(p)).collect();
        let a = compute_descriptors(&t, &RADII, 0.3).unwrap();
        let b = compute_point_descriptors(&moved, &RADII, 0.3).unwrap();
        for s in 0..3 {
            for (fa, fb) in a.features(s).iter().zip(b.features(s)) {
                let diff = fa.iter().zip(fb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(diff < 1e-6, "scale {s}: {diff}");
            }
        }
    }

    #[test]
    fn plane_descriptors_are_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec3> = (0..1500)
            .map(|_| Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0))
            .collect();
        let d = compute_point_descriptors(&pts, &RADII, 0.3).unwrap();
        for s in 0..3 {
            let first = d.features(s)[0];
            for f in d.features(s) {
                let diff = f.iter().zip(&first).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(diff < 1e-9);
            }
        }
    }

    #[test]
    fn sparse_cloud_is_rejected() {
        let pts: Vec<Vec3> = (0..40).map(|i| Vec3::new(i as f64 * 10.0, 0.0, 0.0)).collect();
        assert!(matches!(
            compute_point_descriptors(&pts, &RADII, 0.5),
            Err(Error::InsufficientDensity(_))
        ));
        assert!(compute_point_descriptors(&pts[..10], &RADII, 0.5).is_err());
        assert!(compute_point_descriptors(&pts, &[1.0, 0.5], 0.5).is_err());
    }
}
