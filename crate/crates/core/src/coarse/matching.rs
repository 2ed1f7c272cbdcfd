//! Mutual nearest-descriptor matching with cross-scale voting.

use rayon::prelude::*;

use super::descriptors::{DescriptorSet, Feature};
use crate::error::{Error, Result};
use crate::geom::CorrespondenceSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    /// Minimum number of scales on which a pair must be mutual nearest.
    /// `None` means a strict majority.
    pub min_votes: Option<usize>,
    /// Keep at most this many pairs, best score first.
    pub max_pairs: usize,
    /// A scale votes for a pair when it has a mutual pair whose endpoints
    /// both lie within this distance (mm) of the pair's endpoints. Zero
    /// requires the identical pair.
    pub vote_radius: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            min_votes: None,
            max_pairs: 512,
            vote_radius: 0.75,
        }
    }
}

fn sq_dist(a: &Feature, b: &Feature) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest descriptor per row. Exact ties go to the candidate at the most
/// similar relative position in its set, then to the lower index.
fn nearest_each(from: &[Feature], to: &[Feature]) -> Vec<usize> {
    let ratio = to.len() as f64 / from.len().max(1) as f64;
    from.par_iter()
        .enumerate()
        .map(|(i, f)| {
            let expected = i as f64 * ratio;
            let mut best = (0usize, f64::INFINITY);
            for (j, g) in to.iter().enumerate() {
                let d = sq_dist(f, g);
                if d < best.1
                    || (d == best.1 && (j as f64 - expected).abs() < (best.0 as f64 - expected).abs())
                {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect()
}

/// Per scale, for each source keypoint, its mutual nearest target keypoint.
pub fn mutual_matches(src: &[Feature], tgt: &[Feature]) -> Vec<Option<usize>> {
    if tgt.is_empty() {
        return vec![None; src.len()];
    }
    let st = nearest_each(src, tgt);
    let ts = nearest_each(tgt, src);
    st.iter()
        .enumerate()
        .map(|(a, &b)| (ts[b] == a).then_some(b))
        .collect()
}

/// Keypoint pairs that are mutual nearest neighbours on enough scales,
/// expressed in full-cloud indices, with score = fraction of voting scales.
pub fn match_correspondences(src: &DescriptorSet, tgt: &DescriptorSet) -> Result<CorrespondenceSet> {
    match_with(src, tgt, &MatchConfig::default())
}

pub fn match_with(
    src: &DescriptorSet,
    tgt: &DescriptorSet,
    cfg: &MatchConfig,
) -> Result<CorrespondenceSet> {
    if src.radii() != tgt.radii() {
        return Err(Error::Precondition(format!(
            "descriptor radii differ: {:?} vs {:?}",
            src.radii(),
            tgt.radii()
        )));
    }
    let scales = src.scales();
    let need = cfg.min_votes.unwrap_or(scales / 2 + 1).clamp(1, scales);
    let per_scale: Vec<Vec<Option<usize>>> = (0..scales)
        .map(|s| mutual_matches(src.features(s), tgt.features(s)))
        .collect();

    let (ps, pt) = (src.positions(), tgt.positions());
    let r2 = cfg.vote_radius * cfg.vote_radius;
    let mutual: Vec<Vec<(usize, usize)>> = per_scale
        .iter()
        .map(|m| m.iter().enumerate().filter_map(|(a, b)| b.map(|b| (a, b))).collect())
        .collect();
    let close = |x: &(usize, usize), y: &(usize, usize)| {
        if r2 == 0.0 {
            x == y
        } else {
            (ps[x.0] - ps[y.0]).norm_squared() <= r2 && (pt[x.1] - pt[y.1]).norm_squared() <= r2
        }
    };
    // (source keypoint, target keypoint, votes), candidates from every scale
    let mut accepted: Vec<(usize, usize, usize)> = mutual
        .iter()
        .flatten()
        .map(|pair| {
            let votes = mutual
                .iter()
                .filter(|other| other.iter().any(|o| close(pair, o)))
                .count();
            (pair.0, pair.1, votes)
        })
        .filter(|e| e.2 >= need)
        .collect();
    accepted.sort_unstable();
    accepted.dedup();
    if accepted.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    // Each source keypoint keeps its best-voted partner.
    accepted.sort_by(|x, y| y.2.cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let mut seen = std::collections::HashSet::new();
    accepted.retain(|e| seen.insert(e.0));
    // A target keypoint can collect votes from two source keypoints on
    // different scales; the better-voted claim wins.
    accepted.sort_by(|x, y| y.2.cmp(&x.2).then(x.0.cmp(&y.0)));
    let mut taken = std::collections::HashSet::new();
    accepted.retain(|e| taken.insert(e.1));
    accepted.truncate(cfg.max_pairs);
    accepted.sort_by_key(|e| e.0);
    let (pairs, scores) = accepted
        .iter()
        .map(|&(a, b, votes)| {
            (
                (src.keypoints()[a], tgt.keypoints()[b]),
                votes as f64 / scales as f64,
            )
        })
        .unzip();
    CorrespondenceSet::new(pairs, scores)
}

#[cfg(test)]
mod tests {
    use super::super::descriptors::{compute_descriptors, compute_point_descriptors};
    use super::*;
    use crate::geom::{RigidTransform, Vec3};
    use crate::synth::{build_template, TemplateConfig};

    const RADII: [f64; 3] = [0.75, 1.5, 3.0];

    #[test]
    fn identical_clouds_match_themselves() {
        let t = build_template(&TemplateConfig::default(), 3).unwrap();
        let d = compute_descriptors(&t, &RADII, 0.3).unwrap();
        let c = match_with(&d, &d, &MatchConfig { max_pairs: usize::MAX, ..MatchConfig::default() }).unwrap();
        assert_eq!(c.len(), d.keypoints().len());
        for (&(u, v), &s) in c.pairs().iter().zip(c.scores()) {
            assert_eq!(u, v);
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn rigid_copy_matches_mostly_correct() {
        let t = build_template(&TemplateConfig::default(), 3).unwrap();
        let tr = RigidTransform::from_axis_angle(&Vec3::new(0.3, 1.0, -0.2), 1.1, Vec3::new(2.0, -4.0, 1.0));
        let moved: Vec<Vec3> = t.points().iter().map(|p| tr.apply(p)).collect();
        let a = compute_descriptors(&t, &RADII, 0.3).unwrap();
        let b = compute_point_descriptors(&moved, &RADII, 0.3).unwrap();
        let c = match_correspondences(&a, &b).unwrap();
        let correct = c.pairs().iter().filter(|(u, v)| u == v).count();
        assert!(correct as f64 >= 0.9 * c.len() as f64, "{correct}/{}", c.len());
    }

    #[test]
    fn mismatched_radii_rejected() {
        let t = build_template(&TemplateConfig::default(), 3).unwrap();
        let a = compute_descriptors(&t, &RADII, 0.3).unwrap();
        let b = compute_descriptors(&t, &[0.75, 1.5, 2.5], 0.3).unwrap();
        assert!(matches!(match_correspondences(&a, &b), Err(Error::Precondition(_))));
    }
}
