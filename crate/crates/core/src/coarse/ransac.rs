//! Robust rigid estimation from putative correspondences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{estimate_rigid, CorrespondenceSet, RigidTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier residual bound in mm.
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            inlier_threshold: 0.75,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub transform: RigidTransform,
    pub inliers: CorrespondenceSet,
    pub inlier_fraction: f64,
    /// Set when fewer than 5% of the pairs agree with the estimate.
    pub low_confidence: bool,
}

const LOW_CONFIDENCE: f64 = 0.05;
const REFINE_ROUNDS: usize = 10;

fn inlier_mask(
    tr: &RigidTransform,
    src: &[Vec3],
    tgt: &[Vec3],
    pairs: &[(usize, usize)],
    threshold: f64,
) -> Vec<bool> {
    let t2 = threshold * threshold;
    pairs
        .iter()
        .map(|&(u, v)| (tr.apply(&src[u]) - tgt[v]).norm_squared() < t2)
        .collect()
}

fn fit(src: &[Vec3], tgt: &[Vec3], pairs: &[(usize, usize)], mask: &[bool]) -> Option<RigidTransform> {
    let (s, t): (Vec<Vec3>, Vec<Vec3>) = pairs
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&(u, v), _)| (src[u], tgt[v]))
        .unzip();
    estimate_rigid(&s, &t, None).ok()
}

fn edges_consistent(src: &[Vec3], tgt: &[Vec3], pick: &[(usize, usize); 3], threshold: f64) -> bool {
    (0..3).all(|i| {
        let (a, b) = (pick[i], pick[(i + 1) % 3]);
        let ds = (src[a.0] - src[b.0]).norm();
        let dt = (tgt[a.1] - tgt[b.1]).norm();
        (ds - dt).abs() <= threshold || ds.min(dt) >= 0.9 * ds.max(dt)
    })
}

/// Every sampled hypothesis as `(inlier count, iteration, transform)`,
/// best first: most inliers, ties to the lowest iteration. Hypotheses that
/// fail the edge-length check or are degenerate score zero.
pub fn score_hypotheses(
    src: &[Vec3],
    tgt: &[Vec3],
    pairs: &[(usize, usize)],
    cfg: &RansacConfig,
) -> Vec<(usize, usize, RigidTransform)> {
    let n = pairs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hypotheses: Vec<[usize; 3]> = (0..cfg.iterations.max(1))
        .map(|_| {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let mut c = rng.random_range(0..n - 2);
            for m in [a.min(b), a.max(b)] {
                if c >= m {
                    c += 1;
                }
            }
            [a, b, c]
        })
        .collect();
    let t2 = cfg.inlier_threshold * cfg.inlier_threshold;
    let mut scored: Vec<(usize, usize, RigidTransform)> = hypotheses
        .par_iter()
        .enumerate()
        .map(|(it, h)| {
            let pick = [pairs[h[0]], pairs[h[1]], pairs[h[2]]];
            if !edges_consistent(src, tgt, &pick, cfg.inlier_threshold) {
                return (0, it, RigidTransform::identity());
            }
            let s: Vec<Vec3> = pick.iter().map(|p| src[p.0]).collect();
            let t: Vec<Vec3> = pick.iter().map(|p| tgt[p.1]).collect();
            match estimate_rigid(&s, &t, None) {
                Ok(tr) => {
                    let count = pairs
                        .iter()
                        .filter(|&&(u, v)| (tr.apply(&src[u]) - tgt[v]).norm_squared() < t2)
                        .count();
                    (count, it, tr)
                }
                Err(_) => (0, it, RigidTransform::identity()),
            }
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    scored
}

/// Three-pair hypothesis sampling scored by inlier count, followed by
/// closed-form refinement on the consensus set.
pub fn ransac_rigid(
    src: &[Vec3],
    tgt: &[Vec3],
    corr: &CorrespondenceSet,
    cfg: &RansacConfig,
) -> Result<RansacResult> {
    corr.validate(src.len(), tgt.len())?;
    let pairs = corr.pairs();
    if pairs.len() < 3 {
        return Err(Error::RegistrationFailed(format!(
            "{} correspondences, need at least 3",
            pairs.len()
        )));
    }
    if !(cfg.inlier_threshold > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "inlier threshold {} must be positive",
            cfg.inlier_threshold
        )));
    }
    let scored = score_hypotheses(src, tgt, pairs, cfg);
    let best = scored[0];
    if best.0 < 3 {
        return Err(Error::RegistrationFailed(format!(
            "best hypothesis has {} inliers",
            best.0
        )));
    }
    let (transform, inliers) = refine_hypothesis(best.2, src, tgt, corr, cfg.inlier_threshold);
    if inliers.len() < 3 {
        return Err(Error::RegistrationFailed(format!(
            "{} inliers after refinement",
            inliers.len()
        )));
    }
    let inlier_fraction = inliers.len() as f64 / pairs.len() as f64;
    Ok(RansacResult {
        transform,
        inliers,
        inlier_fraction,
        low_confidence: inlier_fraction < LOW_CONFIDENCE,
    })
}

/// Re-estimates a hypothesis on its inliers until the inlier set is stable
/// or stops growing.
pub fn refine_hypothesis(
    start: RigidTransform,
    src: &[Vec3],
    tgt: &[Vec3],
    corr: &CorrespondenceSet,
    threshold: f64,
) -> (RigidTransform, CorrespondenceSet) {
    let pairs = corr.pairs();
    let mut transform = start;
    let mut mask = inlier_mask(&transform, src, tgt, pairs, threshold);
    for _ in 0..REFINE_ROUNDS {
        let Some(refined) = fit(src, tgt, pairs, &mask) else {
            break;
        };
        let next = inlier_mask(&refined, src, tgt, pairs, threshold);
        let count = |m: &[bool]| m.iter().filter(|&&b| b).count();
        if count(&next) < count(&mask) {
            break;
        }
        transform = refined;
        let done = next == mask;
        mask = next;
        if done {
            break;
        }
    }
    (transform, corr.filter(|i, _| mask[i]))
}
