//! Stage one: rigid alignment `tau` and a sparse correspondence set `sigma`
//! from multi-scale descriptors, voted matching and RANSAC.

pub mod descriptors;
pub mod matching;
pub mod ransac;

pub use descriptors::{compute_descriptors, compute_point_descriptors, DescriptorSet};
pub use matching::{match_correspondences, match_with, MatchConfig};
pub use ransac::{ransac_rigid, refine_hypothesis, score_hypotheses, RansacConfig, RansacResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{chamfer_distance, estimate_rigid, CorrespondenceSet, KdTree, LabeledCloud, RigidTransform, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoarseConfig {
    pub radii: Vec<f64>,
    pub keypoint_fraction: f64,
    pub max_pairs: usize,
    pub ransac_iterations: usize,
    pub inlier_threshold: f64,
    /// Hypotheses (by inlier count) re-ranked by their overlap with the
    /// whole target.
    pub verify_candidates: usize,
    /// Best re-ranked hypotheses that are fully refined before choosing.
    pub refine_candidates: usize,
    /// When the chosen alignment explains less than this fraction of the
    /// target, the search is repeated with single-scale matches as well.
    pub fallback_fitness: f64,
    /// Trimmed closest-point refinement after RANSAC; 0 disables it.
    pub refine_iterations: usize,
    /// Final trimming distance of the refinement in mm.
    pub refine_threshold: f64,
    /// Residual bound (mm) after alignment for a voted match to enter
    /// `sigma`, and for an aligned source point to count as overlapping.
    pub sigma_threshold: f64,
    /// Fill `sigma` up to `max_pairs` with evenly spaced overlapping source
    /// points paired with their nearest target point.
    pub densify: bool,
    pub seed: u64,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            radii: vec![0.75, 1.5, 3.0],
            keypoint_fraction: 0.3,
            max_pairs: 512,
            ransac_iterations: 10_000,
            inlier_threshold: 0.75,
            verify_candidates: 200,
            refine_candidates: 5,
            fallback_fitness: 0.9,
            refine_iterations: 30,
            refine_threshold: 0.3,
            sigma_threshold: 1.0,
            densify: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseResult {
    pub transform: RigidTransform,
    pub correspondences: CorrespondenceSet,
    pub voted_matches: usize,
    pub ransac_inliers: usize,
    pub low_confidence: bool,
    /// Fraction of target points within the inlier threshold after alignment.
    pub fitness: f64,
    /// Chamfer distance between the aligned source and the target, mm.
    pub initial_chamfer: f64,
}

fn check_size(cloud: &LabeledCloud, what: &str) -> Result<()> {
    if cloud.len() < 30 {
        return Err(Error::Precondition(format!(
            "{what} cloud has {} points, need at least 30",
            cloud.len()
        )));
    }
    Ok(())
}

/// Voted descriptor matches between two clouds in full-cloud indices.
pub fn descriptor_matches(
    source: &LabeledCloud,
    target: &LabeledCloud,
    cfg: &CoarseConfig,
) -> Result<CorrespondenceSet> {
    let (ds, dt) = descriptor_pair(source, target, cfg)?;
    match_votes(&ds, &dt, cfg, None)
}

fn descriptor_pair(
    source: &LabeledCloud,
    target: &LabeledCloud,
    cfg: &CoarseConfig,
) -> Result<(DescriptorSet, DescriptorSet)> {
    check_size(source, "source")?;
    check_size(target, "target")?;
    Ok((
        compute_descriptors(source, &cfg.radii, cfg.keypoint_fraction)?,
        compute_descriptors(target, &cfg.radii, cfg.keypoint_fraction)?,
    ))
}

fn match_votes(
    ds: &DescriptorSet,
    dt: &DescriptorSet,
    cfg: &CoarseConfig,
    min_votes: Option<usize>,
) -> Result<CorrespondenceSet> {
    match_with(
        ds,
        dt,
        &MatchConfig {
            min_votes,
            max_pairs: cfg.max_pairs,
            ..MatchConfig::default()
        },
    )
}

/// Trimmed closest-point refinement: every target point is paired with its
/// nearest aligned source point, pairs beyond a shrinking bound are dropped.
pub fn refine_rigid(
    source: &[Vec3],
    target: &[Vec3],
    init: RigidTransform,
    iterations: usize,
    start_threshold: f64,
    end_threshold: f64,
) -> RigidTransform {
    let tree = KdTree::new(source);
    let mut tr = init;
    for it in 0..iterations {
        let f = if iterations > 1 { it as f64 / (iterations - 1) as f64 } else { 1.0 };
        let thr = start_threshold * (end_threshold / start_threshold).powf(f);
        let inv = tr.inverse();
        let (s, t): (Vec<Vec3>, Vec<Vec3>) = target
            .iter()
            .filter_map(|y| {
                let (i, d) = tree.nearest(&inv.apply(y))?;
                (d < thr).then(|| (source[i], *y))
            })
            .unzip();
        let Ok(next) = estimate_rigid(&s, &t, None) else {
            break;
        };
        let delta = next.compose(&tr.inverse());
        tr = next;
        if delta.angle() < 1e-10 && delta.translation().norm() < 1e-10 && f > 0.99 {
            break;
        }
    }
    tr
}

/// Fraction of `target` points within `threshold` of the source under `tr`.
fn overlap(source_tree: &KdTree, tr: &RigidTransform, target: &[Vec3], threshold: f64) -> f64 {
    let inv = tr.inverse();
    let hits = target
        .iter()
        .filter(|y| source_tree.nearest(&inv.apply(y)).is_some_and(|(_, d)| d < threshold))
        .count();
    hits as f64 / target.len().max(1) as f64
}

/// Adds evenly spaced aligned source points that lie within `threshold` of
/// the target, paired with their nearest target point and scored by
/// `1 - distance / threshold`, until `sigma` holds `cap` pairs.
pub fn densify(
    sigma: &CorrespondenceSet,
    aligned: &[Vec3],
    target: &[Vec3],
    threshold: f64,
    cap: usize,
) -> Result<CorrespondenceSet> {
    let room = cap.saturating_sub(sigma.len());
    if room == 0 || aligned.is_empty() {
        return Ok(sigma.clone());
    }
    let tree = KdTree::new(target);
    let used: std::collections::HashSet<usize> = sigma.source_indices().into_iter().collect();
    let overlap: Vec<(usize, usize, f64)> = (0..aligned.len())
        .filter(|i| !used.contains(i))
        .filter_map(|i| {
            let (j, d) = tree.nearest(&aligned[i])?;
            (d <= threshold).then(|| (i, j, (1.0 - d / threshold).clamp(0.0, 1.0)))
        })
        .collect();
    let picks: Vec<usize> = if overlap.len() <= room {
        (0..overlap.len()).collect()
    } else {
        descriptors::uniform_keypoints(overlap.len(), room as f64 / overlap.len() as f64)
            .into_iter()
            .take(room)
            .collect()
    };
    let mut entries: Vec<((usize, usize), f64)> =
        sigma.pairs().iter().copied().zip(sigma.scores().iter().copied()).collect();
    entries.extend(picks.iter().map(|&k| ((overlap[k].0, overlap[k].1), overlap[k].2)));
    entries.sort_by_key(|e| e.0);
    let (pairs, scores) = entries.into_iter().unzip();
    CorrespondenceSet::new(pairs, scores)
}

/// RANSAC hypotheses re-ranked by overlap with the whole target; the best
/// few are refined and the best fit is returned as
/// `(fitness, transform, inliers among matches)`.
fn best_alignment(
    src: &[Vec3],
    tgt: &[Vec3],
    matches: &CorrespondenceSet,
    source_tree: &KdTree,
    cfg: &CoarseConfig,
) -> Option<(f64, RigidTransform, CorrespondenceSet)> {
    if matches.len() < 3 {
        return None;
    }
    let rcfg = RansacConfig {
        iterations: cfg.ransac_iterations,
        inlier_threshold: cfg.inlier_threshold,
        seed: cfg.seed,
    };
    let scored = score_hypotheses(src, tgt, matches.pairs(), &rcfg);
    let probe: Vec<Vec3> = descriptors::uniform_keypoints(tgt.len(), (256.0 / tgt.len() as f64).min(1.0))
        .into_iter()
        .map(|i| tgt[i])
        .collect();
    let mut ranked: Vec<(f64, usize, RigidTransform)> = scored
        .iter()
        .take_while(|h| h.0 >= 3)
        .take(cfg.verify_candidates.max(1))
        .enumerate()
        .map(|(rank, h)| (overlap(source_tree, &h.2, &probe, cfg.inlier_threshold), rank, h.2))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut best: Option<(f64, RigidTransform, CorrespondenceSet)> = None;
    for (_, _, hypothesis) in ranked.iter().take(cfg.refine_candidates.max(1)) {
        let (tr, inliers) = refine_hypothesis(*hypothesis, src, tgt, matches, cfg.inlier_threshold);
        let tr = refine_rigid(src, tgt, tr, cfg.refine_iterations, cfg.inlier_threshold, cfg.refine_threshold);
        let fit = overlap(source_tree, &tr, tgt, cfg.inlier_threshold);
        if best.as_ref().is_none_or(|b| fit > b.0) {
            best = Some((fit, tr, inliers));
        }
    }
    best
}

/// Rigid alignment of `source` onto `target` and the correspondences that
/// agree with it.
pub fn coarse_register(
    source: &LabeledCloud,
    target: &LabeledCloud,
    cfg: &CoarseConfig,
) -> Result<CoarseResult> {
    if !(cfg.sigma_threshold > 0.0 && cfg.refine_threshold > 0.0) {
        return Err(Error::InvalidConfig("coarse thresholds must be positive".into()));
    }
    let (ds, dt) = descriptor_pair(source, target, cfg)?;
    let mut matches = match_votes(&ds, &dt, cfg, None)?;
    let (src, tgt) = (source.points(), target.points());
    let source_tree = KdTree::new(src);
    let mut best = best_alignment(src, tgt, &matches, &source_tree, cfg);
    if best.as_ref().is_none_or(|b| b.0 < cfg.fallback_fitness) {
        if let Ok(loose) = match_votes(&ds, &dt, cfg, Some(1)) {
            if let Some(alt) = best_alignment(src, tgt, &loose, &source_tree, cfg) {
                if best.as_ref().is_none_or(|b| alt.0 > b.0) {
                    best = Some(alt);
                    matches = loose;
                }
            }
        }
    }
    let Some((fitness, transform, inliers)) = best else {
        return Err(Error::RegistrationFailed(
            "no hypothesis reached three inliers".into(),
        ));
    };
    let ransac = RansacResult {
        inlier_fraction: inliers.len() as f64 / matches.len() as f64,
        low_confidence: (inliers.len() as f64) < 0.05 * matches.len() as f64,
        transform,
        inliers,
    };
    let t2 = cfg.sigma_threshold * cfg.sigma_threshold;
    let mut sigma = matches.filter(|_, (u, v)| (transform.apply(&src[u]) - tgt[v]).norm_squared() <= t2);
    if sigma.len() < 3 {
        sigma = ransac.inliers.clone();
    }
    let aligned: Vec<Vec3> = src.iter().map(|p| transform.apply(p)).collect();
    if cfg.densify {
        sigma = densify(&sigma, &aligned, tgt, cfg.sigma_threshold, cfg.max_pairs)?;
    }
    let initial_chamfer = chamfer_distance(&aligned, tgt)?;
    Ok(CoarseResult {
        transform,
        correspondences: sigma,
        voted_matches: matches.len(),
        ransac_inliers: ransac.inliers.len(),
        low_confidence: ransac.low_confidence,
        fitness,
        initial_chamfer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_template, TemplateConfig};

    #[test]
    fn identity_case() {
        let t = build_template(&TemplateConfig::default(), 1).unwrap();
        let r = coarse_register(&t, &t, &CoarseConfig::default()).unwrap();
        assert!(r.transform.angle() < 1e-6);
        assert!(r.transform.translation().norm() < 1e-6);
        assert!(r.initial_chamfer < 1e-9);
    }

    #[test]
    fn rigid_copy() {
        let t = build_template(&TemplateConfig::default(), 1).unwrap();
        let tr = RigidTransform::from_axis_angle(&Vec3::new(1.0, 1.0, 0.2), 0.6, Vec3::new(-2.0, 3.0, 1.0));
        let moved = tr.apply_cloud(&t).unwrap();
        let r = coarse_register(&t, &moved, &CoarseConfig::default()).unwrap();
        assert!(r.transform.compose(&tr.inverse()).angle() < 0.01);
        let c = &r.correspondences;
        let correct = c.pairs().iter().filter(|(u, v)| u == v).count();
        assert!(correct as f64 >= 0.9 * c.len() as f64);
        c.validate(t.len(), moved.len()).unwrap();
    }

    #[test]
    fn equivariant_under_target_rotation() {
        let t = build_template(&TemplateConfig::default(), 1).unwrap();
        let tr = RigidTransform::from_axis_angle(&Vec3::new(0.0, 1.0, 0.3), 0.3, Vec3::new(1.0, 0.0, 0.5));
        let target = tr.apply_cloud(&t).unwrap();
        let rot = RigidTransform::from_axis_angle(&Vec3::new(1.0, 0.0, 0.0), 1.2, Vec3::zeros());
        let rotated = rot.apply_cloud(&target).unwrap();
        let cfg = CoarseConfig::default();
        let a = coarse_register(&t, &target, &cfg).unwrap();
        let b = coarse_register(&t, &rotated, &cfg).unwrap();
        let expected = rot.compose(&a.transform);
        assert!(b.transform.compose(&expected.inverse()).angle() < 0.05);
    }

    #[test]
    fn small_cloud_rejected() {
        let t = build_template(&TemplateConfig::default(), 1).unwrap();
        let small = t.subset(&(0..20).collect::<Vec<_>>()).unwrap();
        assert!(matches!(
            coarse_register(&small, &t, &CoarseConfig::default()),
            Err(Error::Precondition(_))
        ));
    }
}
