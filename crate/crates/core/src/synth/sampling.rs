use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::template::structure_id;
use crate::error::{Error, Result};
use crate::geom::{LabeledCloud, Vec3};

/// Parameters of partial, noisy target extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    /// Range of the target kept fraction before posterior thinning.
    pub visible_ratio: [f64; 2],
    /// Weight of the support-distance term in the keep score.
    pub alpha: f64,
    /// Standard deviation of the Gaussian score term (mean 0.5).
    pub score_spread: f64,
    /// Depth attenuation rate (1/mm) of posterior structures; 0 disables
    /// posterior thinning altogether.
    pub attenuation: f64,
    /// Range of the random factor multiplying the depth attenuation.
    pub posterior_factor: [f64; 2],
    /// Per-coordinate uniform jitter amplitude (mm).
    pub jitter: f64,
    /// Structures thinned by depth.
    pub posterior: Vec<String>,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            visible_ratio: [0.3, 0.9],
            alpha: 0.6,
            score_spread: 0.15,
            attenuation: 0.15,
            posterior_factor: [0.2, 1.0],
            jitter: 0.05,
            posterior: vec!["incus".into(), "stapes".into()],
            seed: 0,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        let r = self.visible_ratio;
        if !(r[0] > 0.0 && r[0] <= r[1] && r[1] <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "visible ratio range {r:?} must satisfy 0 < lo <= hi <= 1"
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.score_spread >= 0.0 && self.score_spread.is_finite()) {
            return Err(Error::InvalidConfig("score spread must be >= 0".into()));
        }
        if !(self.attenuation >= 0.0 && self.attenuation.is_finite()) {
            return Err(Error::InvalidConfig("attenuation must be >= 0".into()));
        }
        let f = self.posterior_factor;
        if !(f[0] >= 0.0 && f[0] <= f[1] && f[1] <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "posterior factor range {f:?} must satisfy 0 <= lo <= hi <= 1"
            )));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::InvalidConfig("jitter must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PartialSample {
    pub cloud: LabeledCloud,
    /// Index of each partial point in the complete cloud.
    pub indices: Vec<usize>,
    pub visible_ratio: f64,
    /// Kept fraction requested before posterior thinning.
    pub target_ratio: f64,
}

/// Extracts a partial, jittered view of a complete cloud.
///
/// Each point gets a keep score blending closeness to its structure's
/// support point with Gaussian noise; the highest-scoring points are kept
/// up to a random target fraction. Posterior structures are then thinned by
/// `exp(-attenuation * depth) * U(posterior_factor)`, where depth is measured
/// from the medial end of the ear canal along the canal-to-membrane
/// direction. Kept points are finally jittered.
pub fn sample_partial(t: &LabeledCloud, p: &SamplingParams) -> Result<PartialSample> {
    p.validate()?;
    let n = t.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let k = t.structure_count();

    let dist: Vec<f64> = t
        .points()
        .iter()
        .zip(t.labels())
        .map(|(x, &l)| (x - t.support_points()[l]).norm())
        .collect();
    let mut dmax = vec![0.0f64; k];
    for (d, &l) in dist.iter().zip(t.labels()) {
        dmax[l] = dmax[l].max(*d);
    }
    let noise = Normal::new(0.5, p.score_spread).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let score: Vec<f64> = (0..n)
        .map(|i| {
            let l = t.labels()[i];
            let closeness = if dmax[l] > 0.0 { 1.0 - dist[i] / dmax[l] } else { 1.0 };
            let g = noise.sample(&mut rng).clamp(0.0, 1.0);
            p.alpha * closeness + (1.0 - p.alpha) * g
        })
        .collect();
    let target_ratio =
        p.visible_ratio[0] + (p.visible_ratio[1] - p.visible_ratio[0]) * rng.random::<f64>();

    let by_score = |idx: &mut Vec<usize>| {
        idx.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    };
    let mut order: Vec<usize> = (0..n).collect();
    by_score(&mut order);
    let keep_n = ((target_ratio * n as f64).round() as usize).clamp(1, n);
    let mut keep = vec![false; n];
    for &i in &order[..keep_n] {
        keep[i] = true;
    }

    if p.attenuation > 0.0 {
        if let Some(frame) = DepthFrame::new(t) {
            for name in &p.posterior {
                let Some(s) = structure_id(t, name) else { continue };
                let depth = frame.depth(&t.support_points()[s]);
                let factor = (-p.attenuation * depth).exp()
                    * (p.posterior_factor[0]
                        + (p.posterior_factor[1] - p.posterior_factor[0]) * rng.random::<f64>());
                let mut kept: Vec<usize> =
                    (0..n).filter(|&i| keep[i] && t.labels()[i] == s).collect();
                by_score(&mut kept);
                let retain = (factor * kept.len() as f64).round() as usize;
                for &i in &kept[retain.min(kept.len())..] {
                    keep[i] = false;
                }
            }
        }
    }

    let indices: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    if indices.is_empty() {
        return Err(Error::EmptyResult);
    }
    let mut cloud = t.subset(&indices)?;
    if p.jitter > 0.0 {
        let eta = p.jitter;
        let jittered: Vec<Vec3> = cloud
            .points()
            .iter()
            .map(|x| x + Vec3::from_fn(|_, _| eta * (2.0 * rng.random::<f64>() - 1.0)))
            .collect();
        cloud = cloud.with_geometry(
            jittered,
            cloud.support_points().to_vec(),
            cloud.landmarks().to_vec(),
        )?;
    }
    Ok(PartialSample {
        visible_ratio: indices.len() as f64 / n as f64,
        cloud,
        indices,
        target_ratio,
    })
}

/// Depth measured along the canal-to-membrane axis from the medial end of
/// the ear canal wall.
struct DepthFrame {
    axis: Vec3,
    front: f64,
}

impl DepthFrame {
    fn new(t: &LabeledCloud) -> Option<Self> {
        let canal = structure_id(t, "ear_canal")?;
        let membrane = structure_id(t, "tympanic_membrane")?;
        let axis = t.support_points()[membrane] - t.support_points()[canal];
        let axis = axis.try_normalize(1e-12)?;
        let front = t
            .structure_indices(canal)
            .iter()
            .map(|&i| t.points()[i].dot(&axis))
            .fold(f64::NEG_INFINITY, f64::max);
        front.is_finite().then_some(DepthFrame { axis, front })
    }

    fn depth(&self, p: &Vec3) -> f64 {
        (p.dot(&self.axis) - self.front).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_template, TemplateConfig};

    fn template() -> LabeledCloud {
        build_template(&TemplateConfig::default(), 7).unwrap()
    }

    #[test]
    fn degenerate_sampling_returns_input() {
        let t = template();
        let p = SamplingParams {
            visible_ratio: [1.0, 1.0],
            attenuation: 0.0,
            jitter: 0.0,
            ..Default::default()
        };
        let s = sample_partial(&t, &p).unwrap();
        assert_eq!(s.cloud.points(), t.points());
        assert_eq!(s.visible_ratio, 1.0);
    }

    #[test]
    fn hits_requested_ratio_without_attenuation() {
        let t = template();
        for seed in 0..10 {
            let p = SamplingParams {
                visible_ratio: [0.5, 0.5],
                attenuation: 0.0,
                seed,
                ..Default::default()
            };
            let s = sample_partial(&t, &p).unwrap();
            assert!((0.45..=0.55).contains(&s.visible_ratio), "{}", s.visible_ratio);
        }
    }

    #[test]
    fn unjittered_partial_is_traceable_subset() {
        let t = template();
        let p = SamplingParams {
            jitter: 0.0,
            seed: 3,
            ..Default::default()
        };
        let s = sample_partial(&t, &p).unwrap();
        for (q, &i) in s.cloud.points().iter().zip(&s.indices) {
            assert_eq!(*q, t.points()[i]);
        }
        assert!((s.visible_ratio - s.cloud.len() as f64 / t.len() as f64).abs() < 1e-15);
    }

    #[test]
    fn jitter_is_bounded() {
        let t = template();
        let p = SamplingParams {
            seed: 9,
            ..Default::default()
        };
        let s = sample_partial(&t, &p).unwrap();
        for (q, &i) in s.cloud.points().iter().zip(&s.indices) {
            assert!((q - t.points()[i]).amax() <= p.jitter);
        }
    }

    #[test]
    fn stapes_is_thinned_more_than_membrane() {
        let t = template();
        let counts = t.structure_counts();
        let stapes = structure_id(&t, "stapes").unwrap();
        let tm = structure_id(&t, "tympanic_membrane").unwrap();
        let (mut fs, mut ft) = (0.0, 0.0);
        for seed in 0..100 {
            let p = SamplingParams {
                seed,
                ..Default::default()
            };
            let s = sample_partial(&t, &p).unwrap();
            let c = s.cloud.structure_counts();
            fs += c[stapes] as f64 / counts[stapes] as f64;
            ft += c[tm] as f64 / counts[tm] as f64;
        }
        assert!(fs < ft, "stapes {fs} vs membrane {ft}");
    }
}
