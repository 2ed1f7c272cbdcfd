use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ffd::structure_centroids;
use super::template::structure_id;
use crate::error::{Error, Result};
use crate::geom::{centroid, KdTree, LabeledCloud, RigidTransform, Vec3};

/// Bone chain, root first. The ear canal is the root: its transform is the
/// pose of the whole ear. Each later bone is attached to the previous one.
pub const CHAIN: [&str; 5] = ["ear_canal", "tympanic_membrane", "malleus", "incus", "stapes"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoneBounds {
    /// Largest rotation angle (rad) about the bone pivot.
    pub max_angle: f64,
    /// Per-axis translation bound (mm). Only the root bone may translate;
    /// a translated child would detach from its articulation.
    pub max_translation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigidParams {
    /// One entry per bone of [`CHAIN`].
    pub bones: [BoneBounds; 5],
    pub seed: u64,
}

impl Default for RigidParams {
    fn default() -> Self {
        let b = |max_angle, max_translation| BoneBounds {
            max_angle,
            max_translation,
        };
        RigidParams {
            bones: [b(0.15, 1.55), b(0.03, 0.0), b(0.06, 0.0), b(0.06, 0.0), b(0.08, 0.0)],
            seed: 0,
        }
    }
}

impl RigidParams {
    pub fn null(seed: u64) -> Self {
        RigidParams {
            bones: [BoneBounds {
                max_angle: 0.0,
                max_translation: 0.0,
            }; 5],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.bones.iter().enumerate() {
            if !(0.0..FRAC_PI_2).contains(&b.max_angle) {
                return Err(Error::InvalidConfig(format!(
                    "rotation bound of bone {} must lie in [0, pi/2), got {}",
                    CHAIN[i], b.max_angle
                )));
            }
            if !(b.max_translation >= 0.0 && b.max_translation.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "translation bound of bone {} must be finite and non-negative",
                    CHAIN[i]
                )));
            }
            if i > 0 && b.max_translation != 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "bone {} is articulated and cannot translate",
                    CHAIN[i]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Bone {
    structure: usize,
    parent: Option<usize>,
    pivot: Vec3,
}

/// Bones attached to a cloud's structures. Child pivots sit at the midpoint
/// of the closest point pair between parent and child structure; the root
/// pivots about the centroid of the whole cloud.
#[derive(Debug, Clone)]
pub struct Armature {
    bones: Vec<Bone>,
}

impl Armature {
    pub fn from_cloud(t: &LabeledCloud) -> Result<Self> {
        let mut bones: Vec<Bone> = Vec::with_capacity(CHAIN.len());
        for (b, name) in CHAIN.iter().enumerate() {
            let structure = structure_id(t, name).ok_or_else(|| {
                Error::InvalidConfig(format!("cloud has no structure named {name}"))
            })?;
            let pivot = if b == 0 {
                centroid(t.points())
            } else {
                let parent = bones[b - 1].structure;
                joint(t, parent, structure)?
            };
            bones.push(Bone {
                structure,
                parent: b.checked_sub(1),
                pivot,
            });
        }
        Ok(Armature { bones })
    }

    /// Articulation pivot of each bone in chain order.
    pub fn pivots(&self) -> Vec<Vec3> {
        self.bones.iter().map(|b| b.pivot).collect()
    }

    /// Draws bone motions and returns the cumulative transform of each bone
    /// in chain order.
    pub fn pose(&self, p: &RigidParams) -> Result<Vec<RigidTransform>> {
        p.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let mut out: Vec<RigidTransform> = Vec::with_capacity(self.bones.len());
        for (b, bone) in self.bones.iter().enumerate() {
            let bounds = p.bones[b];
            let axis = random_unit(&mut rng);
            let angle = bounds.max_angle * (2.0 * rng.random::<f64>() - 1.0);
            let shift =
                Vec3::from_fn(|_, _| bounds.max_translation * (2.0 * rng.random::<f64>() - 1.0));
            let local = RigidTransform::from_translation(shift)
                .compose(&RigidTransform::rotation_about(&bone.pivot, &axis, angle));
            let cumulative = match bone.parent {
                Some(parent) => out[parent].compose(&local),
                None => local,
            };
            out.push(cumulative);
        }
        Ok(out)
    }

    /// Moves every structure rigidly by its bone's transform.
    pub fn apply(&self, t: &LabeledCloud, transforms: &[RigidTransform]) -> Result<LabeledCloud> {
        let mut per_structure = vec![RigidTransform::identity(); t.structure_count()];
        for (bone, tr) in self.bones.iter().zip(transforms) {
            per_structure[bone.structure] = *tr;
        }
        let points: Vec<Vec3> = t
            .points()
            .iter()
            .zip(t.labels())
            .map(|(p, &l)| per_structure[l].apply(p))
            .collect();
        let landmarks = t
            .landmarks()
            .iter()
            .map(|l| crate::geom::Landmark {
                structure: l.structure,
                position: per_structure[l.structure].apply(&l.position),
            })
            .collect();
        let support = structure_centroids(t, &points);
        t.with_geometry(points, support, landmarks)
    }
}

fn joint(t: &LabeledCloud, parent: usize, child: usize) -> Result<Vec3> {
    let parent_pts: Vec<Vec3> = t.structure_indices(parent).iter().map(|&i| t.points()[i]).collect();
    let tree = KdTree::new(&parent_pts);
    let mut best: Option<(f64, Vec3)> = None;
    for i in t.structure_indices(child) {
        let c = t.points()[i];
        if let Some((j, d2)) = tree.nearest_sq(&c) {
            if best.is_none_or(|(bd, _)| d2 < bd) {
                best = Some((d2, (c + parent_pts[j]) / 2.0));
            }
        }
    }
    best.map(|b| b.1).ok_or_else(|| {
        Error::InvalidCloud(format!("structures {parent} and {child} must both have points"))
    })
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    let z: f64 = rng.random::<f64>() * 2.0 - 1.0;
    let t = rng.random::<f64>() * std::f64::consts::TAU;
    let r = (1.0 - z * z).sqrt();
    Vec3::new(r * t.cos(), r * t.sin(), z)
}

/// Articulated rigid simulation: bone motions are composed parent to child
/// and every structure moves rigidly with its bone.
pub fn simulate_rigid(t: &LabeledCloud, p: &RigidParams) -> Result<LabeledCloud> {
    let armature = Armature::from_cloud(t)?;
    let transforms = armature.pose(p)?;
    armature.apply(t, &transforms)
}
