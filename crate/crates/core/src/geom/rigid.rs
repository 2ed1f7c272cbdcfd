use nalgebra::{Matrix3, Rotation3, Unit};

use super::{CorrespondenceSet, LabeledCloud, Vec3};
use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-9;

/// A proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidTransform("translation is not finite".into()));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation by `angle` radians about `axis` through the origin.
    pub fn from_axis_angle(axis: &Vec3, angle: f64, translation: Vec3) -> Self {
        let rotation = if axis.norm() == 0.0 || angle == 0.0 {
            Matrix3::identity()
        } else {
            Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner()
        };
        RigidTransform {
            rotation,
            translation,
        }
    }

    /// Rotation by `angle` about the line through `pivot` along `axis`.
    pub fn rotation_about(pivot: &Vec3, axis: &Vec3, angle: f64) -> Self {
        let r = Self::from_axis_angle(axis, angle, Vec3::zeros());
        RigidTransform {
            rotation: r.rotation,
            translation: pivot - r.rotation * pivot,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let r = &self.rotation;
        let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
        (w.norm() / 2.0).atan2((r.trace() - 1.0) / 2.0)
    }

    /// Maps every point, support point and landmark of `cloud`.
    pub fn apply_cloud(&self, cloud: &LabeledCloud) -> Result<LabeledCloud> {
        check_rotation(&self.rotation)?;
        if self.rotation == Matrix3::identity() && self.translation == Vec3::zeros() {
            return Ok(cloud.clone());
        }
        cloud.map_positions(|p| self.apply(p))
    }

    /// Row-major `[R | t]` as 12 numbers.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    pub fn from_row_major(m: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new(rotation, Vec3::new(m[3], m[7], m[11]))
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if !r.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidTransform("rotation is not finite".into()));
    }
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > ORTHO_TOL {
        return Err(Error::InvalidTransform(format!(
            "rotation is not orthonormal (error {err:.3e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ORTHO_TOL {
        return Err(Error::InvalidTransform(format!("determinant {det} != +1")));
    }
    Ok(())
}

/// Least-squares rigid motion mapping `source[i]` onto `target[i]`,
/// optionally weighted. Reflections are corrected so `det R = +1`.
pub fn estimate_rigid(
    source: &[Vec3],
    target: &[Vec3],
    weights: Option<&[f64]>,
) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::ShapeMismatch {
            expected: source.len(),
            actual: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(Error::DegenerateCorrespondences(format!(
            "{} pairs, need at least 3",
            source.len()
        )));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..source.len()).map(w).sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateCorrespondences("zero total weight".into()));
    }
    let mut cs = Vec3::zeros();
    let mut ct = Vec3::zeros();
    for i in 0..source.len() {
        cs += source[i] * w(i);
        ct += target[i] * w(i);
    }
    cs /= total;
    ct /= total;
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for i in 0..source.len() {
        let a = source[i] - cs;
        let b = target[i] - ct;
        cov += w(i) * a * b.transpose();
        spread += w(i) * a * a.transpose();
    }
    // Rank of the centred source configuration: collinear sets give rank 1.
    let sv = spread.symmetric_eigenvalues();
    let mut ev: Vec<f64> = sv.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 0.0 || ev[1] <= ev[0] * 1e-12 {
        return Err(Error::DegenerateCorrespondences(
            "source points are collinear or coincident".into(),
        ));
    }
    let svd = cov.svd(true, true);
    let u = svd.u.expect("u");
    let v_t = svd.v_t.expect("v_t");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let translation = ct - rotation * cs;
    RigidTransform::new(rotation, translation)
}

/// Closed-form rigid estimate from the index pairs of `corr`.
pub fn estimate_rigid_from_correspondences(
    source: &[Vec3],
    target: &[Vec3],
    corr: &CorrespondenceSet,
) -> Result<RigidTransform> {
    corr.validate(source.len(), target.len())?;
    let (s, t): (Vec<Vec3>, Vec<Vec3>) = corr
        .pairs()
        .iter()
        .map(|&(u, v)| (source[u], target[v]))
        .unzip();
    estimate_rigid(&s, &t, None)
}
