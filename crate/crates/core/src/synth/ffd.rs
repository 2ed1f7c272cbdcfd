use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mix_seed;
use crate::error::{Error, Result};
use crate::geom::{centroid, LabeledCloud, Landmark, Vec3};

/// Parameters of the per-structure lattice deformation.
///
/// Lattice axes follow each structure's principal directions, so axis 0 is
/// the length, axis 1 the width and axis 2 the thickness. Control points are
/// grouped three ways: the whole lattice (a per-axis scale), slabs along each
/// axis (a shared displacement per slab) and slabs along the length (a shared
/// cross-section scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NonRigidParams {
    /// Control points per axis.
    pub resolution: [usize; 3],
    /// Bounds of the whole-structure scale, drawn per axis.
    pub global_scale: [f64; 2],
    /// Bounds of the cross-section scale of each length slab.
    pub slab_scale: [f64; 2],
    /// Per-component bound (mm) of each slab displacement.
    pub slab_displacement: f64,
    pub seed: u64,
}

impl Default for NonRigidParams {
    fn default() -> Self {
        NonRigidParams {
            resolution: [4, 4, 4],
            global_scale: [0.88, 1.12],
            slab_scale: [0.88, 1.12],
            slab_displacement: 0.25,
            seed: 0,
        }
    }
}

impl NonRigidParams {
    /// Parameters under which the deformation is the identity.
    pub fn null(seed: u64) -> Self {
        NonRigidParams {
            global_scale: [1.0, 1.0],
            slab_scale: [1.0, 1.0],
            slab_displacement: 0.0,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution.iter().any(|&n| n < 2) {
            return Err(Error::InvalidConfig(format!(
                "lattice resolution {:?} must be at least 2 per axis",
                self.resolution
            )));
        }
        for (name, b) in [("global_scale", self.global_scale), ("slab_scale", self.slab_scale)] {
            if !(b[0] > 0.0 && b[0] <= b[1] && b[1].is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} bounds {b:?} must be positive and ordered"
                )));
            }
        }
        if !(self.slab_displacement >= 0.0 && self.slab_displacement.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "slab displacement bound {} must be finite and non-negative",
                self.slab_displacement
            )));
        }
        Ok(())
    }
}

/// A trilinear free-form deformation lattice over an oriented box.
#[derive(Debug, Clone)]
pub struct Lattice {
    center: Vec3,
    /// Columns are the box axes.
    axes: Matrix3<f64>,
    half_extent: Vec3,
    resolution: [usize; 3],
    /// Displacement of each control point, `i + n0 * (j + n1 * k)`.
    displacements: Vec<Vec3>,
}

impl Lattice {
    /// Fits an oriented box to `points` along their principal axes, with a 5%
    /// margin on every side.
    pub fn fit(points: &[Vec3], resolution: [usize; 3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let center0 = centroid(points);
        let mut cov = Matrix3::zeros();
        for p in points {
            let d = p - center0;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigen();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let a0 = eig.eigenvectors.column(order[0]).into_owned();
        let a1 = eig.eigenvectors.column(order[1]).into_owned();
        let a2 = a0.cross(&a1);
        let axes = Matrix3::from_columns(&[a0, a1, a2]);
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            let q = axes.transpose() * (p - center0);
            lo = lo.inf(&q);
            hi = hi.sup(&q);
        }
        let mid = (lo + hi) / 2.0;
        let half = (hi - lo) / 2.0;
        let floor = 0.05 * half.max() + 1e-6;
        let half_extent = half.map(|h| h * 1.05 + floor);
        let n = resolution.iter().product();
        Ok(Lattice {
            center: center0 + axes * mid,
            axes,
            half_extent,
            resolution,
            displacements: vec![Vec3::zeros(); n],
        })
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    /// Rest position of control point `(i, j, k)` in box-local coordinates.
    pub fn rest_local(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let idx = [i, j, k];
        Vec3::from_fn(|a, _| {
            let t = idx[a] as f64 / (self.resolution[a] - 1) as f64;
            -self.half_extent[a] + 2.0 * self.half_extent[a] * t
        })
    }

    pub fn rest_world(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.center + self.axes * self.rest_local(i, j, k)
    }

    /// Sets every control displacement from its indices and rest position.
    pub fn set_displacements(&mut self, mut f: impl FnMut([usize; 3], &Vec3) -> Vec3) {
        let [n0, n1, n2] = self.resolution;
        for k in 0..n2 {
            for j in 0..n1 {
                for i in 0..n0 {
                    let rest = self.rest_world(i, j, k);
                    let idx = self.index(i, j, k);
                    self.displacements[idx] = f([i, j, k], &rest);
                }
            }
        }
    }

    pub fn max_control_displacement(&self) -> f64 {
        self.displacements.iter().map(|d| d.norm()).fold(0.0, f64::max)
    }

    /// Trilinearly interpolated displacement at `p`.
    pub fn displacement_at(&self, p: &Vec3) -> Result<Vec3> {
        let q = self.axes.transpose() * (p - self.center);
        let mut cell = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let u = (q[a] + self.half_extent[a]) / (2.0 * self.half_extent[a]);
            if !(-1e-9..=1.0 + 1e-9).contains(&u) {
                return Err(Error::InvalidCloud(format!(
                    "point {p:?} lies outside its deformation lattice"
                )));
            }
            let g = u.clamp(0.0, 1.0) * (self.resolution[a] - 1) as f64;
            let c = (g.floor() as usize).min(self.resolution[a] - 2);
            cell[a] = c;
            frac[a] = g - c as f64;
        }
        let mut out = Vec3::zeros();
        for dk in 0..2 {
            let wk = if dk == 0 { 1.0 - frac[2] } else { frac[2] };
            for dj in 0..2 {
                let wj = if dj == 0 { 1.0 - frac[1] } else { frac[1] };
                for di in 0..2 {
                    let wi = if di == 0 { 1.0 - frac[0] } else { frac[0] };
                    let d = self.displacements[self.index(cell[0] + di, cell[1] + dj, cell[2] + dk)];
                    out += d * (wi * wj * wk);
                }
            }
        }
        Ok(out)
    }

    pub fn deform(&self, p: &Vec3) -> Result<Vec3> {
        Ok(p + self.displacement_at(p)?)
    }

    /// Draws grouped random scales and displacements.
    fn randomize(&mut self, params: &NonRigidParams, rng: &mut ChaCha8Rng) {
        let uniform = |rng: &mut ChaCha8Rng, b: [f64; 2]| b[0] + (b[1] - b[0]) * rng.random::<f64>();
        let d = params.slab_displacement;
        let global: [f64; 3] = std::array::from_fn(|_| uniform(rng, params.global_scale));
        let slab_shift: [Vec<Vec3>; 3] = std::array::from_fn(|a| {
            (0..self.resolution[a])
                .map(|_| Vec3::from_fn(|_, _| uniform(rng, [-d, d])))
                .collect()
        });
        let section: Vec<f64> = (0..self.resolution[0])
            .map(|_| uniform(rng, params.slab_scale))
            .collect();
        let axes = self.axes;
        let mut moved = Vec::with_capacity(self.displacements.len());
        let [n0, n1, n2] = self.resolution;
        for k in 0..n2 {
            for j in 0..n1 {
                for i in 0..n0 {
                    let r = self.rest_local(i, j, k);
                    let new = Vec3::new(
                        global[0] * r.x,
                        global[1] * section[i] * r.y,
                        global[2] * section[i] * r.z,
                    ) + slab_shift[0][i]
                        + slab_shift[1][j]
                        + slab_shift[2][k];
                    moved.push(axes * (new - r));
                }
            }
        }
        self.displacements = moved;
    }
}

/// Deforms every structure with its own randomized lattice. Labels are kept;
/// support points are recomputed as structure centroids.
pub fn simulate_nonrigid(t: &LabeledCloud, p: &NonRigidParams) -> Result<LabeledCloud> {
    p.validate()?;
    t.validate_complete()?;
    let mut points = t.points().to_vec();
    let mut landmarks: Vec<Landmark> = t.landmarks().to_vec();
    for k in 0..t.structure_count() {
        let idx = t.structure_indices(k);
        let pts: Vec<Vec3> = idx.iter().map(|&i| t.points()[i]).collect();
        let mut lattice = Lattice::fit(&pts, p.resolution)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(p.seed, k as u64));
        lattice.randomize(p, &mut rng);
        for &i in &idx {
            points[i] = lattice.deform(&t.points()[i])?;
        }
        for lm in landmarks.iter_mut().filter(|l| l.structure == k) {
            lm.position = lattice.deform(&lm.position)?;
        }
    }
    let support = structure_centroids(t, &points);
    t.with_geometry(points, support, landmarks)
}

pub(crate) fn structure_centroids(t: &LabeledCloud, points: &[Vec3]) -> Vec<Vec3> {
    let k = t.structure_count();
    let mut sums = vec![Vec3::zeros(); k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(t.labels()) {
        sums[l] += p;
        counts[l] += 1;
    }
    sums.iter()
        .zip(&counts)
        .zip(t.support_points())
        .map(|((s, &c), old)| if c > 0 { s / c as f64 } else { *old })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_template, TemplateConfig};

    fn template() -> LabeledCloud {
        build_template(&TemplateConfig::default(), 7).unwrap()
    }

    #[test]
    fn null_params_are_identity() {
        let t = template();
        let out = simulate_nonrigid(&t, &NonRigidParams::null(5)).unwrap();
        for (a, b) in t.points().iter().zip(out.points()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert_eq!(out.labels(), t.labels());
    }

    #[test]
    fn reproduces_affine_control_motion() {
        let t = template();
        let pts: Vec<Vec3> = t.structure_indices(1).iter().map(|&i| t.points()[i]).collect();
        let mut lattice = Lattice::fit(&pts, [4, 3, 5]).unwrap();
        let a = Matrix3::new(1.1, 0.05, -0.02, 0.03, 0.92, 0.1, -0.04, 0.02, 1.05);
        let b = Vec3::new(0.3, -0.2, 0.5);
        lattice.set_displacements(|_, rest| a * rest + b - rest);
        for p in &pts {
            let expected = a * p + b;
            assert!((lattice.deform(p).unwrap() - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn displacement_bounded_by_control_motion() {
        let t = template();
        let params = NonRigidParams {
            slab_displacement: 0.4,
            global_scale: [0.8, 1.25],
            slab_scale: [0.8, 1.25],
            seed: 99,
            ..Default::default()
        };
        for k in 0..t.structure_count() {
            let pts: Vec<Vec3> = t.structure_indices(k).iter().map(|&i| t.points()[i]).collect();
            let mut lattice = Lattice::fit(&pts, params.resolution).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
            lattice.randomize(&params, &mut rng);
            let bound = lattice.max_control_displacement();
            for p in &pts {
                assert!(lattice.displacement_at(p).unwrap().norm() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_and_label_preserving() {
        let t = template();
        let p = NonRigidParams {
            seed: 4,
            ..Default::default()
        };
        let a = simulate_nonrigid(&t, &p).unwrap();
        let b = simulate_nonrigid(&t, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels(), t.labels());
        assert!(a.points().iter().zip(t.points()).any(|(x, y)| (x - y).norm() > 1e-3));
    }

    #[test]
    fn outside_point_is_an_error() {
        let pts = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let lattice = Lattice::fit(&pts, [2, 2, 2]).unwrap();
        assert!(lattice.deform(&Vec3::new(10.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn rejects_invalid_params() {
        let mut p = NonRigidParams::default();
        p.resolution = [1, 4, 4];
        assert!(p.validate().is_err());
        let p = NonRigidParams {
            global_scale: [0.0, 1.0],
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
