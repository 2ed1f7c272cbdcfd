//! Optimal-step non-rigid ICP: one affine transform per source point,
//! tied to its graph neighbours by a stiffness term that is relaxed over a
//! schedule.

use nalgebra::{Matrix4, Matrix4x3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{centroid, DisplacementField, KdTree, Vec3};
use crate::ndp::knn_graph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NicpConfig {
    /// Stiffness weights, applied in order.
    pub stiffness: Vec<f64>,
    /// Correspondence/solve rounds per stiffness value.
    pub max_iterations: usize,
    pub knn: usize,
    /// Weight of the translation column relative to the linear part.
    pub gamma: f64,
    /// Closest-point pairs farther apart than this (mm) are ignored.
    pub reject_distance: f64,
    /// Stop a stiffness step when the mean change of the transforms falls
    /// below this.
    pub tolerance: f64,
    pub cg_iterations: usize,
    pub cg_tolerance: f64,
}

impl Default for NicpConfig {
    fn default() -> Self {
        NicpConfig {
            stiffness: vec![8.0, 4.0, 2.0, 1.0, 0.5],
            max_iterations: 20,
            knn: 8,
            gamma: 1.0,
            reject_distance: 2.0,
            tolerance: 1e-4,
            cg_iterations: 1000,
            cg_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NicpResult {
    pub deformed: Vec<Vec3>,
    pub field: DisplacementField,
    /// Per-point affine maps in source-centred coordinates, rows `x, y, z, 1`.
    pub transforms: Vec<Matrix4x3<f64>>,
    /// Mean squared closest-point distance (mm^2), initial value first.
    pub residuals: Vec<f64>,
    /// Number of extra edges added to connect the neighbour graph.
    pub bridges: usize,
}

/// Connects graph components by adding, repeatedly, the shortest edge
/// between the component of point 0 and the rest.
pub(crate) fn bridge_components(points: &[Vec3], edges: &mut Vec<(usize, usize)>) -> usize {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for &(a, b) in edges.iter() {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut added = 0;
    loop {
        let root = find(&mut parent, 0);
        let (inside, outside): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| find(&mut parent, i) == root);
        if outside.is_empty() {
            break;
        }
        let out_pts: Vec<Vec3> = outside.iter().map(|&i| points[i]).collect();
        let tree = KdTree::new(&out_pts);
        let (a, b, _) = inside
            .iter()
            .map(|&i| {
                let (j, d) = tree.nearest_sq(&points[i]).expect("non-empty");
                (i, outside[j], d)
            })
            .min_by(|x, y| x.2.total_cmp(&y.2).then(x.0.cmp(&y.0)))
            .expect("non-empty");
        edges.push((a.min(b), a.max(b)));
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra.max(rb)] = ra.min(rb);
        added += 1;
    }
    edges.sort_unstable();
    added
}

struct System<'a> {
    x: &'a [Vector4<f64>],
    weights: &'a [f64],
    neighbors: &'a [Vec<usize>],
    alpha: f64,
    g2: Vector4<f64>,
}

impl System<'_> {
    fn apply(&self, v: &[Matrix4x3<f64>]) -> Vec<Matrix4x3<f64>> {
        (0..v.len())
            .map(|i| {
                let mut out = Matrix4x3::zeros();
                for &j in &self.neighbors[i] {
                    out += v[i] - v[j];
                }
                let mut out = Matrix4::from_diagonal(&self.g2) * out * self.alpha;
                let w2 = self.weights[i] * self.weights[i];
                if w2 > 0.0 {
                    out += self.x[i] * (self.x[i].transpose() * v[i]) * w2;
                }
                out
            })
            .collect()
    }

    fn preconditioner(&self) -> Vec<Matrix4<f64>> {
        (0..self.x.len())
            .map(|i| {
                let deg = self.neighbors[i].len() as f64;
                let w2 = self.weights[i] * self.weights[i];
                let m = Matrix4::from_diagonal(&(self.g2 * (self.alpha * deg)))
                    + self.x[i] * self.x[i].transpose() * w2
                    + Matrix4::identity() * 1e-12;
                m.try_inverse().unwrap_or_else(Matrix4::identity)
            })
            .collect()
    }
}

fn dot(a: &[Matrix4x3<f64>], b: &[Matrix4x3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// Block-Jacobi preconditioned conjugate gradients, warm-started at `x0`.
fn solve(sys: &System, rhs: &[Matrix4x3<f64>], x0: &[Matrix4x3<f64>], iters: usize, tol: f64) -> Result<Vec<Matrix4x3<f64>>> {
    let pinv = sys.preconditioner();
    let mut x = x0.to_vec();
    let ax = sys.apply(&x);
    let mut r: Vec<Matrix4x3<f64>> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let bnorm = dot(rhs, rhs).sqrt().max(1e-300);
    let mut z: Vec<Matrix4x3<f64>> = r.iter().zip(&pinv).map(|(r, p)| p * r).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..iters {
        if dot(&r, &r).sqrt() <= tol * bnorm {
            break;
        }
        let ap = sys.apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::RegistrationFailed("nicp: system is not positive definite".into()));
        }
        let a = rz / pap;
        for i in 0..x.len() {
            x[i] += p[i] * a;
            r[i] -= ap[i] * a;
        }
        z = r.iter().zip(&pinv).map(|(r, p)| p * r).collect();
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..p.len() {
            p[i] = z[i] + p[i] * beta;
        }
    }
    if x.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(Error::RegistrationFailed("nicp: non-finite solution".into()));
    }
    Ok(x)
}

fn mean_sq_residual(points: &[Vec3], tree: &KdTree) -> f64 {
    points
        .iter()
        .map(|p| tree.nearest_sq(p).expect("non-empty").1)
        .sum::<f64>()
        / points.len() as f64
}

/// Non-rigid ICP of `source` onto `target`.
pub fn nicp(source: &[Vec3], target: &[Vec3], cfg: &NicpConfig) -> Result<NicpResult> {
    if source.len() < 4 || target.is_empty() {
        return Err(Error::Precondition(format!(
            "nicp needs at least 4 source points and a non-empty target, got {} and {}",
            source.len(),
            target.len()
        )));
    }
    if cfg.stiffness.is_empty() || cfg.stiffness.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::InvalidConfig("nicp stiffness values must be positive".into()));
    }
    let center = centroid(source);
    let norm = |p: &Vec3| p - center;
    let xs: Vec<Vector4<f64>> = source.iter().map(|p| {
        let q = norm(p);
        Vector4::new(q.x, q.y, q.z, 1.0)
    }).collect();
    let tgt: Vec<Vec3> = target.iter().map(norm).collect();
    let tree = KdTree::new(&tgt);
    let tree_mm = KdTree::new(target);

    let mut edges = knn_graph(source, cfg.knn);
    let bridges = bridge_components(source, &mut edges);
    let mut neighbors = vec![Vec::new(); source.len()];
    for &(a, b) in &edges {
        neighbors[a].push(b);
        neighbors[b].push(a);
    }

    let identity = Matrix4x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
    let mut transforms = vec![identity; source.len()];
    let deform = |t: &[Matrix4x3<f64>]| -> Vec<Vec3> {
        xs.iter()
            .zip(t)
            .map(|(x, m)| {
                let v = m.transpose() * x;
                center + Vec3::new(v[0], v[1], v[2])
            })
            .collect()
    };
    let mut deformed = deform(&transforms);
    let mut current = mean_sq_residual(&deformed, &tree_mm);
    let mut residuals = vec![current];
    let reject = cfg.reject_distance;
    let g2 = Vector4::new(1.0, 1.0, 1.0, cfg.gamma * cfg.gamma);

    for &alpha in &cfg.stiffness {
        for _ in 0..cfg.max_iterations {
            let mut weights = vec![0.0; source.len()];
            let mut rhs = vec![Matrix4x3::zeros(); source.len()];
            for i in 0..source.len() {
                let v = transforms[i].transpose() * xs[i];
                let (j, d2) = tree.nearest_sq(&Vec3::new(v[0], v[1], v[2])).expect("non-empty");
                if d2.sqrt() <= reject {
                    weights[i] = 1.0;
                    rhs[i] = xs[i] * tgt[j].transpose();
                }
            }
            if weights.iter().all(|w| *w == 0.0) {
                break;
            }
            let sys = System {
                x: &xs,
                weights: &weights,
                neighbors: &neighbors,
                alpha,
                g2,
            };
            let next = solve(&sys, &rhs, &transforms, cfg.cg_iterations, cfg.cg_tolerance)?;
            let next_deformed = deform(&next);
            let r = mean_sq_residual(&next_deformed, &tree_mm);
            if r > current {
                break;
            }
            let change = next
                .iter()
                .zip(&transforms)
                .map(|(a, b)| (a - b).norm())
                .sum::<f64>()
                / source.len() as f64;
            transforms = next;
            deformed = next_deformed;
            current = r;
            residuals.push(r);
            if change < cfg.tolerance {
                break;
            }
        }
    }
    let field = DisplacementField::between(source, &deformed)?;
    Ok(NicpResult {
        deformed,
        field,
        transforms,
        residuals,
        bridges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::chamfer_distance;
    use crate::synth::{build_template, simulate_nonrigid, NonRigidParams, TemplateConfig};

    fn small_template() -> crate::geom::LabeledCloud {
        let cfg = TemplateConfig {
            points: [160, 100, 90, 60, 200],
            scale: 1.0,
        };
        build_template(&cfg, 5).unwrap()
    }

    #[test]
    fn identity_is_fixed_point() {
        let t = small_template();
        let r = nicp(t.points(), t.points(), &NicpConfig::default()).unwrap();
        assert!(r.field.vectors().iter().all(|v| v.norm() < 1e-6));
    }

    #[test]
    fn smooth_bend_is_recovered() {
        let t = small_template();
        let p = NonRigidParams {
            slab_displacement: 0.15,
            seed: 3,
            ..NonRigidParams::null(3)
        };
        let bent = simulate_nonrigid(&t, &p).unwrap();
        let before = chamfer_distance(t.points(), bent.points()).unwrap();
        let r = nicp(t.points(), bent.points(), &NicpConfig::default()).unwrap();
        let after = chamfer_distance(&r.deformed, bent.points()).unwrap();
        assert!(after <= 0.2 * before, "{before} -> {after}");
        assert!(r.residuals.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn stiff_limit_is_global_affine() {
        let t = small_template();
        let shifted: Vec<Vec3> = t.points().iter().map(|p| p * 1.05 + Vec3::new(0.2, 0.0, -0.1)).collect();
        let cfg = NicpConfig {
            stiffness: vec![1e6],
            ..NicpConfig::default()
        };
        let r = nicp(t.points(), &shifted, &cfg).unwrap();
        let first = r.transforms[0];
        assert!(r.transforms.iter().all(|m| (m - first).amax() < 1e-3));
    }

    #[test]
    fn bridges_disconnected_graph() {
        let mut pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        pts.extend((0..10).map(|i| Vec3::new(50.0 + i as f64 * 0.1, 0.0, 0.0)));
        let mut edges = knn_graph(&pts, 3);
        assert_eq!(bridge_components(&pts, &mut edges), 1);
        assert!(edges.contains(&(9, 10)));
    }
}
