//! Coherent point drift: the source is the centroid set of a Gaussian
//! mixture that moves under a smooth Gaussian-kernel displacement field,
//! fitted to the target by expectation maximisation.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{centroid, DisplacementField, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpdConfig {
    /// Kernel width, in units of the source RMS radius.
    pub beta: f64,
    /// Smoothness weight.
    pub lambda: f64,
    /// Outlier weight of the uniform component, in `[0, 1)`.
    pub w: f64,
    pub max_iterations: usize,
    /// Stop when the relative change of the objective falls below this.
    pub tolerance: f64,
    /// Largest number of mixture centroids; larger sources are subsampled
    /// and the fitted field is extended to every point through the kernel.
    pub max_source_points: usize,
    /// Largest number of target points used in the fit.
    pub max_target_points: usize,
}

impl Default for CpdConfig {
    fn default() -> Self {
        CpdConfig {
            beta: 2.0,
            lambda: 3.0,
            w: 0.1,
            max_iterations: 150,
            tolerance: 1e-8,
            max_source_points: 600,
            max_target_points: 2000,
        }
    }
}

impl CpdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.lambda > 0.0) {
            return Err(Error::InvalidConfig("cpd beta and lambda must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.w) {
            return Err(Error::InvalidConfig(format!("cpd outlier weight {} must lie in [0, 1)", self.w)));
        }
        if self.max_source_points < 3 || self.max_target_points < 3 {
            return Err(Error::InvalidConfig("cpd point caps must be at least 3".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CpdResult {
    pub deformed: Vec<Vec3>,
    pub field: DisplacementField,
    /// Negative log-likelihood plus the smoothness penalty, one entry per
    /// EM iteration.
    pub objective: Vec<f64>,
    /// Final mixture variance in mm^2.
    pub sigma2: f64,
    pub iterations: usize,
}

/// `m` indices spread evenly over `0..n`.
fn stride(n: usize, m: usize) -> Vec<usize> {
    if n <= m {
        return (0..n).collect();
    }
    (0..m).map(|j| j * n / m).collect()
}

fn rows(points: &[Vec3], idx: &[usize], center: &Vec3, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), 3, |i, c| (points[idx[i]][c] - center[c]) / scale)
}

fn kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, beta: f64) -> DMatrix<f64> {
    let k = -1.0 / (2.0 * beta * beta);
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let d2: f64 = (0..3).map(|c| (a[(i, c)] - b[(j, c)]).powi(2)).sum();
        (k * d2).exp()
    })
}

struct EStep {
    p: DMatrix<f64>,
    nll: f64,
}

fn e_step(x: &DMatrix<f64>, t: &DMatrix<f64>, sigma2: f64, w: f64) -> EStep {
    let (m, n) = (t.nrows(), x.nrows());
    let norm = (2.0 * PI * sigma2).powf(1.5);
    let c = norm * w / (1.0 - w) * m as f64 / n as f64;
    let mut p = DMatrix::from_fn(m, n, |i, j| {
        let d2: f64 = (0..3).map(|k| (x[(j, k)] - t[(i, k)]).powi(2)).sum();
        (-d2 / (2.0 * sigma2)).exp()
    });
    let mut nll = 0.0;
    for j in 0..n {
        let col = p.column(j).sum();
        // Mixture density: (1 - w)/M sum_m N(x; t_m, sigma2) + w/N.
        let density = (1.0 - w) / m as f64 * col / norm + w / n as f64;
        nll -= density.max(f64::MIN_POSITIVE).ln();
        let denom = col + c;
        if denom > 0.0 {
            p.column_mut(j).scale_mut(1.0 / denom);
        }
    }
    EStep { p, nll }
}

/// Non-rigid CPD of `source` onto `target`. Both clouds are normalised by
/// the source centroid and RMS radius, so `beta` is scale free.
pub fn cpd(source: &[Vec3], target: &[Vec3], cfg: &CpdConfig) -> Result<CpdResult> {
    cfg.validate()?;
    if source.len() < 3 || target.len() < 3 {
        return Err(Error::Precondition(format!(
            "cpd needs at least 3 points per cloud, got {} and {}",
            source.len(),
            target.len()
        )));
    }
    let center = centroid(source);
    let scale = (source.iter().map(|p| (p - center).norm_squared()).sum::<f64>() / source.len() as f64)
        .sqrt()
        .max(1e-9);
    let sub = stride(source.len(), cfg.max_source_points);
    let y = rows(source, &sub, &center, scale);
    let all: Vec<usize> = (0..source.len()).collect();
    let y_all = rows(source, &all, &center, scale);
    let x = rows(target, &stride(target.len(), cfg.max_target_points), &center, scale);
    let (m, n) = (y.nrows(), x.nrows());
    let g = kernel(&y, &y, cfg.beta);

    let mut sigma2 = {
        let sx: f64 = x.iter().map(|v| v * v).sum::<f64>() * m as f64;
        let sy: f64 = y.iter().map(|v| v * v).sum::<f64>() * n as f64;
        let cross = 2.0 * (0..3).map(|c| x.column(c).sum() * y.column(c).sum()).sum::<f64>();
        (sx + sy - cross) / (3 * m * n) as f64
    };
    let mut wmat = DMatrix::<f64>::zeros(m, 3);
    let mut t = y.clone();
    let mut objective = Vec::new();
    let mut iterations = 0;
    for _ in 0..cfg.max_iterations {
        let es = e_step(&x, &t, sigma2, cfg.w);
        let penalty = 0.5 * cfg.lambda * (wmat.transpose() * &g * &wmat).trace();
        let q = es.nll + penalty;
        if !q.is_finite() {
            return Err(Error::numerical(0, iterations, "cpd objective"));
        }
        let converged = objective
            .last()
            .is_some_and(|&prev: &f64| (prev - q).abs() <= cfg.tolerance * prev.abs().max(1.0));
        objective.push(q);
        if converged || sigma2 < 1e-12 {
            break;
        }
        iterations += 1;
        let p1 = es.p.column_sum();
        let pt1 = es.p.row_sum().transpose();
        let np = p1.sum();
        if !(np > 0.0) {
            return Err(Error::RegistrationFailed("cpd: no target point is explained by the mixture".into()));
        }
        let px = &es.p * &x;
        let mut a = g.clone();
        for i in 0..m {
            a.row_mut(i).scale_mut(p1[i]);
            a[(i, i)] += cfg.lambda * sigma2;
        }
        let mut rhs = px.clone();
        for i in 0..m {
            for c in 0..3 {
                rhs[(i, c)] -= p1[i] * y[(i, c)];
            }
        }
        wmat = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::RegistrationFailed("cpd: singular update system".into()))?;
        t = &y + &g * &wmat;
        let xpx: f64 = (0..n).map(|j| pt1[j] * (0..3).map(|c| x[(j, c)].powi(2)).sum::<f64>()).sum();
        let tpx: f64 = px.component_mul(&t).sum();
        let tpt: f64 = (0..m).map(|i| p1[i] * (0..3).map(|c| t[(i, c)].powi(2)).sum::<f64>()).sum();
        sigma2 = ((xpx - 2.0 * tpx + tpt) / (3.0 * np)).max(1e-12);
    }
    let moved = &y_all + kernel(&y_all, &y, cfg.beta) * &wmat;
    let deformed: Vec<Vec3> = (0..source.len())
        .map(|i| center + Vec3::new(moved[(i, 0)], moved[(i, 1)], moved[(i, 2)]) * scale)
        .collect();
    let field = DisplacementField::between(source, &deformed)?;
    Ok(CpdResult {
        deformed,
        field,
        objective,
        sigma2: sigma2 * scale * scale,
        iterations,
    })
}
