use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{estimate_rigid, KdTree, RigidTransform, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop when the mean squared residual changes by less than this (mm^2).
    pub tolerance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// Mean squared closest-point distance (mm^2): the initial value, then
    /// one entry per accepted update.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

fn residual(points: &[Vec3], tr: &RigidTransform, tree: &KdTree) -> (f64, Vec<usize>) {
    let mut sum = 0.0;
    let idx = points
        .iter()
        .map(|p| {
            let (j, d2) = tree.nearest_sq(&tr.apply(p)).expect("non-empty target");
            sum += d2;
            j
        })
        .collect();
    (sum / points.len() as f64, idx)
}

/// Point-to-point ICP from the identity: closest-point assignment from every
/// source point, then the closed-form rigid fit.
pub fn icp(source: &[Vec3], target: &[Vec3], cfg: &IcpConfig) -> Result<IcpResult> {
    if source.len() < 3 || target.len() < 3 {
        return Err(Error::Precondition(format!(
            "icp needs at least 3 points per cloud, got {} and {}",
            source.len(),
            target.len()
        )));
    }
    let tree = KdTree::new(target);
    let mut tr = RigidTransform::identity();
    let (mut current, mut nn) = residual(source, &tr, &tree);
    let mut residuals = vec![current];
    let mut iterations = 0;
    for _ in 0..cfg.max_iterations {
        let matched: Vec<Vec3> = nn.iter().map(|&j| target[j]).collect();
        let next = estimate_rigid(source, &matched, None)
            .map_err(|e| Error::RegistrationFailed(format!("icp: {e}")))?;
        iterations += 1;
        let (r, idx) = residual(source, &next, &tree);
        // Alternating minimisation cannot increase the residual beyond
        // rounding; guard against that anyway so the trace stays monotone.
        if r > current {
            break;
        }
        let change = current - r;
        tr = next;
        current = r;
        nn = idx;
        residuals.push(r);
        if change < cfg.tolerance {
            break;
        }
    }
    Ok(IcpResult {
        transform: tr,
        residuals,
        iterations,
    })
}
