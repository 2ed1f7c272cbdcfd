use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::pyramid::{ndp_register_points, LevelTrace, PyramidConfig};
use crate::coarse::{coarse_register, descriptor_matches, CoarseConfig};
use crate::error::{Error, Result};
use crate::geom::{chamfer_distance, CorrespondenceSet, DisplacementField, LabeledCloud, RigidTransform, Vec3};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct C2pConfig {
    pub coarse: CoarseConfig,
    pub pyramid: PyramidConfig,
    /// Continue with the identity as rigid alignment when the coarse stage
    /// fails, using the raw descriptor matches as correspondences.
    pub allow_identity_init: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C2pDiagnostics {
    /// Chamfer distance (mm) after rigid alignment.
    pub initial_chamfer: f64,
    /// Chamfer distance (mm) after the full map.
    pub final_chamfer: f64,
    pub final_loss: f64,
    pub sigma_size: usize,
    pub voted_matches: usize,
    pub ransac_inliers: usize,
    pub low_confidence: bool,
    pub identity_init: bool,
    pub coarse_seconds: f64,
    pub ndp_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct C2pResult {
    pub transform: RigidTransform,
    pub correspondences: CorrespondenceSet,
    /// Pyramid displacement on the rigidly aligned source.
    pub ndp_field: DisplacementField,
    /// `NDP(R x + t) - x` for every source point.
    pub field: DisplacementField,
    pub trace: Vec<LevelTrace>,
    pub diagnostics: C2pDiagnostics,
}

impl C2pResult {
    pub fn deformed(&self, source: &[Vec3]) -> Result<Vec<Vec3>> {
        self.field.apply(source)
    }
}

/// Coarse rigid alignment followed by the deformation pyramid.
pub fn c2p_register(source: &LabeledCloud, target: &LabeledCloud, cfg: &C2pConfig) -> Result<C2pResult> {
    cfg.pyramid.validate()?;
    let start = Instant::now();
    let (transform, sigma, voted, inliers, low_confidence, identity_init) =
        match coarse_register(source, target, &cfg.coarse) {
            Ok(r) => (
                r.transform,
                r.correspondences,
                r.voted_matches,
                r.ransac_inliers,
                r.low_confidence,
                false,
            ),
            Err(e @ (Error::RegistrationFailed(_) | Error::NoCorrespondences)) => {
                if !cfg.allow_identity_init {
                    return Err(e);
                }
                let m = descriptor_matches(source, target, &cfg.coarse)?;
                let n = m.len();
                (RigidTransform::identity(), m, n, 0, true, true)
            }
            Err(e) => return Err(e),
        };
    let coarse_seconds = start.elapsed().as_secs_f64();
    let aligned: Vec<Vec3> = source.points().iter().map(|p| transform.apply(p)).collect();
    let initial_chamfer = chamfer_distance(&aligned, target.points())?;

    let start = Instant::now();
    let ndp = ndp_register_points(&aligned, target.points(), &sigma, &cfg.pyramid)?;
    let ndp_seconds = start.elapsed().as_secs_f64();
    let deformed = ndp.field.apply(&aligned)?;
    let field = DisplacementField::between(source.points(), &deformed)?;
    let final_chamfer = chamfer_distance(&deformed, target.points())?;
    Ok(C2pResult {
        transform,
        diagnostics: C2pDiagnostics {
            initial_chamfer,
            final_chamfer,
            final_loss: ndp.final_loss(),
            sigma_size: sigma.len(),
            voted_matches: voted,
            ransac_inliers: inliers,
            low_confidence,
            identity_init,
            coarse_seconds,
            ndp_seconds,
        },
        correspondences: sigma,
        ndp_field: ndp.field,
        field,
        trace: ndp.trace,
    })
}
