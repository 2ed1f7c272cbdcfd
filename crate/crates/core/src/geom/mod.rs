//! Point clouds, spatial queries, rigid motions and the Chamfer distance.

mod chamfer;
mod cloud;
mod correspondence;
mod field;
pub mod format;
mod kdtree;
mod rigid;

pub use chamfer::{chamfer_distance, directed_mean_distance};
pub use cloud::{nearest_neighbor, LabeledCloud, Landmark};
pub use correspondence::CorrespondenceSet;
pub use field::DisplacementField;
pub use kdtree::KdTree;
pub use rigid::{estimate_rigid, estimate_rigid_from_correspondences, RigidTransform};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Arithmetic mean of a non-empty point slice.
pub fn centroid(points: &[Vec3]) -> Vec3 {
    let sum = points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
    sum / points.len().max(1) as f64
}

/// Diagonal of the axis-aligned bounding box.
pub fn bbox_diagonal(points: &[Vec3]) -> f64 {
    let (lo, hi) = bounds(points);
    (hi - lo).norm()
}

pub fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}
