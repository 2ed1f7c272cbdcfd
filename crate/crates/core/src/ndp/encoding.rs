use nalgebra::DMatrix;

use crate::geom::Vec3;

/// Frequency multiplier `2^(k + k0)` of pyramid level `k`.
pub fn level_frequency(k: usize, k0: i32) -> f64 {
    2f64.powi(k as i32 + k0)
}

/// `(sin(w p), cos(w p))` with `w = 2^(k + k0)`, sine components first.
pub fn sinusoidal_encode(p: &Vec3, k: usize, k0: i32) -> [f64; 6] {
    let q = p * level_frequency(k, k0);
    [q.x.sin(), q.y.sin(), q.z.sin(), q.x.cos(), q.y.cos(), q.z.cos()]
}

/// Encodes a batch into a 6 x N matrix, one column per point.
pub fn encode_batch(points: &[Vec3], k: usize, k0: i32) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(6, points.len());
    for (j, p) in points.iter().enumerate() {
        let e = sinusoidal_encode(p, k, k0);
        for (i, v) in e.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}
