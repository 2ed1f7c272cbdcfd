//! Stage two: a neural deformation pyramid fitted per registration pair.
//!
//! Level `k` maps the sinusoidal encoding of the current points at
//! frequency `2^(k + k0)` through its own MLP to displacement increments.
//! Levels are optimized one at a time against the masked Chamfer loss plus
//! a motion-coherence penalty, then frozen.

pub mod adam;
pub mod encoding;
pub mod loss;
pub mod mlp;
pub mod pipeline;
pub mod pyramid;

pub use adam::Adam;
pub use encoding::{encode_batch, sinusoidal_encode};
pub use loss::{correspondence_loss, knn_graph, regularization_loss};
pub use mlp::{Mlp, Pass};
pub use pipeline::{c2p_register, C2pConfig, C2pDiagnostics, C2pResult};
pub use pyramid::{ndp_register, ndp_register_points, DeformationPyramid, LevelTrace, NdpResult, PyramidConfig};
