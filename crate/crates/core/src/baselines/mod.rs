//! Reference methods: rigid ICP, optimal-step non-rigid ICP and coherent
//! point drift.

pub mod cpd;
pub mod icp;
pub mod nicp;

pub use cpd::{cpd, CpdConfig, CpdResult};
pub use icp::{icp, IcpConfig, IcpResult};
pub use nicp::{nicp, NicpConfig, NicpResult};
