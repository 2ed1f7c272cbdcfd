//! Procedural synthetic data: a middle-ear template, lattice (free-form)
//! deformation, articulated rigid motion, partial noisy sampling and dataset
//! serialization with ground-truth displacement fields.

mod armature;
mod dataset;
mod ffd;
mod sampling;
mod template;

pub use armature::{simulate_rigid, Armature, BoneBounds, RigidParams, CHAIN};
pub use dataset::{
    generate_dataset, generate_sample, load_manifest, MANIFEST_NAME, DatasetManifest, GeneratorConfig,
    SampleRecord, SampleSeeds, SyntheticSample,
};
pub use ffd::{simulate_nonrigid, Lattice, NonRigidParams};
pub use sampling::{sample_partial, PartialSample, SamplingParams};
pub use template::{build_template, structure_id, TemplateConfig, STRUCTURES};

/// SplitMix64 finaliser; derives independent stream seeds from a master seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
