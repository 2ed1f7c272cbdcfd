use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::armature::{Armature, RigidParams};
use super::ffd::{simulate_nonrigid, NonRigidParams};
use super::sampling::{sample_partial, SamplingParams};
use super::template::{build_template, TemplateConfig};
use super::mix_seed;
use crate::error::{Error, Result};
use crate::geom::{DisplacementField, LabeledCloud, RigidTransform};

pub const MANIFEST_NAME: &str = "manifest.json";
const FORMAT: &str = "c2p-dataset/1";

/// Everything needed to regenerate a dataset. Seeds inside the parameter
/// blocks are ignored: per-sample seeds derive from the master seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub template: TemplateConfig,
    pub nonrigid: NonRigidParams,
    pub rigid: RigidParams,
    pub sampling: SamplingParams,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.nonrigid.validate()?;
        self.rigid.validate()?;
        self.sampling.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSeeds {
    pub sample: u64,
    pub nonrigid: u64,
    pub rigid: u64,
    pub sampling: u64,
}

impl SampleSeeds {
    pub fn derive(master: u64, index: u64) -> Self {
        let sample = mix_seed(master, index);
        SampleSeeds {
            sample,
            nonrigid: mix_seed(sample, 1),
            rigid: mix_seed(sample, 2),
            sampling: mix_seed(sample, 3),
        }
    }
}

/// One simulated template/target pair with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub template: LabeledCloud,
    pub deformed: LabeledCloud,
    pub partial: LabeledCloud,
    /// `deformed[i] - template[i]` for every template point.
    pub gt_field: DisplacementField,
    pub visible_ratio: f64,
    pub target_ratio: f64,
    /// Index into `deformed` of every partial point.
    pub partial_indices: Vec<usize>,
    /// Transform of the root bone, i.e. the pose of the ear as a whole.
    pub pose: RigidTransform,
    pub seeds: SampleSeeds,
}

/// Runs the lattice deformation, then the articulated rigid motion, then
/// partial sampling.
pub fn generate_sample(
    template: &LabeledCloud,
    config: &GeneratorConfig,
    seeds: SampleSeeds,
) -> Result<SyntheticSample> {
    let nonrigid = NonRigidParams {
        seed: seeds.nonrigid,
        ..config.nonrigid.clone()
    };
    let rigid = RigidParams {
        seed: seeds.rigid,
        ..config.rigid.clone()
    };
    let sampling = SamplingParams {
        seed: seeds.sampling,
        ..config.sampling.clone()
    };
    let shaped = simulate_nonrigid(template, &nonrigid)?;
    let armature = Armature::from_cloud(&shaped)?;
    let transforms = armature.pose(&rigid)?;
    let moved = armature.apply(&shaped, &transforms)?;
    let gt_field = DisplacementField::between(template.points(), moved.points())?;
    // Re-derive the deformed points from the field so that
    // `deformed = template + field` holds exactly in floating point.
    let deformed = moved.with_geometry(
        gt_field.apply(template.points())?,
        moved.support_points().to_vec(),
        moved.landmarks().to_vec(),
    )?;
    let partial = sample_partial(&deformed, &sampling)?;
    Ok(SyntheticSample {
        template: template.clone(),
        gt_field,
        visible_ratio: partial.visible_ratio,
        target_ratio: partial.target_ratio,
        partial_indices: partial.indices,
        partial: partial.cloud,
        deformed,
        pose: transforms[0],
        seeds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub template: String,
    pub deformed: String,
    pub partial: String,
    pub gt_field: String,
    pub seeds: SampleSeeds,
    pub visible_ratio: f64,
    pub target_ratio: f64,
    pub mean_gt_displacement: f64,
    /// Row-major `[R | t]` of the ground-truth pose.
    pub pose: [f64; 12],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub generator_version: String,
    pub master_seed: u64,
    pub template_seed: u64,
    pub config: GeneratorConfig,
    pub samples: Vec<SampleRecord>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn mean_gt_displacement(&self) -> f64 {
        mean(self.samples.iter().map(|s| s.mean_gt_displacement))
    }

    pub fn mean_visible_ratio(&self) -> f64 {
        mean(self.samples.iter().map(|s| s.visible_ratio))
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::InvalidConfig(format!(
            "{}: unsupported dataset format {:?}",
            file.display(),
            manifest.format
        )));
    }
    manifest.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(manifest)
}

/// Generates `n` samples under `out_dir`: a shared `template.xyz`, per-sample
/// deformed/partial clouds and ground-truth fields in `samples/`, and a
/// `manifest.json` index. Output is a pure function of `(n, config, seed)`.
pub fn generate_dataset(
    n: usize,
    config: &GeneratorConfig,
    out_dir: &Path,
    seed: u64,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be at least 1".into()));
    }
    config.validate()?;
    let samples_dir = out_dir.join("samples");
    fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;
    let template_seed = seed;
    let template = build_template(&config.template, template_seed)?;
    let template_rel = "template.xyz".to_string();
    template.save(&out_dir.join(&template_rel))?;

    let records: Vec<SampleRecord> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<SampleRecord> {
            let seeds = SampleSeeds::derive(seed, i as u64);
            let sample = generate_sample(&template, config, seeds)?;
            let stem = format!("samples/{i:05}");
            let record = SampleRecord {
                id: i,
                template: template_rel.clone(),
                deformed: format!("{stem}_deformed.xyz"),
                partial: format!("{stem}_partial.xyz"),
                gt_field: format!("{stem}_gt_field.txt"),
                seeds,
                visible_ratio: sample.visible_ratio,
                target_ratio: sample.target_ratio,
                mean_gt_displacement: sample.gt_field.mean_norm(),
                pose: sample.pose.to_row_major(),
            };
            sample.deformed.save(&out_dir.join(&record.deformed))?;
            sample.partial.save(&out_dir.join(&record.partial))?;
            sample.gt_field.save(&out_dir.join(&record.gt_field))?;
            Ok(record)
        })
        .collect::<Result<_>>()?;

    let manifest = DatasetManifest {
        format: FORMAT.into(),
        generator_version: env!("CARGO_PKG_VERSION").into(),
        master_seed: seed,
        template_seed,
        config: config.clone(),
        samples: records,
        root: out_dir.to_path_buf(),
    };
    let path = out_dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_invariants_hold() {
        let config = GeneratorConfig::default();
        let template = build_template(&config.template, 1).unwrap();
        let s = generate_sample(&template, &config, SampleSeeds::derive(1, 0)).unwrap();
        assert_eq!(s.gt_field.len(), s.template.len());
        for ((t, d), g) in s.template.points().iter().zip(s.deformed.points()).zip(s.gt_field.vectors()) {
            assert_eq!(*d, t + g);
        }
        assert_eq!(s.partial.len(), s.partial_indices.len());
        assert!((s.visible_ratio - s.partial.len() as f64 / s.deformed.len() as f64).abs() < 1e-15);
        assert!(s.visible_ratio > 0.0 && s.visible_ratio <= 1.0);
    }

    #[test]
    fn small_dataset_is_complete_and_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let config = GeneratorConfig::default();
        let m = generate_dataset(3, &config, a.path(), 42).unwrap();
        generate_dataset(3, &config, b.path(), 42).unwrap();
        assert_eq!(m.samples.len(), 3);
        let loaded = load_manifest(a.path()).unwrap();
        assert_eq!(loaded.samples, m.samples);
        for rec in &loaded.samples {
            for rel in [&rec.template, &rec.deformed, &rec.partial, &rec.gt_field] {
                let x = fs::read(a.path().join(rel)).unwrap();
                let y = fs::read(b.path().join(rel)).unwrap();
                assert_eq!(x, y, "{rel}");
            }
            let t = LabeledCloud::load(&loaded.path(&rec.template)).unwrap();
            let g = DisplacementField::load(&loaded.path(&rec.gt_field)).unwrap();
            assert_eq!(t.len(), g.len());
        }
        assert_eq!(
            fs::read(a.path().join(MANIFEST_NAME)).unwrap(),
            fs::read(b.path().join(MANIFEST_NAME)).unwrap()
        );
    }

    #[test]
    fn zero_samples_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_dataset(0, &GeneratorConfig::default(), dir.path(), 1).is_err());
    }
}
