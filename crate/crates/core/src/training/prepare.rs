//! Turns raw samples into model-ready inputs according to the model's
//! pipeline spec: image resizing, cloud → depth-map projection (PCM), and
//! seeded fixed-size cloud downsampling (PN).

use std::path::Path;

use crate::data::{resize_image, DatasetManifest, ManifestRecord, Sample, Split};
use crate::error::{Error, Result};
use crate::models::{ModelInput, ModelKind, ModelSpec};
use crate::pointcloud::{depthmap_to_tensor, pcm_project, random_downsample};

/// One model-ready sample with its normalized targets.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub input: ModelInput,
    pub angle_rad: f64,
    pub speed_norm: f64,
}

/// Model-ready dataset grouped by split.
#[derive(Debug, Clone, Default)]
pub struct PreparedDataset {
    pub train: Vec<PreparedSample>,
    pub val: Vec<PreparedSample>,
    pub test: Vec<PreparedSample>,
}

impl PreparedDataset {
    pub fn for_split(&self, split: Split) -> &[PreparedSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Prepares one sample for the given model. `sample_seed` drives the PN
/// branch's cloud downsampling and must be derived deterministically from
/// the run seed and the sample's index.
pub fn prepare_sample(sample: &Sample, spec: &ModelSpec, sample_seed: u64) -> Result<PreparedSample> {
    let want = spec.image.in_shape;
    let image = if sample.image.shape() == want {
        sample.image.clone()
    } else {
        if sample.image.shape()[0] != want[0] {
            return Err(Error::Dimension {
                context: "prepare_sample image channels".into(),
                lhs: sample.image.shape().to_vec(),
                rhs: want.to_vec(),
            });
        }
        resize_image(&sample.image, want[1], want[2])?
    };

    let depth = match spec.kind {
        ModelKind::Pcm => {
            let proj = spec.pipeline.projection.unwrap_or_default();
            let dm = pcm_project(&sample.cloud, &proj)?;
            Some(depthmap_to_tensor(&dm, &proj))
        }
        _ => None,
    };

    let cloud = match spec.kind {
        ModelKind::Pn => {
            let fixed = random_downsample(&sample.cloud, spec.pipeline.num_points, sample_seed)?;
            Some(fixed.to_tensor(spec.pipeline.cloud_scale_m)?)
        }
        _ => None,
    };

    Ok(PreparedSample {
        input: ModelInput {
            image,
            depth,
            cloud,
        },
        angle_rad: sample.behavior.angle_rad,
        speed_norm: sample.behavior.speed_norm(spec.pipeline.max_speed_kmh),
    })
}

/// Loads and prepares every manifest record, grouping by split tag.
pub fn prepare_manifest(
    manifest: &DatasetManifest,
    manifest_dir: &Path,
    spec: &ModelSpec,
    seed: u64,
) -> Result<PreparedDataset> {
    let mut out = PreparedDataset::default();
    for (index, record) in manifest.records.iter().enumerate() {
        let sample = manifest.load_sample(record, manifest_dir)?;
        let prepared = prepare_sample(&sample, spec, mix(seed, index as u64))?;
        match record.split {
            Split::Train => out.train.push(prepared),
            Split::Val => out.val.push(prepared),
            Split::Test => out.test.push(prepared),
        }
    }
    Ok(out)
}

/// Prepares in-memory samples (no files involved), all tagged `split`.
pub fn prepare_samples(
    samples: &[Sample],
    spec: &ModelSpec,
    seed: u64,
) -> Result<Vec<PreparedSample>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| prepare_sample(s, spec, mix(seed, i as u64)))
        .collect()
}

/// Re-tags manifest records with a seeded shuffle into the given
/// train/val/test fractions.
pub fn assign_splits(
    manifest: &DatasetManifest,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetManifest> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be nonnegative and sum to 1, got {fractions:?}"
        )));
    }
    let n = manifest.records.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = (n as f64 * ft).round() as usize;
    let n_val = (n as f64 * fv).round() as usize;
    let mut records: Vec<ManifestRecord> = manifest.records.clone();
    for (rank, &idx) in order.iter().enumerate() {
        records[idx].split = if rank < n_train {
            Split::Train
        } else if rank < (n_train + n_val).min(n) {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(DatasetManifest {
        records,
        metadata: manifest.metadata.clone(),
    })
}

fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ (index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
