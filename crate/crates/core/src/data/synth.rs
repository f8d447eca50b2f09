//! Deterministic synthetic driving scenes.
//!
//! Each scene draws a road curvature κ and an obstacle distance d. The
//! image renders the curved lane boundaries over noise, so κ is
//! recoverable from pixels; the obstacle is deliberately absent from the
//! image. The cloud holds ground-plane points plus an obstacle cluster at
//! distance d, so d is recoverable only from the cloud. Ground truth:
//! angle = atan(wheelbase·κ), speed = v_max·clamp((d−d_min)/(d_max−d_min)).
//! This split is what makes "does depth information help" testable: a
//! model without the cloud cannot predict speed beyond its mean.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    save_cloud_binary, save_image_ppm, DatasetManifest, DrivingBehavior, ManifestRecord, Sample,
    Split,
};
use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Scene distribution parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    /// Road curvature κ draw range, 1/m. Positive bends left.
    pub curvature_range: (f64, f64),
    /// Obstacle distance draw range in meters; also the speed mapping
    /// range.
    pub obstacle_range_m: (f64, f64),
    /// Gaussian pixel noise σ.
    pub image_noise: f64,
    /// Gaussian point jitter σ in meters.
    pub cloud_noise: f64,
    pub counts: SplitCounts,
    pub image_height: usize,
    pub image_width: usize,
    pub ground_points: usize,
    pub obstacle_points: usize,
    pub v_max_kmh: f64,
    pub wheelbase_m: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            curvature_range: (-0.02, 0.02),
            obstacle_range_m: (5.0, 35.0),
            image_noise: 0.05,
            cloud_noise: 0.02,
            counts: SplitCounts {
                train: 8,
                val: 2,
                test: 2,
            },
            image_height: 64,
            image_width: 64,
            ground_points: 1024,
            obstacle_points: 192,
            v_max_kmh: 60.0,
            wheelbase_m: 2.7,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let ok_range = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if !ok_range(self.curvature_range) {
            return Err(Error::Config(format!(
                "bad curvature range {:?}",
                self.curvature_range
            )));
        }
        if !ok_range(self.obstacle_range_m) || self.obstacle_range_m.0 >= self.obstacle_range_m.1 {
            return Err(Error::Config(format!(
                "obstacle range must be nonempty, got {:?}",
                self.obstacle_range_m
            )));
        }
        if self.image_noise < 0.0 || self.cloud_noise < 0.0 {
            return Err(Error::Config("noise levels must be >= 0".into()));
        }
        if self.image_height < 4 || self.image_width < 4 {
            return Err(Error::Config("image dims must be at least 4".into()));
        }
        if self.ground_points == 0 {
            return Err(Error::Config("ground_points must be >= 1".into()));
        }
        if !(self.v_max_kmh > 0.0) || !(self.wheelbase_m > 0.0) {
            return Err(Error::Config(
                "v_max_kmh and wheelbase_m must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Ground-truth behavior for a drawn (κ, d) pair.
    pub fn behavior_for(&self, kappa: f64, obstacle_m: f64) -> DrivingBehavior {
        let (d_min, d_max) = self.obstacle_range_m;
        let frac = ((obstacle_m - d_min) / (d_max - d_min)).clamp(0.0, 1.0);
        DrivingBehavior {
            angle_rad: (self.wheelbase_m * kappa).atan(),
            speed_kmh: self.v_max_kmh * frac,
        }
    }
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ (index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

// View geometry for the rendered lane: forward distances covered by the
// image rows and the lateral extent covered by its columns.
const VIEW_NEAR_M: f64 = 2.0;
const VIEW_FAR_M: f64 = 30.0;
const VIEW_HALF_SPAN_M: f64 = 16.0;
const LANE_HALF_WIDTH_M: f64 = 2.0;
const GROUND_Z_M: f64 = -1.7;

/// Lateral offset of the lane center at forward distance `s` for
/// curvature κ (circular arc through the origin).
fn lane_lateral(kappa: f64, s: f64) -> f64 {
    if kappa.abs() < 1e-9 {
        0.0
    } else {
        (1.0 - (kappa * s).cos()) / kappa
    }
}

/// Renders one deterministic sample for (seed, index).
pub fn generate_synthetic_scene(params: &SceneParams, index: usize, seed: u64) -> Result<Sample> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, index as u64));

    let (k_lo, k_hi) = params.curvature_range;
    let kappa = if k_lo == k_hi {
        k_lo
    } else {
        rng.random_range(k_lo..k_hi)
    };
    let (d_lo, d_hi) = params.obstacle_range_m;
    let obstacle_m = rng.random_range(d_lo..d_hi);
    let behavior = params.behavior_for(kappa, obstacle_m);

    // Image: noise background, then bright lane-boundary pixels. Rows map
    // bottom-to-top onto forward distance; columns onto lateral offset.
    let (h, w) = (params.image_height, params.image_width);
    let plane = h * w;
    let mut img = vec![0.0f64; 3 * plane];
    for v in img.iter_mut() {
        *v = (0.1 + params.image_noise * gauss(&mut rng)).clamp(0.0, 1.0);
    }
    let ppm = w as f64 / (2.0 * VIEW_HALF_SPAN_M);
    for row in 0..h {
        let s = VIEW_NEAR_M
            + (VIEW_FAR_M - VIEW_NEAR_M) * ((h - 1 - row) as f64) / ((h - 1) as f64);
        let center = lane_lateral(kappa, s);
        for lateral in [center - LANE_HALF_WIDTH_M, center + LANE_HALF_WIDTH_M] {
            let colf = w as f64 / 2.0 - lateral * ppm;
            let col = colf.round();
            if col >= 0.0 && (col as usize) < w {
                let idx = row * w + col as usize;
                let bright = (0.9 + params.image_noise * gauss(&mut rng)).clamp(0.0, 1.0);
                for ch in 0..3 {
                    img[ch * plane + idx] = bright;
                }
            }
        }
    }
    let image = Tensor::new(vec![3, h, w], img)?;

    // Cloud: flat ground plane plus an obstacle cluster at distance d.
    let mut points = Vec::with_capacity(params.ground_points + params.obstacle_points);
    for _ in 0..params.ground_points {
        let x = rng.random_range(VIEW_NEAR_M..(VIEW_FAR_M + 10.0));
        let y = rng.random_range(-8.0..8.0);
        let z = GROUND_Z_M + params.cloud_noise * gauss(&mut rng);
        points.push([x, y, z]);
    }
    for _ in 0..params.obstacle_points {
        let x = obstacle_m + rng.random_range(-0.3..0.3) + params.cloud_noise * gauss(&mut rng);
        let y = rng.random_range(-1.0..1.0) + params.cloud_noise * gauss(&mut rng);
        let z = rng.random_range(GROUND_Z_M..(GROUND_Z_M + 2.0))
            + params.cloud_noise * gauss(&mut rng);
        points.push([x, y, z]);
    }

    Ok(Sample {
        image,
        cloud: PointCloud::new(points),
        behavior,
        timestamp_s: index as f64,
    })
}

/// Generates the configured split sizes under `out_dir` and writes a
/// manifest indexing them. Regeneration with the same seed is
/// byte-identical.
pub fn generate_dataset(params: &SceneParams, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    params.validate()?;
    let images = out_dir.join("images");
    let clouds = out_dir.join("clouds");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    std::fs::create_dir_all(&clouds).map_err(|e| Error::io(&clouds, e))?;

    let mut manifest = DatasetManifest::default();
    manifest
        .metadata
        .insert("max_speed_kmh".into(), format!("{}", params.v_max_kmh));
    manifest.metadata.insert("fps".into(), "1".into());
    manifest.metadata.insert("speed_unit".into(), "kmh".into());

    let plan = [
        (Split::Train, params.counts.train),
        (Split::Val, params.counts.val),
        (Split::Test, params.counts.test),
    ];
    let mut index = 0usize;
    for (split, count) in plan {
        for _ in 0..count {
            let sample = generate_synthetic_scene(params, index, seed)?;
            let image_rel = PathBuf::from(format!("images/img_{index:05}.ppm"));
            let cloud_rel = PathBuf::from(format!("clouds/cloud_{index:05}.pcb"));
            save_image_ppm(&sample.image, &out_dir.join(&image_rel))?;
            save_cloud_binary(&sample.cloud, &out_dir.join(&cloud_rel))?;
            manifest.records.push(ManifestRecord {
                image: image_rel,
                cloud: cloud_rel,
                angle_rad: sample.behavior.angle_rad,
                speed_kmh: sample.behavior.speed_kmh,
                timestamp_s: sample.timestamp_s,
                split,
            });
            index += 1;
        }
    }
    let manifest_path = out_dir.join("manifest.csv");
    manifest.save(&manifest_path)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_curvature_gives_exactly_zero_angle() {
        let params = SceneParams {
            curvature_range: (0.0, 0.0),
            ..SceneParams::default()
        };
        let s = generate_synthetic_scene(&params, 3, 99).unwrap();
        assert_eq!(s.behavior.angle_rad, 0.0);
    }

    #[test]
    fn speed_clamps_at_range_ends() {
        let params = SceneParams::default();
        let (d_min, d_max) = params.obstacle_range_m;
        assert_eq!(params.behavior_for(0.0, d_max + 5.0).speed_kmh, params.v_max_kmh);
        assert_eq!(params.behavior_for(0.0, d_max).speed_kmh, params.v_max_kmh);
        assert_eq!(params.behavior_for(0.0, d_min).speed_kmh, 0.0);
        assert_eq!(params.behavior_for(0.0, d_min - 2.0).speed_kmh, 0.0);
    }

    #[test]
    fn same_seed_and_index_is_bitwise_identical() {
        let params = SceneParams::default();
        let a = generate_synthetic_scene(&params, 7, 42).unwrap();
        let b = generate_synthetic_scene(&params, 7, 42).unwrap();
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.cloud, b.cloud);
        assert_eq!(a.behavior, b.behavior);
        let c = generate_synthetic_scene(&params, 8, 42).unwrap();
        assert_ne!(a.image.data(), c.image.data());
    }

    #[test]
    fn generate_dataset_writes_counts_and_reloads() {
        let dir = std::env::temp_dir().join(format!("df-synth-{}", std::process::id()));
        std::fs::remove_dir_all(&dir).ok();
        let params = SceneParams {
            counts: SplitCounts {
                train: 8,
                val: 2,
                test: 2,
            },
            image_height: 16,
            image_width: 16,
            ground_points: 64,
            obstacle_points: 16,
            ..SceneParams::default()
        };
        let manifest = generate_dataset(&params, 5, &dir).unwrap();
        assert_eq!(manifest.records.len(), 12);
        assert_eq!(manifest.records_for(Split::Train).len(), 8);
        assert_eq!(manifest.records_for(Split::Val).len(), 2);
        assert_eq!(manifest.records_for(Split::Test).len(), 2);

        let loaded = DatasetManifest::load(&dir.join("manifest.csv")).unwrap();
        assert_eq!(loaded, manifest);

        // Loader round-trip stays within codec precision.
        let sample = loaded.load_sample(&loaded.records[0], &dir).unwrap();
        let direct = generate_synthetic_scene(&params, 0, 5).unwrap();
        assert_eq!(sample.image.shape(), direct.image.shape());
        for (a, b) in sample.image.data().iter().zip(direct.image.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        assert_eq!(sample.cloud.len(), direct.cloud.len());
        for (a, b) in sample.cloud.points.iter().zip(&direct.cloud.points) {
            for k in 0..3 {
                assert_eq!(a[k], b[k] as f32 as f64);
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let base = std::env::temp_dir().join(format!("df-regen-{}", std::process::id()));
        std::fs::remove_dir_all(&base).ok();
        let params = SceneParams {
            counts: SplitCounts {
                train: 2,
                val: 1,
                test: 1,
            },
            image_height: 12,
            image_width: 12,
            ground_points: 32,
            obstacle_points: 8,
            ..SceneParams::default()
        };
        let dir_a = base.join("a");
        let dir_b = base.join("b");
        generate_dataset(&params, 11, &dir_a).unwrap();
        generate_dataset(&params, 11, &dir_b).unwrap();
        for rel in [
            "manifest.csv",
            "images/img_00000.ppm",
            "images/img_00003.ppm",
            "clouds/cloud_00001.pcb",
        ] {
            let a = std::fs::read(dir_a.join(rel)).unwrap();
            let b = std::fs::read(dir_b.join(rel)).unwrap();
            assert_eq!(a, b, "mismatch in {rel}");
        }
        std::fs::remove_dir_all(&base).ok();
    }
}
