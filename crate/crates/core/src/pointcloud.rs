//! Point clouds, downsampling, and the spherical projection that turns a
//! cloud into a depth map for the CNN branch.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A set of 3D points in meters, sensor-centered frame: x forward, y left,
/// z up. Intensities, when present, are per-point values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        PointCloud {
            points,
            intensity: None,
        }
    }

    pub fn with_intensity(points: Vec<[f64; 3]>, intensity: Vec<f64>) -> Result<Self> {
        if points.len() != intensity.len() {
            return Err(Error::Contract(format!(
                "intensity length {} does not match point count {}",
                intensity.len(),
                points.len()
            )));
        }
        Ok(PointCloud {
            points,
            intensity: Some(intensity),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Points as an `N×3` tensor, each coordinate divided by `scale`.
    pub fn to_tensor(&self, scale: f64) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::EmptyInput("PointCloud::to_tensor".into()));
        }
        let mut data = Vec::with_capacity(self.len() * 3);
        for p in &self.points {
            data.push(p[0] / scale);
            data.push(p[1] / scale);
            data.push(p[2] / scale);
        }
        Tensor::new(vec![self.len(), 3], data)
    }
}

/// H×W range image. `depth[p]` is the range in meters of the nearest point
/// hitting pixel p; invalid pixels carry the sentinel depth 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    fn empty(height: usize, width: usize) -> Self {
        DepthMap {
            height,
            width,
            depth: vec![0.0; height * width],
            valid: vec![false; height * width],
        }
    }
}

/// Spherical projection parameters. Azimuth spans ±h_fov/2 around the
/// forward axis, elevation ±v_fov/2 around the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub h_fov_deg: f64,
    pub v_fov_deg: f64,
    pub height: usize,
    pub width: usize,
    pub max_range_m: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        // Velodyne-like vertical field of view.
        ProjectionConfig {
            h_fov_deg: 90.0,
            v_fov_deg: 26.8,
            height: 64,
            width: 512,
            max_range_m: 120.0,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_fov_deg > 0.0 && self.h_fov_deg <= 360.0) {
            return Err(Error::Config(format!(
                "horizontal FOV must be in (0, 360], got {}",
                self.h_fov_deg
            )));
        }
        if !(self.v_fov_deg > 0.0 && self.v_fov_deg <= 180.0) {
            return Err(Error::Config(format!(
                "vertical FOV must be in (0, 180], got {}",
                self.v_fov_deg
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("projection dims must be positive".into()));
        }
        if !(self.max_range_m > 0.0) {
            return Err(Error::Config(format!(
                "max range must be positive, got {}",
                self.max_range_m
            )));
        }
        Ok(())
    }
}

/// Uniform sample of exactly `n` points under the seed. Clouds smaller
/// than `n` keep every point and pad by seeded resampling with
/// replacement, so downstream consumers always see a fixed size.
pub fn random_downsample(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("random_downsample".into()));
    }
    if n == 0 {
        return Err(Error::Contract("downsample size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = cloud.len();
    let picked: Vec<usize> = if m >= n {
        // Partial Fisher-Yates: the first n slots are a uniform sample
        // without replacement.
        let mut idx: Vec<usize> = (0..m).collect();
        for i in 0..n {
            let j = rng.random_range(i..m);
            idx.swap(i, j);
        }
        idx.truncate(n);
        idx
    } else {
        let mut idx: Vec<usize> = (0..m).collect();
        while idx.len() < n {
            idx.push(rng.random_range(0..m));
        }
        idx
    };
    let points = picked.iter().map(|&i| cloud.points[i]).collect();
    let intensity = cloud
        .intensity
        .as_ref()
        .map(|xs| picked.iter().map(|&i| xs[i]).collect());
    Ok(PointCloud { points, intensity })
}

/// Greedy max-min selection of up to `n` points, seeded deterministically
/// at the point nearest the centroid. Ties break at the lowest index.
pub fn farthest_point_downsample(cloud: &PointCloud, n: usize) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("farthest_point_downsample".into()));
    }
    if n == 0 {
        return Err(Error::Contract("downsample size must be >= 1".into()));
    }
    let m = cloud.len();
    let target = n.min(m);

    let mut centroid = [0.0f64; 3];
    for p in &cloud.points {
        for a in 0..3 {
            centroid[a] += p[a];
        }
    }
    for c in centroid.iter_mut() {
        *c /= m as f64;
    }
    let dist2 = |a: &[f64; 3], b: &[f64; 3]| -> f64 {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        let dz = a[2] - b[2];
        dx * dx + dy * dy + dz * dz
    };

    let mut seed_idx = 0;
    let mut seed_d = f64::INFINITY;
    for (i, p) in cloud.points.iter().enumerate() {
        let d = dist2(p, &centroid);
        if d < seed_d {
            seed_d = d;
            seed_idx = i;
        }
    }

    let mut picked = vec![seed_idx];
    let mut min_d: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| dist2(p, &cloud.points[seed_idx]))
        .collect();
    while picked.len() < target {
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_d.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        picked.push(best);
        for (i, d) in min_d.iter_mut().enumerate() {
            let nd = dist2(&cloud.points[i], &cloud.points[best]);
            if nd < *d {
                *d = nd;
            }
        }
    }

    let points = picked.iter().map(|&i| cloud.points[i]).collect();
    let intensity = cloud
        .intensity
        .as_ref()
        .map(|xs| picked.iter().map(|&i| xs[i]).collect());
    Ok(PointCloud { points, intensity })
}

/// Spherical range-image projection: azimuth = atan2(y, x), elevation =
/// atan2(z, √(x²+y²)). Row 0 is the top of the vertical FOV, column 0 the
/// leftmost azimuth. Each pixel keeps the minimum range among the points
/// that hit it; ranges clip to `max_range_m`. Out-of-FOV points are
/// silently dropped.
pub fn pcm_project(cloud: &PointCloud, cfg: &ProjectionConfig) -> Result<DepthMap> {
    cfg.validate()?;
    let mut dm = DepthMap::empty(cfg.height, cfg.width);
    let half_h = cfg.h_fov_deg.to_radians() / 2.0;
    let half_v = cfg.v_fov_deg.to_radians() / 2.0;
    let (h, w) = (cfg.height as f64, cfg.width as f64);

    for p in &cloud.points {
        let (x, y, z) = (p[0], p[1], p[2]);
        let ground = (x * x + y * y).sqrt();
        let range = (x * x + y * y + z * z).sqrt();
        if range == 0.0 {
            continue;
        }
        let azimuth = y.atan2(x);
        let elevation = z.atan2(ground);
        if azimuth.abs() > half_h || elevation.abs() > half_v {
            continue;
        }
        // Azimuth +half_h (leftmost) maps to column 0; elevation +half_v
        // (upmost) maps to row 0.
        let col = (((half_h - azimuth) / (2.0 * half_h)) * w) as usize;
        let row = (((half_v - elevation) / (2.0 * half_v)) * h) as usize;
        let col = col.min(cfg.width - 1);
        let row = row.min(cfg.height - 1);
        let idx = row * cfg.width + col;
        let r = range.min(cfg.max_range_m);
        if !dm.valid[idx] || r < dm.depth[idx] {
            dm.depth[idx] = r;
            dm.valid[idx] = true;
        }
    }
    Ok(dm)
}

/// Translates the centroid to the origin and scales so the farthest point
/// lies at distance 1. Zero-spread clouds are translated only.
pub fn normalize_cloud(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("normalize_cloud".into()));
    }
    let m = cloud.len() as f64;
    let mut centroid = [0.0f64; 3];
    for p in &cloud.points {
        for a in 0..3 {
            centroid[a] += p[a];
        }
    }
    for c in centroid.iter_mut() {
        *c /= m;
    }
    let mut shifted: Vec<[f64; 3]> = cloud
        .points
        .iter()
        .map(|p| [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]])
        .collect();
    let max_norm = shifted
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0f64, f64::max);
    if max_norm > 0.0 {
        for p in &mut shifted {
            for v in p.iter_mut() {
                *v /= max_norm;
            }
        }
    }
    Ok(PointCloud {
        points: shifted,
        intensity: cloud.intensity.clone(),
    })
}

/// 2×H×W tensor: channel 0 = depth / max range in [0, 1], channel 1 = the
/// validity mask as {0, 1}.
pub fn depthmap_to_tensor(dm: &DepthMap, cfg: &ProjectionConfig) -> Tensor {
    let plane = dm.height * dm.width;
    let mut data = vec![0.0; 2 * plane];
    for i in 0..plane {
        if dm.valid[i] {
            data[i] = dm.depth[i] / cfg.max_range_m;
            data[plane + i] = 1.0;
        }
    }
    Tensor::new(vec![2, dm.height, dm.width], data).expect("depth map dims are positive")
}

/// Writes a 16-bit binary PGM (P5, big-endian samples per the format),
/// depth scaled to [0, 65535] over [0, max range]. Invalid pixels write 0.
pub fn save_depthmap_pgm(dm: &DepthMap, cfg: &ProjectionConfig, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + dm.depth.len() * 2);
    write!(buf, "P5\n{} {}\n65535\n", dm.width, dm.height)
        .expect("writing to a Vec cannot fail");
    for i in 0..dm.depth.len() {
        let q = if dm.valid[i] {
            let t = (dm.depth[i] / cfg.max_range_m).clamp(0.0, 1.0);
            (t * 65535.0).round() as u16
        } else {
            0
        };
        buf.extend_from_slice(&q.to_be_bytes());
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
}
