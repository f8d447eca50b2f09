//! Dataset model: driving-behavior records, the manifest file, frame-rate
//! resampling, image resizing, file codecs, and the deterministic
//! synthetic-scene generator.

mod cloudio;
mod image;
mod synth;

pub use cloudio::{load_cloud, save_cloud_ascii, save_cloud_binary};
pub use image::{load_image_ppm, resize_image, save_image_ppm};
pub use synth::{generate_dataset, generate_synthetic_scene, SceneParams, SplitCounts};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::tensor::Tensor;

/// The regression target: steering angle in radians (positive = left
/// turn) and raw vehicle speed in km/h.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivingBehavior {
    pub angle_rad: f64,
    pub speed_kmh: f64,
}

impl DrivingBehavior {
    /// Speed normalized to [0, 1] against a configured maximum.
    pub fn speed_norm(&self, max_speed_kmh: f64) -> f64 {
        (self.speed_kmh / max_speed_kmh).clamp(0.0, 1.0)
    }
}

/// One synchronized record: camera image, LiDAR cloud, behavior, time.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor,
    pub cloud: PointCloud,
    pub behavior: DrivingBehavior,
    pub timestamp_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Contract(format!(
                "unknown split '{other}' (expected train|val|test)"
            ))),
        }
    }
}

/// One manifest row. Paths are stored relative to the manifest file.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub image: PathBuf,
    pub cloud: PathBuf,
    pub angle_rad: f64,
    pub speed_kmh: f64,
    pub timestamp_s: f64,
    pub split: Split,
}

/// Ordered dataset index plus free-form metadata carried as `# key=value`
/// comment lines above the CSV header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub metadata: BTreeMap<String, String>,
}

const MANIFEST_HEADER: &str = "image,cloud,angle_rad,speed_kmh,timestamp_s,split";

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        for w in self.records.windows(2) {
            if w[1].timestamp_s <= w[0].timestamp_s {
                return Err(Error::Contract(format!(
                    "manifest timestamps must be strictly increasing ({} then {})",
                    w[0].timestamp_s, w[1].timestamp_s
                )));
            }
        }
        Ok(())
    }

    pub fn records_for(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out.push_str(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.image.display(),
                r.cloud.display(),
                r.angle_rad,
                r.speed_kmh,
                r.timestamp_s,
                r.split
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let pstr = path.display().to_string();
        let mut manifest = DatasetManifest::default();
        let mut saw_header = false;
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.split_once('=') {
                    manifest
                        .metadata
                        .insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if !saw_header {
                if line != MANIFEST_HEADER {
                    return Err(Error::Parse {
                        path: pstr,
                        line: lineno,
                        message: format!("expected header '{MANIFEST_HEADER}'"),
                    });
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Parse {
                    path: pstr,
                    line: lineno,
                    message: format!("expected 6 fields, got {}", fields.len()),
                });
            }
            let num = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    line: lineno,
                    message: format!("bad {what} value '{s}'"),
                })
            };
            manifest.records.push(ManifestRecord {
                image: PathBuf::from(fields[0]),
                cloud: PathBuf::from(fields[1]),
                angle_rad: num(fields[2], "angle_rad")?,
                speed_kmh: num(fields[3], "speed_kmh")?,
                timestamp_s: num(fields[4], "timestamp_s")?,
                split: fields[5].parse().map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    line: lineno,
                    message: format!("bad split value '{}'", fields[5]),
                })?,
            });
        }
        if !saw_header {
            return Err(Error::Parse {
                path: pstr,
                line: 1,
                message: "missing manifest header".into(),
            });
        }
        manifest.validate()?;
        Ok(manifest)
    }

    /// Loads the sample behind a record, resolving relative paths against
    /// the manifest's directory.
    pub fn load_sample(&self, record: &ManifestRecord, manifest_dir: &Path) -> Result<Sample> {
        let image = load_image_ppm(&manifest_dir.join(&record.image))?;
        let cloud = load_cloud(&manifest_dir.join(&record.cloud))?;
        Ok(Sample {
            image,
            cloud,
            behavior: DrivingBehavior {
                angle_rad: record.angle_rad,
                speed_kmh: record.speed_kmh,
            },
            timestamp_s: record.timestamp_s,
        })
    }
}

/// Keeps, for each integer second in `[ceil(first), floor(last)]`, the
/// record whose timestamp is nearest that second (the earlier record wins
/// ties). Kept records closer than half a second to their predecessor are
/// dropped so the output cadence never falls under 0.5 s.
pub fn resample_to_1fps(manifest: &DatasetManifest) -> Result<DatasetManifest> {
    manifest.validate()?;
    let records = &manifest.records;
    if records.is_empty() {
        return Ok(manifest.clone());
    }
    let first = records.first().unwrap().timestamp_s;
    let last = records.last().unwrap().timestamp_s;
    let lo = first.ceil() as i64;
    let hi = last.floor() as i64;
    let mut kept: Vec<ManifestRecord> = Vec::new();
    let mut cursor = 0usize;
    for second in lo..=hi {
        let target = second as f64;
        // Timestamps are sorted; advance to the closest record.
        while cursor + 1 < records.len()
            && (records[cursor + 1].timestamp_s - target).abs()
                < (records[cursor].timestamp_s - target).abs()
        {
            cursor += 1;
        }
        let candidate = &records[cursor];
        match kept.last() {
            Some(prev) if candidate.timestamp_s - prev.timestamp_s < 0.5 => {}
            _ => kept.push(candidate.clone()),
        }
    }
    Ok(DatasetManifest {
        records: kept,
        metadata: manifest.metadata.clone(),
    })
}

/// How `subset_fraction` picks its records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FractionMode {
    /// First ⌈fraction·n⌉ records per split.
    Head,
    /// Seeded uniform choice per split.
    Random,
}

impl FromStr for FractionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(FractionMode::Head),
            "random" => Ok(FractionMode::Random),
            other => Err(Error::Config(format!(
                "unknown fraction mode '{other}' (expected head|random)"
            ))),
        }
    }
}

/// Keeps a fraction of each split, preserving timestamp order.
pub fn subset_fraction(
    manifest: &DatasetManifest,
    fraction: f64,
    mode: FractionMode,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "fraction must be in [0, 1], got {fraction}"
        )));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut keep = vec![false; manifest.records.len()];
    for split in [Split::Train, Split::Val, Split::Test] {
        let idx: Vec<usize> = (0..manifest.records.len())
            .filter(|&i| manifest.records[i].split == split)
            .collect();
        let count = ((idx.len() as f64) * fraction).ceil() as usize;
        let chosen: Vec<usize> = match mode {
            FractionMode::Head => idx.into_iter().take(count).collect(),
            FractionMode::Random => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let mut shuffled = idx;
                shuffled.shuffle(&mut rng);
                shuffled.into_iter().take(count).collect()
            }
        };
        for i in chosen {
            keep[i] = true;
        }
    }
    Ok(DatasetManifest {
        records: manifest
            .records
            .iter()
            .enumerate()
            .filter(|(i, _)| keep[*i])
            .map(|(_, r)| r.clone())
            .collect(),
        metadata: manifest.metadata.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(ts: f64) -> ManifestRecord {
        ManifestRecord {
            image: PathBuf::from(format!("img_{ts}.ppm")),
            cloud: PathBuf::from(format!("cloud_{ts}.pcb")),
            angle_rad: 0.0,
            speed_kmh: 30.0,
            timestamp_s: ts,
            split: Split::Train,
        }
    }

    fn manifest_with(ts: &[f64]) -> DatasetManifest {
        DatasetManifest {
            records: ts.iter().map(|&t| record(t)).collect(),
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn resample_30fps_10s_yields_10_records() {
        let ts: Vec<f64> = (0..300).map(|k| k as f64 / 30.0).collect();
        let out = resample_to_1fps(&manifest_with(&ts)).unwrap();
        assert_eq!(out.records.len(), 10);
        for (i, r) in out.records.iter().enumerate() {
            assert_eq!(r.timestamp_s, i as f64);
        }
    }

    #[test]
    fn resample_already_1fps_is_unchanged() {
        let ts: Vec<f64> = (0..12).map(|k| k as f64).collect();
        let m = manifest_with(&ts);
        let out = resample_to_1fps(&m).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn resample_tie_keeps_earlier_record() {
        // 2.8 and 3.2 are equidistant from second 3.
        let m = manifest_with(&[2.8, 3.2]);
        let out = resample_to_1fps(&m).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].timestamp_s, 2.8);
    }

    #[test]
    fn resample_cadence_never_below_half_second() {
        let ts: Vec<f64> = (0..600).map(|k| k as f64 * 0.031).collect();
        let out = resample_to_1fps(&manifest_with(&ts)).unwrap();
        for w in out.records.windows(2) {
            assert!(w[1].timestamp_s - w[0].timestamp_s >= 0.5);
        }
    }

    #[test]
    fn resample_rejects_unsorted_timestamps() {
        let m = manifest_with(&[1.0, 0.5]);
        assert!(matches!(resample_to_1fps(&m), Err(Error::Contract(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = std::env::temp_dir().join(format!("df-manifest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut m = manifest_with(&[0.0, 1.0, 2.0]);
        m.records[1].split = Split::Val;
        m.records[2].split = Split::Test;
        m.records[0].angle_rad = -0.125;
        m.metadata.insert("max_speed_kmh".into(), "60".into());
        let path = dir.join("manifest.csv");
        m.save(&path).unwrap();
        let loaded = DatasetManifest::load(&path).unwrap();
        assert_eq!(m, loaded);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn subset_head_fraction() {
        let m = manifest_with(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let out = subset_fraction(&m, 0.3, FractionMode::Head, 0).unwrap();
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.records[0].timestamp_s, 0.0);
    }

    #[test]
    fn subset_random_is_deterministic() {
        let m = manifest_with(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let a = subset_fraction(&m, 0.5, FractionMode::Random, 3).unwrap();
        let b = subset_fraction(&m, 0.5, FractionMode::Random, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 4);
    }
}
