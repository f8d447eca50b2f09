//! Self-describing binary checkpoint files: magic, version, a JSON header
//! carrying the model spec and metadata, then raw little-endian f64
//! parameter data in canonical order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Model, ModelSpec};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"DFCK";
const VERSION: u32 = 1;

/// Best-model snapshot with the validation MAEs that qualified it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: Vec<Tensor>,
    pub epoch: usize,
    pub val_angle_mae: f64,
    pub val_speed_mae: f64,
    pub rng_digest: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    epoch: usize,
    val_angle_mae: f64,
    val_speed_mae: f64,
    rng_digest: u64,
    shapes: Vec<Vec<usize>>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        epoch: usize,
        val_angle_mae: f64,
        val_speed_mae: f64,
        rng_digest: u64,
    ) -> Self {
        let params = model
            .params
            .iter()
            .map(|p| {
                let mut t = p.clone();
                t.grad = None;
                t
            })
            .collect();
        Checkpoint {
            spec: model.spec.clone(),
            params,
            epoch,
            val_angle_mae,
            val_speed_mae,
            rng_digest,
        }
    }

    /// Rebuilds a model with exactly the stored parameters.
    pub fn to_model(&self) -> Model {
        Model {
            spec: self.spec.clone(),
            params: self.params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            spec: self.spec.clone(),
            epoch: self.epoch,
            val_angle_mae: self.val_angle_mae,
            val_speed_mae: self.val_speed_mae,
            rng_digest: self.rng_digest,
            shapes: self.params.iter().map(|p| p.shape().to_vec()).collect(),
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Contract(format!("checkpoint header encode: {e}")))?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header_json);
        for p in &self.params {
            for v in p.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let pstr = path.display().to_string();
        let need = |n: usize| -> Result<()> {
            if bytes.len() < n {
                Err(Error::Truncated {
                    path: pstr.clone(),
                    needed: n,
                    got: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(16)?;
        if &bytes[0..4] != MAGIC {
            return Err(Error::BadMagic {
                path: pstr,
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
                found: String::from_utf8_lossy(&bytes[0..4]).into_owned(),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Version {
                path: pstr,
                found: version,
                expected: VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        need(16 + header_len)?;
        let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
            .map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: 0,
                message: format!("checkpoint header: {e}"),
            })?;

        // The stored shapes must agree with what the spec dictates.
        let expected = header.spec.param_shapes()?;
        if expected != header.shapes {
            return Err(Error::CheckpointShape(format!(
                "spec implies {} tensors but header lists {}",
                expected.len(),
                header.shapes.len()
            )));
        }

        let mut offset = 16 + header_len;
        let mut params = Vec::with_capacity(header.shapes.len());
        for shape in &header.shapes {
            let numel: usize = shape.iter().product();
            let end = offset + numel * 8;
            need(end)?;
            let mut data = Vec::with_capacity(numel);
            for i in 0..numel {
                let at = offset + i * 8;
                data.push(f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()));
            }
            params.push(Tensor::param(shape.clone(), data)?);
            offset = end;
        }
        if offset != bytes.len() {
            return Err(Error::Truncated {
                path: pstr,
                needed: offset,
                got: bytes.len(),
            });
        }
        Ok(Checkpoint {
            spec: header.spec,
            params,
            epoch: header.epoch,
            val_angle_mae: header.val_angle_mae,
            val_speed_mae: header.val_speed_mae,
            rng_digest: header.rng_digest,
        })
    }
}

/// FNV-1a digest of the training RNG position, stored for provenance.
pub fn rng_digest(seed: u64, word_pos: u128) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(word_pos.to_le_bytes().iter()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
