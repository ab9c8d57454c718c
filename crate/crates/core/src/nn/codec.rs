//! SLRM checkpoints: magic `SLRM`, version u16-LE, JSON length u32-LE, JSON
//! metadata `{spec, labels, seed}`, then every parameter tensor as `f32`-LE
//! in network order (per LSTM `wx, wh, b` with gate blocks `[i, f, g, o]`;
//! per dense `w, b`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::params::{ModelParams, ParamTensors};
use super::spec::{param_count, ModelSpec};
use super::NnError;
use crate::dataset::{DatasetError, LabelMap};

pub const SLRM_MAGIC: &[u8; 4] = b"SLRM";
pub const SLRM_VERSION: u16 = 1;
const FIXED_HEADER: usize = 4 + 2 + 4;

#[derive(Debug, Error)]
pub enum ModelCodecError {
    #[error("bad magic, expected \"SLRM\"")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated checkpoint: need {expected} bytes, have {found}")]
    Truncated { expected: usize, found: usize },
    #[error("malformed metadata: {0}")]
    Metadata(String),
    #[error("payload is {found} bytes, spec needs {expected}")]
    PayloadLength { expected: usize, found: usize },
    #[error("{labels} labels for a {classes}-class output layer")]
    LabelCount { labels: usize, classes: usize },
    #[error(transparent)]
    Spec(#[from] NnError),
    #[error(transparent)]
    Labels(#[from] DatasetError),
}

/// A trained model with the label map it was trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub labels: LabelMap,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    spec: ModelSpec,
    labels: serde_json::Value,
    seed: u64,
}

impl Checkpoint {
    pub fn new(params: ModelParams, labels: LabelMap, seed: u64) -> Result<Self, ModelCodecError> {
        let classes = params.spec().classes();
        if labels.len() != classes {
            return Err(ModelCodecError::LabelCount {
                labels: labels.len(),
                classes,
            });
        }
        Ok(Self {
            params,
            labels,
            seed,
        })
    }
}

pub fn encode_model(ckpt: &Checkpoint) -> Vec<u8> {
    let meta = Metadata {
        spec: ckpt.params.spec().clone(),
        labels: ckpt.labels.to_json(),
        seed: ckpt.seed,
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(FIXED_HEADER + json.len() + 4 * ckpt.params.scalar_count());
    out.extend_from_slice(SLRM_MAGIC);
    out.extend_from_slice(&SLRM_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in ckpt.params.tensors() {
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<Checkpoint, ModelCodecError> {
    if bytes.len() < 4 || &bytes[..4] != SLRM_MAGIC {
        return Err(ModelCodecError::BadMagic);
    }
    if bytes.len() < FIXED_HEADER {
        return Err(ModelCodecError::Truncated {
            expected: FIXED_HEADER,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != SLRM_VERSION {
        return Err(ModelCodecError::UnsupportedVersion(version));
    }
    let json_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let json_end = FIXED_HEADER + json_len;
    if bytes.len() < json_end {
        return Err(ModelCodecError::Truncated {
            expected: json_end,
            found: bytes.len(),
        });
    }
    let meta: Metadata = serde_json::from_slice(&bytes[FIXED_HEADER..json_end])
        .map_err(|e| ModelCodecError::Metadata(e.to_string()))?;
    let labels = LabelMap::from_json(&meta.labels)?;
    let mut params = ModelParams::zeros(&meta.spec)?;

    let payload = &bytes[json_end..];
    let expected = 4 * param_count(&meta.spec);
    if payload.len() != expected {
        return Err(ModelCodecError::PayloadLength {
            expected,
            found: payload.len(),
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    params.assign_flat(&values)?;
    Checkpoint::new(params, labels, meta.seed)
}
