//! Binary checkpoint format.
//!
//! ```text
//! 8 bytes   magic "EDDPMCK1"
//! 8 bytes   u64 LE length N of the metadata block
//! N bytes   UTF-8 JSON metadata (CheckpointMeta)
//! 4·P bytes f32 LE parameters in layer order, weights row-major then bias
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{parameter_count, Activation, MlpModel};
use crate::schedule::{ScheduleParams, SigmaVariant};

pub const MAGIC: &[u8; 8] = b"EDDPMCK1";
pub const FORMAT_VERSION: u32 = 1;
pub const TIME_ENCODING_SINCOS3: &str = "t_over_T_sin_cos";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Epsilon,
    Classifier,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Epsilon => "epsilon",
            ModelKind::Classifier => "classifier",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub kind: ModelKind,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub time_encoding: String,
    pub schedule: ScheduleParams,
    pub sigma_variant: SigmaVariant,
    pub training_seed: u64,
}

impl CheckpointMeta {
    pub fn new(kind: ModelKind, model: &MlpModel, schedule: ScheduleParams, sigma_variant: SigmaVariant, training_seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind,
            layer_dims: model.layer_dims().to_vec(),
            activation: model.activation(),
            time_encoding: TIME_ENCODING_SINCOS3.to_string(),
            schedule,
            sigma_variant,
            training_seed,
        }
    }
}

pub fn encode_checkpoint(model: &MlpModel, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    if meta.layer_dims != model.layer_dims() {
        return Err(Error::InconsistentCheckpoint("metadata layer dims differ from model".into()));
    }
    let json = serde_json::to_vec(meta)?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * model.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for &p in model.params() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(MlpModel, CheckpointMeta)> {
    if bytes.len() < 8 {
        return Err(Error::Truncated("missing magic".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated("missing metadata length".into()));
    }
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let meta_end = 16usize
        .checked_add(meta_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Truncated(format!("metadata block of {meta_len} bytes exceeds file")))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes[16..meta_end])?;
    // Check the version before the full schema so future layouts get a clear error.
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::InconsistentCheckpoint("metadata lacks format_version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::UnsupportedVersion(version as u32));
    }
    let meta: CheckpointMeta = serde_json::from_value(value)?;
    if meta.time_encoding != TIME_ENCODING_SINCOS3 {
        return Err(Error::InconsistentCheckpoint(format!("unknown time encoding {}", meta.time_encoding)));
    }
    let payload = &bytes[meta_end..];
    let expected = 4 * parameter_count(&meta.layer_dims);
    if payload.len() != expected {
        return Err(Error::PayloadLength {
            expected,
            found: payload.len(),
        });
    }
    let params = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let model = MlpModel::from_params(&meta.layer_dims, meta.activation, params)
        .map_err(|e| Error::InconsistentCheckpoint(e.to_string()))?;
    Ok((model, meta))
}

pub fn save_checkpoint(model: &MlpModel, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model, meta)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpModel, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads and checks the model kind.
pub fn load_checkpoint_of_kind(path: &Path, kind: ModelKind) -> Result<(MlpModel, CheckpointMeta)> {
    let (model, meta) = load_checkpoint(path)?;
    if meta.kind != kind {
        return Err(Error::KindMismatch {
            expected: kind.as_str().into(),
            found: meta.kind.as_str().into(),
        });
    }
    Ok((model, meta))
}

/// Model with every parameter rounded through f32, i.e. what a save/load
/// round trip yields.
pub fn quantized(model: &MlpModel) -> MlpModel {
    let params = model.params().iter().map(|&p| f64::from(p as f32)).collect();
    MlpModel::from_params(model.layer_dims(), model.activation(), params).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn sample() -> (MlpModel, CheckpointMeta) {
        let mut rng = RngStream::new(13, 0);
        let model = MlpModel::random(&[5, 8, 2], Activation::Silu, &mut rng).unwrap();
        let meta = CheckpointMeta::new(ModelKind::Epsilon, &model, ScheduleParams::linear_default(100), SigmaVariant::Beta, 13);
        (model, meta)
    }

    #[test]
    fn round_trip_is_exact_at_f32() {
        let (model, meta) = sample();
        let bytes = encode_checkpoint(&model, &meta).unwrap();
        let (loaded, meta2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(loaded, quantized(&model));
        let again = encode_checkpoint(&loaded, &meta2).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn truncated_payload_is_length_error() {
        let (model, meta) = sample();
        let bytes = encode_checkpoint(&model, &meta).unwrap();
        let err = decode_checkpoint(&bytes[..bytes.len() - 4]).unwrap_err();
        assert!(matches!(err, Error::PayloadLength { .. }), "{err}");
    }

    #[test]
    fn bad_magic_and_version() {
        let (model, mut meta) = sample();
        let mut bytes = encode_checkpoint(&model, &meta).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::BadMagic)));
        meta.format_version = 9;
        let bytes = encode_checkpoint(&model, &meta).unwrap();
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::UnsupportedVersion(9))));
        assert!(matches!(decode_checkpoint(b"EDDPMCK1\x05"), Err(Error::Truncated(_))));
    }

    #[test]
    fn kind_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (model, mut meta) = sample();
        meta.kind = ModelKind::Classifier;
        let path = dir.path().join("clf.ckpt");
        save_checkpoint(&model, &meta, &path).unwrap();
        assert!(matches!(load_checkpoint_of_kind(&path, ModelKind::Epsilon), Err(Error::KindMismatch { .. })));
        assert!(load_checkpoint_of_kind(&path, ModelKind::Classifier).is_ok());
    }
}
