//! Versioned model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DSECKPT"            7-byte magic
//! u32                  format version
//! u64                  header length in bytes
//! header               JSON: {"kind", "config", "tensors": [{"name", "shape"}]}
//! f64 × Σ|shape|       tensor payloads in header order, row-major
//! [u8; 32]             SHA-256 of everything above
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DseError, Result};
use crate::numkernel::{Parameterized, Tensor};
use crate::student::{StudentConfig, StudentModel};
use crate::teacher::{TeacherConfig, TeacherModel};

pub const MAGIC: &[u8; 7] = b"DSECKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Teacher,
    Student,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// A model that can be written to and restored from a checkpoint.
pub trait Checkpointable: Parameterized + Sized {
    const KIND: ModelKind;

    fn config_json(&self) -> Result<serde_json::Value>;

    /// A model of the given configuration whose parameters are about to be
    /// overwritten.
    fn from_config_json(config: serde_json::Value) -> Result<Self>;
}

impl Checkpointable for TeacherModel {
    const KIND: ModelKind = ModelKind::Teacher;

    fn config_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self.config())?)
    }

    fn from_config_json(config: serde_json::Value) -> Result<Self> {
        let cfg: TeacherConfig = serde_json::from_value(config)?;
        TeacherModel::new(&cfg, 0)
    }
}

impl Checkpointable for StudentModel {
    const KIND: ModelKind = ModelKind::Student;

    fn config_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self.config())?)
    }

    fn from_config_json(config: serde_json::Value) -> Result<Self> {
        let cfg: StudentConfig = serde_json::from_value(config)?;
        StudentModel::new(&cfg, 0)
    }
}

/// Serializes parameter values (optimizer state is not kept).
pub fn checkpoint_bytes<M: Checkpointable>(model: &M) -> Result<Vec<u8>> {
    let params = model.parameters();
    let header = Header {
        kind: M::KIND,
        config: model.config_json()?,
        tensors: params
            .iter()
            .map(|(name, p)| TensorEntry {
                name: name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, p) in &params {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> DseError {
    DseError::Corrupt(msg.into())
}

/// Verifies magic, version and checksum, and splits off the header and the
/// tensor payload.
fn verified_parts(bytes: &[u8]) -> Result<(Header, &[u8])> {
    let fixed = MAGIC.len() + 4 + 8;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
            return Err(corrupt("file truncated inside the magic string"));
        }
        return Err(DseError::Format("not a checkpoint file (bad magic)".into()));
    }
    if bytes.len() < MAGIC.len() + 4 {
        return Err(corrupt("file truncated before the version field"));
    }
    let version = u32::from_le_bytes(bytes[7..11].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(DseError::Incompatible(format!(
            "checkpoint format version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    if bytes.len() < fixed + DIGEST_LEN {
        return Err(corrupt("file truncated before the header"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch (truncated or modified file)"));
    }
    let header_len = u64::from_le_bytes(bytes[11..19].try_into().expect("8 bytes")) as usize;
    let header_end = fixed
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length exceeds file size"))?;
    let header: Header = serde_json::from_slice(&body[fixed..header_end])
        .map_err(|e| corrupt(format!("unreadable header: {e}")))?;
    let payload = &body[header_end..];
    let total: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    if payload.len() != total * 8 {
        return Err(corrupt(format!(
            "payload holds {} bytes, header describes {}",
            payload.len(),
            total * 8
        )));
    }
    Ok((header, payload))
}

/// The model kind recorded in a verified checkpoint.
pub fn checkpoint_kind(bytes: &[u8]) -> Result<ModelKind> {
    verified_parts(bytes).map(|(h, _)| h.kind)
}

/// Parses and verifies a checkpoint. Nothing is returned unless the whole
/// file checks out.
pub fn checkpoint_from_bytes<M: Checkpointable>(bytes: &[u8]) -> Result<M> {
    let (header, payload) = verified_parts(bytes)?;
    if header.kind != M::KIND {
        return Err(DseError::Incompatible(format!(
            "checkpoint holds a {:?} model, expected {:?}",
            header.kind,
            M::KIND
        )));
    }
    let mut model = M::from_config_json(header.config)?;
    let mut params = model.parameters_mut();
    if params.len() != header.tensors.len() {
        return Err(DseError::Incompatible(format!(
            "checkpoint has {} tensors, model has {}",
            header.tensors.len(),
            params.len()
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for ((name, p), entry) in params.iter_mut().zip(&header.tensors) {
        if *name != entry.name || p.value.shape() != entry.shape.as_slice() {
            return Err(DseError::Incompatible(format!(
                "tensor {} {:?} does not match model tensor {name} {:?}",
                entry.name,
                entry.shape,
                p.value.shape()
            )));
        }
        let data: Vec<f64> = values.by_ref().take(p.value.len()).collect();
        p.value = Tensor::from_vec(&entry.shape, data)?;
    }
    drop(params);
    Ok(model)
}

pub fn save_checkpoint<M: Checkpointable>(model: &M, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint<M: Checkpointable>(path: impl AsRef<Path>) -> Result<M> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::teacher::TaskKind;

    fn small_encoder() -> EncoderConfig {
        EncoderConfig {
            num_layers: 2,
            hidden: 8,
            heads: 2,
            ffn: 16,
            max_len: 16,
            vocab_size: 24,
            ..Default::default()
        }
    }

    fn student() -> StudentModel {
        let cfg = StudentConfig {
            encoder: small_encoder(),
            task: TaskKind::Binary,
            head_hidden: 5,
        };
        StudentModel::new(&cfg, 42).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let s = student();
        let bytes = checkpoint_bytes(&s).unwrap();
        let back: StudentModel = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(checkpoint_bytes(&back).unwrap(), bytes);
        let (y, z) = ([5, 6, 7], [9, 10]);
        assert_eq!(back.score(&y, &z).unwrap(), s.score(&y, &z).unwrap());

        let t = TeacherModel::new(
            &TeacherConfig {
                encoder: small_encoder(),
                task: TaskKind::Regression,
            },
            3,
        )
        .unwrap();
        let back: TeacherModel = checkpoint_from_bytes(&checkpoint_bytes(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn truncation_and_tampering_are_corruption() {
        let bytes = checkpoint_bytes(&student()).unwrap();
        for cut in [3, 9, 15, 40, bytes.len() / 2, bytes.len() - 1] {
            let err = checkpoint_from_bytes::<StudentModel>(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, DseError::Corrupt(_)), "cut {cut}: {err}");
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() - 100;
        flipped[mid] ^= 1;
        assert!(matches!(
            checkpoint_from_bytes::<StudentModel>(&flipped),
            Err(DseError::Corrupt(_))
        ));
    }

    #[test]
    fn version_and_kind_are_checked() {
        let mut bytes = checkpoint_bytes(&student()).unwrap();
        bytes[7..11].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            checkpoint_from_bytes::<StudentModel>(&bytes),
            Err(DseError::Incompatible(_))
        ));
        let bytes = checkpoint_bytes(&student()).unwrap();
        assert_eq!(checkpoint_kind(&bytes).unwrap(), ModelKind::Student);
        assert!(matches!(
            checkpoint_from_bytes::<TeacherModel>(&bytes),
            Err(DseError::Incompatible(_))
        ));
        assert!(matches!(
            checkpoint_from_bytes::<StudentModel>(b"PK\x03\x04 not a checkpoint"),
            Err(DseError::Format(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let s = student();
        save_checkpoint(&s, &p1).unwrap();
        let back: StudentModel = load_checkpoint(&p1).unwrap();
        save_checkpoint(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
