use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::checkpoint_bytes;
use crate::encoder::TokenId;
use crate::error::{DseError, Result};
use crate::student::StudentModel;

pub const INDEX_MAGIC: &[u8] = b"DSEIDX1\n";

/// Precomputed catalog embeddings. Row `i` is the embedding of catalog
/// sentence `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    len: usize,
    dim: usize,
    data: Vec<f64>,
    fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    #[serde(rename = "N")]
    n: usize,
    d: usize,
    fingerprint: String,
}

/// Hex SHA-256 of the student's checkpoint encoding, which covers its
/// configuration and every parameter.
pub fn model_fingerprint(student: &StudentModel) -> Result<String> {
    let digest = Sha256::digest(checkpoint_bytes(student)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl EmbeddingIndex {
    pub(crate) fn from_parts(dim: usize, data: Vec<f64>, fingerprint: String) -> Self {
        Self {
            len: data.len() / dim,
            dim,
            data,
            fingerprint,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Fails unless `student` is the model the index was built with.
    pub fn check_model(&self, student: &StudentModel) -> Result<()> {
        let fp = model_fingerprint(student)?;
        if fp != self.fingerprint {
            return Err(DseError::Incompatible(format!(
                "index was built with model {}, got {fp}",
                self.fingerprint
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&IndexHeader {
            n: self.len,
            d: self.dim,
            fingerprint: self.fingerprint.clone(),
        })?;
        let mut out = Vec::with_capacity(INDEX_MAGIC.len() + header.len() + 1 + self.data.len() * 8);
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&header);
        out.push(b'\n');
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(INDEX_MAGIC)
            .ok_or_else(|| DseError::Format("not an index file (bad magic)".into()))?;
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| DseError::Corrupt("index header is not terminated".into()))?;
        let header: IndexHeader = serde_json::from_slice(&rest[..nl])
            .map_err(|e| DseError::Corrupt(format!("unreadable index header: {e}")))?;
        let payload = &rest[nl + 1..];
        let expected = header.n.checked_mul(header.d).and_then(|x| x.checked_mul(8));
        if expected != Some(payload.len()) {
            return Err(DseError::Corrupt(format!(
                "index payload holds {} bytes, header describes {} × {} floats",
                payload.len(),
                header.n,
                header.d
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            len: header.n,
            dim: header.d,
            data,
            fingerprint: header.fingerprint,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn check_catalog(catalog: &[Vec<TokenId>]) -> Result<()> {
    if catalog.is_empty() {
        return Err(DseError::Input("catalog is empty".into()));
    }
    Ok(())
}

/// Catalog embeddings as one row-major `N × d` buffer.
pub(crate) fn embed_catalog(student: &StudentModel, catalog: &[Vec<TokenId>]) -> Result<Vec<f64>> {
    check_catalog(catalog)?;
    let mut data = Vec::with_capacity(catalog.len() * student.embedding_dim());
    for y in catalog {
        data.extend(student.embed(y)?.0);
    }
    Ok(data)
}

/// Embeds every catalog sentence once, in order; ids are catalog positions.
pub fn build_index(student: &StudentModel, catalog: &[Vec<TokenId>]) -> Result<EmbeddingIndex> {
    let data = embed_catalog(student, catalog)?;
    Ok(EmbeddingIndex::from_parts(
        student.embedding_dim(),
        data,
        model_fingerprint(student)?,
    ))
}

/// [`build_index`] with sentences embedded on the rayon pool. Each row is
/// computed exactly as in the serial build, so the result is identical.
pub fn build_index_parallel(student: &StudentModel, catalog: &[Vec<TokenId>]) -> Result<EmbeddingIndex> {
    check_catalog(catalog)?;
    let rows: Vec<Vec<f64>> = catalog
        .par_iter()
        .map(|y| student.embed(y).map(|e| e.0))
        .collect::<Result<_>>()?;
    Ok(EmbeddingIndex {
        len: catalog.len(),
        dim: student.embedding_dim(),
        data: rows.concat(),
        fingerprint: model_fingerprint(student)?,
    })
}
