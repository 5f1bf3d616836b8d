use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;

/// What a run did: enough to replay it and to check that the replay matches.
///
/// Paths are stored relative to the manifest's directory when they lie
/// beneath it, so a manifest does not depend on where the tree lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Output path → hex SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
    pub metrics: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

fn absolute(path: &Path) -> Result<PathBuf> {
    let joined = if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir()?.join(path)
    };
    // Lexical normalization; the files may not exist yet.
    let mut out = PathBuf::new();
    for c in joined.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    Ok(out)
}

/// `path` relative to `base` when it lies beneath it, else absolute.
pub fn relative_to(path: &Path, base: &Path) -> Result<PathBuf> {
    let (p, b) = (absolute(path)?, absolute(base)?);
    Ok(match p.strip_prefix(&b) {
        Ok(rel) => rel.to_path_buf(),
        Err(_) => p,
    })
}

impl RunManifest {
    pub fn new(command: &Command, config: serde_json::Value, metrics: serde_json::Value) -> Self {
        Self {
            tool: "dse".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.clone(),
            seed: command.seed(),
            config,
            artifacts: BTreeMap::new(),
            metrics,
        }
    }

    pub fn add_artifact(&mut self, path: &Path) -> Result<()> {
        let hash = file_sha256(path)?;
        self.artifacts.insert(path.to_string_lossy().into_owned(), hash);
        Ok(())
    }

    /// Rewrites paths relative to `dir`, the directory the manifest is
    /// written to.
    pub fn relativized(&self, dir: &Path) -> Result<Self> {
        let mut out = self.clone();
        let err = std::cell::RefCell::new(None);
        out.command.map_paths(&|p| match relative_to(p, dir) {
            Ok(r) => r,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                p.to_path_buf()
            }
        });
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        out.artifacts = self
            .artifacts
            .iter()
            .map(|(k, v)| {
                Ok((
                    relative_to(Path::new(k), dir)?.to_string_lossy().into_owned(),
                    v.clone(),
                ))
            })
            .collect::<Result<_>>()?;
        Ok(out)
    }

    /// Resolves relative paths against `dir`.
    pub fn resolved(&self, dir: &Path) -> Self {
        let mut out = self.clone();
        out.command.map_paths(&|p| dir.join(p));
        out.artifacts = self
            .artifacts
            .iter()
            .map(|(k, v)| (dir.join(k).to_string_lossy().into_owned(), v.clone()))
            .collect();
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let rel = self.relativized(dir)?;
        let mut text = serde_json::to_string_pretty(&rel)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    /// Loads a manifest with its paths resolved against its own directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Ok(m.resolved(dir))
    }
}
