//! Small file helpers shared by the client and the command line.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use embmark_core::corpus::PairSpec;
use embmark_core::io::{read_wmt1, write_wmt1};
use embmark_core::transform::{TransformMatrix, TransformMeta};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// A list of query pairs. Trigger-set files parse as one too, since they
/// carry the same `pairs` field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFile {
    pub pairs: Vec<PairSpec>,
}

/// Concatenates the pairs of several query files, rejecting repeated ids.
pub fn read_pairs(paths: &[PathBuf]) -> Result<Vec<PairSpec>> {
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for p in paths {
        let file: QueryFile = serde_json::from_slice(&fs::read(p)?)?;
        for pair in file.pairs {
            if !seen.insert(pair.id.clone()) {
                return Err(embmark_core::Error::DuplicateId(pair.id).into());
            }
            pairs.push(pair);
        }
    }
    Ok(pairs)
}

pub fn write_pairs(path: &Path, pairs: &[PairSpec]) -> Result<()> {
    write_atomic(
        path,
        &serde_json::to_vec_pretty(&QueryFile {
            pairs: pairs.to_vec(),
        })?,
    )
}

/// `path` with `suffix` appended to its file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = sidecar(path, ".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Suffix of the metadata file kept next to a WMT1 matrix.
pub const META_SUFFIX: &str = ".json";

/// Writes the matrix as WMT1 and its metadata next to it.
pub fn save_transform(path: &Path, w: &TransformMatrix) -> Result<()> {
    write_wmt1(path, &w.w)?;
    write_atomic(
        &sidecar(path, META_SUFFIX),
        &serde_json::to_vec_pretty(&w.meta())?,
    )
}

/// Reads a WMT1 matrix and, when present, its metadata.
pub fn load_transform(path: &Path) -> Result<TransformMatrix> {
    let m = read_wmt1(path)?;
    let meta = sidecar(path, META_SUFFIX);
    if meta.exists() {
        let meta: TransformMeta = serde_json::from_slice(&fs::read(meta)?)?;
        Ok(TransformMatrix::with_meta(m, &meta)?)
    } else {
        Ok(TransformMatrix::from_matrix(m)?)
    }
}
