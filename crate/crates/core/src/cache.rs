//! On-disk cache of Galerkin decompositions.
//!
//! Files are named `<key>.hscd` where the key is the SHA-256 hex digest of a
//! canonical JSON document describing the operator, `hbar` and cutoff. The
//! layout is little-endian throughout:
//!
//! ```text
//! offset  size        content
//! 0       4           magic "HSCD"
//! 4       4           format version (u32) = 1
//! 8       8           rows (u64)
//! 16      8           cols (u64)
//! 24      8*cols      eigenvalues (f64)
//! ...     8*rows*cols eigenvectors, column-major (f64)
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HSCD";
const VERSION: u32 = 1;

/// SHA-256 hex digest of the compact JSON serialization (object keys are
/// sorted by `serde_json`'s default map).
pub fn content_hash(doc: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(doc).expect("JSON values always serialize");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Clone, Debug)]
pub struct DecompositionCache {
    dir: PathBuf,
}

impl DecompositionCache {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(DecompositionCache {
            dir: dir.as_ref().to_path_buf(),
        })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.hscd"))
    }

    pub fn store(&self, key: &str, eigenvalues: &[f64], vectors: &DMatrix<f64>) -> Result<()> {
        if eigenvalues.len() != vectors.ncols() {
            return Err(Error::DimensionMismatch {
                expected: vectors.ncols(),
                found: eigenvalues.len(),
            });
        }
        let mut buf = Vec::with_capacity(24 + 8 * (eigenvalues.len() + vectors.len()));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(vectors.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(vectors.ncols() as u64).to_le_bytes());
        for v in eigenvalues.iter().chain(vectors.as_slice()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        // write-then-rename so concurrent readers never see a partial file
        let tmp = self.dir.join(format!("{key}.tmp{}", std::process::id()));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
        fs::rename(&tmp, self.path(key))?;
        Ok(())
    }

    /// `None` if no entry exists; an error if the entry is corrupt.
    pub fn load(&self, key: &str) -> Result<Option<(Vec<f64>, DMatrix<f64>)>> {
        let path = self.path(key);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&path)?;
        decode(&bytes).map(Some)
    }
}

fn decode(bytes: &[u8]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if bytes.len() < 24 || &bytes[..4] != MAGIC {
        return Err(Error::Cache("bad header".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    if u32_at(4) != VERSION {
        return Err(Error::Cache(format!("unknown version {}", u32_at(4))));
    }
    let rows = u64_at(8) as usize;
    let cols = u64_at(16) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_add(cols))
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(24));
    if expected != Some(bytes.len()) {
        return Err(Error::Cache(format!("length {} does not match {rows}x{cols}", bytes.len())));
    }
    let floats: Vec<f64> = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let values = floats[..cols].to_vec();
    let vectors = DMatrix::from_column_slice(rows, cols, &floats[cols..]);
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DecompositionCache::new(dir.path()).unwrap();
        let v = DMatrix::from_fn(3, 2, |i, j| i as f64 - 0.5 * j as f64);
        cache.store("abc", &[1.0, 2.5], &v).unwrap();
        let (vals, vecs) = cache.load("abc").unwrap().unwrap();
        assert_eq!(vals, vec![1.0, 2.5]);
        assert_eq!(vecs, v);
        assert!(cache.load("missing").unwrap().is_none());
        std::fs::write(dir.path().join("bad.hscd"), b"HSCD\x01\0\0\0short").unwrap();
        assert!(matches!(cache.load("bad"), Err(Error::Cache(_))));
    }

    #[test]
    fn hash_is_stable() {
        let a = content_hash(&serde_json::json!({"b": 1, "a": [1.5, "x"]}));
        let b = content_hash(&serde_json::json!({"a": [1.5, "x"], "b": 1}));
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
    }
}
