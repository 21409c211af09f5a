//! Precomputed per-page embedding vectors in the `PSSE` binary format.
//!
//! ```text
//! "PSSE" | u32 version = 1 | u32 dim | u64 count
//! count × (u32 key length | key UTF-8)
//! count · dim little-endian f32, row-major in key order
//! ```

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::Reader;

pub const MAGIC: &[u8; 4] = b"PSSE";
pub const VERSION: u32 = 1;
/// Magic, version, dim and count.
pub const HEADER_LEN: usize = 4 + 4 + 4 + 8;

/// `keys.len() × dim` matrix of finite `f32` rows addressed by unique keys.
#[derive(Clone, Debug)]
pub struct EmbeddingMatrix {
    dim: usize,
    keys: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.keys == other.keys
            && self.data.iter().map(|v| v.to_bits()).eq(other.data.iter().map(|v| v.to_bits()))
    }
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingMatrix {
            dim,
            keys: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = (String, Vec<f32>)>) -> Result<Self> {
        let mut m = Self::new(dim)?;
        for (k, r) in rows {
            m.push(k, &r)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, key: impl Into<String>, row: &[f32]) -> Result<()> {
        let key = key.into();
        if row.len() != self.dim {
            return Err(Error::shape(format!(
                "embedding {key} has {} values, store dim is {}",
                row.len(),
                self.dim
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptEmbedding(key));
        }
        if self.index.contains_key(&key) {
            return Err(Error::DuplicateKey(key));
        }
        self.index.insert(key.clone(), self.keys.len());
        self.keys.push(key);
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn lookup(&self, key: &str) -> Result<&[f32]> {
        let &i = self
            .index
            .get(key)
            .ok_or_else(|| Error::UnknownKey(key.to_string()))?;
        Ok(&self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn encode(&self) -> Vec<u8> {
        let keytable: usize = self.keys.iter().map(|k| 4 + k.len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + keytable + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.keys.len() as u64).to_le_bytes());
        for k in &self.keys {
            out.extend_from_slice(&(k.len() as u32).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad embedding store magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported embedding store version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.len_u64()?;
        let mut m = Self::new(dim)?;
        let mut keys = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            keys.push(r.string(n)?);
        }
        let n = count
            .checked_mul(dim)
            .ok_or_else(|| Error::Format("embedding payload too large".into()))?;
        let data = r.f32s(n)?;
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after embedding payload".into()));
        }
        for (i, key) in keys.into_iter().enumerate() {
            m.push(key, &data[i * dim..(i + 1) * dim])?;
        }
        Ok(m)
    }
}

pub fn load_store(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::decode(&bytes)
}

pub fn write_store(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, matrix.encode()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn two_rows_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.psse");
        let m = EmbeddingMatrix::from_rows(
            4,
            [
                ("a".to_string(), vec![1.0, 0.0, 0.0, 0.0]),
                ("b".to_string(), vec![0.0, 1.0, 0.0, 0.0]),
            ],
        )
        .unwrap();
        write_store(&m, &path).unwrap();
        let back = load_store(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.lookup("b").unwrap(), &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(back.lookup("c"), Err(Error::UnknownKey(k)) if k == "c"));
    }

    #[test]
    fn empty_file_is_a_format_error() {
        assert!(matches!(EmbeddingMatrix::decode(&[]), Err(Error::Format(_))));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty");
        std::fs::write(&path, b"").unwrap();
        assert!(matches!(load_store(&path), Err(Error::Format(_))));
    }

    #[test]
    fn zero_rows_and_file_size() {
        let m = EmbeddingMatrix::new(8).unwrap();
        let bytes = m.encode();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(EmbeddingMatrix::decode(&bytes).unwrap().len(), 0);

        let one = EmbeddingMatrix::from_rows(8, [("key7".to_string(), vec![0.5; 8])]).unwrap();
        // header 20 + key table (4 + 4) + 8 floats
        assert_eq!(one.encode().len(), 20 + 8 + 8 * 4);
    }

    #[test]
    fn rejects_bad_header_nan_and_zero_dim() {
        let m = EmbeddingMatrix::from_rows(2, [("k".to_string(), vec![1.0, 2.0])]).unwrap();
        let mut bytes = m.encode();
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(EmbeddingMatrix::decode(&bad), Err(Error::Format(_))));
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(EmbeddingMatrix::decode(&bytes), Err(Error::CorruptEmbedding(k)) if k == "k"));
        assert!(EmbeddingMatrix::new(0).is_err());
        let mut zero_dim = EmbeddingMatrix::new(1).unwrap().encode();
        zero_dim[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(EmbeddingMatrix::decode(&zero_dim), Err(Error::Format(_))));
    }

    #[test]
    fn duplicate_keys_rejected() {
        let mut m = EmbeddingMatrix::new(1).unwrap();
        m.push("x", &[1.0]).unwrap();
        assert!(matches!(m.push("x", &[2.0]), Err(Error::DuplicateKey(_))));
        assert!(m.push("y", &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn write_load_write_is_bit_identical(
            rows in prop::collection::vec(prop::collection::vec(-1e6f32..1e6, 5), 0..100)
        ) {
            let m = EmbeddingMatrix::from_rows(
                5,
                rows.into_iter().enumerate().map(|(i, r)| (format!("page-{i}"), r)),
            ).unwrap();
            let bytes = m.encode();
            let back = EmbeddingMatrix::decode(&bytes).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.encode(), bytes);
            for k in m.keys() {
                prop_assert_eq!(back.lookup(k).unwrap().len(), 5);
            }
        }
    }
}
