//! `PSSW` parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PSSW" | u32 version = 1 | u64 descriptor length | descriptor (UTF-8 JSON)
//! u64 tensor count
//! per tensor: u32 name length | name (UTF-8) | u32 ndim = 2 | u64 rows | u64 cols
//!             | rows·cols f32
//! ```

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::Reader;
use crate::nn::Module;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"PSSW";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Architecture descriptor, stored verbatim.
    pub descriptor: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_module<T: Scalar>(descriptor: impl Into<String>, module: &impl Module<T>) -> Self {
        let tensors = module
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.cast::<f32>()))
            .collect();
        Checkpoint {
            descriptor: descriptor.into(),
            tensors,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.descriptor.len() as u64).to_le_bytes());
        out.extend_from_slice(self.descriptor.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let dlen = r.len_u64()?;
        let descriptor = r.string(dlen)?;
        let count = r.len_u64()?;
        let mut tensors = Vec::new();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = r.string(nlen)?;
            if !seen.insert(name.clone()) {
                return Err(Error::Format(format!("duplicate tensor {name}")));
            }
            let ndim = r.u32()?;
            if ndim != 2 {
                return Err(Error::Format(format!("tensor {name} has {ndim} dims")));
            }
            let rows = r.len_u64()?;
            let cols = r.len_u64()?;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Format(format!("tensor {name} too large")))?;
            let data = r.f32s(n)?;
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("tensor {name} has non-finite values")));
            }
            tensors.push((name, Tensor::new(rows, cols, data)?));
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint {
            descriptor,
            tensors,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Copies stored tensors into `module`. Names and shapes must match
    /// exactly, in both directions.
    pub fn load_into<T: Scalar>(&self, module: &mut impl Module<T>) -> Result<()> {
        let expected: Vec<(String, (usize, usize))> = module
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape()))
            .collect();
        if expected.len() != self.tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for ((name, shape), (stored, t)) in expected.iter().zip(&self.tensors) {
            if name != stored || *shape != t.shape() {
                return Err(Error::Format(format!(
                    "checkpoint tensor {stored} {:?} does not match model tensor {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        let mut i = 0;
        module.visit_mut("", &mut |_, dst| {
            *dst = self.tensors[i].1.cast();
            i += 1;
        });
        Ok(())
    }
}
