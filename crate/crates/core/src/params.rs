//! Named parameter storage and the binary checkpoint format.
//!
//! Checkpoint layout, all integers `u64` little-endian, floats `f64`
//! little-endian:
//!
//! ```text
//! magic   8 bytes  "SISTCKP1"
//! count   u64
//! repeat count times:
//!   name_len u64, name (UTF-8, name_len bytes)
//!   rows u64, cols u64
//!   rows*cols f64 values, row-major
//! ```

use std::io::{Read, Write};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tape, TapeMatrix};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SISTCKP1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable matrices.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Matrix>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn set(&mut self, id: ParamId, value: Matrix) -> Result<()> {
        let cur = self.get(id);
        if cur.shape() != value.shape() {
            return Err(Error::shape("param set", cur.shape(), value.shape()));
        }
        self.values[id.0] = Arc::new(value);
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), &**v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Registers every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        Binding {
            vars: self
                .values
                .iter()
                .map(|v| tape.leaf(Arc::clone(v)))
                .collect(),
        }
    }

    /// Wraps every parameter as a constant; nothing is recorded.
    pub fn constants(&self) -> Binding {
        Binding {
            vars: self
                .values
                .iter()
                .map(|v| TapeMatrix::constant_shared(Arc::clone(v)))
                .collect(),
        }
    }

    /// SHA-256 over names, shapes and the little-endian value bytes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (_, name, m) in self.iter() {
            h.update(name.as_bytes());
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for v in m.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for (_, name, m) in self.iter() {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(m.rows() as u64).to_le_bytes())?;
            w.write_all(&(m.cols() as u64).to_le_bytes())?;
            for v in m.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a parameter checkpoint".into()));
        }
        let count = read_u64(&mut r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = read_u64(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(read_f64(&mut r)?);
            }
            store.add(name, Matrix::from_vec(rows, cols, data)?);
        }
        Ok(store)
    }

    /// Copies values from `other` by name; shapes must agree.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for i in 0..self.len() {
            let id = ParamId(i);
            let Some(src) = other.find(self.name(id)) else {
                return Err(Error::Format(format!("checkpoint lacks {}", self.name(id))));
            };
            self.set(id, other.get(src).clone())?;
        }
        Ok(())
    }
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Parameters as tape values for one forward pass.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<TapeMatrix>,
}

impl Binding {
    pub fn get(&self, id: ParamId) -> &TapeMatrix {
        &self.vars[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &TapeMatrix)> {
        self.vars.iter().enumerate().map(|(i, v)| (ParamId(i), v))
    }
}

impl std::ops::Index<ParamId> for Binding {
    type Output = TapeMatrix;

    fn index(&self, id: ParamId) -> &TapeMatrix {
        &self.vars[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_preserves_order_and_bits() {
        let mut s = ParamStore::new();
        s.add(
            "a",
            Matrix::from_rows(&[[1.5, -0.0], [f64::MIN_POSITIVE, 3.0]]),
        );
        s.add("layer0.w", Matrix::column(&[0.1, 0.2, 0.3]));
        let mut buf = Vec::new();
        s.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"SISTCKP1");
        let back = ParamStore::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.checksum(), s.checksum());
        assert_eq!(back.name(ParamId(1)), "layer0.w");
    }

    #[test]
    fn rejects_foreign_bytes() {
        assert!(ParamStore::read_checkpoint(&b"NOTACKPT\0\0\0\0\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn checksum_tracks_values() {
        let mut s = ParamStore::new();
        let id = s.add("w", Matrix::zeros(2, 2));
        let before = s.checksum();
        s.get_mut(id).set(0, 0, 1.0);
        assert_ne!(before, s.checksum());
    }
}
