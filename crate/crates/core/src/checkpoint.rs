//! Versioned container of named double-precision arrays.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset  size        field
//! 0       8           magic bytes  55 49 41 43 4B 50 54 00  ("UIACKPT\0")
//! 8       4           u32 format version, currently 1
//! 12      4           u32 array count
//! ```
//!
//! followed by each array in insertion order:
//!
//! ```text
//! 4           u32 byte length of the name
//! (that)      UTF-8 name
//! 4           u32 number of dimensions
//! 8 per dim   u64 extents
//! 8 per elem  f64 values, row-major
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::audit;
use crate::error::{Error, Result};
use crate::optim::ParamStore;
use crate::scalar::Scalar;

pub const MAGIC: [u8; 8] = *b"UIACKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    names: Vec<String>,
    arrays: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        assert_eq!(data.len(), shape.iter().product::<usize>());
        if !self.arrays.contains_key(name) {
            self.names.push(name.to_string());
        }
        self.arrays.insert(name.to_string(), (shape, data));
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.arrays.get(name).map(|(s, d)| (&s[..], &d[..]))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Capture every parameter of a store.
    pub fn from_params<T: Scalar>(store: &ParamStore<T>) -> Self {
        let mut ck = Checkpoint::new();
        for p in store.iter() {
            ck.insert(
                &p.name,
                p.shape.clone(),
                p.data.iter().map(|v| v.to_f()).collect(),
            );
        }
        ck
    }

    /// Copy arrays back into an existing store with matching names/shapes.
    pub fn load_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        for pid in store.ids().collect::<Vec<_>>() {
            let name = store.name(pid).to_string();
            let (shape, data) = self.get(&name).ok_or_else(|| {
                Error::Contract(format!("checkpoint is missing parameter {name}"))
            })?;
            if shape != store.shape(pid) {
                return Err(Error::Dim {
                    op: "checkpoint_load",
                    lhs: shape.to_vec(),
                    rhs: store.shape(pid).to_vec(),
                });
            }
            for (dst, src) in store.data_mut(pid).iter_mut().zip(data) {
                *dst = T::from_f(*src);
            }
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.names.len() as u32).to_le_bytes())?;
        for name in &self.names {
            let (shape, data) = &self.arrays[name];
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read, origin: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::format(origin, reason);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| Error::io(origin, e))?;
        if magic != MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let version = read_u32(&mut r, origin)?;
        if version != VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let count = read_u32(&mut r, origin)? as usize;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r, origin)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)
                .map_err(|e| Error::io(origin, e))?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| bad("array name is not valid UTF-8"))?;
            let ndim = read_u32(&mut r, origin)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|e| Error::io(origin, e))?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|e| Error::io(origin, e))?;
                data.push(f64::from_le_bytes(b));
            }
            ck.insert(&name, shape, data);
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = audit::open_read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file), path)
    }
}

fn read_u32(r: &mut impl Read, origin: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::io(origin, e))?;
    Ok(u32::from_le_bytes(b))
}
