//! Flat binary container for named `f64` arrays plus a JSON metadata record.
//! Used for feature-extractor weights files and model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "FCAR" | u32 version | u64 json_len | json bytes
//! u32 n_arrays | per array: u32 name_len, name, u8 ndim, u64 dims.., f64 data..
//! ```
//!
//! Arrays keep insertion order, so writing the same content twice produces
//! byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FCAR";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Archive {
    pub metadata: serde_json::Value,
    pub arrays: IndexMap<String, ArrayD<f64>>,
}

impl Archive {
    pub fn new(metadata: serde_json::Value) -> Self {
        Archive {
            metadata,
            arrays: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, array: ArrayD<f64>) {
        self.arrays.insert(name.into(), array);
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::invalid(format!("archive has no array named {name:?}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::io(path, e);

        w.write_all(MAGIC).map_err(io_err)?;
        w.write_u32::<LittleEndian>(VERSION).map_err(io_err)?;
        let json = serde_json::to_vec(&self.metadata)
            .map_err(|e| Error::io(path, format!("metadata encode: {e}")))?;
        w.write_u64::<LittleEndian>(json.len() as u64).map_err(io_err)?;
        w.write_all(&json).map_err(io_err)?;
        w.write_u32::<LittleEndian>(self.arrays.len() as u32)
            .map_err(io_err)?;
        for (name, array) in &self.arrays {
            w.write_u32::<LittleEndian>(name.len() as u32).map_err(io_err)?;
            w.write_all(name.as_bytes()).map_err(io_err)?;
            w.write_u8(array.ndim() as u8).map_err(io_err)?;
            for d in array.shape() {
                w.write_u64::<LittleEndian>(*d as u64).map_err(io_err)?;
            }
            let data = array
                .as_slice()
                .expect("archive arrays are standard layout");
            for v in data {
                w.write_f64::<LittleEndian>(*v).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    pub fn read(path: &Path) -> Result<Archive> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io_err = |e: std::io::Error| Error::io(path, e);

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(Error::io(path, "not an archive file (bad magic)"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
        if version != VERSION {
            return Err(Error::io(path, format!("unsupported version {version}")));
        }
        let json_len = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        let mut json = vec![0u8; json_len];
        r.read_exact(&mut json).map_err(io_err)?;
        let metadata: serde_json::Value = serde_json::from_slice(&json)
            .map_err(|e| Error::io(path, format!("metadata decode: {e}")))?;

        let n = r.read_u32::<LittleEndian>().map_err(io_err)?;
        let mut arrays = IndexMap::new();
        for _ in 0..n {
            let name_len = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(io_err)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::io(path, "array name is not utf-8"))?;
            let ndim = r.read_u8().map_err(io_err)? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.read_u64::<LittleEndian>().map_err(io_err)? as usize);
            }
            let len: usize = dims.iter().product();
            let mut data = vec![0f64; len];
            r.read_f64_into::<LittleEndian>(&mut data).map_err(io_err)?;
            let array = ArrayD::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| Error::io(path, format!("array {name}: {e}")))?;
            arrays.insert(name, array);
        }
        Ok(Archive { metadata, arrays })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.fca");
        let mut ar = Archive::new(json!({"kind": "test", "n": 3}));
        ar.insert("w", ArrayD::from_elem(IxDyn(&[2, 3]), 1.5));
        ar.insert("b", ArrayD::from_elem(IxDyn(&[3]), -0.25));
        ar.write(&path).unwrap();
        let back = Archive::read(&path).unwrap();
        assert_eq!(back.metadata["kind"], "test");
        assert_eq!(back.arrays.len(), 2);
        assert_eq!(back.get("w").unwrap(), ar.get("w").unwrap());
        assert_eq!(back.get("b").unwrap(), ar.get("b").unwrap());
        // Insertion order preserved.
        assert_eq!(
            back.arrays.keys().collect::<Vec<_>>(),
            vec!["w", "b"]
        );
    }

    #[test]
    fn deterministic_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("1.fca");
        let p2 = dir.path().join("2.fca");
        let mut ar = Archive::new(json!({"x": 1}));
        ar.insert("a", ArrayD::from_elem(IxDyn(&[4]), 0.125));
        ar.write(&p1).unwrap();
        ar.write(&p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fca");
        std::fs::write(&path, b"not an archive").unwrap();
        assert!(matches!(Archive::read(&path), Err(Error::Io { .. })));
    }

    #[test]
    fn missing_array_is_invalid_argument() {
        let ar = Archive::new(json!({}));
        assert!(matches!(ar.get("nope"), Err(Error::InvalidArgument(_))));
    }
}
