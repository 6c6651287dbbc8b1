//! Binary container for named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"SCKP"
//! version  u32            (currently 1)
//! meta     u32 length + UTF-8 bytes (free-form, may be empty)
//! count    u32
//! entries  count x { name: u32 length + UTF-8, ndim: u32, dims: ndim x u64, data: f64 x prod(dims) }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SCKP";
pub const FORMAT_VERSION: u32 = 1;

/// Named tensors plus a metadata string.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParameterStore, meta: impl Into<String>) -> Self {
        Checkpoint { meta: meta.into(), entries: store.iter().map(|(k, p)| (k.to_string(), p.value.clone())).collect() }
    }

    /// Entries whose names do not start with `skip_prefix` become a parameter store.
    pub fn to_store(&self, skip_prefix: &str) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        for (k, t) in &self.entries {
            if !k.starts_with(skip_prefix) {
                store.insert(k.clone(), t.clone())?;
            }
        }
        Ok(store)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(k, _)| k == name).map(|(_, t)| t)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_str(w, &self.meta)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            write_str(w, name)?;
            w.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version} (expected {FORMAT_VERSION})")));
        }
        let meta = read_str(r)?;
        let count = read_u32(r)? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = read_str(r)?;
            let ndim = read_u32(r)? as usize;
            if ndim == 0 || ndim > 8 {
                return Err(Error::Format(format!("entry `{name}` has {ndim} dims")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("entry `{name}`: {e}")))?;
            entries.push((name, t));
        }
        Ok(Checkpoint { meta, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::Missing(format!("checkpoint {}: {e}", path.display())))?;
        Self::read_from(&mut BufReader::new(f))
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::Format(format!("invalid UTF-8: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips(vals in prop::collection::vec(-1e6f64..1e6, 1..40), meta in "[a-z =\n]{0,30}") {
            let n = vals.len();
            let ck = Checkpoint {
                meta,
                entries: vec![
                    ("a.w".into(), Tensor::new(&[n], vals.clone()).unwrap()),
                    ("b".into(), Tensor::new(&[1, n], vals).unwrap()),
                ],
            };
            let mut buf = Vec::new();
            ck.write_to(&mut buf).unwrap();
            prop_assert_eq!(Checkpoint::read_from(&mut buf.as_slice()).unwrap(), ck);
        }
    }

    #[test]
    fn header_is_versioned_little_endian() {
        let ck = Checkpoint { meta: String::new(), entries: vec![("x".into(), Tensor::scalar(1.0))] };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SCKP");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[buf.len() - 8..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_wrong_version() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"SCKP");
        buf.extend_from_slice(&9u32.to_le_bytes());
        assert!(matches!(Checkpoint::read_from(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}
