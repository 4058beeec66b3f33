//! Binary container for named tensors plus string metadata.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"GEOGANCK"  u32 version  str kind
//! u32 n_meta   { str key  str value }*
//! u32 n_tensor { str name  u32 rank  u64 dim*rank  f64 value* }*
//! ```
//!
//! where `str` is a u32 byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::Tensor;

const MAGIC: &[u8; 8] = b"GEOGANCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Arc<Tensor>>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Parse {
                line: 0,
                message: format!("checkpoint truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Parse {
            line: 0,
            message: "checkpoint string is not UTF-8".into(),
        })
    }
}

impl Archive {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            ..Self::default()
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8).ok() != Some(&MAGIC[..]) {
            return Err(Error::Parse {
                line: 0,
                message: "not a checkpoint file".into(),
            });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let kind = r.str()?;
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.str()?;
            meta.insert(k, r.str()?);
        }
        let mut tensors = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let bytes = r.take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::invalid("tensor too large"))?,
            )?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::shape(&name, e))?;
            tensors.insert(name, Arc::new(t));
        }
        if r.pos != buf.len() {
            return Err(Error::Parse {
                line: 0,
                message: format!("{} trailing bytes after checkpoint", buf.len() - r.pos),
            });
        }
        Ok(Self {
            kind,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    pub fn expect_kind(self, kind: &str) -> Result<Self> {
        if self.kind != kind {
            return Err(Error::invalid(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(self)
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::invalid(format!("checkpoint lacks {key}")))?;
        v.parse()
            .map_err(|_| Error::invalid(format!("checkpoint field {key}={v:?} does not parse")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Archive {
        let mut a = Archive::new("test");
        a.meta.insert("step".into(), "12".into());
        a.tensors.insert(
            "a/b".into(),
            Arc::new(Tensor::new(vec![2, 1], vec![1.5, -0.0]).unwrap()),
        );
        a.tensors
            .insert("s".into(), Arc::new(Tensor::scalar(f64::MIN_POSITIVE)));
        a
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = sample();
        let bytes = a.to_bytes();
        let b = Archive::from_bytes(&bytes).unwrap();
        assert_eq!(b.to_bytes(), bytes);
        assert_eq!(b.tensors["a/b"].data()[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(b.meta_parse::<u64>("step").unwrap(), 12);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(Archive::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Archive::from_bytes(b"nonsense").is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(
            Archive::from_bytes(&v2),
            Err(Error::Version { found: 2, .. })
        ));
        let mut long = bytes;
        long.push(0);
        assert!(Archive::from_bytes(&long).is_err());
    }
}
