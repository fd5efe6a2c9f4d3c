//! Named-tensor archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PKKD" | version u32 | count u32 |
//!   { name_len u32 | name utf-8 | dtype u8 | rank u8 | extents u64 * rank | payload } * count |
//! crc32 u32 of every preceding byte
//! ```

use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"PKKD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    U64(Vec<u64>),
}

impl Payload {
    fn tag(&self) -> u8 {
        match self {
            Payload::F32(_) => DType::F32 as u8,
            Payload::F64(_) => DType::F64 as u8,
            Payload::U8(_) => 2,
            Payload::U64(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::U8(v) => v.len(),
            Payload::U64(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl Entry {
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        let payload = match T::DTYPE {
            DType::F32 => Payload::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => Payload::F64(t.to_f64_vec()),
        };
        Entry {
            shape: t.shape().to_vec(),
            payload,
        }
    }

    /// Converts back to a tensor; the stored dtype must match `T`.
    pub fn to_tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let values: Vec<T> = match (&self.payload, T::DTYPE) {
            (Payload::F32(v), DType::F32) => v.iter().map(|&x| T::lit(x as f64)).collect(),
            (Payload::F64(v), DType::F64) => v.iter().map(|&x| T::lit(x)).collect(),
            _ => {
                return Err(Error::invalid(format!(
                    "tensor `{name}` has dtype tag {} but {:?} was requested",
                    self.payload.tag(),
                    T::DTYPE
                )))
            }
        };
        Tensor::new(self.shape.clone(), values)
    }
}

/// Ordered collection of named entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    entries: IndexMap<String, Entry>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, payload: Payload) -> Result<()> {
        let name = name.into();
        let numel: usize = shape.iter().product();
        if numel != payload.len() {
            return Err(Error::invalid(format!(
                "entry `{name}`: shape {shape:?} holds {numel} values, payload has {}",
                payload.len()
            )));
        }
        if shape.len() > u8::MAX as usize {
            return Err(Error::invalid(format!("entry `{name}`: rank {} too large", shape.len())));
        }
        if self.entries.insert(name.clone(), Entry { shape, payload }).is_some() {
            return Err(Error::invalid(format!("duplicate entry `{name}`")));
        }
        Ok(())
    }

    pub fn insert_tensor<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) -> Result<()> {
        let e = Entry::from_tensor(t);
        self.insert(name, e.shape, e.payload)
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name)
            .ok_or_else(|| Error::invalid(format!("checkpoint is missing `{name}`")))
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        self.require(name)?.to_tensor(name)
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match &self.require(name)?.payload {
            Payload::U64(v) => Ok(v),
            _ => Err(Error::invalid(format!("`{name}` is not a u64 entry"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match &self.require(name)?.payload {
            Payload::U8(v) => Ok(v),
            _ => Err(Error::invalid(format!("`{name}` is not a byte entry"))),
        }
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match &self.require(name)?.payload {
            Payload::F64(v) => Ok(v),
            _ => Err(Error::invalid(format!("`{name}` is not an f64 entry"))),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, e) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(e.payload.tag());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &e.payload {
                Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::U8(v) => out.extend_from_slice(v),
                Payload::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: format!("bad magic {magic:02x?}, expected \"PKKD\""),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        if bytes.len() < 16 {
            return Err(r.fail("file too short for a checksum"));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let count = r.u32("entry count")?;
        let mut archive = Archive::new();
        for _ in 0..count {
            let at = r.pos;
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Format {
                    offset: at as u64,
                    detail: "entry name is not utf-8".into(),
                })?
                .to_string();
            let tag_at = r.pos;
            let tag = r.take(1, "dtype")?[0];
            let rank = r.take(1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = u64::from_le_bytes(r.take(8, "extent")?.try_into().expect("8 bytes"));
                shape.push(usize::try_from(d).map_err(|_| r.fail("extent overflows usize"))?);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| r.fail("entry size overflows"))?;
            let width = match tag {
                0 => 4,
                1 => 8,
                2 => 1,
                3 => 8,
                t => {
                    return Err(Error::Format {
                        offset: tag_at as u64,
                        detail: format!("unknown dtype tag {t}"),
                    })
                }
            };
            let raw = r.take(numel.checked_mul(width).ok_or_else(|| r.fail("payload overflows"))?, "payload")?;
            let payload = match tag {
                0 => Payload::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
                1 => Payload::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
                2 => Payload::U8(raw.to_vec()),
                _ => Payload::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
            };
            if archive.entries.contains_key(&name) {
                return Err(Error::Format {
                    offset: at as u64,
                    detail: format!("duplicate entry `{name}`"),
                });
            }
            archive.entries.insert(name, Entry { shape, payload });
        }
        if r.pos != body.len() {
            return Err(r.fail(format!("{} trailing bytes before the checksum", body.len() - r.pos)));
        }
        Ok(archive)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}
