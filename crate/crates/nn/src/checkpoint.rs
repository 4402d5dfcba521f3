//! `SSCK` checkpoint container.
//!
//! Layout (little-endian): magic `SSCK`, version u16, metadata length u32
//! and UTF-8 `key=value` lines, entry count u32, then per entry: name length
//! u32, name bytes, dtype u8, rank u8, dims u32 × rank, raw payload.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{NnError, Result};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SSCK";
pub const VERSION: u16 = 1;
const OPT_FIRST: &str = "opt.m.";
const OPT_SECOND: &str = "opt.v.";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl StoredTensor {
    fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        let mut bytes = Vec::new();
        T::write_le(t.data(), &mut bytes);
        let data = match T::DTYPE {
            DType::F32 => TensorData::F32(f32::read_le(&bytes)),
            DType::F64 => TensorData::F64(f64::read_le(&bytes)),
        };
        Self {
            shape: t.shape().to_vec(),
            data,
        }
    }

    /// Exact when `T` matches the stored dtype.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data: Vec<T> = match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| T::from_f64_lossy(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::from_f64_lossy(x)).collect(),
        };
        Tensor::new(&self.shape, data).expect("shape validated on read")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, StoredTensor>,
    /// Registration order of `tensors`.
    pub order: Vec<String>,
}

impl Checkpoint {
    pub fn from_store<T: Scalar>(
        store: &ParamStore<T>,
        metadata: BTreeMap<String, String>,
        optimizer: Option<&Adam<T>>,
    ) -> Self {
        let mut ck = Checkpoint {
            metadata,
            ..Default::default()
        };
        for (_, p) in store.iter() {
            ck.insert(p.name.clone(), StoredTensor::from_tensor(&p.value));
        }
        if let Some(opt) = optimizer {
            let (m, v) = opt.moments();
            for ((_, p), (m, v)) in store.iter().zip(m.iter().zip(v)) {
                ck.insert(format!("{OPT_FIRST}{}", p.name), StoredTensor::from_tensor(m));
                ck.insert(format!("{OPT_SECOND}{}", p.name), StoredTensor::from_tensor(v));
            }
            ck.metadata.insert("opt.steps".into(), opt.steps().to_string());
        }
        ck
    }

    fn insert(&mut self, name: String, t: StoredTensor) {
        self.order.push(name.clone());
        self.tensors.insert(name, t);
    }

    /// Copies every parameter of `store` from the checkpoint by name.
    pub fn load_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        for p in store.iter_mut() {
            let st = self
                .tensors
                .get(&p.name)
                .ok_or_else(|| NnError::UnknownParameter(p.name.clone()))?;
            if st.shape != p.value.shape() {
                return Err(NnError::Checkpoint(format!(
                    "`{}` has shape {:?}, model expects {:?}",
                    p.name,
                    st.shape,
                    p.value.shape()
                )));
            }
            p.value = st.to_tensor();
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(NnError::Checkpoint(format!("metadata entry `{k}` not encodable")));
            }
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(meta.as_bytes());
        buf.extend_from_slice(&(self.order.len() as u32).to_le_bytes());
        for name in &self.order {
            let t = &self.tensors[name];
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            let dtype = match t.data {
                TensorData::F32(_) => DType::F32,
                TensorData::F64(_) => DType::F64,
            };
            buf.push(dtype as u8);
            buf.push(t.shape.len() as u8);
            for &d in &t.shape {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => f32::write_le(v, &mut buf),
                TensorData::F64(v) => f64::write_le(v, &mut buf),
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = cur.u16()?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = cur.u32()? as usize;
        let meta = std::str::from_utf8(cur.take(meta_len)?)
            .map_err(|_| NnError::Checkpoint("metadata is not UTF-8".into()))?;
        let mut ck = Checkpoint::default();
        for line in meta.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NnError::Checkpoint(format!("bad metadata line `{line}`")))?;
            ck.metadata.insert(k.to_string(), v.to_string());
        }
        let count = cur.u32()?;
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| NnError::Checkpoint("tensor name is not UTF-8".into()))?;
            let dtype = DType::from_tag(cur.u8()?)
                .ok_or_else(|| NnError::Checkpoint(format!("`{name}`: unknown dtype")))?;
            let rank = cur.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let payload = cur.take(numel * dtype.size())?;
            let data = match dtype {
                DType::F32 => TensorData::F32(f32::read_le(payload)),
                DType::F64 => TensorData::F64(f64::read_le(payload)),
            };
            ck.insert(name, StoredTensor { shape, data });
        }
        Ok(ck)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
