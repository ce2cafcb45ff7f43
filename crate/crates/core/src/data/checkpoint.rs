use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Names starting with this prefix carry optimizer state and metadata
/// rather than model parameters.
pub const RESERVED_PREFIX: &str = "__";

#[derive(Clone, Debug, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        if T::DTYPE_CODE == f32::DTYPE_CODE {
            StoredTensor::F32(t.cast())
        } else {
            StoredTensor::F64(t.cast())
        }
    }

    pub fn dtype_code(&self) -> u32 {
        match self {
            StoredTensor::F32(_) => f32::DTYPE_CODE,
            StoredTensor::F64(_) => f64::DTYPE_CODE,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    /// The tensor in precision `T`; the stored precision must match.
    pub fn to_tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        if self.dtype_code() != T::DTYPE_CODE {
            return Err(Error::CheckpointMismatch(format!(
                "{name}: stored dtype code {}, expected {}",
                self.dtype_code(),
                T::DTYPE_CODE
            )));
        }
        Ok(match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        })
    }
}

/// An ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, StoredTensor)>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(
                self.pos as u64,
                format!("checkpoint truncated reading {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            )
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Adds or replaces `name`.
    pub fn insert(&mut self, name: impl Into<String>, tensor: StoredTensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.entries.push((name, tensor)),
        }
    }

    pub fn insert_tensor<T: Scalar>(&mut self, name: impl Into<String>, tensor: &Tensor<T>) {
        self.insert(name, StoredTensor::from_tensor(tensor));
    }

    pub fn insert_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.insert(name, StoredTensor::F64(Tensor::full(&[1], value)));
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor {name}")))?
            .to_tensor(name)
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t: Tensor<f64> = self.tensor(name)?;
        match t.data() {
            [v] => Ok(*v),
            _ => Err(Error::CheckpointMismatch(format!("{name}: expected a scalar, shape {:?}", t.shape()))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(CHECKPOINT_MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        out.extend((self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend((name.len() as u32).to_le_bytes());
            out.extend(name.as_bytes());
            out.extend(t.dtype_code().to_le_bytes());
            out.extend((t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend((d as u32).to_le_bytes());
            }
            match t {
                StoredTensor::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                StoredTensor::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "bad checkpoint magic (expected \"CKPT\")"));
        }
        let version = c.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
        }
        let count = c.u32("tensor count")?;
        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let len = c.u32("name length")? as usize;
            let at = c.pos;
            let name = std::str::from_utf8(c.take(len, "name")?)
                .map_err(|_| Error::format(at as u64, "tensor name is not UTF-8"))?
                .to_string();
            let at = c.pos;
            let code = c.u32("dtype code")?;
            let ndim = c.u32("rank")? as usize;
            let shape: Vec<usize> = (0..ndim).map(|_| c.u32("dimension").map(|d| d as usize)).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let tensor = match code {
                1 => {
                    let raw = c.take(n * 4, &format!("data of {name}"))?;
                    StoredTensor::F32(Tensor::from_vec(&shape, raw.chunks_exact(4).map(f32::read_le).collect())?)
                }
                2 => {
                    let raw = c.take(n * 8, &format!("data of {name}"))?;
                    StoredTensor::F64(Tensor::from_vec(&shape, raw.chunks_exact(8).map(f64::read_le).collect())?)
                }
                other => {
                    return Err(Error::format(
                        at as u64,
                        format!("tensor {name}: unknown dtype code {other} (expected 1 or 2)"),
                    ))
                }
            };
            if ckpt.get(&name).is_some() {
                return Err(Error::format(at as u64, format!("duplicate tensor {name}")));
            }
            ckpt.entries.push((name, tensor));
        }
        if c.pos != bytes.len() {
            return Err(Error::format(c.pos as u64, format!("{} trailing bytes", bytes.len() - c.pos)));
        }
        Ok(ckpt)
    }

    /// Writes through a temporary file and a rename, so an interrupted save
    /// never replaces a good checkpoint with a partial one.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.encode())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    pub fn insert_params<'a, T: Scalar + 'a>(&mut self, params: impl IntoIterator<Item = &'a Param<T>>) {
        for p in params {
            self.insert_tensor(p.name.clone(), &p.value);
        }
    }

    /// Copies stored values into `params`. Every parameter must be present
    /// with the same shape and precision, and every non-reserved stored tensor
    /// must belong to a parameter.
    pub fn restore_params<T: Scalar>(&self, mut params: Vec<&mut Param<T>>) -> Result<()> {
        for p in params.iter() {
            match self.get(&p.name) {
                None => return Err(Error::CheckpointMismatch(format!("missing tensor {} {:?}", p.name, p.value.shape()))),
                Some(t) if t.shape() != p.value.shape() => {
                    return Err(Error::CheckpointMismatch(format!(
                        "{}: stored shape {:?}, model expects {:?}",
                        p.name,
                        t.shape(),
                        p.value.shape()
                    )))
                }
                Some(t) if t.dtype_code() != T::DTYPE_CODE => {
                    return Err(Error::CheckpointMismatch(format!(
                        "{}: stored dtype code {}, model expects {}",
                        p.name,
                        t.dtype_code(),
                        T::DTYPE_CODE
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self
            .names()
            .find(|n| !n.starts_with(RESERVED_PREFIX) && !params.iter().any(|p| p.name == *n))
        {
            return Err(Error::CheckpointMismatch(format!(
                "stored tensor {extra} {:?} has no counterpart in the model",
                self.get(extra).map(|t| t.shape().to_vec()).unwrap_or_default()
            )));
        }
        for p in params.iter_mut() {
            p.value = self.tensor(&p.name)?;
        }
        Ok(())
    }
}
