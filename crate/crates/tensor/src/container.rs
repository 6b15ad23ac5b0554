//! Single-file container of named tensors and text blobs.
//!
//! Layout (little endian): magic `BIMGCKPT`, `u32` format version, `u32`
//! entry count, then per entry: `u32` name length, name bytes, `u8` kind
//! (0 tensor, 1 text). Tensors carry a `u8` dtype tag, `u32` rank, `u64`
//! dims and raw element bytes; text carries a `u64` length and UTF-8 bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use indexmap::IndexMap;

use crate::error::{Result, TensorError};
use crate::params::ParameterStore;
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"BIMGCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    Text(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: IndexMap<String, Entry>,
}

fn io_err(e: std::io::Error) -> TensorError {
    TensorError::Container(e.to_string())
}

fn to_entry<T: Scalar>(t: &Tensor<T>) -> Entry {
    match T::DTYPE {
        DType::F32 => Entry::F32(t.cast()),
        DType::F64 => Entry::F64(t.cast()),
    }
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn put_tensor<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.entries.insert(name.into(), to_entry(t));
    }

    /// Tensor entry converted to `T` (exact when the stored dtype is `T`).
    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        match self.entries.get(name) {
            Some(Entry::F32(t)) => Ok(t.cast()),
            Some(Entry::F64(t)) => Ok(t.cast()),
            Some(Entry::Text(_)) => Err(TensorError::Container(format!("entry `{name}` is text, not a tensor"))),
            None => Err(TensorError::Container(format!("missing entry `{name}`"))),
        }
    }

    pub fn put_text(&mut self, name: impl Into<String>, text: impl Into<String>) {
        self.entries.insert(name.into(), Entry::Text(text.into()));
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.entries.get(name) {
            Some(Entry::Text(s)) => Ok(s),
            Some(_) => Err(TensorError::Container(format!("entry `{name}` is a tensor, not text"))),
            None => Err(TensorError::Container(format!("missing entry `{name}`"))),
        }
    }

    pub fn put_store<T: Scalar>(&mut self, prefix: &str, store: &ParameterStore<T>) {
        for (name, t) in store.iter() {
            self.put_tensor(format!("{prefix}/{name}"), t);
        }
    }

    /// All tensor entries under `prefix/`, in insertion order.
    pub fn store<T: Scalar>(&self, prefix: &str) -> Result<ParameterStore<T>> {
        let lead = format!("{prefix}/");
        let mut store = ParameterStore::new();
        for name in self.entries.keys() {
            if let Some(rest) = name.strip_prefix(&lead) {
                store.insert(rest, self.tensor::<T>(name)?);
            }
        }
        Ok(store)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION).map_err(io_err)?;
        w.write_u32::<LittleEndian>(self.entries.len() as u32).map_err(io_err)?;
        for (name, entry) in &self.entries {
            w.write_u32::<LittleEndian>(name.len() as u32).map_err(io_err)?;
            w.write_all(name.as_bytes()).map_err(io_err)?;
            match entry {
                Entry::F32(t) => write_tensor(w, t)?,
                Entry::F64(t) => write_tensor(w, t)?,
                Entry::Text(s) => {
                    w.write_u8(1).map_err(io_err)?;
                    w.write_u64::<LittleEndian>(s.len() as u64).map_err(io_err)?;
                    w.write_all(s.as_bytes()).map_err(io_err)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(TensorError::Container("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
        if version != FORMAT_VERSION {
            return Err(TensorError::Container(format!("unsupported format version {version}")));
        }
        let count = r.read_u32::<LittleEndian>().map_err(io_err)?;
        let mut entries = IndexMap::new();
        for _ in 0..count {
            let len = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(io_err)?;
            let name = String::from_utf8(name).map_err(|e| TensorError::Container(e.to_string()))?;
            let entry = match r.read_u8().map_err(io_err)? {
                0 => read_tensor(r)?,
                1 => {
                    let len = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
                    let mut buf = vec![0u8; len];
                    r.read_exact(&mut buf).map_err(io_err)?;
                    Entry::Text(String::from_utf8(buf).map_err(|e| TensorError::Container(e.to_string()))?)
                }
                k => return Err(TensorError::Container(format!("unknown entry kind {k}"))),
            };
            entries.insert(name, entry);
        }
        Ok(Container { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| TensorError::Container(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(io_err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| TensorError::Container(format!("{}: {e}", path.display())))?;
        Self::read_from(&mut BufReader::new(file))
    }
}

fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    w.write_u8(0).map_err(io_err)?;
    w.write_u8(T::DTYPE.tag()).map_err(io_err)?;
    w.write_u32::<LittleEndian>(t.ndim() as u32).map_err(io_err)?;
    for &d in t.shape() {
        w.write_u64::<LittleEndian>(d as u64).map_err(io_err)?;
    }
    let mut buf = Vec::with_capacity(t.numel() * T::DTYPE.size());
    for &v in t.data() {
        v.write_le(&mut buf);
    }
    w.write_all(&buf).map_err(io_err)
}

fn read_tensor<R: Read>(r: &mut R) -> Result<Entry> {
    let tag = r.read_u8().map_err(io_err)?;
    let dtype = DType::from_tag(tag).ok_or_else(|| TensorError::Container(format!("unknown dtype tag {tag}")))?;
    let ndim = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.read_u64::<LittleEndian>().map_err(io_err)? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut buf = vec![0u8; numel * dtype.size()];
    r.read_exact(&mut buf).map_err(io_err)?;
    Ok(match dtype {
        DType::F32 => Entry::F32(Tensor::from_vec(&shape, buf.chunks(4).map(f32::read_le).collect())?),
        DType::F64 => Entry::F64(Tensor::from_vec(&shape, buf.chunks(8).map(f64::read_le).collect())?),
    })
}
