//! Named parameter tensors and the `UNP1` model file.
//!
//! Layout, all little-endian: magic `UNP1`, version `u16`, then `in_channels`,
//! `num_classes`, `base_filters`, `depth` as `u32`, followed by records of
//! `{name length u16, name bytes, rank u8, dims u32 × rank, f32 payload}`
//! until end of file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{UNet, UNetConfig};
use crate::binio::{write_all, LeReader};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

pub const MODEL_MAGIC: [u8; 4] = *b"UNP1";
pub const MODEL_VERSION: u16 = 1;

/// Ordered, uniquely named tensors. Iteration follows insertion order, which
/// for a model is [`UNet::to_store`]'s block order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Appends a tensor. Panics if the name is already present.
    pub fn push(&mut self, name: String, tensor: Tensor) {
        assert!(self.get(&name).is_none(), "duplicate parameter name {name}");
        self.entries.push((name, tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Invalid(format!("parameter file has no tensor named {name}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }
}

/// A `u64` carried bit-exactly in two `f32` slots (low word first).
pub(super) fn encode_u64(v: u64) -> Tensor {
    Tensor::vector(vec![f32::from_bits(v as u32), f32::from_bits((v >> 32) as u32)])
}

pub(super) fn decode_u64(t: &Tensor) -> Result<u64> {
    match t.data() {
        [lo, hi] => Ok(lo.to_bits() as u64 | (hi.to_bits() as u64) << 32),
        other => Err(Error::Invalid(format!(
            "counter tensor must hold 2 values, found {}",
            other.len()
        ))),
    }
}

/// The architecture fields stored in a model file header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelHeader {
    pub in_channels: u32,
    pub num_classes: u32,
    pub base_filters: u32,
    pub depth: u32,
}

impl ModelHeader {
    pub fn of(config: &UNetConfig) -> Result<Self> {
        let conv =
            |field: &str, v: usize| u32::try_from(v).map_err(|_| Error::Invalid(format!("{field} {v} exceeds u32")));
        Ok(ModelHeader {
            in_channels: conv("in_channels", config.in_channels)?,
            num_classes: conv("num_classes", config.num_classes)?,
            base_filters: conv("base_filters", config.base_filters)?,
            depth: conv("depth", config.depth)?,
        })
    }

    /// Errors with the first field that differs from `config`.
    pub fn check(&self, config: &UNetConfig) -> Result<()> {
        let pairs: [(&'static str, u32, usize); 4] = [
            ("in_channels", self.in_channels, config.in_channels),
            ("num_classes", self.num_classes, config.num_classes),
            ("base_filters", self.base_filters, config.base_filters),
            ("depth", self.depth, config.depth),
        ];
        for (field, found, expected) in pairs {
            if found as usize != expected {
                return Err(Error::ConfigMismatch {
                    field,
                    expected: expected as u64,
                    found: found as u64,
                });
            }
        }
        Ok(())
    }

    /// A config with this architecture; `weight_decay` and `seed` take defaults.
    pub fn to_config(&self) -> UNetConfig {
        UNetConfig {
            in_channels: self.in_channels as usize,
            num_classes: self.num_classes as usize,
            base_filters: self.base_filters as usize,
            depth: self.depth as usize,
            ..UNetConfig::default()
        }
    }
}

pub fn write_params<W: Write>(w: &mut W, header: &ModelHeader, store: &ParamStore) -> Result<()> {
    write_all(w, &MODEL_MAGIC)?;
    write_all(w, &MODEL_VERSION.to_le_bytes())?;
    for v in [
        header.in_channels,
        header.num_classes,
        header.base_filters,
        header.depth,
    ] {
        write_all(w, &v.to_le_bytes())?;
    }
    for (name, t) in store.iter() {
        let len = u16::try_from(name.len()).map_err(|_| Error::Invalid(format!("tensor name too long: {name}")))?;
        write_all(w, &len.to_le_bytes())?;
        write_all(w, name.as_bytes())?;
        let s = t.shape();
        let dims: Vec<usize> = if s.n == 1 && s.h == 1 && s.w == 1 {
            vec![s.c]
        } else {
            s.dims().to_vec()
        };
        write_all(w, &[dims.len() as u8])?;
        for d in dims {
            let d = u32::try_from(d).map_err(|_| Error::Invalid(format!("{name}: dim {d} exceeds u32")))?;
            write_all(w, &d.to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(4 * t.len());
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        write_all(w, &payload)?;
    }
    Ok(())
}

pub fn read_params<R: Read>(r: R) -> Result<(ModelHeader, ParamStore)> {
    let mut r = LeReader::new(r, "model file");
    let magic = r.bytes::<4>("magic")?;
    if magic != MODEL_MAGIC {
        return Err(Error::BadMagic {
            expected: MODEL_MAGIC,
            found: magic,
        });
    }
    let version = r.u16("version")?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            supported: MODEL_VERSION,
        });
    }
    let header = ModelHeader {
        in_channels: r.u32("config block")?,
        num_classes: r.u32("config block")?,
        base_filters: r.u32("config block")?,
        depth: r.u32("config block")?,
    };
    let mut store = ParamStore::new();
    while let Some(first) = r.peek_eof()? {
        let len = u16::from_le_bytes([first, r.u8("record name length")?]) as usize;
        let mut name = vec![0u8; len];
        r.fill(&mut name, "record name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Invalid("tensor name is not UTF-8".into()))?;
        let rank = r.u8(&name)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32(&name)? as usize);
        }
        let shape = match dims.as_slice() {
            [c] => Shape::new(1, *c, 1, 1),
            [n, c, h, w] => Shape::new(*n, *c, *h, *w),
            _ => return Err(Error::Invalid(format!("tensor {name} has unsupported rank {rank}"))),
        };
        let mut bytes = vec![0u8; 4 * shape.len()];
        r.fill(&mut bytes, &name)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if store.get(&name).is_some() {
            return Err(Error::Invalid(format!("duplicate tensor name {name}")));
        }
        store.push(name, Tensor::from_vec(shape, data)?);
    }
    Ok((header, store))
}

pub fn save_params<T: Scalar>(model: &UNet<T>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_params(&mut w, &ModelHeader::of(model.config())?, &model.to_store())?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<(ModelHeader, ParamStore)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_params(BufReader::new(file))
}

impl<T: Scalar> UNet<T> {
    /// Loads a model file whose architecture must match `config`.
    pub fn load(path: &Path, config: &UNetConfig) -> Result<Self> {
        let (header, store) = load_params(path)?;
        header.check(config)?;
        UNet::from_store(config, &store)
    }

    /// Loads a model file, taking the architecture from its header.
    pub fn load_any(path: &Path) -> Result<Self> {
        let (header, store) = load_params(path)?;
        UNet::from_store(&header.to_config(), &store)
    }
}
