//! Binary checkpoint format.
//!
//! ```text
//! "ENPR"            magic
//! u16               format version
//! u32 ×3            input shape (C, H, W)
//! u32               layer count, then per layer:
//!     u16 + utf8    id
//!     u8            kind (0 conv, 1 linear, 2 relu, 3 maxpool, 4 avgpool, 5 flatten)
//!     u32 ×4        width, kernel, stride, pad
//! u32               entry count, then per entry:
//!     u16 + utf8    name
//!     u8            dtype (0 = f32, 1 = f64)
//!     u8            rank, then u32 per extent
//!     payload       little-endian values
//! ```
//!
//! All integers are little-endian. A file with zero layers is a plain tensor
//! archive (used for agent state).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{LayerOp, Params, Tensor};

use super::{resolve_specs, Layer, LayerDecl, ModelGraph};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ENPR";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum EntryData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: EntryData,
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    pub input_shape: [usize; 3],
    pub decls: Vec<LayerDecl>,
    pub entries: Vec<Entry>,
}

impl Archive {
    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for d in self.input_shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.decls.len() as u32).to_le_bytes());
        for d in &self.decls {
            put_str(&mut out, &d.id);
            let (kind, stride, pad) = match d.op {
                LayerOp::Conv { stride, pad } => (0u8, stride, pad),
                LayerOp::Linear => (1, 0, 0),
                LayerOp::Relu => (2, 0, 0),
                LayerOp::MaxPool { size } => (3, size, 0),
                LayerOp::AvgPool { size } => (4, size, 0),
                LayerOp::Flatten => (5, 0, 0),
            };
            out.push(kind);
            for v in [d.width, d.kernel, stride, pad] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            put_str(&mut out, &e.name);
            out.push(match e.data {
                EntryData::F32(_) => 0,
                EntryData::F64(_) => 1,
            });
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &e.data {
                EntryData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                EntryData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(r.fail(0, format!("bad magic {magic:?}, expected \"ENPR\"")));
        }
        let version = r.u16("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.fail(4, format!("unsupported format version {version}")));
        }
        let input_shape = [r.u32("input shape")? as usize, r.u32("input shape")? as usize, r.u32("input shape")? as usize];
        let n_layers = r.u32("layer count")?;
        let mut decls = Vec::with_capacity(n_layers.min(4096) as usize);
        for _ in 0..n_layers {
            let id = r.string("layer id")?;
            let at = r.pos;
            let kind = r.take(1, "layer kind")?[0];
            let width = r.u32("layer width")? as usize;
            let kernel = r.u32("layer kernel")? as usize;
            let stride = r.u32("layer stride")? as usize;
            let pad = r.u32("layer pad")? as usize;
            let op = match kind {
                0 => LayerOp::Conv { stride, pad },
                1 => LayerOp::Linear,
                2 => LayerOp::Relu,
                3 => LayerOp::MaxPool { size: stride },
                4 => LayerOp::AvgPool { size: stride },
                5 => LayerOp::Flatten,
                k => return Err(r.fail(at as u64, format!("unknown layer kind {k}"))),
            };
            decls.push(LayerDecl { id, op, width, kernel });
        }
        let n_entries = r.u32("entry count")?;
        let mut entries = Vec::new();
        for _ in 0..n_entries {
            let name = r.string("entry name")?;
            let at = r.pos;
            let dtype = r.take(1, "dtype")?[0];
            let rank = r.take(1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("extent")? as usize);
            }
            let count: usize = shape.iter().product();
            let data = match dtype {
                0 => EntryData::F32(
                    r.take(count * 4, "f32 payload")?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                1 => EntryData::F64(
                    r.take(count * 8, "f64 payload")?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                d => return Err(r.fail(at as u64, format!("unknown dtype {d}"))),
            };
            entries.push(Entry { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(r.fail(r.pos as u64, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            input_shape,
            decls,
            entries,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::decode(&bytes, path)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: u64, reason: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset,
            reason,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(
                self.pos as u64,
                format!("truncated while reading {what} ({n} bytes needed, {} left)", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let n = self.u16(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.fail(at as u64, format!("{what} is not utf-8")))
    }
}

impl ModelGraph {
    pub fn to_archive(&self) -> Archive {
        let mut entries = Vec::new();
        for l in self.layers() {
            if let Some(p) = &l.params {
                entries.push(Entry {
                    name: format!("{}.weight", l.spec.id),
                    shape: p.weight.shape().to_vec(),
                    data: EntryData::F32(p.weight.data().to_vec()),
                });
                entries.push(Entry {
                    name: format!("{}.bias", l.spec.id),
                    shape: p.bias.shape().to_vec(),
                    data: EntryData::F32(p.bias.data().to_vec()),
                });
            }
        }
        Archive {
            input_shape: self.input_shape(),
            decls: self.blueprint(),
            entries,
        }
    }

    pub fn from_archive(archive: &Archive, path: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason,
        };
        let specs = resolve_specs(archive.input_shape, &archive.decls)?;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let params = if spec.param_shapes().is_some() {
                let get = |suffix: &str| -> Result<Tensor> {
                    let name = format!("{}.{suffix}", spec.id);
                    let e = archive
                        .entry(&name)
                        .ok_or_else(|| fail(format!("missing entry `{name}`")))?;
                    match &e.data {
                        EntryData::F32(v) => Tensor::new(e.shape.clone(), v.clone()),
                        EntryData::F64(_) => Err(fail(format!("entry `{name}` is not f32"))),
                    }
                };
                Some(Params {
                    weight: get("weight")?,
                    bias: get("bias")?,
                })
            } else {
                None
            };
            layers.push(Layer { spec, params });
        }
        ModelGraph::from_layers(archive.input_shape, layers)
    }
}

pub fn write_checkpoint(graph: &ModelGraph) -> Vec<u8> {
    graph.to_archive().encode()
}

pub fn read_checkpoint(bytes: &[u8], path: &Path) -> Result<ModelGraph> {
    ModelGraph::from_archive(&Archive::decode(bytes, path)?, path)
}

pub fn save_checkpoint(graph: &ModelGraph, path: &Path) -> Result<()> {
    graph.to_archive().write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelGraph> {
    let bytes = fs::read(path)?;
    read_checkpoint(&bytes, path)
}
