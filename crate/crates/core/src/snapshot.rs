//! Versioned binary snapshots.
//!
//! The module library serializes to a little-endian binary image that
//! round-trips bit-exactly (parameters are stored as raw f64 bits). Learner
//! checkpoints reuse the same container: a small sectioned file carrying the
//! library image and an optional learner-specific state blob.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{ArchShape, ModuleId, ModuleLibrary, NeuralModule, Path};
use crate::matrix::Matrix;

const LIBRARY_MAGIC: &[u8; 8] = b"MODLIB01";
const CONTAINER_MAGIC: &[u8; 8] = b"MODSNP01";

pub const SECTION_LIBRARY: u32 = 1;
pub const SECTION_LEARNER: u32 = 2;

pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> ByteWriter {
        ByteWriter { buf: Vec::new() }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    pub fn f64_slice(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.buf
    }
}

impl Default for ByteWriter {
    fn default() -> Self {
        ByteWriter::new()
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> ByteReader<'a> {
        ByteReader { buf, pos: 0 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("need {n} more bytes, only {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > self.buf.len() / 8 + 1 {
            return Err(Error::Format { offset: self.pos, message: format!("implausible length {n}") });
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    pub fn expect(&mut self, magic: &[u8]) -> Result<()> {
        let got = self.take(magic.len())?;
        if got != magic {
            return Err(Error::Format {
                offset: self.pos - magic.len(),
                message: format!("bad magic {got:02x?}"),
            });
        }
        Ok(())
    }

    pub fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Serialize a library: architecture, every module (layer, slot, origin,
/// frozen flag, raw parameter bits), the task→path registry, and the freeze
/// checksums.
pub fn encode_library(lib: &ModuleLibrary) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(LIBRARY_MAGIC);
    let shape = lib.shape();
    w.u64(shape.input_dim as u64);
    w.u64(shape.hidden_dim as u64);
    w.u32(shape.depth as u32);
    for layer in 0..shape.depth {
        let mods = lib.layer_modules(layer);
        w.u64(lib.raw_next_slot(layer) as u64);
        w.u32(mods.len() as u32);
        for m in mods {
            w.u64(m.id.slot as u64);
            w.u8(m.frozen() as u8);
            match m.origin_task() {
                Some(t) => {
                    w.u8(1);
                    w.u64(t as u64);
                }
                None => {
                    w.u8(0);
                    w.u64(0);
                }
            }
            w.u64(m.weight().rows() as u64);
            w.u64(m.weight().cols() as u64);
            w.f64_slice(m.weight().data());
            w.f64_slice(m.bias());
        }
    }
    let tasks = lib.task_paths();
    w.u32(tasks.len() as u32);
    for (t, path) in tasks {
        w.u64(*t as u64);
        w.u32(path.modules.len() as u32);
        for id in &path.modules {
            w.u32(id.layer as u32);
            w.u64(id.slot as u64);
        }
    }
    let digests = lib.frozen_digests();
    w.u32(digests.len() as u32);
    for ((layer, slot), d) in digests {
        w.u32(*layer as u32);
        w.u64(*slot as u64);
        w.u64(*d);
    }
    w.into_vec()
}

pub fn decode_library(bytes: &[u8]) -> Result<ModuleLibrary> {
    let mut r = ByteReader::new(bytes);
    r.expect(LIBRARY_MAGIC)?;
    let input_dim = r.u64()? as usize;
    let hidden_dim = r.u64()? as usize;
    let depth = r.u32()? as usize;
    if depth == 0 || depth > 1024 {
        return Err(Error::Format { offset: r.pos(), message: format!("depth {depth}") });
    }
    let shape = ArchShape { input_dim, hidden_dim, depth };
    let mut layers: Vec<Vec<NeuralModule>> = Vec::with_capacity(depth);
    let mut next_slot = Vec::with_capacity(depth);
    for layer in 0..depth {
        let ns = r.u64()? as usize;
        next_slot.push(ns);
        let count = r.u32()? as usize;
        let mut mods = Vec::with_capacity(count);
        for _ in 0..count {
            let slot = r.u64()? as usize;
            let frozen = r.u8()? != 0;
            let has_origin = r.u8()? != 0;
            let origin = r.u64()? as usize;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let weight_data = r.f64_vec()?;
            if weight_data.len() != rows * cols {
                return Err(Error::Format {
                    offset: r.pos(),
                    message: format!("weight payload {} for {rows}x{cols}", weight_data.len()),
                });
            }
            let weight = Matrix::from_vec(rows, cols, weight_data)
                .map_err(|e| Error::Format { offset: r.pos(), message: e.to_string() })?;
            let bias = r.f64_vec()?;
            if bias.len() != cols {
                return Err(Error::Format {
                    offset: r.pos(),
                    message: format!("bias of {} for width {cols}", bias.len()),
                });
            }
            let mut m = NeuralModule::new(ModuleId { layer, slot }, weight, bias);
            if frozen {
                if !has_origin {
                    return Err(Error::Format {
                        offset: r.pos(),
                        message: "frozen module without origin task".into(),
                    });
                }
                m.freeze(origin);
            }
            mods.push(m);
        }
        layers.push(mods);
    }
    let n_tasks = r.u32()? as usize;
    let mut task_paths = BTreeMap::new();
    for _ in 0..n_tasks {
        let t = r.u64()? as usize;
        let len = r.u32()? as usize;
        let mut ids = Vec::with_capacity(len);
        for _ in 0..len {
            let layer = r.u32()? as usize;
            let slot = r.u64()? as usize;
            ids.push(ModuleId { layer, slot });
        }
        task_paths.insert(t, Path::new(ids));
    }
    let n_digests = r.u32()? as usize;
    let mut digests = BTreeMap::new();
    for _ in 0..n_digests {
        let layer = r.u32()? as usize;
        let slot = r.u64()? as usize;
        let d = r.u64()?;
        digests.insert((layer, slot), d);
    }
    if !r.done() {
        return Err(Error::Format { offset: r.pos(), message: "trailing bytes".into() });
    }
    let lib = ModuleLibrary::restore(shape, layers, next_slot, task_paths, digests);
    lib.verify_frozen()?;
    Ok(lib)
}

/// A checkpoint: sectioned container holding the library image (or a
/// learner's private network) plus an optional learner state blob.
pub fn encode_container(sections: &[(u32, Vec<u8>)]) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(CONTAINER_MAGIC);
    w.u32(sections.len() as u32);
    for (tag, payload) in sections {
        w.u32(*tag);
        w.u64(payload.len() as u64);
        w.bytes(payload);
    }
    w.into_vec()
}

pub fn decode_container(bytes: &[u8]) -> Result<Vec<(u32, Vec<u8>)>> {
    let mut r = ByteReader::new(bytes);
    r.expect(CONTAINER_MAGIC)?;
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let tag = r.u32()?;
        let len = r.u64()? as usize;
        let start = r.pos();
        if start + len > bytes.len() {
            return Err(Error::Format { offset: start, message: format!("section of {len} bytes overruns file") });
        }
        out.push((tag, bytes[start..start + len].to_vec()));
        r.pos = start + len;
    }
    if !r.done() {
        return Err(Error::Format { offset: r.pos(), message: "trailing bytes".into() });
    }
    Ok(out)
}
