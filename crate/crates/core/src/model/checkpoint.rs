//! `S4KC` checkpoint files.
//!
//! Layout (little-endian): magic `S4KC`, version u32, kind u32 (0 = f32,
//! 1 = int8), config block (input_dim, num_layers, hidden_dim,
//! embedding_dim as u32; input_offset, input_scale as f32), tensor count
//! u32, then per tensor: name length u32, name bytes, rank u32, dims u32…,
//! and either f32 data or an f32 scale followed by int8 data.

use std::fs;
use std::io;
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use super::{ModelConfig, ModelError, ModelParams, QuantizedModel, QuantizedTensor};

const MAGIC: &[u8; 4] = b"S4KC";
const VERSION: u32 = 1;
const KIND_F32: u32 = 0;
const KIND_INT8: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn header(&mut self, kind: u32, c: &ModelConfig, count: usize) {
        self.0.extend_from_slice(MAGIC);
        self.u32(VERSION);
        self.u32(kind);
        for d in [c.input_dim, c.num_layers, c.hidden_dim, c.embedding_dim] {
            self.u32(d as u32);
        }
        self.f32(c.input_offset);
        self.f32(c.input_scale);
        self.u32(count as u32);
    }
    fn tensor_head(&mut self, name: &str, shape: (usize, usize)) {
        self.u32(name.len() as u32);
        self.0.extend_from_slice(name.as_bytes());
        self.u32(2);
        self.u32(shape.0 as u32);
        self.u32(shape.1 as u32);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> CheckpointError {
        CheckpointError::Format {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, CheckpointError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn header(&mut self, want_kind: u32) -> Result<(ModelConfig, usize), CheckpointError> {
        if self.take(4)? != MAGIC {
            return Err(self.err("bad magic"));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(self.err(format!("unsupported version {version}")));
        }
        let kind = self.u32()?;
        if kind != want_kind {
            return Err(self.err(format!("checkpoint kind {kind}, expected {want_kind}")));
        }
        let config = ModelConfig {
            input_dim: self.u32()? as usize,
            num_layers: self.u32()? as usize,
            hidden_dim: self.u32()? as usize,
            embedding_dim: self.u32()? as usize,
            input_offset: self.f32()?,
            input_scale: self.f32()?,
        };
        let count = self.u32()? as usize;
        Ok((config, count))
    }
    fn tensor_head(&mut self) -> Result<(String, (usize, usize)), CheckpointError> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec()).map_err(|_| self.err("tensor name is not UTF-8"))?;
        let rank = self.u32()?;
        if rank != 2 {
            return Err(self.err(format!("tensor {name}: rank {rank}, expected 2")));
        }
        Ok((name, (self.u32()? as usize, self.u32()? as usize)))
    }
    fn finish(&self) -> Result<(), CheckpointError> {
        if self.pos != self.bytes.len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

pub fn write_checkpoint(path: &Path, params: &ModelParams<f32>) -> Result<u64, CheckpointError> {
    let mut w = Writer(Vec::new());
    let tensors = params.tensors();
    w.header(KIND_F32, &params.config, tensors.len());
    for (name, t) in params.tensor_names().iter().zip(tensors) {
        w.tensor_head(name, t.dim());
        for v in t.iter() {
            w.f32(*v);
        }
    }
    write_atomic(path, &w.0)?;
    Ok(w.0.len() as u64)
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams<f32>, CheckpointError> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    let (config, count) = r.header(KIND_F32)?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let (_, shape) = r.tensor_head()?;
        let raw = r.take(4 * shape.0 * shape.1)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Array2::from_shape_vec(shape, data).expect("sized"));
    }
    r.finish()?;
    Ok(ModelParams::from_tensors(config, tensors)?)
}

pub fn write_quantized_checkpoint(path: &Path, model: &QuantizedModel) -> Result<u64, CheckpointError> {
    let mut w = Writer(Vec::new());
    w.header(KIND_INT8, &model.config, model.tensors.len());
    for t in &model.tensors {
        w.tensor_head(&t.name, t.shape);
        w.f32(t.scale);
        w.0.extend(t.values.iter().map(|&q| q as u8));
    }
    write_atomic(path, &w.0)?;
    Ok(w.0.len() as u64)
}

pub fn read_quantized_checkpoint(path: &Path) -> Result<QuantizedModel, CheckpointError> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    let (config, count) = r.header(KIND_INT8)?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let (name, shape) = r.tensor_head()?;
        let scale = r.f32()?;
        let values = r.take(shape.0 * shape.1)?.iter().map(|&b| b as i8).collect();
        tensors.push(QuantizedTensor {
            name,
            shape,
            scale,
            values,
        });
    }
    r.finish()?;
    let model = QuantizedModel { config, tensors };
    super::dequantize(&model)?;
    Ok(model)
}
