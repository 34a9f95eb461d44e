//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "DSANCKPT"
//! version   u32      1
//! config    u32 length + UTF-8 JSON of ModelConfig
//! vocab     u32 count, then per token: u32 length + UTF-8 bytes (id order)
//! tensors   u32 count, then per tensor:
//!             u32 name length + UTF-8 name
//!             u32 ndim, ndim × u64 dims
//!             product(dims) × f64, row-major
//! ```
//!
//! The tensor section holds every trainable parameter under its canonical
//! name plus the frozen embedding table as `emb.W`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, ModelConfig};
use crate::data::{EmbeddingTable, Vocabulary};
use crate::nli::DsanModel;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DSANCKPT";
pub const VERSION: u32 = 1;
pub const EMBEDDING_NAME: &str = "emb.W";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
}

pub fn save_checkpoint(path: &Path, model: &DsanModel) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, model).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &DsanModel) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let config = serde_json::to_vec(&model.config).map_err(io::Error::other)?;
    write_bytes(w, &config)?;
    write_u32(w, model.vocab.len())?;
    for token in model.vocab.tokens() {
        write_bytes(w, token.as_bytes())?;
    }
    write_u32(w, model.params.len() + 1)?;
    for (name, tensor) in model.params.iter() {
        write_tensor(w, name, tensor)?;
    }
    write_tensor(w, EMBEDDING_NAME, model.embeddings.matrix())
}

pub fn load_checkpoint(path: &Path) -> Result<DsanModel, CheckpointError> {
    let file = File::open(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_checkpoint(BufReader::new(file), path)
}

pub fn read_checkpoint<R: Read>(mut r: R, path: &Path) -> Result<DsanModel, CheckpointError> {
    let fmt = |message: String| CheckpointError::Format {
        path: path.to_path_buf(),
        message,
    };
    let io_fmt = |e: io::Error| CheckpointError::Format {
        path: path.to_path_buf(),
        message: format!("truncated or unreadable: {e}"),
    };

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_fmt)?;
    if &magic != MAGIC {
        return Err(fmt("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut r).map_err(io_fmt)?;
    if version != VERSION {
        return Err(fmt(format!("unsupported checkpoint version {version}")));
    }
    let config_bytes = read_bytes(&mut r).map_err(io_fmt)?;
    let config: ModelConfig = serde_json::from_slice(&config_bytes).map_err(|e| fmt(format!("config: {e}")))?;

    let vocab_len = read_u32(&mut r).map_err(io_fmt)? as usize;
    let mut tokens = Vec::with_capacity(vocab_len.min(1 << 20));
    for _ in 0..vocab_len {
        let bytes = read_bytes(&mut r).map_err(io_fmt)?;
        tokens.push(String::from_utf8(bytes).map_err(|e| fmt(format!("vocabulary: {e}")))?);
    }
    let vocab = Vocabulary::from_id_list(tokens).ok_or_else(|| fmt("vocabulary is malformed".into()))?;

    let count = read_u32(&mut r).map_err(io_fmt)? as usize;
    let mut stored = Vec::with_capacity(count.min(1 << 12));
    let mut embedding = None;
    for _ in 0..count {
        let (name, tensor) = read_tensor(&mut r).map_err(io_fmt)?;
        let tensor = tensor.map_err(|e| fmt(format!("{name}: {e}")))?;
        if name == EMBEDDING_NAME {
            embedding = Some(tensor);
        } else {
            stored.push((name, tensor));
        }
    }
    let embedding = embedding.ok_or_else(|| fmt(format!("missing {EMBEDDING_NAME}")))?;
    let embeddings = EmbeddingTable::new(embedding).map_err(|e| fmt(format!("{EMBEDDING_NAME}: {e}")))?;
    DsanModel::with_params(config, vocab, embeddings, stored).map_err(|source| CheckpointError::Config {
        path: path.to_path_buf(),
        source,
    })
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> io::Result<()> {
    let v = u32::try_from(v).map_err(io::Error::other)?;
    w.write_all(&v.to_le_bytes())
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> io::Result<()> {
    write_u32(w, bytes.len())?;
    w.write_all(bytes)
}

fn write_tensor<W: Write>(w: &mut W, name: &str, t: &Tensor) -> io::Result<()> {
    write_bytes(w, name.as_bytes())?;
    write_u32(w, t.shape().len())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R) -> io::Result<Vec<u8>> {
    let len = read_u32(r)? as usize;
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(io::ErrorKind::UnexpectedEof.into());
    }
    Ok(buf)
}

type TensorRecord = (String, Result<Tensor, crate::tensor::TensorError>);

fn read_tensor<R: Read>(r: &mut R) -> io::Result<TensorRecord> {
    let name = String::from_utf8(read_bytes(r)?).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let ndim = read_u32(r)? as usize;
    let mut shape = Vec::with_capacity(ndim.min(8));
    for _ in 0..ndim {
        shape.push(read_u64(r)? as usize);
    }
    let len: usize = shape.iter().product();
    let mut raw = Vec::new();
    r.take(len as u64 * 8).read_to_end(&mut raw)?;
    if raw.len() != len * 8 {
        return Err(io::ErrorKind::UnexpectedEof.into());
    }
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((name, Tensor::new(shape, data)))
}
