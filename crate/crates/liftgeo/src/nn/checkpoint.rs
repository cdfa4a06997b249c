//! Binary parameter checkpoints.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic   4 bytes  "LGN1"
//! kind    u32 length + UTF-8 model kind ("lifter", "pose_disc", ...)
//! count   u32 number of entries
//! entry   u32 name length + UTF-8 name
//!         u32 rows, u32 cols
//!         rows*cols f32 values, row-major
//! ```
//!
//! Values are stored as `f32`; a file read into memory and written back is
//! byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::nn::tensor::Tensor2;

pub const MAGIC: &[u8; 4] = b"LGN1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic (not an LGN1 file)")]
    BadMagic,
    #[error("checkpoint kind mismatch: expected {expected}, found {got}")]
    KindMismatch { expected: String, got: String },
    #[error("checkpoint entry {name}: expected shape {expected:?}, found {got:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("checkpoint missing entry {0}")]
    MissingEntry(String),
    #[error("checkpoint has unexpected entry {0}")]
    UnknownEntry(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Named tensors plus the model kind recorded in the header.
pub struct Checkpoint {
    pub kind: String,
    pub entries: Vec<(String, Tensor2)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Checkpoint {
            kind: kind.into(),
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor2) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        write_string(&mut w, &self.kind)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.entries {
            write_string(&mut w, name)?;
            w.write_all(&(tensor.rows() as u32).to_le_bytes())?;
            w.write_all(&(tensor.cols() as u32).to_le_bytes())?;
            for &v in tensor.iter() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let kind = read_string(&mut r)?;
        let count = read_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name = read_string(&mut r)?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 4];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
            let tensor = Tensor2::from_vec(rows, cols, data)
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            entries.push((name, tensor));
        }
        Ok(Checkpoint { kind, entries })
    }
}

fn write_string(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_string(r: &mut impl Read) -> Result<String, CheckpointError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(CheckpointError::Malformed(format!("string length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| CheckpointError::Malformed(e.to_string()))
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
