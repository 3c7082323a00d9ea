//! The PCXE embedding container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PCXE" | version: u32 | dim: u32 | records: u32
//! per record: uid_len: u16 | uid: utf-8 | tokens: u32 | tokens * dim f32 (row-major)
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PCXE";
pub const VERSION: u32 = 1;

/// One sentence worth of token vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PcxeRecord {
    pub uid: String,
    pub tokens: usize,
    /// `tokens * dim` values, row-major.
    pub values: Vec<f32>,
}

/// In-memory contents of a PCXE file.
#[derive(Debug, Clone, PartialEq)]
pub struct PcxeFile {
    pub dim: usize,
    pub records: Vec<PcxeRecord>,
}

impl PcxeFile {
    pub fn new(dim: usize) -> Self {
        PcxeFile {
            dim,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, uid: impl Into<String>, tokens: usize, values: Vec<f32>) -> Result<()> {
        if values.len() != tokens * self.dim {
            return Err(Error::LengthMismatch {
                expected: tokens * self.dim,
                found: values.len(),
            });
        }
        self.records.push(PcxeRecord {
            uid: uid.into(),
            tokens,
            values,
        });
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(to_u32(self.dim, "dimension")?)?;
        w.write_u32::<LittleEndian>(to_u32(self.records.len(), "record count")?)?;
        for r in &self.records {
            let uid = r.uid.as_bytes();
            let uid_len = u16::try_from(uid.len())
                .map_err(|_| Error::InvalidEmbeddingFile(format!("uid {:?} too long", r.uid)))?;
            w.write_u16::<LittleEndian>(uid_len)?;
            w.write_all(uid)?;
            w.write_u32::<LittleEndian>(to_u32(r.tokens, "token count")?)?;
            for &v in &r.values {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::InvalidEmbeddingFile("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != VERSION {
            return Err(Error::InvalidEmbeddingFile(format!(
                "unsupported version {version}"
            )));
        }
        let dim = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let count = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let uid_len = r.read_u16::<LittleEndian>().map_err(truncated)? as usize;
            let mut uid = vec![0u8; uid_len];
            r.read_exact(&mut uid).map_err(truncated)?;
            let uid = String::from_utf8(uid)
                .map_err(|_| Error::InvalidEmbeddingFile("uid is not UTF-8".into()))?;
            let tokens = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            let mut values = vec![0f32; tokens * dim];
            r.read_f32_into::<LittleEndian>(&mut values)
                .map_err(truncated)?;
            records.push(PcxeRecord {
                uid,
                tokens,
                values,
            });
        }
        Ok(PcxeFile { dim, records })
    }

    /// Index of records by uid. Later duplicates shadow earlier ones.
    pub fn into_map(self) -> HashMap<String, PcxeRecord> {
        self.records
            .into_iter()
            .map(|r| (r.uid.clone(), r))
            .collect()
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidEmbeddingFile(format!("{what} {v} exceeds u32")))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::InvalidEmbeddingFile("truncated file".into())
    } else {
        Error::Io(e)
    }
}
