//! Little-endian embedding file format.
//!
//! ```text
//! header (16 bytes)
//!   magic      "DRC1"
//!   version    u16
//!   precision  u8    4 | 8 | 32
//!   reserved   u8
//!   dim        u32
//!   count      u32
//! record, quantized (precision 4 or 8)
//!   id u64, scale f32, norm f32, packed values
//!     INT8: one byte per value
//!     INT4: two values per byte, low nibble first
//! record, float (precision 32)
//!   id u64, dim x f32
//! ```

use std::fs;
use std::path::Path;

use super::{FloatDb, Precision, QuantizedDb};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DRC1";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 16;
const FLOAT_CODE: u8 = 32;

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingFile {
    Float(FloatDb),
    Quantized(QuantizedDb),
}

fn packed_len(dim: usize, precision: Precision) -> usize {
    match precision {
        Precision::Int8 => dim,
        Precision::Int4 => dim.div_ceil(2),
    }
}

fn header(code: u8, dim: usize, count: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(code);
    out.push(0);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out
}

pub fn encode_quantized(db: &QuantizedDb) -> Vec<u8> {
    let p = db.precision();
    let rec = 16 + packed_len(db.dim(), p);
    let mut out = header(p.code(), db.dim(), db.len());
    out.reserve(rec * db.len());
    for i in 0..db.len() {
        out.extend_from_slice(&db.id(i).to_le_bytes());
        out.extend_from_slice(&db.scale(i).to_le_bytes());
        out.extend_from_slice(&db.norm(i).to_le_bytes());
        let values = db.values(i);
        match p {
            Precision::Int8 => out.extend(values.iter().map(|&v| v as u8)),
            Precision::Int4 => {
                for pair in values.chunks(2) {
                    let lo = pair[0] as u8 & 0x0f;
                    let hi = pair.get(1).map_or(0, |&v| v as u8 & 0x0f);
                    out.push(lo | (hi << 4));
                }
            }
        }
    }
    out
}

pub fn encode_float(db: &FloatDb) -> Vec<u8> {
    let mut out = header(FLOAT_CODE, db.dim(), db.len());
    for (id, v) in db.iter() {
        out.extend_from_slice(&id.to_le_bytes());
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn write_quantized_db(path: &Path, db: &QuantizedDb) -> Result<()> {
    fs::write(path, encode_quantized(db)).map_err(|e| Error::io(path, e))
}

pub fn write_float_db(path: &Path, db: &FloatDb) -> Result<()> {
    fs::write(path, encode_float(db)).map_err(|e| Error::io(path, e))
}

pub fn read_embedding_file(path: &Path) -> Result<EmbeddingFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().unwrap())
    }

    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take(4).try_into().unwrap())
    }
}

fn sign_extend_nibble(n: u8) -> i8 {
    ((n << 4) as i8) >> 4
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingFile> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(Error::BadMagic {
            expected: MAGIC,
            found,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            needed: HEADER_LEN as u64,
            available: bytes.len() as u64,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let code = bytes[6];
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(Error::Inconsistent("dim is zero".into()));
    }
    let precision = match code {
        FLOAT_CODE => None,
        c => Some(
            Precision::from_code(c)
                .ok_or_else(|| Error::Inconsistent(format!("unknown precision code {c}")))?,
        ),
    };
    let record = match precision {
        None => 8 + 4 * dim,
        Some(p) => 16 + packed_len(dim, p),
    };
    let needed = HEADER_LEN as u64 + record as u64 * count as u64;
    let available = bytes.len() as u64;
    if available < needed {
        return Err(Error::TruncatedPayload { needed, available });
    }
    if available > needed {
        return Err(Error::Inconsistent(format!(
            "{} trailing bytes after {count} records of dim {dim}",
            available - needed
        )));
    }

    let mut r = Reader {
        buf: bytes,
        pos: HEADER_LEN,
    };
    let mut ids = Vec::with_capacity(count);
    match precision {
        None => {
            let mut vectors = Vec::with_capacity(count * dim);
            for _ in 0..count {
                ids.push(r.u64());
                for _ in 0..dim {
                    vectors.push(r.f32());
                }
            }
            Ok(EmbeddingFile::Float(FloatDb::new(dim, ids, vectors)?))
        }
        Some(p) => {
            let mut values = Vec::with_capacity(count * dim);
            let mut scales = Vec::with_capacity(count);
            let mut norms = Vec::with_capacity(count);
            for _ in 0..count {
                ids.push(r.u64());
                scales.push(r.f32());
                norms.push(r.f32());
                let packed = r.take(packed_len(dim, p));
                match p {
                    Precision::Int8 => values.extend(packed.iter().map(|&b| b as i8)),
                    Precision::Int4 => {
                        for (j, &b) in packed.iter().enumerate() {
                            values.push(sign_extend_nibble(b & 0x0f));
                            if 2 * j + 1 < dim {
                                values.push(sign_extend_nibble(b >> 4));
                            }
                        }
                    }
                }
            }
            Ok(EmbeddingFile::Quantized(QuantizedDb::from_parts(
                p, dim, ids, values, scales, norms,
            )?))
        }
    }
}
