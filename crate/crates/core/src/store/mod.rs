//! Embedding ingestion: symmetric per-vector quantization to INT8/INT4,
//! integer norms, and the on-disk database format.
//!
//! Quantization maps a real vector `v` to integers with a single scale:
//!
//! ```text
//! scale    = max_i |v_i| / (2^(b-1) - 1)
//! values_i = round_half_away(v_i / scale), clamped to [-2^(b-1), 2^(b-1) - 1]
//! ```
//!
//! An all-zero vector gets `scale = 1`. Norms are computed on the integer
//! values; the scale product is applied later by the score calculator.

mod format;

use std::collections::HashSet;

pub use format::{
    decode, encode_float, encode_quantized, read_embedding_file, write_float_db, write_quantized_db, EmbeddingFile,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Precision {
    Int4,
    Int8,
}

impl Precision {
    pub const fn bits(self) -> usize {
        match self {
            Precision::Int4 => 4,
            Precision::Int8 => 8,
        }
    }

    pub const fn max_value(self) -> i32 {
        (1 << (self.bits() - 1)) - 1
    }

    pub const fn min_value(self) -> i32 {
        -(1 << (self.bits() - 1))
    }

    pub const fn code(self) -> u8 {
        self.bits() as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            4 => Some(Precision::Int4),
            8 => Some(Precision::Int8),
            _ => None,
        }
    }

    pub fn contains(self, value: i32) -> bool {
        (self.min_value()..=self.max_value()).contains(&value)
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::Int4 => f.write_str("int4"),
            Precision::Int8 => f.write_str("int8"),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "int4" | "4" => Ok(Precision::Int4),
            "int8" | "8" => Ok(Precision::Int8),
            other => Err(Error::InvalidInput(format!("unknown precision `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVector {
    values: Vec<i8>,
    scale: f32,
    precision: Precision,
}

impl QuantizedVector {
    pub fn new(values: Vec<i8>, scale: f32, precision: Precision) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!("scale must be positive, got {scale}")));
        }
        if let Some(i) = values.iter().position(|&v| !precision.contains(v as i32)) {
            return Err(Error::InvalidInput(format!(
                "value {} at index {i} outside {precision} range",
                values[i]
            )));
        }
        Ok(Self {
            values,
            scale,
            precision,
        })
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Reconstruction of component `i` in double precision.
    pub fn reconstruct(&self, i: usize) -> f64 {
        self.values[i] as f64 * self.scale as f64
    }
}

/// Symmetric per-vector quantization with round-half-away-from-zero.
pub fn quantize(v: &[f32], precision: Precision) -> Result<QuantizedVector> {
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let max_abs = v.iter().fold(0.0f32, |m, x| m.max(x.abs()));
    let qmax = precision.max_value();
    if max_abs == 0.0 {
        return Ok(QuantizedVector {
            values: vec![0; v.len()],
            scale: 1.0,
            precision,
        });
    }
    let mut scale = max_abs / qmax as f32;
    if scale == 0.0 {
        // subnormal max_abs underflows the division
        scale = f32::MIN_POSITIVE;
    }
    let s = scale as f64;
    let lo = precision.min_value() as f64;
    let hi = qmax as f64;
    let values = v
        .iter()
        .map(|&x| (x as f64 / s).round().clamp(lo, hi) as i8)
        .collect();
    Ok(QuantizedVector {
        values,
        scale,
        precision,
    })
}

pub fn dequantize(q: &QuantizedVector) -> Vec<f32> {
    (0..q.dim()).map(|i| q.reconstruct(i) as f32).collect()
}

/// Euclidean norm of the integer values (scale not applied).
pub fn compute_norm(q: &QuantizedVector) -> f64 {
    integer_norm(q.values())
}

pub fn integer_norm(values: &[i8]) -> f64 {
    let sq: i64 = values.iter().map(|&v| (v as i64) * (v as i64)).sum();
    (sq as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRecord {
    pub doc_id: u64,
    pub norm: f32,
}

/// Real-valued embeddings, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatDb {
    dim: usize,
    ids: Vec<u64>,
    vectors: Vec<f32>,
}

impl FloatDb {
    pub fn new(dim: usize, ids: Vec<u64>, vectors: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dim must be positive".into()));
        }
        if vectors.len() != dim * ids.len() {
            return Err(Error::Inconsistent(format!(
                "{} values for {} vectors of dim {dim}",
                vectors.len(),
                ids.len()
            )));
        }
        check_unique(&ids)?;
        Ok(Self { dim, ids, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[f32])> {
        self.ids.iter().copied().zip(self.vectors.chunks_exact(self.dim))
    }
}

/// Quantized document store: values, per-vector scales, integer norms, ids.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedDb {
    precision: Precision,
    dim: usize,
    ids: Vec<u64>,
    values: Vec<i8>,
    scales: Vec<f32>,
    norms: Vec<f32>,
}

impl QuantizedDb {
    pub fn from_float(db: &FloatDb, precision: Precision) -> Result<Self> {
        let mut out = Self::empty(db.dim(), precision);
        for (id, v) in db.iter() {
            let q = quantize(v, precision).map_err(|e| match e {
                Error::NonFinite { index } => Error::InvalidInput(format!(
                    "document {id}: non-finite component at index {index}"
                )),
                other => other,
            })?;
            out.push(id, &q)?;
        }
        Ok(out)
    }

    pub fn empty(dim: usize, precision: Precision) -> Self {
        Self {
            precision,
            dim,
            ids: Vec::new(),
            values: Vec::new(),
            scales: Vec::new(),
            norms: Vec::new(),
        }
    }

    pub fn from_vectors(
        dim: usize,
        precision: Precision,
        docs: impl IntoIterator<Item = (u64, QuantizedVector)>,
    ) -> Result<Self> {
        let mut out = Self::empty(dim, precision);
        for (id, q) in docs {
            out.push(id, &q)?;
        }
        Ok(out)
    }

    pub fn push(&mut self, id: u64, q: &QuantizedVector) -> Result<()> {
        if q.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: q.dim(),
            });
        }
        if q.precision() != self.precision {
            return Err(Error::InvalidInput(format!(
                "precision {} does not match store precision {}",
                q.precision(),
                self.precision
            )));
        }
        if self.ids.contains(&id) {
            return Err(Error::InvalidInput(format!("duplicate document id {id}")));
        }
        self.ids.push(id);
        self.values.extend_from_slice(q.values());
        self.scales.push(q.scale());
        self.norms.push(compute_norm(q) as f32);
        Ok(())
    }

    pub(crate) fn from_parts(
        precision: Precision,
        dim: usize,
        ids: Vec<u64>,
        values: Vec<i8>,
        scales: Vec<f32>,
        norms: Vec<f32>,
    ) -> Result<Self> {
        check_unique(&ids)?;
        Ok(Self {
            precision,
            dim,
            ids,
            values,
            scales,
            norms,
        })
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> u64 {
        self.ids[i]
    }

    pub fn values(&self, i: usize) -> &[i8] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn scale(&self, i: usize) -> f32 {
        self.scales[i]
    }

    pub fn norm(&self, i: usize) -> f32 {
        self.norms[i]
    }

    pub fn norm_record(&self, i: usize) -> NormRecord {
        NormRecord {
            doc_id: self.ids[i],
            norm: self.norms[i],
        }
    }

    pub fn vector(&self, i: usize) -> QuantizedVector {
        QuantizedVector {
            values: self.values(i).to_vec(),
            scale: self.scales[i],
            precision: self.precision,
        }
    }

    /// Payload size of the stored integer values in bytes.
    pub fn payload_bytes(&self) -> u64 {
        (self.len() * self.dim * self.precision.bits()) as u64 / 8
    }
}

fn check_unique(ids: &[u64]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for &id in ids {
        if !seen.insert(id) {
            return Err(Error::InvalidInput(format!("duplicate document id {id}")));
        }
    }
    Ok(())
}
