//! Query-stationary placement of quantized embeddings onto DIRC macros.
//!
//! Every DIRC column has 128 cells and every cell stores 128 logical bits, so a
//! column holds 128 bit planes of 128 rows. Row `r` of a column holds
//! dimension `fold * 128 + r` of each stored embedding; an embedding of
//! dimension `d > 128` is folded into `ceil(d / 128)` passes over the same
//! column. Inside a cell, logical bit `k = (slot * folds + fold) * B + bit`
//! is placed at a physical `(subarray position, level bit)` by a
//! [`CellBitMap`], which is either the sequential packing or the error-aware
//! remap.

use std::path::Path;

use crate::device::{LevelBit, SpatialErrorMap, SubarrayPos, CELL_BITS, POSITIONS};
use crate::error::{Error, Result};
use crate::store::{Precision, QuantizedDb};

pub const CORES: usize = 16;
pub const COLUMNS: usize = 128;
pub const ROWS: usize = 128;
pub const PLANES: usize = CELL_BITS;
pub const TOTAL_COLUMNS: usize = CORES * COLUMNS;
pub const MAX_DIM: usize = 1024;
/// Total NVM capacity across all macros, in bytes (16 x 2 Mb).
pub const CAPACITY_BYTES: u64 = (CORES * COLUMNS * ROWS * CELL_BITS / 8) as u64;

/// Embedding shape as seen by the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    dim: usize,
    precision: Precision,
}

impl Shape {
    pub fn new(dim: usize, precision: Precision) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM || (dim > ROWS && !dim.is_multiple_of(ROWS)) {
            return Err(Error::InvalidInput(format!(
                "dimension {dim} unsupported: must be <= {ROWS} or a multiple of {ROWS} up to {MAX_DIM}"
            )));
        }
        Ok(Self { dim, precision })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn bits(&self) -> usize {
        self.precision.bits()
    }

    pub fn folds(&self) -> usize {
        self.dim.div_ceil(ROWS)
    }

    /// Rows carrying data in each fold.
    pub fn active_rows(&self) -> usize {
        self.dim.min(ROWS)
    }

    pub fn active_mask(&self) -> u128 {
        if self.active_rows() == ROWS {
            u128::MAX
        } else {
            (1u128 << self.active_rows()) - 1
        }
    }

    /// Embeddings stored per column.
    pub fn slots_per_column(&self) -> usize {
        PLANES / (self.folds() * self.bits())
    }

    pub fn planes_per_embedding(&self) -> usize {
        self.folds() * self.bits()
    }

    pub fn capacity_docs(&self) -> usize {
        self.slots_per_column() * TOTAL_COLUMNS
    }

    pub fn bytes_per_doc(&self) -> u64 {
        (self.dim * self.bits()) as u64 / 8
    }
}

/// Logical address of one stored bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LogicalBitAddress {
    /// Index of the document in the database.
    pub doc: usize,
    pub dim_index: usize,
    /// 0 is the least significant bit.
    pub bit_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhysicalBitAddress {
    pub macro_id: usize,
    pub column: usize,
    pub cell_row: usize,
    pub pos: SubarrayPos,
    pub level: LevelBit,
}

/// Per-cell assignment of logical bit index to physical `(position, level)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellBitMap {
    entries: Vec<(SubarrayPos, LevelBit)>,
    inverse: Vec<u8>,
}

fn slot_of(pos: SubarrayPos, level: LevelBit) -> usize {
    pos.index() * 2 + level.code() as usize
}

impl CellBitMap {
    pub fn from_entries(entries: Vec<(SubarrayPos, LevelBit)>) -> Result<Self> {
        if entries.len() != CELL_BITS {
            return Err(Error::Inconsistent(format!(
                "cell map needs {CELL_BITS} entries, got {}",
                entries.len()
            )));
        }
        let mut inverse = vec![u8::MAX; CELL_BITS];
        for (k, &(pos, level)) in entries.iter().enumerate() {
            let s = slot_of(pos, level);
            if inverse[s] != u8::MAX {
                return Err(Error::Inconsistent(format!(
                    "cell map assigns position {} {level:?} twice",
                    pos.index()
                )));
            }
            inverse[s] = k as u8;
        }
        Ok(Self { entries, inverse })
    }

    /// Sequential packing: logical bit `k` goes to position `k / 2`, odd bits on the MSB level.
    pub fn sequential() -> Self {
        let entries = (0..CELL_BITS)
            .map(|k| {
                let level = if k % 2 == 1 { LevelBit::Msb } else { LevelBit::Lsb };
                (SubarrayPos::from_index(k / 2), level)
            })
            .collect();
        Self::from_entries(entries).expect("sequential map is bijective")
    }

    pub fn entries(&self) -> &[(SubarrayPos, LevelBit)] {
        &self.entries
    }

    pub fn physical(&self, k: usize) -> (SubarrayPos, LevelBit) {
        self.entries[k]
    }

    pub fn logical(&self, pos: SubarrayPos, level: LevelBit) -> usize {
        self.inverse[slot_of(pos, level)] as usize
    }

    /// Expected weighted sensing error of a fully written cell: sum over LSB slots of
    /// `p(pos) * 2^bit`.
    pub fn weighted_error(&self, precision: Precision, map: &SpatialErrorMap) -> f64 {
        let b = precision.bits();
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, (_, level))| *level == LevelBit::Lsb)
            .map(|(k, &(pos, _))| map.lsb_prob(pos) * (1u64 << (k % b)) as f64)
            .sum()
    }
}

/// Assign bit weights to positions so that larger weights land on smaller
/// probabilities. Returns the weight given to each position. Ties resolve in
/// position order.
pub fn sorted_assignment(probs: &[f64], weights: &[u32]) -> Vec<u32> {
    assert_eq!(probs.len(), weights.len());
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(a.cmp(&b)));
    let mut sorted_weights = weights.to_vec();
    sorted_weights.sort_unstable_by(|a, b| b.cmp(a));
    let mut out = vec![0; probs.len()];
    for (pos, w) in order.into_iter().zip(sorted_weights) {
        out[pos] = w;
    }
    out
}

/// `sum_i p_i * 2^w_i`.
pub fn weighted_error(probs: &[f64], assignment: &[u32]) -> f64 {
    probs
        .iter()
        .zip(assignment)
        .map(|(&p, &w)| p * (1u64 << w) as f64)
        .sum()
}

/// Error-aware bit remap.
///
/// The upper half of each value's bits goes to the error-free MSB levels in
/// row-major order. The lower half goes to LSB levels: positions are ranked by
/// ascending LSB flip probability and receive every occurrence of the highest
/// low bit first, then the next, down to bit 0.
pub fn remap_bits(precision: Precision, map: &SpatialErrorMap) -> CellBitMap {
    let b = precision.bits();
    let half = b / 2;
    let values = CELL_BITS / b;

    let mut entries = vec![(SubarrayPos::from_index(0), LevelBit::Msb); CELL_BITS];
    let mut msb_next = 0;
    for v in 0..values {
        for bit in half..b {
            entries[v * b + bit] = (SubarrayPos::from_index(msb_next), LevelBit::Msb);
            msb_next += 1;
        }
    }

    let mut ranked: Vec<usize> = (0..POSITIONS).collect();
    ranked.sort_by(|&x, &y| {
        map.lsb_prob(SubarrayPos::from_index(x))
            .total_cmp(&map.lsb_prob(SubarrayPos::from_index(y)))
            .then(x.cmp(&y))
    });
    let mut ranked = ranked.into_iter();
    for bit in (0..half).rev() {
        for v in 0..values {
            let pos = ranked.next().expect("64 LSB positions for 64 low bits");
            entries[v * b + bit] = (SubarrayPos::from_index(pos), LevelBit::Lsb);
        }
    }
    CellBitMap::from_entries(entries).expect("remap is bijective")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Placement {
    pub core: u16,
    pub column: u16,
    pub slot: u16,
}

/// One step of a column's plane schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlaneStep {
    pub slot: usize,
    pub fold: usize,
    pub bit: usize,
    /// Logical bit index inside every cell of the column.
    pub plane: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroLayout {
    shape: Shape,
    remapped: bool,
    cell_map: CellBitMap,
    placements: Vec<Placement>,
    columns: Vec<Vec<u32>>,
}

/// How documents are dealt to columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlacementPolicy {
    /// Round-robin over all columns, interleaving cores; per-core document
    /// counts differ by at most one and latency tracks database size.
    #[default]
    Interleaved,
    /// Fill each column completely before the next one.
    Packed,
}

/// Plan placement of `db` across all cores with the default policy.
/// With `remap` the cell bit map is derived from `map`, otherwise it is the
/// sequential packing.
pub fn plan_layout(db: &QuantizedDb, remap: bool, map: &SpatialErrorMap) -> Result<MacroLayout> {
    plan_layout_with(db, remap, map, PlacementPolicy::Interleaved)
}

pub fn plan_layout_with(
    db: &QuantizedDb,
    remap: bool,
    map: &SpatialErrorMap,
    policy: PlacementPolicy,
) -> Result<MacroLayout> {
    let shape = Shape::new(db.dim(), db.precision())?;
    check_capacity(&shape, db.len())?;
    let cell_map = if remap {
        remap_bits(shape.precision(), map)
    } else {
        CellBitMap::sequential()
    };
    let slots = shape.slots_per_column();
    let placements = (0..db.len())
        .map(|doc| {
            let (g, slot) = match policy {
                PlacementPolicy::Interleaved => (doc % TOTAL_COLUMNS, doc / TOTAL_COLUMNS),
                PlacementPolicy::Packed => (doc / slots, doc % slots),
            };
            Placement {
                core: (g % CORES) as u16,
                column: (g / CORES) as u16,
                slot: slot as u16,
            }
        })
        .collect();
    MacroLayout::assemble(shape, remap, cell_map, placements)
}

pub fn check_capacity(shape: &Shape, count: usize) -> Result<()> {
    if count > shape.capacity_docs() {
        return Err(Error::Capacity {
            required: count as u64 * shape.bytes_per_doc(),
            available: shape.capacity_docs() as u64 * shape.bytes_per_doc(),
        });
    }
    Ok(())
}

impl MacroLayout {
    fn assemble(
        shape: Shape,
        remapped: bool,
        cell_map: CellBitMap,
        placements: Vec<Placement>,
    ) -> Result<Self> {
        let mut columns = vec![Vec::new(); TOTAL_COLUMNS];
        for (doc, p) in placements.iter().enumerate() {
            let (core, column, slot) = (p.core as usize, p.column as usize, p.slot as usize);
            if core >= CORES || column >= COLUMNS || slot >= shape.slots_per_column() {
                return Err(Error::Inconsistent(format!("document {doc} placed out of range: {p:?}")));
            }
            let col = &mut columns[core * COLUMNS + column];
            if col.len() <= slot {
                col.resize(slot + 1, u32::MAX);
            }
            if col[slot] != u32::MAX {
                return Err(Error::Inconsistent(format!("two documents share placement {p:?}")));
            }
            col[slot] = doc as u32;
        }
        if columns.iter().flatten().any(|&d| d == u32::MAX) {
            return Err(Error::Inconsistent("column slots must be filled contiguously".into()));
        }
        Ok(Self {
            shape,
            remapped,
            cell_map,
            placements,
            columns,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn remapped(&self) -> bool {
        self.remapped
    }

    pub fn cell_map(&self) -> &CellBitMap {
        &self.cell_map
    }

    pub fn doc_count(&self) -> usize {
        self.placements.len()
    }

    pub fn placement(&self, doc: usize) -> Placement {
        self.placements[doc]
    }

    /// Database indices of the documents in a column, by slot.
    pub fn column_docs(&self, core: usize, column: usize) -> &[u32] {
        &self.columns[core * COLUMNS + column]
    }

    pub fn docs_per_core(&self) -> [usize; CORES] {
        let mut out = [0; CORES];
        for p in &self.placements {
            out[p.core as usize] += 1;
        }
        out
    }

    pub fn plane_index(&self, slot: usize, fold: usize, bit: usize) -> usize {
        (slot * self.shape.folds() + fold) * self.shape.bits() + bit
    }

    /// Planes in load order: slot, then fold, then bit from the sign bit down.
    pub fn plane_schedule(&self, core: usize, column: usize) -> Vec<PlaneStep> {
        let slots = self.column_docs(core, column).len();
        let mut out = Vec::with_capacity(slots * self.shape.planes_per_embedding());
        for slot in 0..slots {
            for fold in 0..self.shape.folds() {
                for bit in (0..self.shape.bits()).rev() {
                    out.push(PlaneStep {
                        slot,
                        fold,
                        bit,
                        plane: self.plane_index(slot, fold, bit),
                    });
                }
            }
        }
        out
    }

    pub fn map(&self, addr: LogicalBitAddress) -> Result<PhysicalBitAddress> {
        let s = self.shape;
        if addr.doc >= self.doc_count() || addr.dim_index >= s.dim() || addr.bit_index >= s.bits() {
            return Err(Error::AddressOutOfRange(format!("{addr:?}")));
        }
        let p = self.placements[addr.doc];
        let k = self.plane_index(p.slot as usize, addr.dim_index / ROWS, addr.bit_index);
        let (pos, level) = self.cell_map.physical(k);
        Ok(PhysicalBitAddress {
            macro_id: p.core as usize,
            column: p.column as usize,
            cell_row: addr.dim_index % ROWS,
            pos,
            level,
        })
    }

    pub fn unmap(&self, addr: PhysicalBitAddress) -> Result<LogicalBitAddress> {
        let s = self.shape;
        if addr.macro_id >= CORES || addr.column >= COLUMNS || addr.cell_row >= s.active_rows() {
            return Err(Error::AddressOutOfRange(format!("{addr:?}")));
        }
        let k = self.cell_map.logical(addr.pos, addr.level);
        let (value, bit) = (k / s.bits(), k % s.bits());
        let (slot, fold) = (value / s.folds(), value % s.folds());
        let docs = self.column_docs(addr.macro_id, addr.column);
        let doc = *docs
            .get(slot)
            .ok_or_else(|| Error::AddressOutOfRange(format!("{addr:?} holds no document")))?;
        Ok(LogicalBitAddress {
            doc: doc as usize,
            dim_index: fold * ROWS + addr.cell_row,
            bit_index: bit,
        })
    }

    /// Written bit planes of a column: `planes[k]` has bit `r` set when cell row
    /// `r` stores a 1 at logical bit `k`.
    pub fn column_planes(&self, db: &QuantizedDb, core: usize, column: usize) -> Vec<u128> {
        let s = self.shape;
        let mut planes = vec![0u128; PLANES];
        for (slot, &doc) in self.column_docs(core, column).iter().enumerate() {
            let values = db.values(doc as usize);
            for fold in 0..s.folds() {
                let chunk = &values[fold * ROWS..(fold * ROWS + ROWS).min(s.dim())];
                for bit in 0..s.bits() {
                    let mut plane = 0u128;
                    for (r, &v) in chunk.iter().enumerate() {
                        if (v as u8 >> bit) & 1 == 1 {
                            plane |= 1 << r;
                        }
                    }
                    planes[self.plane_index(slot, fold, bit)] = plane;
                }
            }
        }
        planes
    }

    /// Stable digest of the layout contents.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(encode_layout(self)))
    }
}

/// Per-column, per-plane expected population counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DSumLut {
    entries: Vec<u8>,
}

impl DSumLut {
    pub fn entry(&self, core: usize, column: usize, plane: usize) -> u8 {
        self.entries[(core * COLUMNS + column) * PLANES + plane]
    }

    pub fn column(&self, core: usize, column: usize) -> &[u8] {
        let base = (core * COLUMNS + column) * PLANES;
        &self.entries[base..base + PLANES]
    }
}

pub fn build_dsum_lut(db: &QuantizedDb, layout: &MacroLayout) -> DSumLut {
    let mut entries = vec![0u8; TOTAL_COLUMNS * PLANES];
    for core in 0..CORES {
        for column in 0..COLUMNS {
            if layout.column_docs(core, column).is_empty() {
                continue;
            }
            let base = (core * COLUMNS + column) * PLANES;
            for (k, plane) in layout.column_planes(db, core, column).into_iter().enumerate() {
                entries[base + k] = plane.count_ones() as u8;
            }
        }
    }
    DSumLut { entries }
}

const LAYOUT_MAGIC: [u8; 4] = *b"DRL1";
const LUT_MAGIC: [u8; 4] = *b"DRS1";
const SIDECAR_VERSION: u16 = 1;

fn sidecar_header(magic: [u8; 4], b6: u8, b7: u8, a: u32, b: u32) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&magic);
    out.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
    out.push(b6);
    out.push(b7);
    out.extend_from_slice(&a.to_le_bytes());
    out.extend_from_slice(&b.to_le_bytes());
    out
}

fn check_sidecar_header(bytes: &[u8], magic: [u8; 4]) -> Result<(u8, u8, u32, u32)> {
    if bytes.len() < 4 || bytes[..4] != magic {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(Error::BadMagic {
            expected: magic,
            found,
        });
    }
    if bytes.len() < 16 {
        return Err(Error::TruncatedPayload {
            needed: 16,
            available: bytes.len() as u64,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != SIDECAR_VERSION {
        return Err(Error::VersionMismatch {
            expected: SIDECAR_VERSION,
            found: version,
        });
    }
    Ok((
        bytes[6],
        bytes[7],
        u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
        u32::from_le_bytes(bytes[12..16].try_into().unwrap()),
    ))
}

fn check_len(bytes: &[u8], needed: u64) -> Result<()> {
    let available = bytes.len() as u64;
    if available < needed {
        return Err(Error::TruncatedPayload { needed, available });
    }
    if available > needed {
        return Err(Error::Inconsistent(format!("{} trailing bytes", available - needed)));
    }
    Ok(())
}

/// Layout sidecar: header (magic "DRL1", version u16, precision u8, remap u8,
/// dim u32, count u32), 128 cell-map tuples `(row u8, col u8, level u8)`,
/// then `count` placements `(core u16, column u16, slot u16)`.
pub fn encode_layout(layout: &MacroLayout) -> Vec<u8> {
    let s = layout.shape;
    let mut out = sidecar_header(
        LAYOUT_MAGIC,
        s.precision().code(),
        layout.remapped as u8,
        s.dim() as u32,
        layout.doc_count() as u32,
    );
    for &(pos, level) in layout.cell_map.entries() {
        out.extend_from_slice(&[pos.row() as u8, pos.col() as u8, level.code()]);
    }
    for p in &layout.placements {
        for v in [p.core, p.column, p.slot] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_layout(bytes: &[u8]) -> Result<MacroLayout> {
    let (pcode, remap, dim, count) = check_sidecar_header(bytes, LAYOUT_MAGIC)?;
    let precision = Precision::from_code(pcode)
        .ok_or_else(|| Error::Inconsistent(format!("unknown precision code {pcode}")))?;
    let shape = Shape::new(dim as usize, precision).map_err(|e| Error::Inconsistent(e.to_string()))?;
    check_len(bytes, 16 + 3 * CELL_BITS as u64 + 6 * count as u64)?;
    let mut entries = Vec::with_capacity(CELL_BITS);
    for t in bytes[16..16 + 3 * CELL_BITS].chunks_exact(3) {
        let pos = SubarrayPos::new(t[0] as usize, t[1] as usize)
            .map_err(|e| Error::Inconsistent(e.to_string()))?;
        let level = LevelBit::from_code(t[2])
            .ok_or_else(|| Error::Inconsistent(format!("bad level code {}", t[2])))?;
        entries.push((pos, level));
    }
    let cell_map = CellBitMap::from_entries(entries)?;
    let placements = bytes[16 + 3 * CELL_BITS..]
        .chunks_exact(6)
        .map(|t| Placement {
            core: u16::from_le_bytes([t[0], t[1]]),
            column: u16::from_le_bytes([t[2], t[3]]),
            slot: u16::from_le_bytes([t[4], t[5]]),
        })
        .collect();
    MacroLayout::assemble(shape, remap != 0, cell_map, placements)
}

/// LUT sidecar: header (magic "DRS1", version u16, two reserved bytes,
/// cores u32, columns u32), then cores x columns x 128 population counts.
pub fn encode_lut(lut: &DSumLut) -> Vec<u8> {
    let mut out = sidecar_header(LUT_MAGIC, 0, 0, CORES as u32, COLUMNS as u32);
    out.extend_from_slice(&lut.entries);
    out
}

pub fn decode_lut(bytes: &[u8]) -> Result<DSumLut> {
    let (_, _, cores, columns) = check_sidecar_header(bytes, LUT_MAGIC)?;
    if cores as usize != CORES || columns as usize != COLUMNS {
        return Err(Error::Inconsistent(format!(
            "LUT geometry {cores}x{columns} does not match {CORES}x{COLUMNS}"
        )));
    }
    check_len(bytes, 16 + (TOTAL_COLUMNS * PLANES) as u64)?;
    let entries = bytes[16..].to_vec();
    if let Some(v) = entries.iter().find(|&&v| v as usize > ROWS) {
        return Err(Error::Inconsistent(format!("LUT entry {v} exceeds {ROWS}")));
    }
    Ok(DSumLut { entries })
}

pub fn save_layout(path: &Path, layout: &MacroLayout) -> Result<()> {
    std::fs::write(path, encode_layout(layout)).map_err(|e| Error::io(path, e))
}

pub fn load_layout(path: &Path) -> Result<MacroLayout> {
    decode_layout(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_lut(path: &Path, lut: &DSumLut) -> Result<()> {
    std::fs::write(path, encode_lut(lut)).map_err(|e| Error::io(path, e))
}

pub fn load_lut(path: &Path) -> Result<DSumLut> {
    decode_lut(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::QuantizedVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_db(n: usize, dim: usize, precision: Precision, seed: u64) -> QuantizedDb {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = (precision.min_value() as i8, precision.max_value() as i8);
        let docs = (0..n).map(|i| {
            let v = (0..dim).map(|_| rng.random_range(lo..=hi)).collect();
            (i as u64 * 10, QuantizedVector::new(v, 0.5, precision).unwrap())
        });
        QuantizedDb::from_vectors(dim, precision, docs).unwrap()
    }

    #[test]
    fn capacity_per_column() {
        let s = |d, p| Shape::new(d, p).unwrap().slots_per_column();
        assert_eq!(s(128, Precision::Int8), 16);
        assert_eq!(s(1024, Precision::Int8), 2);
        assert_eq!(s(128, Precision::Int4), 32);
        assert_eq!(s(512, Precision::Int8), 4);
        assert_eq!(s(384, Precision::Int8), 5);
        assert_eq!(s(64, Precision::Int8), 16);
        assert!(Shape::new(200, Precision::Int8).is_err());
        assert!(Shape::new(2048, Precision::Int8).is_err());
        assert!(Shape::new(0, Precision::Int8).is_err());
        assert_eq!(CAPACITY_BYTES, 4 * 1024 * 1024);
    }

    #[test]
    fn four_megabytes_fill_every_slot() {
        let shape = Shape::new(512, Precision::Int8).unwrap();
        assert_eq!(shape.capacity_docs(), 8192);
        assert_eq!(shape.capacity_docs() as u64 * shape.bytes_per_doc(), CAPACITY_BYTES);
        assert!(check_capacity(&shape, 8192).is_ok());
        match check_capacity(&shape, 8193) {
            Err(Error::Capacity { required, available }) => {
                assert_eq!(available, CAPACITY_BYTES);
                assert_eq!(required, CAPACITY_BYTES + 512);
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
        let planes = shape.slots_per_column() * shape.planes_per_embedding();
        assert_eq!(planes, 128);
        assert_eq!(shape.folds(), 4);
    }

    #[test]
    fn single_doc_bijective() {
        let db = random_db(1, 128, Precision::Int8, 1);
        let layout = plan_layout(&db, false, &SpatialErrorMap::zero()).unwrap();
        assert_eq!(layout.column_docs(0, 0), &[0]);
        let mut seen = std::collections::HashSet::new();
        for dim_index in 0..128 {
            for bit_index in 0..8 {
                let a = LogicalBitAddress {
                    doc: 0,
                    dim_index,
                    bit_index,
                };
                let p = layout.map(a).unwrap();
                assert!(seen.insert(p));
                assert_eq!(layout.unmap(p).unwrap(), a);
            }
        }
        assert_eq!(seen.len(), 1024);
    }

    #[test]
    fn map_unmap_identity_with_folding_and_remap() {
        let map = crate::device::generate_error_map(&crate::device::ErrorMapParams {
            base: 0.01,
            rail_effect: 0.02,
            readout_effect: 0.03,
            noise: 0.005,
            noise_seed: 4,
        })
        .unwrap();
        for (dim, p) in [(512, Precision::Int8), (256, Precision::Int4), (64, Precision::Int8)] {
            let db = random_db(2100, dim, p, 2);
            let layout = plan_layout(&db, true, &map).unwrap();
            for doc in [0, 1, 17, 2048, 2099] {
                for dim_index in (0..dim).step_by(37) {
                    for bit_index in 0..p.bits() {
                        let a = LogicalBitAddress {
                            doc,
                            dim_index,
                            bit_index,
                        };
                        assert_eq!(layout.unmap(layout.map(a).unwrap()).unwrap(), a);
                    }
                }
            }
        }
    }

    #[test]
    fn round_robin_balances_cores() {
        let db = random_db(3000, 128, Precision::Int8, 3);
        let layout = plan_layout(&db, false, &SpatialErrorMap::zero()).unwrap();
        let per_core = layout.docs_per_core();
        let (lo, hi) = (per_core.iter().min().unwrap(), per_core.iter().max().unwrap());
        assert!(hi - lo <= 1);
        assert_eq!(per_core.iter().sum::<usize>(), 3000);
        assert_eq!(layout.placement(2048), Placement { core: 0, column: 0, slot: 1 });
        assert_eq!(layout.placement(17), Placement { core: 1, column: 1, slot: 0 });
        let packed = plan_layout_with(&db, false, &SpatialErrorMap::zero(), PlacementPolicy::Packed).unwrap();
        assert_eq!(packed.column_docs(0, 0), (0..16).collect::<Vec<u32>>().as_slice());
        assert_eq!(packed.placement(16), Placement { core: 1, column: 0, slot: 0 });
    }

    #[test]
    fn remap_uniform_map_is_row_major() {
        let m = remap_bits(Precision::Int8, &SpatialErrorMap::uniform(0.2).unwrap());
        // bit 3 of value v lands on LSB position v, bit 0 of value v on position 48 + v.
        for v in 0..16 {
            assert_eq!(m.physical(v * 8 + 3), (SubarrayPos::from_index(v), LevelBit::Lsb));
            assert_eq!(m.physical(v * 8), (SubarrayPos::from_index(48 + v), LevelBit::Lsb));
            assert_eq!(m.physical(v * 8 + 4), (SubarrayPos::from_index(v * 4), LevelBit::Msb));
        }
    }

    #[test]
    fn remap_puts_high_bits_on_msb() {
        for p in [Precision::Int4, Precision::Int8] {
            let m = remap_bits(p, &SpatialErrorMap::uniform(0.1).unwrap());
            for k in 0..CELL_BITS {
                let bit = k % p.bits();
                let want = if bit >= p.bits() / 2 { LevelBit::Msb } else { LevelBit::Lsb };
                assert_eq!(m.physical(k).1, want);
            }
        }
    }

    #[test]
    fn zero_probability_position_gets_bit_three() {
        let mut grid = [[0.3; 8]; 8];
        grid[5][6] = 0.0;
        let map = SpatialErrorMap::from_grid(grid).unwrap();
        let m = remap_bits(Precision::Int8, &map);
        let k = m.logical(SubarrayPos::new(5, 6).unwrap(), LevelBit::Lsb);
        assert_eq!(k % 8, 3);
    }

    #[test]
    fn toy_two_position_assignment() {
        let probs = [0.1, 0.4];
        let a = sorted_assignment(&probs, &[1, 0]);
        assert_eq!(a, vec![1, 0]);
        assert!((weighted_error(&probs, &a) - 0.6).abs() < 1e-12);
        assert!((weighted_error(&probs, &[0, 1]) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn remap_never_worse_than_sequential() {
        let map = crate::device::generate_error_map(&crate::device::ErrorMapParams {
            base: 0.001,
            rail_effect: 0.01,
            readout_effect: 0.02,
            noise: 0.002,
            noise_seed: 1,
        })
        .unwrap();
        for p in [Precision::Int4, Precision::Int8] {
            let remapped = remap_bits(p, &map).weighted_error(p, &map);
            let seq = CellBitMap::sequential().weighted_error(p, &map);
            assert!(remapped < seq, "{p}: {remapped} vs {seq}");
        }
    }

    #[test]
    fn lut_matches_recount() {
        let db = random_db(700, 256, Precision::Int8, 5);
        let layout = plan_layout(&db, false, &SpatialErrorMap::zero()).unwrap();
        let lut = build_dsum_lut(&db, &layout);
        for (core, column) in [(0, 0), (3, 7), (15, 43), (9, 127)] {
            let docs = layout.column_docs(core, column);
            for step in layout.plane_schedule(core, column) {
                let doc = docs[step.slot] as usize;
                let count = (0..ROWS)
                    .filter(|&r| (db.values(doc)[step.fold * ROWS + r] as u8 >> step.bit) & 1 == 1)
                    .count();
                assert_eq!(lut.entry(core, column, step.plane) as usize, count);
            }
        }
    }

    #[test]
    fn lut_extremes() {
        let zeros = QuantizedDb::from_vectors(
            128,
            Precision::Int8,
            (0..20).map(|i| (i, QuantizedVector::new(vec![0; 128], 1.0, Precision::Int8).unwrap())),
        )
        .unwrap();
        let layout = plan_layout(&zeros, false, &SpatialErrorMap::zero()).unwrap();
        let lut = build_dsum_lut(&zeros, &layout);
        assert!(lut.entries.iter().all(|&e| e == 0));

        let ones = QuantizedDb::from_vectors(
            128,
            Precision::Int8,
            [(0, QuantizedVector::new(vec![-1; 128], 1.0, Precision::Int8).unwrap())],
        )
        .unwrap();
        let layout = plan_layout(&ones, false, &SpatialErrorMap::zero()).unwrap();
        let lut = build_dsum_lut(&ones, &layout);
        assert!(lut.column(0, 0)[..8].iter().all(|&e| e == 128));
    }

    #[test]
    fn sidecars_round_trip_and_reject_garbage() {
        let db = random_db(300, 384, Precision::Int8, 6);
        let map = SpatialErrorMap::uniform(0.01).unwrap();
        let layout = plan_layout(&db, true, &map).unwrap();
        let bytes = encode_layout(&layout);
        assert_eq!(decode_layout(&bytes).unwrap(), layout);
        assert!(matches!(decode_layout(&bytes[..bytes.len() - 1]), Err(Error::TruncatedPayload { .. })));
        let mut bad = bytes.clone();
        bad[0] = 0;
        assert!(matches!(decode_layout(&bad), Err(Error::BadMagic { .. })));

        let lut = build_dsum_lut(&db, &layout);
        let lbytes = encode_lut(&lut);
        assert_eq!(decode_lut(&lbytes).unwrap(), lut);
        let mut bad = lbytes;
        bad[4] = 2;
        assert!(matches!(decode_lut(&bad), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn planning_is_deterministic() {
        let db = random_db(999, 128, Precision::Int4, 8);
        let map = SpatialErrorMap::uniform(0.05).unwrap();
        assert_eq!(
            plan_layout(&db, true, &map).unwrap().digest(),
            plan_layout(&db, true, &map).unwrap().digest()
        );
    }
}
