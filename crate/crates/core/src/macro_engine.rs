//! One DIRC macro: 128 columns of 128 cells, executing bit-serial signed MAC
//! between a stationary query and document bit planes.
//!
//! Per loaded plane a column spends one sense cycle, an optional detection
//! cycle (popcount against the D-Sum LUT, re-sensing on mismatch) and one
//! compute cycle per query bit. Bit multiplication is AND of document and
//! query bits; the sign-less adder is an exact popcount and sign handling
//! lives in the plane weights (the top bit of both operands weighs `-2^(B-1)`).

use crate::device::{DircCell, FaultSeed, SpatialErrorMap};
use crate::error::{Error, Result};
use crate::layout::{CellBitMap, DSumLut, MacroLayout, COLUMNS, CORES, PLANES, ROWS};
use crate::store::Precision;

pub const DEFAULT_MAX_RESENSE: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacroConfig {
    pub precision: Precision,
    pub detection: bool,
    pub max_resense: u32,
}

impl MacroConfig {
    pub fn new(precision: Precision) -> Self {
        Self {
            precision,
            detection: false,
            max_resense: DEFAULT_MAX_RESENSE,
        }
    }

    pub fn with_detection(mut self, on: bool) -> Self {
        self.detection = on;
        self
    }
}

/// Two's-complement weight of bit `bit` in a `bits`-wide operand.
pub fn bit_weight(bit: usize, bits: usize) -> i32 {
    if bit + 1 == bits {
        -(1 << bit)
    } else {
        1 << bit
    }
}

/// Query bits held in the input registers for the whole retrieval:
/// `masks[fold][bit]` has row `r` set when query component `fold * 128 + r`
/// has bit `bit` set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRegisterFile {
    precision: Precision,
    dim: usize,
    masks: Vec<[u128; 8]>,
}

impl QueryRegisterFile {
    pub fn load(values: &[i8], precision: Precision) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| !precision.contains(v as i32)) {
            return Err(Error::InvalidInput(format!("query value {v} outside {precision} range")));
        }
        let masks = values
            .chunks(ROWS)
            .map(|chunk| {
                let mut m = [0u128; 8];
                for (r, &v) in chunk.iter().enumerate() {
                    for (bit, mask) in m.iter_mut().enumerate().take(precision.bits()) {
                        if (v as u8 >> bit) & 1 == 1 {
                            *mask |= 1 << r;
                        }
                    }
                }
                m
            })
            .collect();
        Ok(Self {
            precision,
            dim: values.len(),
            masks,
        })
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mask(&self, fold: usize, bit: usize) -> u128 {
        self.masks[fold][bit]
    }
}

/// Cells of one column. Cell keys are `column * 128 + row` within the core.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnDevice {
    core: usize,
    column: usize,
    cells: Vec<DircCell>,
}

impl ColumnDevice {
    pub fn new(core: usize, column: usize) -> Self {
        let cells = (0..ROWS)
            .map(|r| DircCell::new((column * ROWS + r) as u32))
            .collect();
        Self { core, column, cells }
    }

    pub fn core(&self) -> usize {
        self.core
    }

    pub fn column(&self) -> usize {
        self.column
    }

    pub fn cell(&self, row: usize) -> &DircCell {
        &self.cells[row]
    }

    /// Write 128 planes (`planes[k]` bit `r` = logical bit `k` of cell `r`).
    pub fn write_planes(&mut self, planes: &[u128], cell_map: &CellBitMap) {
        assert_eq!(planes.len(), PLANES);
        for (r, cell) in self.cells.iter_mut().enumerate() {
            let (mut msb, mut lsb) = (0u64, 0u64);
            for (k, &plane) in planes.iter().enumerate() {
                if (plane >> r) & 1 == 1 {
                    let (pos, level) = cell_map.physical(k);
                    match level {
                        crate::device::LevelBit::Msb => msb |= 1 << pos.index(),
                        crate::device::LevelBit::Lsb => lsb |= 1 << pos.index(),
                    }
                }
            }
            cell.set_masks(msb, lsb);
        }
    }

    /// Plane `k` exactly as written.
    pub fn stored_plane(&self, plane: usize, cell_map: &CellBitMap) -> u128 {
        let (pos, level) = cell_map.physical(plane);
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.stored_at(pos.index(), level))
            .fold(0u128, |acc, (r, _)| acc | 1 << r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensedPlane {
    pub bits: u128,
    pub cycles: u64,
}

/// Sense logical bit `plane` in all 128 cells at once. `attempt` 0 is the
/// first read; re-senses use 1, 2, ...
pub fn load_bit_plane(
    column: &mut ColumnDevice,
    plane: usize,
    cell_map: &CellBitMap,
    map: &SpatialErrorMap,
    seed: &FaultSeed,
    attempt: u32,
) -> Result<SensedPlane> {
    if plane >= PLANES {
        return Err(Error::AddressOutOfRange(format!("plane {plane} >= {PLANES}")));
    }
    let (pos, level) = cell_map.physical(plane);
    let prob = map.flip_prob(pos, level);
    let mut bits = 0u128;
    for (r, cell) in column.cells.iter_mut().enumerate() {
        if cell.sense(pos, level, prob, seed, attempt) {
            bits |= 1 << r;
        }
    }
    Ok(SensedPlane { bits, cycles: 1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    pub plane: u128,
    /// A popcount mismatch was observed at least once.
    pub mismatch_seen: bool,
    /// Re-senses were exhausted with the last check still mismatching.
    pub residual: bool,
    pub detect_cycles: u64,
    pub resenses: u64,
}

/// Compare the plane's popcount with the LUT and re-sense on mismatch, up to
/// `max_resense` times. The last plane read is accepted either way.
#[allow(clippy::too_many_arguments)]
pub fn detect_and_correct(
    column: &mut ColumnDevice,
    plane_index: usize,
    plane: u128,
    lut_entry: u8,
    cell_map: &CellBitMap,
    map: &SpatialErrorMap,
    seed: &FaultSeed,
    max_resense: u32,
) -> Result<Detection> {
    let mut out = Detection {
        plane,
        mismatch_seen: false,
        residual: false,
        detect_cycles: 1,
        resenses: 0,
    };
    if plane.count_ones() == lut_entry as u32 {
        return Ok(out);
    }
    out.mismatch_seen = true;
    for attempt in 1..=max_resense {
        out.plane = load_bit_plane(column, plane_index, cell_map, map, seed, attempt)?.bits;
        out.resenses += 1;
        out.detect_cycles += 1;
        if out.plane.count_ones() == lut_entry as u32 {
            return Ok(out);
        }
    }
    out.residual = true;
    Ok(out)
}

/// One compute cycle: AND the document plane with one query bit plane over the
/// active rows, popcount, and accumulate with both bit weights.
pub fn mac_plane(
    plane: u128,
    query: &QueryRegisterFile,
    fold: usize,
    active_rows: u128,
    doc_bit_weight: i32,
    query_bit_index: usize,
    accumulator: i32,
) -> i32 {
    let bits = query.precision().bits();
    assert!(query_bit_index < bits, "query bit {query_bit_index} >= {bits}");
    let products = (plane & query.mask(fold, query_bit_index) & active_rows).count_ones() as i32;
    accumulator + products * doc_bit_weight * bit_weight(query_bit_index, bits)
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ColumnCounters {
    pub planes: u64,
    pub sense_cycles: u64,
    pub detect_cycles: u64,
    pub compute_cycles: u64,
    pub resenses: u64,
    pub mismatches: u64,
    pub residual_flags: u64,
    /// Planes consumed by the MAC that differ from what was written.
    pub corrupted_planes: u64,
}

impl ColumnCounters {
    pub fn total_cycles(&self) -> u64 {
        self.sense_cycles + self.detect_cycles + self.compute_cycles
    }

    pub fn add(&mut self, o: &ColumnCounters) {
        self.planes += o.planes;
        self.sense_cycles += o.sense_cycles;
        self.detect_cycles += o.detect_cycles;
        self.compute_cycles += o.compute_cycles;
        self.resenses += o.resenses;
        self.mismatches += o.mismatches;
        self.residual_flags += o.residual_flags;
        self.corrupted_planes += o.corrupted_planes;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnRun {
    /// Raw inner product per stored embedding, by slot.
    pub scores: Vec<i32>,
    pub counters: ColumnCounters,
}

/// Run the full plane schedule of one column against the loaded query.
#[allow(clippy::too_many_arguments)]
pub fn run_column_retrieval(
    column: &mut ColumnDevice,
    query: &QueryRegisterFile,
    layout: &MacroLayout,
    lut: &DSumLut,
    map: &SpatialErrorMap,
    seed: &FaultSeed,
    config: &MacroConfig,
) -> Result<ColumnRun> {
    let shape = layout.shape();
    if query.dim() != shape.dim() {
        return Err(Error::DimensionMismatch {
            expected: shape.dim(),
            found: query.dim(),
        });
    }
    if query.precision() != shape.precision() || config.precision != shape.precision() {
        return Err(Error::InvalidInput(format!(
            "precision mismatch: layout {}, query {}, config {}",
            shape.precision(),
            query.precision(),
            config.precision
        )));
    }
    let (core, col) = (column.core(), column.column());
    if core >= CORES || col >= COLUMNS {
        return Err(Error::AddressOutOfRange(format!("column ({core}, {col})")));
    }

    let bits = shape.bits();
    let active = shape.active_mask();
    let cell_map = layout.cell_map();
    let lut_column = lut.column(core, col);
    let slots = layout.column_docs(core, col).len();
    let mut scores = vec![0i32; slots];
    let mut c = ColumnCounters::default();

    for step in layout.plane_schedule(core, col) {
        let sensed = load_bit_plane(column, step.plane, cell_map, map, seed, 0)?;
        c.planes += 1;
        c.sense_cycles += sensed.cycles;
        let mut plane = sensed.bits;
        if config.detection {
            let d = detect_and_correct(
                column,
                step.plane,
                plane,
                lut_column[step.plane],
                cell_map,
                map,
                seed,
                config.max_resense,
            )?;
            plane = d.plane;
            c.detect_cycles += d.detect_cycles;
            c.sense_cycles += d.resenses;
            c.resenses += d.resenses;
            c.mismatches += d.mismatch_seen as u64;
            c.residual_flags += d.residual as u64;
        }
        if !map.is_zero() && plane != column.stored_plane(step.plane, cell_map) {
            c.corrupted_planes += 1;
        }
        let doc_weight = bit_weight(step.bit, bits);
        let mut acc = scores[step.slot];
        for q in 0..bits {
            acc = mac_plane(plane, query, step.fold, active, doc_weight, q, acc);
        }
        scores[step.slot] = acc;
        c.compute_cycles += bits as u64;
    }
    Ok(ColumnRun {
        scores,
        counters: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{LevelBit, SubarrayPos};
    use crate::layout::{build_dsum_lut, plan_layout_with, PlacementPolicy};
    use crate::store::{QuantizedDb, QuantizedVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dot(a: &[i8], b: &[i8]) -> i32 {
        a.iter().zip(b).map(|(&x, &y)| x as i32 * y as i32).sum()
    }

    fn random_values(rng: &mut ChaCha8Rng, n: usize, p: Precision) -> Vec<i8> {
        (0..n)
            .map(|_| rng.random_range(p.min_value() as i8..=p.max_value() as i8))
            .collect()
    }

    fn random_db(rng: &mut ChaCha8Rng, n: usize, dim: usize, p: Precision) -> QuantizedDb {
        let docs: Vec<_> = (0..n)
            .map(|i| (i as u64, QuantizedVector::new(random_values(rng, dim, p), 1.0, p).unwrap()))
            .collect();
        QuantizedDb::from_vectors(dim, p, docs).unwrap()
    }

    struct Fixture {
        db: QuantizedDb,
        layout: MacroLayout,
        lut: DSumLut,
        column: ColumnDevice,
    }

    fn single_column(db: QuantizedDb, remap: bool, map: &SpatialErrorMap) -> Fixture {
        let layout = plan_layout_with(&db, remap, map, PlacementPolicy::Packed).unwrap();
        let lut = build_dsum_lut(&db, &layout);
        let mut column = ColumnDevice::new(0, 0);
        column.write_planes(&layout.column_planes(&db, 0, 0), layout.cell_map());
        Fixture {
            db,
            layout,
            lut,
            column,
        }
    }

    fn seed() -> FaultSeed {
        FaultSeed::new(1234, 0, 0, 0)
    }

    #[test]
    fn bit_weights() {
        assert_eq!(bit_weight(7, 8), -128);
        assert_eq!(bit_weight(6, 8), 64);
        assert_eq!(bit_weight(3, 4), -8);
        assert_eq!(bit_weight(0, 4), 1);
    }

    #[test]
    fn zero_query_leaves_accumulator() {
        let q = QueryRegisterFile::load(&[0; 128], Precision::Int8).unwrap();
        for bit in 0..8 {
            assert_eq!(mac_plane(u128::MAX, &q, 0, u128::MAX, -128, bit, 17), 17);
        }
    }

    #[test]
    fn all_ones_adds_row_count() {
        // value 1 sets only bit 0 of every row
        let q = QueryRegisterFile::load(&[1; 128], Precision::Int8).unwrap();
        assert_eq!(mac_plane(u128::MAX, &q, 0, u128::MAX, 1, 0, 0), 128);
    }

    #[test]
    fn two_row_bit_serial_product() {
        let q = QueryRegisterFile::load(&[-2, 3], Precision::Int8).unwrap();
        let d: [i8; 2] = [4, -1];
        let mut acc = 0;
        for db in 0..8 {
            let plane = (0..2).fold(0u128, |p, r| p | (((d[r] as u8 >> db) & 1) as u128) << r);
            for qb in 0..8 {
                acc = mac_plane(plane, &q, 0, 0b11, bit_weight(db, 8), qb, acc);
            }
        }
        assert_eq!(acc, -11);
    }

    #[test]
    fn load_plane_error_free_and_forced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut f = single_column(random_db(&mut rng, 16, 128, Precision::Int8), false, &SpatialErrorMap::zero());
        let cell_map = f.layout.cell_map().clone();
        let ones = SpatialErrorMap::uniform(1.0).unwrap();
        for k in 0..PLANES {
            let written = f.column.stored_plane(k, &cell_map);
            let clean = load_bit_plane(&mut f.column, k, &cell_map, &SpatialErrorMap::zero(), &seed(), 0).unwrap();
            assert_eq!(clean, SensedPlane { bits: written, cycles: 1 });
            let forced = load_bit_plane(&mut f.column, k, &cell_map, &ones, &seed(), 0).unwrap();
            match cell_map.physical(k).1 {
                LevelBit::Lsb => assert_eq!(forced.bits, !written),
                LevelBit::Msb => assert_eq!(forced.bits, written),
            }
        }
        assert!(load_bit_plane(&mut f.column, PLANES, &cell_map, &ones, &seed(), 0).is_err());
    }

    #[test]
    fn mixed_map_replays() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let db = random_db(&mut rng, 16, 128, Precision::Int8);
        let map = SpatialErrorMap::uniform(0.3).unwrap();
        let mut a = single_column(db.clone(), false, &map);
        let mut b = single_column(db, false, &map);
        let cm = a.layout.cell_map().clone();
        for k in 0..PLANES {
            assert_eq!(
                load_bit_plane(&mut a.column, k, &cm, &map, &seed(), 0).unwrap(),
                load_bit_plane(&mut b.column, k, &cm, &map, &seed(), 0).unwrap()
            );
        }
    }

    #[test]
    fn detection_clean_single_and_compensating() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = single_column(random_db(&mut rng, 16, 128, Precision::Int8), false, &SpatialErrorMap::zero());
        let cm = f.layout.cell_map().clone();
        let zero = SpatialErrorMap::zero();
        let k = 0;
        let written = f.column.stored_plane(k, &cm);
        let lut = f.lut.entry(0, 0, k);

        let clean = detect_and_correct(&mut f.column, k, written, lut, &cm, &zero, &seed(), 3).unwrap();
        assert_eq!((clean.mismatch_seen, clean.detect_cycles, clean.resenses), (false, 1, 0));

        let zero_row = (0..128).find(|&r| (written >> r) & 1 == 0).unwrap();
        let one_row = (0..128).find(|&r| (written >> r) & 1 == 1).unwrap();
        let single = written | 1 << zero_row;
        assert_eq!(single.count_ones(), lut as u32 + 1);
        let d = detect_and_correct(&mut f.column, k, single, lut, &cm, &zero, &seed(), 3).unwrap();
        assert!(d.mismatch_seen && !d.residual);
        assert_eq!(d.plane, written);
        assert_eq!((d.detect_cycles, d.resenses), (2, 1));

        let double = single & !(1 << one_row);
        let d = detect_and_correct(&mut f.column, k, double, lut, &cm, &zero, &seed(), 3).unwrap();
        assert!(!d.mismatch_seen);
        assert_eq!(d.plane, double);
        assert_ne!(d.plane, written);
    }

    #[test]
    fn persistent_fault_exhausts_resense() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut f = single_column(random_db(&mut rng, 16, 128, Precision::Int8), false, &SpatialErrorMap::zero());
        let cm = f.layout.cell_map().clone();
        let k = (0..PLANES).find(|&k| cm.physical(k).1 == LevelBit::Lsb).unwrap();
        let ones = SpatialErrorMap::uniform(1.0).unwrap();
        let sensed = load_bit_plane(&mut f.column, k, &cm, &ones, &seed(), 0).unwrap().bits;
        let d = detect_and_correct(&mut f.column, k, sensed, f.lut.entry(0, 0, k), &cm, &ones, &seed(), 3).unwrap();
        // an all-inverted plane of 128 rows only matches when exactly 64 ones were written
        if f.lut.entry(0, 0, k) != 64 {
            assert!(d.residual);
            assert_eq!((d.detect_cycles, d.resenses), (4, 3));
        }
    }

    #[test]
    fn full_column_scores_and_cycles() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let db = random_db(&mut rng, 16, 128, Precision::Int8);
        let query = random_values(&mut rng, 128, Precision::Int8);
        let qrf = QueryRegisterFile::load(&query, Precision::Int8).unwrap();
        let zero = SpatialErrorMap::zero();
        let mut f = single_column(db, false, &zero);

        let run = run_column_retrieval(&mut f.column, &qrf, &f.layout, &f.lut, &zero, &seed(), &MacroConfig::new(Precision::Int8)).unwrap();
        for (slot, &doc) in f.layout.column_docs(0, 0).iter().enumerate() {
            assert_eq!(run.scores[slot], dot(&query, f.db.values(doc as usize)));
        }
        assert_eq!(run.counters.compute_cycles, 16 * 8 * 8);
        assert_eq!(run.counters.sense_cycles, 128);
        assert_eq!(run.counters.total_cycles(), 1152);

        let cfg = MacroConfig::new(Precision::Int8).with_detection(true);
        let run = run_column_retrieval(&mut f.column, &qrf, &f.layout, &f.lut, &zero, &seed(), &cfg).unwrap();
        assert_eq!(run.counters.detect_cycles, 128);
        assert_eq!(run.counters.total_cycles(), 1280);
    }

    #[test]
    fn int4_column_holds_thirty_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let db = random_db(&mut rng, 32, 128, Precision::Int4);
        let query = random_values(&mut rng, 128, Precision::Int4);
        let qrf = QueryRegisterFile::load(&query, Precision::Int4).unwrap();
        let zero = SpatialErrorMap::zero();
        let mut f = single_column(db, true, &zero);
        assert_eq!(f.layout.column_docs(0, 0).len(), 32);
        let run = run_column_retrieval(&mut f.column, &qrf, &f.layout, &f.lut, &zero, &seed(), &MacroConfig::new(Precision::Int4)).unwrap();
        assert_eq!(run.counters.compute_cycles, 32 * 4 * 4);
        for (slot, &doc) in f.layout.column_docs(0, 0).iter().enumerate() {
            assert_eq!(run.scores[slot], dot(&query, f.db.values(doc as usize)));
        }
    }

    #[test]
    fn negated_query_negates_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let db = random_db(&mut rng, 4, 512, Precision::Int8);
        // -128 has no positive counterpart, so draw from the symmetric range
        let query: Vec<i8> = (0..512).map(|_| rng.random_range(-127..=127)).collect();
        let neg: Vec<i8> = query.iter().map(|&v| -v).collect();
        let zero = SpatialErrorMap::zero();
        let mut f = single_column(db, false, &zero);
        let cfg = MacroConfig::new(Precision::Int8);
        let a = run_column_retrieval(&mut f.column, &QueryRegisterFile::load(&query, Precision::Int8).unwrap(), &f.layout, &f.lut, &zero, &seed(), &cfg).unwrap();
        let b = run_column_retrieval(&mut f.column, &QueryRegisterFile::load(&neg, Precision::Int8).unwrap(), &f.layout, &f.lut, &zero, &seed(), &cfg).unwrap();
        let negated: Vec<i32> = a.scores.iter().map(|s| -s).collect();
        assert_eq!(b.scores, negated);
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let zero = SpatialErrorMap::zero();
        let mut f = single_column(random_db(&mut rng, 2, 256, Precision::Int8), false, &zero);
        let q = QueryRegisterFile::load(&[0; 128], Precision::Int8).unwrap();
        let cfg = MacroConfig::new(Precision::Int8);
        assert!(matches!(
            run_column_retrieval(&mut f.column, &q, &f.layout, &f.lut, &zero, &seed(), &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
        let q4 = QueryRegisterFile::load(&[0; 256], Precision::Int4).unwrap();
        assert!(run_column_retrieval(&mut f.column, &q4, &f.layout, &f.lut, &zero, &seed(), &cfg).is_err());
    }

    #[test]
    fn write_planes_matches_cell_write() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = single_column(random_db(&mut rng, 16, 128, Precision::Int8), false, &SpatialErrorMap::zero());
        let planes = f.layout.column_planes(&f.db, 0, 0);
        for r in [0usize, 64, 127] {
            let bits: Vec<bool> = planes.iter().map(|p| (p >> r) & 1 == 1).collect();
            let mut cell = DircCell::new(0);
            cell.write_subarray(&bits, f.layout.cell_map().entries()).unwrap();
            for i in 0..64 {
                let pos = SubarrayPos::from_index(i);
                assert_eq!(cell.level(pos), f.column.cell(r).level(pos));
            }
        }
    }
}
