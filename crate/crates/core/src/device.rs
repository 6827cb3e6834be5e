//! DIRC cell model: an 8x8 multi-level ReRAM subarray read one bit at a time
//! into a single SRAM bit.
//!
//! Each subarray position stores a 2-bit level `{MSB, LSB}`. Sensing is
//! abstracted to a Bernoulli flip per read: MSB reads never flip, LSB reads
//! flip with the position's probability from the [`SpatialErrorMap`]. Draws
//! are keyed by `(seed, cell, position, level, attempt)` so that outcomes do
//! not depend on simulation order.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const SUBARRAY_DIM: usize = 8;
pub const POSITIONS: usize = SUBARRAY_DIM * SUBARRAY_DIM;
/// Logical bits stored per DIRC cell (64 MLC positions x 2 level bits).
pub const CELL_BITS: usize = 2 * POSITIONS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubarrayPos {
    row: u8,
    col: u8,
}

impl SubarrayPos {
    pub fn new(row: usize, col: usize) -> Result<Self> {
        if row >= SUBARRAY_DIM || col >= SUBARRAY_DIM {
            return Err(Error::AddressOutOfRange(format!(
                "subarray position ({row}, {col}) outside 8x8"
            )));
        }
        Ok(Self {
            row: row as u8,
            col: col as u8,
        })
    }

    /// Row-major position `index` in `0..64`.
    pub fn from_index(index: usize) -> Self {
        assert!(index < POSITIONS, "position index {index} out of range");
        Self {
            row: (index / SUBARRAY_DIM) as u8,
            col: (index % SUBARRAY_DIM) as u8,
        }
    }

    pub fn row(self) -> usize {
        self.row as usize
    }

    pub fn col(self) -> usize {
        self.col as usize
    }

    pub fn index(self) -> usize {
        self.row() * SUBARRAY_DIM + self.col()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LevelBit {
    Msb,
    Lsb,
}

impl LevelBit {
    pub fn code(self) -> u8 {
        match self {
            LevelBit::Msb => 1,
            LevelBit::Lsb => 0,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(LevelBit::Msb),
            0 => Some(LevelBit::Lsb),
            _ => None,
        }
    }
}

/// Per-position LSB flip probabilities. MSB flip probability is pinned to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialErrorMap {
    lsb: [[f64; SUBARRAY_DIM]; SUBARRAY_DIM],
}

impl Default for SpatialErrorMap {
    fn default() -> Self {
        Self::zero()
    }
}

impl SpatialErrorMap {
    pub fn zero() -> Self {
        Self {
            lsb: [[0.0; SUBARRAY_DIM]; SUBARRAY_DIM],
        }
    }

    pub fn uniform(p: f64) -> Result<Self> {
        Self::from_grid([[p; SUBARRAY_DIM]; SUBARRAY_DIM])
    }

    pub fn from_grid(lsb: [[f64; SUBARRAY_DIM]; SUBARRAY_DIM]) -> Result<Self> {
        for (r, row) in lsb.iter().enumerate() {
            for (c, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidInput(format!(
                        "probability {p} at ({r}, {c}) outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self { lsb })
    }

    pub fn lsb_prob(&self, pos: SubarrayPos) -> f64 {
        self.lsb[pos.row()][pos.col()]
    }

    pub fn flip_prob(&self, pos: SubarrayPos, level: LevelBit) -> f64 {
        match level {
            LevelBit::Msb => 0.0,
            LevelBit::Lsb => self.lsb_prob(pos),
        }
    }

    pub fn grid(&self) -> &[[f64; SUBARRAY_DIM]; SUBARRAY_DIM] {
        &self.lsb
    }

    pub fn is_zero(&self) -> bool {
        self.lsb.iter().flatten().all(|&p| p == 0.0)
    }

    /// Multiply every probability by `factor`, clamping to `[0, 1]`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut lsb = self.lsb;
        for p in lsb.iter_mut().flatten() {
            *p = (*p * factor).clamp(0.0, 1.0);
        }
        Self { lsb }
    }

    pub fn mean(&self) -> f64 {
        self.lsb.iter().flatten().sum::<f64>() / POSITIONS as f64
    }

    /// Eight lines of eight probabilities, row-major; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::with_capacity(SUBARRAY_DIM);
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| Error::Parse {
                        line: n + 1,
                        message: format!("`{tok}` is not a number"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != SUBARRAY_DIM {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected 8 values, found {}", row.len()),
                });
            }
            rows.push(row);
        }
        if rows.len() != SUBARRAY_DIM {
            return Err(Error::Parse {
                line: text.lines().count(),
                message: format!("expected 8 rows, found {}", rows.len()),
            });
        }
        let mut grid = [[0.0; SUBARRAY_DIM]; SUBARRAY_DIM];
        for (dst, src) in grid.iter_mut().zip(&rows) {
            dst.copy_from_slice(src);
        }
        Self::from_grid(grid)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# LSB flip probability per subarray position, row-major\n");
        for row in &self.lsb {
            let line: Vec<String> = row.iter().map(|p| format!("{p}")).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Parameters of the synthetic spatial error map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMapParams {
    /// Extra error toward the middle columns, away from the two VSS rails.
    pub rail_effect: f64,
    /// Extra error toward column 0, away from the readout circuit on the right.
    pub readout_effect: f64,
    pub base: f64,
    /// Amplitude of a uniform `[-noise, noise)` perturbation per position.
    pub noise: f64,
    pub noise_seed: u64,
}

impl Default for ErrorMapParams {
    fn default() -> Self {
        Self {
            rail_effect: 0.0,
            readout_effect: 0.0,
            base: 0.0,
            noise: 0.0,
            noise_seed: 0,
        }
    }
}

pub fn generate_error_map(params: &ErrorMapParams) -> Result<SpatialErrorMap> {
    let ErrorMapParams {
        rail_effect,
        readout_effect,
        base,
        noise,
        noise_seed,
    } = *params;
    for (name, v) in [
        ("rail_effect", rail_effect),
        ("readout_effect", readout_effect),
        ("base", base),
        ("noise", noise),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput(format!("{name} must be non-negative, got {v}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let last = (SUBARRAY_DIM - 1) as f64;
    let mut grid = [[0.0; SUBARRAY_DIM]; SUBARRAY_DIM];
    for row in grid.iter_mut() {
        for (c, p) in row.iter_mut().enumerate() {
            let c = c as f64;
            let rail = rail_effect * c.min(last - c) / (last / 2.0);
            let readout = readout_effect * (last - c) / last;
            let jitter = if noise > 0.0 {
                noise * rng.random_range(-1.0..1.0)
            } else {
                0.0
            };
            *p = (base + rail + readout + jitter).clamp(0.0, 1.0);
        }
    }
    SpatialErrorMap::from_grid(grid)
}

const fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Root of the per-draw random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FaultSeed {
    global_seed: u64,
    core_id: u32,
    macro_pass: u32,
    query_id: u64,
    base: u64,
}

impl FaultSeed {
    pub fn new(global_seed: u64, core_id: u32, macro_pass: u32, query_id: u64) -> Self {
        let mut h = mix64(global_seed);
        h = mix64(h ^ core_id as u64);
        h = mix64(h ^ macro_pass as u64);
        h = mix64(h ^ query_id);
        Self {
            global_seed,
            core_id,
            macro_pass,
            query_id,
            base: h,
        }
    }

    pub fn with_core(&self, core_id: u32) -> Self {
        Self::new(self.global_seed, core_id, self.macro_pass, self.query_id)
    }

    pub fn global_seed(&self) -> u64 {
        self.global_seed
    }

    pub fn core_id(&self) -> u32 {
        self.core_id
    }

    pub fn macro_pass(&self) -> u32 {
        self.macro_pass
    }

    pub fn query_id(&self) -> u64 {
        self.query_id
    }

    /// Uniform draw in `[0, 1)` for one sensing event.
    pub fn uniform(&self, cell_key: u32, pos_index: usize, level: LevelBit, attempt: u32) -> f64 {
        let addr = ((cell_key as u64) << 8) | ((pos_index as u64) << 1) | level.code() as u64;
        let h = mix64(mix64(self.base ^ addr) ^ attempt as u64);
        (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn flips(&self, prob: f64, cell_key: u32, pos_index: usize, level: LevelBit, attempt: u32) -> bool {
        if prob <= 0.0 {
            false
        } else if prob >= 1.0 {
            true
        } else {
            self.uniform(cell_key, pos_index, level, attempt) < prob
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CachedRead {
    pub pos: SubarrayPos,
    pub level: LevelBit,
    pub bit: bool,
}

/// One DIRC cell: 64 MLC levels packed as MSB/LSB masks plus the SRAM cache.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DircCell {
    key: u32,
    msb: u64,
    lsb: u64,
    cache: Option<CachedRead>,
}

impl DircCell {
    /// `key` identifies the cell inside its core (column * rows + row) for the fault stream.
    pub fn new(key: u32) -> Self {
        Self {
            key,
            msb: 0,
            lsb: 0,
            cache: None,
        }
    }

    pub fn key(&self) -> u32 {
        self.key
    }

    /// Error-free write of 128 logical bits through `mapping` (logical bit -> physical slot).
    pub fn write_subarray(&mut self, bits: &[bool], mapping: &[(SubarrayPos, LevelBit)]) -> Result<()> {
        if bits.len() != CELL_BITS {
            return Err(Error::InvalidInput(format!(
                "a DIRC cell stores {CELL_BITS} bits, got {}",
                bits.len()
            )));
        }
        check_bijective(mapping)?;
        let (mut msb, mut lsb) = (0u64, 0u64);
        for (&bit, &(pos, level)) in bits.iter().zip(mapping) {
            if bit {
                match level {
                    LevelBit::Msb => msb |= 1 << pos.index(),
                    LevelBit::Lsb => lsb |= 1 << pos.index(),
                }
            }
        }
        self.msb = msb;
        self.lsb = lsb;
        self.cache = None;
        Ok(())
    }

    pub(crate) fn set_masks(&mut self, msb: u64, lsb: u64) {
        self.msb = msb;
        self.lsb = lsb;
        self.cache = None;
    }

    /// Stored 2-bit level (MSB weight 2).
    pub fn level(&self, pos: SubarrayPos) -> u8 {
        let i = pos.index();
        (((self.msb >> i) & 1) << 1 | ((self.lsb >> i) & 1)) as u8
    }

    pub fn stored_bit(&self, pos: SubarrayPos, level: LevelBit) -> bool {
        self.stored_at(pos.index(), level)
    }

    #[inline]
    pub(crate) fn stored_at(&self, index: usize, level: LevelBit) -> bool {
        let mask = match level {
            LevelBit::Msb => self.msb,
            LevelBit::Lsb => self.lsb,
        };
        (mask >> index) & 1 == 1
    }

    pub fn cached(&self) -> Option<CachedRead> {
        self.cache
    }

    pub fn sense_bit(
        &mut self,
        row: usize,
        col: usize,
        level: LevelBit,
        map: &SpatialErrorMap,
        seed: &FaultSeed,
    ) -> Result<bool> {
        let pos = SubarrayPos::new(row, col)?;
        Ok(self.sense(pos, level, map.flip_prob(pos, level), seed, 0))
    }

    pub fn resense_bit(
        &mut self,
        row: usize,
        col: usize,
        level: LevelBit,
        map: &SpatialErrorMap,
        seed: &FaultSeed,
        attempt: u32,
    ) -> Result<bool> {
        if attempt == 0 {
            return Err(Error::InvalidInput("re-sense attempt must be >= 1".into()));
        }
        let pos = SubarrayPos::new(row, col)?;
        Ok(self.sense(pos, level, map.flip_prob(pos, level), seed, attempt))
    }

    #[inline]
    pub(crate) fn sense(
        &mut self,
        pos: SubarrayPos,
        level: LevelBit,
        prob: f64,
        seed: &FaultSeed,
        attempt: u32,
    ) -> bool {
        let stored = self.stored_at(pos.index(), level);
        let bit = stored ^ seed.flips(prob, self.key, pos.index(), level, attempt);
        self.cache = Some(CachedRead { pos, level, bit });
        bit
    }
}

fn check_bijective(mapping: &[(SubarrayPos, LevelBit)]) -> Result<()> {
    if mapping.len() != CELL_BITS {
        return Err(Error::InvalidInput(format!(
            "mapping must cover {CELL_BITS} physical bits, got {}",
            mapping.len()
        )));
    }
    let mut used = 0u128;
    for &(pos, level) in mapping {
        let slot = pos.index() * 2 + level.code() as usize;
        if used & (1 << slot) != 0 {
            return Err(Error::InvalidInput(format!(
                "mapping assigns ({}, {}) {level:?} twice",
                pos.row(),
                pos.col()
            )));
        }
        used |= 1 << slot;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_major_mapping() -> Vec<(SubarrayPos, LevelBit)> {
        (0..CELL_BITS)
            .map(|k| {
                let level = if k % 2 == 1 { LevelBit::Msb } else { LevelBit::Lsb };
                (SubarrayPos::from_index(k / 2), level)
            })
            .collect()
    }

    fn seed() -> FaultSeed {
        FaultSeed::new(42, 0, 0, 7)
    }

    #[test]
    fn zero_bits_give_zero_levels() {
        let mut cell = DircCell::new(0);
        cell.write_subarray(&[false; CELL_BITS], &row_major_mapping()).unwrap();
        for i in 0..POSITIONS {
            assert_eq!(cell.level(SubarrayPos::from_index(i)), 0);
        }
    }

    #[test]
    fn single_msb_gives_level_two() {
        let mut cell = DircCell::new(0);
        let mut bits = [false; CELL_BITS];
        bits[1] = true; // position (0, 0) MSB under the row-major mapping
        cell.write_subarray(&bits, &row_major_mapping()).unwrap();
        assert_eq!(cell.level(SubarrayPos::new(0, 0).unwrap()), 2);
        assert_eq!(cell.level(SubarrayPos::new(0, 1).unwrap()), 0);
    }

    #[test]
    fn write_rejects_bad_lengths_and_mappings() {
        let mut cell = DircCell::new(0);
        let mapping = row_major_mapping();
        assert!(cell.write_subarray(&[true; 127], &mapping).is_err());
        let mut dup = mapping.clone();
        dup[0] = dup[2];
        assert!(cell.write_subarray(&[true; CELL_BITS], &dup).is_err());
        assert!(cell.write_subarray(&[true; CELL_BITS], &mapping[..100]).is_err());
    }

    #[test]
    fn error_free_sense_round_trips() {
        let mapping = row_major_mapping();
        let bits: Vec<bool> = (0..CELL_BITS).map(|k| (k * 7 + k / 5) % 3 == 0).collect();
        let mut cell = DircCell::new(3);
        cell.write_subarray(&bits, &mapping).unwrap();
        let map = SpatialErrorMap::zero();
        for (k, &(pos, level)) in mapping.iter().enumerate() {
            let b = cell.sense_bit(pos.row(), pos.col(), level, &map, &seed()).unwrap();
            assert_eq!(b, bits[k]);
            assert_eq!(cell.cached().unwrap().bit, b);
        }
    }

    #[test]
    fn msb_never_flips_and_forced_lsb_always_flips() {
        let mut cell = DircCell::new(0);
        cell.set_masks(0xdead_beef, 0x0f0f);
        let map = SpatialErrorMap::uniform(1.0).unwrap();
        for i in 0..POSITIONS {
            let pos = SubarrayPos::from_index(i);
            let s = seed();
            assert_eq!(
                cell.sense_bit(pos.row(), pos.col(), LevelBit::Msb, &map, &s).unwrap(),
                cell.stored_bit(pos, LevelBit::Msb)
            );
            for attempt in 1..4 {
                assert_eq!(
                    cell.resense_bit(pos.row(), pos.col(), LevelBit::Lsb, &map, &s, attempt).unwrap(),
                    !cell.stored_bit(pos, LevelBit::Lsb)
                );
            }
        }
    }

    #[test]
    fn out_of_range_addresses_rejected() {
        let mut cell = DircCell::new(0);
        let map = SpatialErrorMap::zero();
        assert!(cell.sense_bit(8, 0, LevelBit::Lsb, &map, &seed()).is_err());
        assert!(cell.resense_bit(0, 9, LevelBit::Lsb, &map, &seed(), 1).is_err());
        assert!(cell.resense_bit(0, 0, LevelBit::Lsb, &map, &seed(), 0).is_err());
    }

    #[test]
    fn resense_sequence_replays() {
        let map = SpatialErrorMap::uniform(0.5).unwrap();
        let run = || {
            let mut cell = DircCell::new(11);
            cell.set_masks(0, u64::MAX);
            (1..=64)
                .map(|a| cell.resense_bit(2, 5, LevelBit::Lsb, &map, &seed(), a).unwrap())
                .collect::<Vec<_>>()
        };
        let first = run();
        assert_eq!(first, run());
        assert!(first.iter().any(|&b| b) && first.iter().any(|&b| !b));
    }

    #[test]
    fn empirical_flip_rate_within_three_sigma() {
        let mut grid = [[0.0; 8]; 8];
        for (i, p) in grid.iter_mut().flatten().enumerate() {
            *p = (i as f64 + 1.0) / 130.0;
        }
        let map = SpatialErrorMap::from_grid(grid).unwrap();
        let n = 100_000u32;
        for &i in &[0usize, 17, 40, 63] {
            let pos = SubarrayPos::from_index(i);
            let p = map.lsb_prob(pos);
            let mut flips = 0u32;
            for draw in 0..n {
                let s = FaultSeed::new(9, 0, 0, draw as u64);
                if s.flips(p, 5, i, LevelBit::Lsb, 0) {
                    flips += 1;
                }
            }
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((flips as f64 - n as f64 * p).abs() <= 3.0 * sigma, "position {i}");
        }
    }

    #[test]
    fn generator_shapes() {
        let uniform = generate_error_map(&ErrorMapParams {
            base: 0.03,
            ..Default::default()
        })
        .unwrap();
        assert!(uniform.grid().iter().flatten().all(|&p| p == 0.03));
        assert!(generate_error_map(&ErrorMapParams::default()).unwrap().is_zero());

        let readout = generate_error_map(&ErrorMapParams {
            readout_effect: 0.1,
            ..Default::default()
        })
        .unwrap();
        for r in 0..8 {
            assert!(readout.grid()[r][0] > readout.grid()[r][7]);
            assert_eq!(readout.grid()[r][0], 0.1);
            assert_eq!(readout.grid()[r][7], 0.0);
        }

        let rail = generate_error_map(&ErrorMapParams {
            rail_effect: 0.07,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(rail.grid()[0][0], 0.0);
        assert_eq!(rail.grid()[0][7], 0.0);
        assert!(rail.grid()[0][3] > rail.grid()[0][1]);

        let clamped = generate_error_map(&ErrorMapParams {
            base: 0.9,
            readout_effect: 0.5,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(clamped.grid()[0][0], 1.0);
        assert!(generate_error_map(&ErrorMapParams {
            base: -0.1,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn noisy_generator_is_seeded() {
        let params = ErrorMapParams {
            base: 0.05,
            noise: 0.01,
            noise_seed: 3,
            ..Default::default()
        };
        assert_eq!(generate_error_map(&params).unwrap(), generate_error_map(&params).unwrap());
    }

    #[test]
    fn map_text_round_trip_and_errors() {
        let map = generate_error_map(&ErrorMapParams {
            base: 0.001,
            rail_effect: 0.02,
            readout_effect: 0.013,
            noise: 0.001,
            noise_seed: 5,
        })
        .unwrap();
        assert_eq!(SpatialErrorMap::parse(&map.to_text()).unwrap(), map);
        assert!(matches!(
            SpatialErrorMap::parse("0 0 0\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        let bad = "1.5 0 0 0 0 0 0 0\n".repeat(8);
        assert!(SpatialErrorMap::parse(&bad).is_err());
        let text = format!("# comment\n{}", "0.1 0 0 0 0 0 0 0\n".repeat(8));
        assert_eq!(SpatialErrorMap::parse(&text).unwrap().grid()[5][0], 0.1);
    }
}
