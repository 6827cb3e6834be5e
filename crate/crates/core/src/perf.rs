//! Latency and energy accounting from per-core event counters.
//!
//! Cores run in parallel, so cycles take the slowest core; energy sums over
//! every event on every core plus the shared top-k, norm and buffer units.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layout::{Shape, COLUMNS, CORES, TOTAL_COLUMNS};
use crate::macro_engine::ColumnCounters;
use crate::retrieval::ScoreMode;
use crate::store::Precision;

/// Parameter file produced by [`calibrate`] on the reference 4 MB workload.
pub const DEFAULT_PARAMS_TEXT: &str = include_str!("../data/default_params.txt");

/// Bytes per SRAM buffer entry: f32 score plus u32 index.
pub const BUFFER_ENTRY_BYTES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfParams {
    pub frequency_hz: f64,
    pub sense: f64,
    pub detect_cycle: f64,
    pub compute_cycle_per_column: f64,
    pub accumulator_cycle: f64,
    pub topk_compare: f64,
    pub norm_op: f64,
    pub buffer_access: f64,
    pub pipeline_fill: u64,
    /// Scores compared per cycle by each core's local top-k unit.
    pub topk_lanes: u64,
    /// Fixed cost of the sixteen-way global merge.
    pub merge_cycles: u64,
}

const KEYS: [&str; 11] = [
    "frequency",
    "sense",
    "detect_cycle",
    "compute_cycle_per_column",
    "accumulator_cycle",
    "topk_compare",
    "norm_op",
    "buffer_access",
    "pipeline_fill",
    "topk_lanes",
    "merge_cycles",
];

impl PerfParams {
    /// Uncalibrated energies in relative units (pJ), fill zero.
    pub fn reference() -> Self {
        Self {
            frequency_hz: 250e6,
            sense: 2.0e-12,
            detect_cycle: 1.0e-12,
            compute_cycle_per_column: 1.0e-12,
            accumulator_cycle: 0.25e-12,
            topk_compare: 0.5e-12,
            norm_op: 0.5e-12,
            buffer_access: 1.0e-12,
            pipeline_fill: 0,
            topk_lanes: 8,
            merge_cycles: 16,
        }
    }

    /// The shipped calibrated defaults.
    pub fn calibrated_default() -> Self {
        Self::parse(DEFAULT_PARAMS_TEXT).expect("bundled parameter file parses")
    }

    fn energies(&self) -> [f64; 7] {
        [
            self.sense,
            self.detect_cycle,
            self.compute_cycle_per_column,
            self.accumulator_cycle,
            self.topk_compare,
            self.norm_op,
            self.buffer_access,
        ]
    }

    fn energies_mut(&mut self) -> [&mut f64; 7] {
        [
            &mut self.sense,
            &mut self.detect_cycle,
            &mut self.compute_cycle_per_column,
            &mut self.accumulator_cycle,
            &mut self.topk_compare,
            &mut self.norm_op,
            &mut self.buffer_access,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return Err(Error::InvalidInput("frequency must be positive".into()));
        }
        if self.energies().iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::InvalidInput("per-event energies must be non-negative".into()));
        }
        if self.topk_lanes == 0 {
            return Err(Error::InvalidInput("topk_lanes must be at least 1".into()));
        }
        Ok(())
    }

    /// Multiply every per-event energy by `factor`.
    pub fn scale_energies(&self, factor: f64) -> Self {
        let mut p = *self;
        for e in p.energies_mut() {
            *e *= factor;
        }
        p
    }

    /// Parse `key = value unit` lines; `#` starts a comment. Every key is required.
    pub fn parse(text: &str) -> Result<Self> {
        let mut vals: [Option<f64>; 11] = [None; 11];
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let perr = |m: String| Error::Parse { line, message: m };
            let (key, rest) = body
                .split_once('=')
                .ok_or_else(|| perr(format!("expected `key = value`, got `{body}`")))?;
            let key = key.trim();
            let idx = KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| perr(format!("unknown parameter `{key}`")))?;
            if vals[idx].is_some() {
                return Err(perr(format!("duplicate parameter `{key}`")));
            }
            let mut parts = rest.split_whitespace();
            let num: f64 = parts
                .next()
                .ok_or_else(|| perr(format!("missing value for `{key}`")))?
                .parse()
                .map_err(|e| perr(format!("bad number for `{key}`: {e}")))?;
            let unit = parts.next().unwrap_or("");
            if parts.next().is_some() {
                return Err(perr(format!("trailing text after `{key}`")));
            }
            let factor = match (idx, unit) {
                (0, "Hz") => 1.0,
                (0, "kHz") => 1e3,
                (0, "MHz") => 1e6,
                (0, "GHz") => 1e9,
                (1..=7, "J") => 1.0,
                (1..=7, "mJ") => 1e-3,
                (1..=7, "uJ") | (1..=7, "µJ") => 1e-6,
                (1..=7, "nJ") => 1e-9,
                (1..=7, "pJ") => 1e-12,
                (1..=7, "fJ") => 1e-15,
                (8 | 10, "cycles") | (8..=10, "") => 1.0,
                _ => return Err(perr(format!("bad unit `{unit}` for `{key}`"))),
            };
            if idx >= 8 && (num < 0.0 || num.fract() != 0.0) {
                return Err(perr(format!("`{key}` must be a non-negative integer")));
            }
            vals[idx] = Some(num * factor);
        }
        if let Some(i) = vals.iter().position(|v| v.is_none()) {
            return Err(Error::Parse {
                line: text.lines().count(),
                message: format!("missing parameter `{}`", KEYS[i]),
            });
        }
        let v: Vec<f64> = vals.iter().map(|v| v.unwrap()).collect();
        let p = Self {
            frequency_hz: v[0],
            sense: v[1],
            detect_cycle: v[2],
            compute_cycle_per_column: v[3],
            accumulator_cycle: v[4],
            topk_compare: v[5],
            norm_op: v[6],
            buffer_access: v[7],
            pipeline_fill: v[8] as u64,
            topk_lanes: v[9] as u64,
            merge_cycles: v[10] as u64,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frequency = {} MHz", self.frequency_hz / 1e6);
        for (key, e) in KEYS[1..8].iter().zip(self.energies()) {
            let _ = writeln!(s, "{key} = {} pJ", e * 1e12);
        }
        let _ = writeln!(s, "pipeline_fill = {} cycles", self.pipeline_fill);
        let _ = writeln!(s, "topk_lanes = {}", self.topk_lanes);
        let _ = writeln!(s, "merge_cycles = {} cycles", self.merge_cycles);
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

impl Default for PerfParams {
    fn default() -> Self {
        Self::calibrated_default()
    }
}

/// Event counters of one core for one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CoreCounters {
    pub core_id: usize,
    pub docs: usize,
    /// Counters of the slowest column.
    pub critical: ColumnCounters,
    /// Counters summed over all columns.
    pub totals: ColumnCounters,
    pub local_entries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryCounters {
    pub dim: usize,
    pub mode: ScoreMode,
    pub k: usize,
    pub cores: Vec<CoreCounters>,
}

/// Database description for analytic accounting and calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadShape {
    pub docs: usize,
    pub dim: usize,
    pub precision: Precision,
    pub detection: bool,
    pub mode: ScoreMode,
    pub k: usize,
}

impl WorkloadShape {
    /// The full 4 MB INT8 dim-512 array used as the calibration anchor.
    pub fn reference_4mb() -> Self {
        Self {
            docs: 8192,
            dim: 512,
            precision: Precision::Int8,
            detection: true,
            mode: ScoreMode::Cosine,
            k: 5,
        }
    }

    /// INT8 dim-512 database of `mib` mebibytes.
    pub fn int8_dim512_mib(mib: f64) -> Self {
        Self {
            docs: (mib * 1024.0 * 1024.0 / 512.0).round() as usize,
            ..Self::reference_4mb()
        }
    }
}

impl QueryCounters {
    /// Counters of an error-free query under interleaved placement.
    pub fn analytic(w: &WorkloadShape) -> Result<Self> {
        let shape = Shape::new(w.dim, w.precision)?;
        crate::layout::check_capacity(&shape, w.docs)?;
        let planes_per_doc = shape.planes_per_embedding() as u64;
        let bits = shape.bits() as u64;
        let column = |n: u64| {
            let planes = n * planes_per_doc;
            ColumnCounters {
                planes,
                sense_cycles: planes,
                detect_cycles: if w.detection { planes } else { 0 },
                compute_cycles: planes * bits,
                ..Default::default()
            }
        };
        let base = (w.docs / TOTAL_COLUMNS) as u64;
        let extra = w.docs % TOTAL_COLUMNS;
        let cores = (0..CORES)
            .map(|core| {
                let mut totals = ColumnCounters::default();
                let mut critical = ColumnCounters::default();
                let mut docs = 0;
                for col in 0..COLUMNS {
                    let g = col * CORES + core;
                    let n = base + u64::from(g < extra);
                    let c = column(n);
                    if c.total_cycles() > critical.total_cycles() {
                        critical = c;
                    }
                    totals.add(&c);
                    docs += n as usize;
                }
                CoreCounters {
                    core_id: core,
                    docs,
                    critical,
                    totals,
                    local_entries: docs.min(w.k),
                }
            })
            .collect();
        Ok(Self {
            dim: w.dim,
            mode: w.mode,
            k: w.k,
            cores,
        })
    }

    pub fn residual_errors(&self) -> u64 {
        self.cores.iter().map(|c| c.totals.corrupted_planes).sum()
    }
}

pub const COMPONENTS: [&str; 7] = ["sense", "detect", "compute", "accumulator", "topk", "norm", "buffer"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CycleBreakdown {
    pub sense: u64,
    pub detect: u64,
    pub compute: u64,
    pub topk: u64,
    pub merge: u64,
    pub pipeline_fill: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfReport {
    pub cycles: u64,
    pub latency_s: f64,
    pub energy_j: f64,
    /// Cycles of the slowest core, plus the shared merge and fill.
    pub cycle_breakdown: CycleBreakdown,
    /// (event count, joules) per entry of [`COMPONENTS`].
    pub events: [u64; 7],
    pub breakdown_j: [f64; 7],
    /// Energy that does not depend on database size.
    pub static_energy_j: f64,
    pub resenses: u64,
    pub mismatches: u64,
    pub residual_flags: u64,
    /// Planes consumed with at least one uncorrected flip.
    pub residual_errors: u64,
    pub sram_buffer_bytes: u64,
}

fn topk_cycles(docs: usize, lanes: u64) -> u64 {
    (docs as u64).div_ceil(lanes)
}

/// Turn query counters into cycles, latency and energy.
pub fn account(counters: &QueryCounters, params: &PerfParams) -> Result<PerfReport> {
    params.validate()?;
    if counters.cores.len() != CORES {
        return Err(Error::MissingCounter(format!(
            "expected counters for {CORES} cores, got {}",
            counters.cores.len()
        )));
    }
    for (i, c) in counters.cores.iter().enumerate() {
        if c.core_id != i {
            return Err(Error::MissingCounter(format!("no counters for core {i}")));
        }
    }
    let mut slowest = CycleBreakdown::default();
    let mut slowest_total = 0;
    let mut totals = ColumnCounters::default();
    let mut docs = 0u64;
    for c in &counters.cores {
        let topk = topk_cycles(c.docs, params.topk_lanes);
        let t = c.critical.total_cycles() + topk;
        if t > slowest_total {
            slowest_total = t;
            slowest = CycleBreakdown {
                sense: c.critical.sense_cycles,
                detect: c.critical.detect_cycles,
                compute: c.critical.compute_cycles,
                topk,
                ..Default::default()
            };
        }
        totals.add(&c.totals);
        docs += c.docs as u64;
    }
    slowest.merge = params.merge_cycles;
    slowest.pipeline_fill = params.pipeline_fill;
    let cycles = slowest_total + params.merge_cycles + params.pipeline_fill;

    let k = counters.k as u64;
    let fixed_merge = CORES as u64 * k;
    let fixed_norm = counters.dim as u64;
    let fixed_buffer = 2 * CORES as u64 * k;
    let per_doc_norm = if counters.mode == ScoreMode::Cosine { docs } else { 0 };
    let events = [
        totals.sense_cycles,
        totals.detect_cycles,
        totals.compute_cycles,
        totals.compute_cycles,
        docs + fixed_merge,
        fixed_norm + per_doc_norm,
        docs + fixed_buffer,
    ];
    let e = params.energies();
    let breakdown_j: [f64; 7] = std::array::from_fn(|i| events[i] as f64 * e[i]);
    let static_energy_j =
        fixed_merge as f64 * params.topk_compare + fixed_norm as f64 * params.norm_op + fixed_buffer as f64 * params.buffer_access;
    Ok(PerfReport {
        cycles,
        latency_s: cycles as f64 / params.frequency_hz,
        energy_j: breakdown_j.iter().sum(),
        cycle_breakdown: slowest,
        events,
        breakdown_j,
        static_energy_j,
        resenses: totals.resenses,
        mismatches: totals.mismatches,
        residual_flags: totals.residual_flags,
        residual_errors: totals.corrupted_planes,
        sram_buffer_bytes: counters.cores.iter().map(|c| c.local_entries as u64).sum::<u64>() * BUFFER_ENTRY_BYTES,
    })
}

impl PerfReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "cycles        {:>12}", self.cycles);
        let _ = writeln!(s, "latency       {:>12.4} us", self.latency_s * 1e6);
        let _ = writeln!(s, "energy        {:>12.4} uJ", self.energy_j * 1e6);
        let b = &self.cycle_breakdown;
        let _ = writeln!(
            s,
            "critical path sense {} + detect {} + compute {} + topk {} + merge {} + fill {}",
            b.sense, b.detect, b.compute, b.topk, b.merge, b.pipeline_fill
        );
        let _ = writeln!(s, "{:<12} {:>14} {:>12} {:>7}", "component", "events", "energy_nJ", "share");
        for ((name, events), e) in COMPONENTS.iter().zip(self.events).zip(self.breakdown_j) {
            let share = if self.energy_j > 0.0 { e / self.energy_j * 100.0 } else { 0.0 };
            let _ = writeln!(s, "{name:<12} {events:>14} {:>12.4} {share:>6.2}%", e * 1e9);
        }
        let _ = writeln!(
            s,
            "resenses {}  mismatches {}  residual flags {}  residual errors {}  sram buffer {} B",
            self.resenses, self.mismatches, self.residual_flags, self.residual_errors, self.sram_buffer_bytes
        );
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let b = &self.cycle_breakdown;
        let _ = writeln!(s, "cycles = {}", self.cycles);
        let _ = writeln!(s, "latency_s = {:e}", self.latency_s);
        let _ = writeln!(s, "energy_j = {:e}", self.energy_j);
        let _ = writeln!(s, "static_energy_j = {:e}", self.static_energy_j);
        for (name, v) in [
            ("sense", b.sense),
            ("detect", b.detect),
            ("compute", b.compute),
            ("topk", b.topk),
            ("merge", b.merge),
            ("pipeline_fill", b.pipeline_fill),
        ] {
            let _ = writeln!(s, "cycles.{name} = {v}");
        }
        for ((name, events), e) in COMPONENTS.iter().zip(self.events).zip(self.breakdown_j) {
            let _ = writeln!(s, "events.{name} = {events}");
            let _ = writeln!(s, "energy_j.{name} = {e:e}");
        }
        let _ = writeln!(s, "resenses = {}", self.resenses);
        let _ = writeln!(s, "mismatches = {}", self.mismatches);
        let _ = writeln!(s, "residual_flags = {}", self.residual_flags);
        let _ = writeln!(s, "residual_errors = {}", self.residual_errors);
        let _ = writeln!(s, "sram_buffer_bytes = {}", self.sram_buffer_bytes);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTargets {
    pub latency_s: f64,
    pub energy_j: f64,
}

impl CalibrationTargets {
    /// 5.6 us and 0.956 uJ per query on the 4 MB array.
    pub fn table_one() -> Self {
        Self {
            latency_s: 5.6e-6,
            energy_j: 0.956e-6,
        }
    }
}

/// Fit `pipeline_fill` to the latency target and one common scale on `base`'s
/// energies (whose ratios are kept) to the energy target.
pub fn calibrate(targets: &CalibrationTargets, shape: &WorkloadShape, base: &PerfParams) -> Result<PerfParams> {
    if !(targets.latency_s > 0.0 && targets.energy_j > 0.0) {
        return Err(Error::InvalidInput("calibration targets must be positive".into()));
    }
    let counters = QueryCounters::analytic(shape)?;
    let mut p = PerfParams { pipeline_fill: 0, ..*base };
    let r = account(&counters, &p)?;
    let target_cycles = (targets.latency_s * p.frequency_hz).round() as i64;
    let fill = target_cycles - r.cycles as i64;
    if fill < 0 {
        return Err(Error::Infeasible(format!(
            "latency target needs {target_cycles} cycles but the workload already takes {}",
            r.cycles
        )));
    }
    if r.energy_j <= 0.0 {
        return Err(Error::Infeasible("reference energies are all zero".into()));
    }
    p.pipeline_fill = fill as u64;
    Ok(p.scale_energies(targets.energy_j / r.energy_j))
}
