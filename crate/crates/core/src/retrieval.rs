//! Full-query orchestration across sixteen cores.
//!
//! A query is broadcast to every core; each core runs its macro's columns,
//! turns raw inner products into scores with its norm/index buffer, keeps a
//! local top-k, and a global comparator merges the sixteen local lists.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::device::{FaultSeed, SpatialErrorMap};
use crate::error::{Error, Result};
use crate::layout::{build_dsum_lut, plan_layout, DSumLut, MacroLayout, COLUMNS, CORES};
use crate::macro_engine::{
    run_column_retrieval, ColumnCounters, ColumnDevice, MacroConfig, QueryRegisterFile,
    DEFAULT_MAX_RESENSE,
};
use crate::perf::{CoreCounters, QueryCounters};
use crate::store::{compute_norm, QuantizedDb, QuantizedVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreMode {
    Mips,
    Cosine,
}

impl std::fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoreMode::Mips => "mips",
            ScoreMode::Cosine => "cosine",
        })
    }
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mips" => Ok(ScoreMode::Mips),
            "cosine" => Ok(ScoreMode::Cosine),
            other => Err(Error::InvalidInput(format!("unknown score mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: u64,
    pub raw_ip: i64,
    pub score: f64,
}

/// Descending score, ties by ascending document id.
pub fn rank_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score.total_cmp(&a.score).then(a.doc_id.cmp(&b.doc_id))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalResult {
    pub docs: Vec<ScoredDoc>,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<u64> {
        self.docs.iter().map(|d| d.doc_id).collect()
    }
}

/// Norm unit: Euclidean norm of the query's integer values.
pub fn compute_query_norm(q: &QuantizedVector) -> f64 {
    compute_norm(q)
}

/// Score calculator. MIPS applies both scales; cosine divides by both integer
/// norms (scales cancel). A zero document norm scores `-inf` in cosine mode.
pub fn score(
    raw_ip: i64,
    q_norm: f64,
    d_norm: f64,
    q_scale: f32,
    d_scale: f32,
    mode: ScoreMode,
) -> Result<f64> {
    match mode {
        ScoreMode::Mips => Ok(raw_ip as f64 * q_scale as f64 * d_scale as f64),
        ScoreMode::Cosine => {
            if q_norm <= 0.0 {
                return Err(Error::InvalidInput("cosine score with zero query norm".into()));
            }
            if d_norm <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            Ok(raw_ip as f64 / (q_norm * d_norm))
        }
    }
}

pub fn local_topk(scores: &[ScoredDoc], k: usize) -> Vec<ScoredDoc> {
    let mut v = scores.to_vec();
    if k < v.len() {
        v.select_nth_unstable_by(k, rank_order);
        v.truncate(k);
    }
    v.sort_by(rank_order);
    v
}

pub fn global_topk(lists: &[Vec<ScoredDoc>], k: usize) -> RetrievalResult {
    let all: Vec<ScoredDoc> = lists.iter().flatten().copied().collect();
    RetrievalResult {
        docs: local_topk(&all, k),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryOptions {
    pub mode: ScoreMode,
    pub k: usize,
    pub detection: bool,
    pub max_resense: u32,
    pub seed: u64,
    pub macro_pass: u32,
    /// Simulate cores on the rayon pool. Results are identical either way.
    pub parallel: bool,
}

impl Default for QueryOptions {
    fn default() -> Self {
        Self {
            mode: ScoreMode::Cosine,
            k: 5,
            detection: true,
            max_resense: DEFAULT_MAX_RESENSE,
            seed: 0,
            macro_pass: 0,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct IndexEntry {
    doc: u32,
    doc_id: u64,
    norm: f32,
    scale: f32,
}

/// One core: its macro's columns and the norm/index buffer of its documents.
#[derive(Debug, Clone)]
pub struct CoreState {
    core_id: usize,
    columns: Vec<ColumnDevice>,
    index: Vec<IndexEntry>,
}

impl CoreState {
    pub fn core_id(&self) -> usize {
        self.core_id
    }

    pub fn doc_count(&self) -> usize {
        self.index.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub result: RetrievalResult,
    /// Every document's simulated score, in database order.
    pub all_scores: Vec<ScoredDoc>,
    pub counters: QueryCounters,
}

struct CoreOutput {
    scored: Vec<(u32, ScoredDoc)>,
    local: Vec<ScoredDoc>,
    counters: CoreCounters,
}

/// System state after layout, device writes and LUT construction.
#[derive(Debug, Clone)]
pub struct Accelerator {
    layout: MacroLayout,
    lut: DSumLut,
    cores: Vec<CoreState>,
}

impl Accelerator {
    pub fn build(db: &QuantizedDb, remap: bool, map: &SpatialErrorMap) -> Result<Self> {
        let layout = plan_layout(db, remap, map)?;
        let lut = build_dsum_lut(db, &layout);
        Self::new(db, layout, lut)
    }

    /// Write `db` into the devices according to `layout`.
    pub fn new(db: &QuantizedDb, layout: MacroLayout, lut: DSumLut) -> Result<Self> {
        let shape = layout.shape();
        if shape.dim() != db.dim() || shape.precision() != db.precision() || layout.doc_count() != db.len() {
            return Err(Error::Inconsistent(format!(
                "layout for {} x {} {} does not match database {} x {} {}",
                layout.doc_count(),
                shape.dim(),
                shape.precision(),
                db.len(),
                db.dim(),
                db.precision()
            )));
        }
        let cores = (0..CORES)
            .into_par_iter()
            .map(|core| {
                let mut columns = Vec::with_capacity(COLUMNS);
                let mut index = Vec::new();
                for column in 0..COLUMNS {
                    let mut dev = ColumnDevice::new(core, column);
                    let docs = layout.column_docs(core, column);
                    if !docs.is_empty() {
                        dev.write_planes(&layout.column_planes(db, core, column), layout.cell_map());
                    }
                    index.extend(docs.iter().map(|&d| IndexEntry {
                        doc: d,
                        doc_id: db.id(d as usize),
                        norm: db.norm(d as usize),
                        scale: db.scale(d as usize),
                    }));
                    columns.push(dev);
                }
                CoreState {
                    core_id: core,
                    columns,
                    index,
                }
            })
            .collect();
        Ok(Self { layout, lut, cores })
    }

    pub fn layout(&self) -> &MacroLayout {
        &self.layout
    }

    pub fn lut(&self) -> &DSumLut {
        &self.lut
    }

    pub fn cores(&self) -> &[CoreState] {
        &self.cores
    }

    pub fn run_query(
        &mut self,
        query_id: u64,
        query: &QuantizedVector,
        map: &SpatialErrorMap,
        opts: &QueryOptions,
    ) -> Result<QueryOutcome> {
        let shape = self.layout.shape();
        if query.dim() != shape.dim() {
            return Err(Error::DimensionMismatch {
                expected: shape.dim(),
                found: query.dim(),
            });
        }
        if opts.k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        let q_norm = compute_query_norm(query);
        if opts.mode == ScoreMode::Cosine && q_norm == 0.0 {
            return Err(Error::ZeroNormQuery { query_id });
        }
        let qrf = QueryRegisterFile::load(query.values(), shape.precision())?;
        let config = MacroConfig {
            precision: shape.precision(),
            detection: opts.detection,
            max_resense: opts.max_resense,
        };
        let root = FaultSeed::new(opts.seed, 0, opts.macro_pass, query_id);
        let (layout, lut) = (&self.layout, &self.lut);
        let run_core = |core: &mut CoreState| -> Result<CoreOutput> {
            let seed = root.with_core(core.core_id as u32);
            let mut critical = ColumnCounters::default();
            let mut totals = ColumnCounters::default();
            let mut raw = Vec::with_capacity(core.index.len());
            for dev in core.columns.iter_mut() {
                if layout.column_docs(core.core_id, dev.column()).is_empty() {
                    continue;
                }
                let run = run_column_retrieval(dev, &qrf, layout, lut, map, &seed, &config)?;
                if run.counters.total_cycles() > critical.total_cycles() {
                    critical = run.counters;
                }
                totals.add(&run.counters);
                raw.extend(run.scores);
            }
            // columns are visited in order and slots in order, matching the index buffer
            let mut scored = Vec::with_capacity(raw.len());
            for (entry, ip) in core.index.iter().zip(raw) {
                let s = score(
                    ip as i64,
                    q_norm,
                    entry.norm as f64,
                    query.scale(),
                    entry.scale,
                    opts.mode,
                )?;
                scored.push((
                    entry.doc,
                    ScoredDoc {
                        doc_id: entry.doc_id,
                        raw_ip: ip as i64,
                        score: s,
                    },
                ));
            }
            let plain: Vec<ScoredDoc> = scored.iter().map(|(_, d)| *d).collect();
            let local = local_topk(&plain, opts.k);
            let counters = CoreCounters {
                core_id: core.core_id,
                docs: core.index.len(),
                critical,
                totals,
                local_entries: local.len(),
            };
            Ok(CoreOutput {
                scored,
                local,
                counters,
            })
        };

        let outputs: Vec<CoreOutput> = if opts.parallel {
            self.cores.par_iter_mut().map(run_core).collect::<Result<_>>()?
        } else {
            self.cores.iter_mut().map(run_core).collect::<Result<_>>()?
        };

        let mut all = vec![None; self.layout.doc_count()];
        let mut locals = Vec::with_capacity(CORES);
        let mut cores = Vec::with_capacity(CORES);
        for out in outputs {
            for (doc, s) in out.scored {
                all[doc as usize] = Some(s);
            }
            locals.push(out.local);
            cores.push(out.counters);
        }
        Ok(QueryOutcome {
            result: global_topk(&locals, opts.k),
            all_scores: all.into_iter().map(|s| s.expect("every document scored")).collect(),
            counters: QueryCounters {
                dim: shape.dim(),
                mode: opts.mode,
                k: opts.k,
                cores,
            },
        })
    }
}

/// Exhaustive quantized search without the array: direct integer dot products
/// through the same score calculator. Returns every score in database order.
pub fn flat_scores(db: &QuantizedDb, query: &QuantizedVector, mode: ScoreMode) -> Result<Vec<ScoredDoc>> {
    if query.dim() != db.dim() {
        return Err(Error::DimensionMismatch {
            expected: db.dim(),
            found: query.dim(),
        });
    }
    let q_norm = compute_query_norm(query);
    (0..db.len())
        .map(|i| {
            let ip: i64 = query
                .values()
                .iter()
                .zip(db.values(i))
                .map(|(&a, &b)| a as i64 * b as i64)
                .sum();
            Ok(ScoredDoc {
                doc_id: db.id(i),
                raw_ip: ip,
                score: score(ip, q_norm, db.norm(i) as f64, query.scale(), db.scale(i), mode)?,
            })
        })
        .collect()
}

pub fn flat_search(db: &QuantizedDb, query: &QuantizedVector, mode: ScoreMode, k: usize) -> Result<RetrievalResult> {
    let mut all = flat_scores(db, query, mode)?;
    all.sort_by(rank_order);
    all.truncate(k);
    Ok(RetrievalResult { docs: all })
}
