//! Batch commands behind the `dirc` binary: build, query, eval, sweep,
//! gen-map, calibrate and synth. Every command is a pure function of its
//! inputs, flags and seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::device::{generate_error_map, ErrorMapParams, SpatialErrorMap};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, Qrels, ResultRow};
use crate::layout::{self, build_dsum_lut, plan_layout, Shape};
use crate::macro_engine::DEFAULT_MAX_RESENSE;
use crate::perf::{self, CalibrationTargets, PerfParams, PerfReport, WorkloadShape, COMPONENTS};
use crate::retrieval::{flat_scores, Accelerator, QueryOptions, ScoreMode};
use crate::store::{self, encode_quantized, quantize, EmbeddingFile, Precision, QuantizedDb, QuantizedVector};
use crate::synth::{self, SynthParams};

pub const DB_FILE: &str = "db.drc";
pub const LAYOUT_FILE: &str = "layout.drl";
pub const LUT_FILE: &str = "dsum.lut";
pub const MAP_FILE: &str = "error_map.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_switch(s: &str) -> Result<bool> {
    match s {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(Error::InvalidInput(format!("expected on/off, got `{other}`"))),
    }
}

fn switch(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ErrorMapSource {
    Zero,
    Generated(ErrorMapParams),
    File(PathBuf),
}

impl ErrorMapSource {
    pub fn resolve(&self) -> Result<SpatialErrorMap> {
        match self {
            ErrorMapSource::Zero => Ok(SpatialErrorMap::zero()),
            ErrorMapSource::Generated(p) => generate_error_map(p),
            ErrorMapSource::File(path) => SpatialErrorMap::load(path),
        }
    }
}

impl FromStr for ErrorMapSource {
    type Err = Error;

    /// `zero`, `gen:rail=..,readout=..,base=..,noise=..,seed=..` or a file path.
    fn from_str(s: &str) -> Result<Self> {
        if s == "zero" {
            return Ok(ErrorMapSource::Zero);
        }
        let Some(body) = s.strip_prefix("gen:") else {
            return Ok(ErrorMapSource::File(PathBuf::from(s)));
        };
        let mut p = ErrorMapParams::default();
        for item in body.split(',').filter(|x| !x.is_empty()) {
            let (key, val) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("expected key=value in `{item}`")))?;
            let bad = || Error::InvalidInput(format!("bad value for `{key}`: `{val}`"));
            match key {
                "rail" => p.rail_effect = val.parse().map_err(|_| bad())?,
                "readout" => p.readout_effect = val.parse().map_err(|_| bad())?,
                "base" => p.base = val.parse().map_err(|_| bad())?,
                "noise" => p.noise = val.parse().map_err(|_| bad())?,
                "seed" => p.noise_seed = val.parse().map_err(|_| bad())?,
                _ => return Err(Error::InvalidInput(format!("unknown generator key `{key}`"))),
            }
        }
        Ok(ErrorMapSource::Generated(p))
    }
}

impl std::fmt::Display for ErrorMapSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ErrorMapSource::Zero => f.write_str("zero"),
            ErrorMapSource::Generated(p) => write!(
                f,
                "gen:rail={},readout={},base={},noise={},seed={}",
                p.rail_effect, p.readout_effect, p.base, p.noise, p.noise_seed
            ),
            ErrorMapSource::File(path) => write!(f, "{}", path.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: ScoreMode,
    /// Used when building; queries run at the database's precision.
    pub precision: Precision,
    pub k: usize,
    pub detection: bool,
    pub remap: bool,
    /// `None` at query time means the map stored with the build.
    pub error_map: Option<ErrorMapSource>,
    pub seed: u64,
    pub params: Option<PathBuf>,
    pub max_resense: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: ScoreMode::Cosine,
            precision: Precision::Int8,
            k: 5,
            detection: true,
            remap: true,
            error_map: None,
            seed: 0,
            params: None,
            max_resense: DEFAULT_MAX_RESENSE,
        }
    }
}

impl RunConfig {
    /// Apply `key = value` lines from a config file on top of `self`.
    pub fn apply_config_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let perr = |m: String| Error::Parse { line: n + 1, message: m };
            let (key, val) = body
                .split_once('=')
                .ok_or_else(|| perr(format!("expected `key = value`, got `{body}`")))?;
            let (key, val) = (key.trim(), val.trim());
            let wrap = |e: Error| perr(e.to_string());
            match key {
                "mode" => self.mode = val.parse().map_err(wrap)?,
                "precision" => self.precision = val.parse().map_err(wrap)?,
                "k" => self.k = val.parse().map_err(|_| perr(format!("bad k `{val}`")))?,
                "detect" => self.detection = parse_switch(val).map_err(wrap)?,
                "remap" => self.remap = parse_switch(val).map_err(wrap)?,
                "error_map" => self.error_map = Some(val.parse().map_err(wrap)?),
                "seed" => self.seed = val.parse().map_err(|_| perr(format!("bad seed `{val}`")))?,
                "params" => self.params = Some(PathBuf::from(val)),
                "max_resense" => {
                    self.max_resense = val.parse().map_err(|_| perr(format!("bad max_resense `{val}`")))?
                }
                _ => return Err(perr(format!("unknown config key `{key}`"))),
            }
        }
        Ok(())
    }

    pub fn load_config(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_config_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        if let Some(p) = &self.params {
            if !p.is_file() {
                return Err(Error::InvalidInput(format!("parameter file {} not found", p.display())));
            }
        }
        if let Some(ErrorMapSource::File(p)) = &self.error_map {
            if !p.is_file() {
                return Err(Error::InvalidInput(format!("error map file {} not found", p.display())));
            }
        }
        Ok(())
    }

    pub fn perf_params(&self) -> Result<PerfParams> {
        match &self.params {
            Some(p) => PerfParams::load(p),
            None => Ok(PerfParams::calibrated_default()),
        }
    }

    fn options(&self, detection: bool, k: usize) -> QueryOptions {
        QueryOptions {
            mode: self.mode,
            k,
            detection,
            max_resense: self.max_resense,
            seed: self.seed,
            macro_pass: 0,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildSummary {
    pub manifest: String,
    pub embeddings_per_column: usize,
    pub docs: usize,
}

/// Quantize (if needed), plan, and persist the database, layout, D-Sum LUT,
/// error map and a manifest into `out`.
pub fn cmd_build(input: &Path, out: &Path, cfg: &RunConfig) -> Result<BuildSummary> {
    cfg.validate()?;
    let db = match store::read_embedding_file(input)? {
        EmbeddingFile::Float(f) => QuantizedDb::from_float(&f, cfg.precision)?,
        EmbeddingFile::Quantized(q) => {
            if q.precision() != cfg.precision {
                return Err(Error::InvalidInput(format!(
                    "input is already {} but {} was requested",
                    q.precision(),
                    cfg.precision
                )));
            }
            q
        }
    };
    let source = cfg.error_map.clone().unwrap_or(ErrorMapSource::Zero);
    let map = source.resolve()?;
    let layout = plan_layout(&db, cfg.remap, &map)?;
    let lut = build_dsum_lut(&db, &layout);
    let shape = layout.shape();

    let db_bytes = encode_quantized(&db);
    let layout_bytes = layout::encode_layout(&layout);
    let lut_bytes = layout::encode_lut(&lut);
    let map_text = map.to_text();

    let mut m = String::new();
    let _ = writeln!(m, "count = {}", db.len());
    let _ = writeln!(m, "dim = {}", db.dim());
    let _ = writeln!(m, "precision = {}", db.precision());
    let _ = writeln!(m, "remap = {}", switch(cfg.remap));
    let _ = writeln!(m, "seed = {}", cfg.seed);
    let _ = writeln!(m, "error_map_source = {source}");
    let _ = writeln!(m, "error_map_sha256 = {}", sha256_hex(map_text.as_bytes()));
    let _ = writeln!(m, "layout_sha256 = {}", sha256_hex(&layout_bytes));
    let _ = writeln!(m, "db_sha256 = {}", sha256_hex(&db_bytes));
    let _ = writeln!(m, "lut_sha256 = {}", sha256_hex(&lut_bytes));
    let _ = writeln!(m, "embeddings_per_column = {}", shape.slots_per_column());
    let _ = writeln!(m, "folds = {}", shape.folds());
    let _ = writeln!(m, "capacity_docs = {}", shape.capacity_docs());
    let _ = writeln!(m, "payload_bytes = {}", db.payload_bytes());

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join(DB_FILE), &db_bytes)?;
    write_file(&out.join(LAYOUT_FILE), &layout_bytes)?;
    write_file(&out.join(LUT_FILE), &lut_bytes)?;
    write_file(&out.join(MAP_FILE), map_text.as_bytes())?;
    write_file(&out.join(MANIFEST_FILE), m.as_bytes())?;
    Ok(BuildSummary {
        manifest: m,
        embeddings_per_column: shape.slots_per_column(),
        docs: db.len(),
    })
}

/// Artifacts of a build directory.
#[derive(Debug, Clone)]
pub struct LoadedBuild {
    pub db: QuantizedDb,
    pub accelerator: Accelerator,
    pub map: SpatialErrorMap,
}

pub fn load_build(dir: &Path) -> Result<LoadedBuild> {
    let db = match store::read_embedding_file(&dir.join(DB_FILE))? {
        EmbeddingFile::Quantized(q) => q,
        EmbeddingFile::Float(_) => {
            return Err(Error::Inconsistent(format!("{} holds float vectors", dir.join(DB_FILE).display())))
        }
    };
    let layout = layout::load_layout(&dir.join(LAYOUT_FILE))?;
    let lut = layout::load_lut(&dir.join(LUT_FILE))?;
    if lut != build_dsum_lut(&db, &layout) {
        return Err(Error::Inconsistent("D-Sum LUT does not match the stored database".into()));
    }
    let map = SpatialErrorMap::load(&dir.join(MAP_FILE))?;
    let accelerator = Accelerator::new(&db, layout, lut)?;
    Ok(LoadedBuild { db, accelerator, map })
}

/// Read a query file, quantizing float queries to `precision`.
pub fn load_queries(path: &Path, precision: Precision) -> Result<Vec<(u64, QuantizedVector)>> {
    match store::read_embedding_file(path)? {
        EmbeddingFile::Float(f) => f
            .iter()
            .map(|(id, v)| Ok((id, quantize(v, precision)?)))
            .collect(),
        EmbeddingFile::Quantized(q) => {
            if q.precision() != precision {
                return Err(Error::InvalidInput(format!(
                    "queries are {} but the database is {}",
                    q.precision(),
                    precision
                )));
            }
            Ok((0..q.len()).map(|i| (q.id(i), q.vector(i))).collect())
        }
    }
}

/// Per-query performance reports folded into means and totals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerfSummary {
    pub queries: usize,
    pub cycles_mean: f64,
    pub cycles_max: u64,
    pub latency_mean_s: f64,
    pub energy_mean_j: f64,
    pub energy_total_j: f64,
    pub breakdown_mean_j: [f64; 7],
    pub resenses: u64,
    pub mismatches: u64,
    pub residual_flags: u64,
    pub residual_errors: u64,
    pub sram_buffer_bytes: u64,
}

impl PerfSummary {
    pub fn from_reports(reports: &[PerfReport]) -> Self {
        let n = reports.len();
        let mut s = Self {
            queries: n,
            ..Default::default()
        };
        if n == 0 {
            return s;
        }
        let mut cycles = 0u64;
        let mut latency = 0.0;
        for r in reports {
            cycles += r.cycles;
            latency += r.latency_s;
            s.cycles_max = s.cycles_max.max(r.cycles);
            s.energy_total_j += r.energy_j;
            for (acc, e) in s.breakdown_mean_j.iter_mut().zip(r.breakdown_j) {
                *acc += e;
            }
            s.resenses += r.resenses;
            s.mismatches += r.mismatches;
            s.residual_flags += r.residual_flags;
            s.residual_errors += r.residual_errors;
            s.sram_buffer_bytes = s.sram_buffer_bytes.max(r.sram_buffer_bytes);
        }
        s.cycles_mean = cycles as f64 / n as f64;
        s.latency_mean_s = latency / n as f64;
        s.energy_mean_j = s.energy_total_j / n as f64;
        for e in s.breakdown_mean_j.iter_mut() {
            *e /= n as f64;
        }
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "queries = {}", self.queries);
        let _ = writeln!(s, "cycles_mean = {}", self.cycles_mean);
        let _ = writeln!(s, "cycles_max = {}", self.cycles_max);
        let _ = writeln!(s, "latency_mean_s = {:e}", self.latency_mean_s);
        let _ = writeln!(s, "energy_mean_j = {:e}", self.energy_mean_j);
        let _ = writeln!(s, "energy_total_j = {:e}", self.energy_total_j);
        for (name, e) in COMPONENTS.iter().zip(self.breakdown_mean_j) {
            let _ = writeln!(s, "energy_mean_j.{name} = {e:e}");
        }
        let _ = writeln!(s, "resenses = {}", self.resenses);
        let _ = writeln!(s, "mismatches = {}", self.mismatches);
        let _ = writeln!(s, "residual_flags = {}", self.residual_flags);
        let _ = writeln!(s, "residual_errors = {}", self.residual_errors);
        let _ = writeln!(s, "sram_buffer_bytes = {}", self.sram_buffer_bytes);
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "queries          {}", self.queries);
        let _ = writeln!(s, "latency (mean)   {:.4} us", self.latency_mean_s * 1e6);
        let _ = writeln!(s, "cycles (mean)    {:.1}  max {}", self.cycles_mean, self.cycles_max);
        let _ = writeln!(s, "energy (mean)    {:.4} uJ", self.energy_mean_j * 1e6);
        for (name, e) in COMPONENTS.iter().zip(self.breakdown_mean_j) {
            let _ = writeln!(s, "  {name:<12} {:>10.4} nJ", e * 1e9);
        }
        let _ = writeln!(
            s,
            "resenses {}  mismatches {}  residual flags {}  residual errors {}",
            self.resenses, self.mismatches, self.residual_flags, self.residual_errors
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRun {
    pub rows: Vec<ResultRow>,
    pub reports: Vec<(u64, PerfReport)>,
    pub summary: PerfSummary,
}

impl QueryRun {
    pub fn results_text(&self) -> String {
        eval::format_results(&self.rows)
    }
}

/// Run every query through the accelerator, in ascending query-id order.
pub fn run_queries(
    acc: &mut Accelerator,
    queries: &[(u64, QuantizedVector)],
    map: &SpatialErrorMap,
    cfg: &RunConfig,
    params: &PerfParams,
) -> Result<QueryRun> {
    let mut order: Vec<&(u64, QuantizedVector)> = queries.iter().collect();
    order.sort_by_key(|(id, _)| *id);
    let opts = cfg.options(cfg.detection, cfg.k);
    let mut rows = Vec::new();
    let mut reports = Vec::with_capacity(order.len());
    for (qid, q) in order {
        let out = acc.run_query(*qid, q, map, &opts)?;
        rows.extend(out.result.docs.iter().enumerate().map(|(i, d)| ResultRow {
            query_id: *qid,
            rank: i + 1,
            doc_id: d.doc_id,
            score: d.score,
        }));
        reports.push((*qid, perf::account(&out.counters, params)?));
    }
    let summary = PerfSummary::from_reports(&reports.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>());
    Ok(QueryRun { rows, reports, summary })
}

/// Run `queries` against the build in `build_dir`; write the ranked results
/// and the performance report.
pub fn cmd_query(
    build_dir: &Path,
    queries: &Path,
    cfg: &RunConfig,
    results_out: &Path,
    report_out: &Path,
) -> Result<QueryRun> {
    cfg.validate()?;
    let params = cfg.perf_params()?;
    let mut build = load_build(build_dir)?;
    let map = match &cfg.error_map {
        Some(src) => src.resolve()?,
        None => build.map.clone(),
    };
    let qs = load_queries(queries, build.db.precision())?;
    let run = run_queries(&mut build.accelerator, &qs, &map, cfg, &params)?;
    write_file(results_out, run.results_text())?;
    let mut report = String::new();
    let _ = writeln!(report, "mode = {}", cfg.mode);
    let _ = writeln!(report, "k = {}", cfg.k);
    let _ = writeln!(report, "detect = {}", switch(cfg.detection));
    let _ = writeln!(report, "seed = {}", cfg.seed);
    report.push_str(&run.summary.to_kv());
    write_file(report_out, report)?;
    Ok(run)
}

pub fn cmd_eval(results: &[PathBuf], qrels: &Path, ks: &[usize]) -> Result<Vec<EvalReport>> {
    if results.is_empty() || ks.is_empty() {
        return Err(Error::InvalidInput("need at least one results file and one k".into()));
    }
    let qrels = Qrels::load(qrels)?;
    results
        .iter()
        .map(|p| {
            let rows = eval::read_results(p)?;
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            eval::evaluate(&name, &rows, &qrels, ks)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub error_scales: Vec<f64>,
    pub remap: Vec<bool>,
    pub detection: Vec<bool>,
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        self.error_scales.len() * self.remap.len() * self.detection.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parse_scales(s: &str) -> Result<Vec<f64>> {
        s.split(',')
            .filter(|x| !x.trim().is_empty())
            .map(|x| {
                let v: f64 = x
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad error scale `{x}`")))?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidInput(format!("error scale must be non-negative, got {v}")));
                }
                Ok(v)
            })
            .collect()
    }

    pub fn parse_switches(s: &str) -> Result<Vec<bool>> {
        s.split(',').filter(|x| !x.trim().is_empty()).map(|x| parse_switch(x.trim())).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub error_scale: f64,
    pub remap: bool,
    pub detection: bool,
    pub precision: Vec<(usize, f64)>,
    /// Mean |simulated score - error-free quantized score| over every
    /// (query, document) pair with a finite score.
    pub mean_abs_score_error: f64,
    pub residual_errors: u64,
    pub resenses: u64,
    pub mismatches: u64,
    pub latency_mean_s: f64,
    pub energy_mean_j: f64,
}

/// Evaluate every grid point. The base map is scaled per row and the layout
/// is replanned for each remap setting.
pub fn run_sweep(
    db: &QuantizedDb,
    queries: &[(u64, QuantizedVector)],
    qrels: &Qrels,
    base_map: &SpatialErrorMap,
    grid: &SweepGrid,
    cfg: &RunConfig,
    ks: &[usize],
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("sweep grid is empty".into()));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidInput("sweep needs k values of at least 1".into()));
    }
    let params = cfg.perf_params()?;
    let k = *ks.iter().max().unwrap();
    let mut order: Vec<&(u64, QuantizedVector)> = queries.iter().collect();
    order.sort_by_key(|(id, _)| *id);
    let oracle: Vec<Vec<f64>> = order
        .iter()
        .map(|(_, q)| Ok(flat_scores(db, q, cfg.mode)?.iter().map(|d| d.score).collect()))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(grid.len());
    for &scale in &grid.error_scales {
        let map = base_map.scaled(scale);
        for &remap in &grid.remap {
            let mut acc = Accelerator::build(db, remap, &map)?;
            for &detection in &grid.detection {
                let opts = cfg.options(detection, k);
                let mut results = Vec::new();
                let mut reports = Vec::with_capacity(order.len());
                let (mut err_sum, mut err_n) = (0.0, 0u64);
                for ((qid, q), truth) in order.iter().zip(&oracle) {
                    let out = acc.run_query(*qid, q, &map, &opts)?;
                    for (sim, exact) in out.all_scores.iter().zip(truth) {
                        if sim.score.is_finite() && exact.is_finite() {
                            err_sum += (sim.score - exact).abs();
                            err_n += 1;
                        }
                    }
                    results.extend(out.result.docs.iter().enumerate().map(|(i, d)| ResultRow {
                        query_id: *qid,
                        rank: i + 1,
                        doc_id: d.doc_id,
                        score: d.score,
                    }));
                    reports.push(perf::account(&out.counters, &params)?);
                }
                let ranked = eval::rankings(&results);
                let precision = ks
                    .iter()
                    .map(|&k| Ok((k, eval::precision_at_k(&ranked, qrels, k)?)))
                    .collect::<Result<_>>()?;
                let summary = PerfSummary::from_reports(&reports);
                rows.push(SweepRow {
                    error_scale: scale,
                    remap,
                    detection,
                    precision,
                    mean_abs_score_error: if err_n == 0 { 0.0 } else { err_sum / err_n as f64 },
                    residual_errors: summary.residual_errors,
                    resenses: summary.resenses,
                    mismatches: summary.mismatches,
                    latency_mean_s: summary.latency_mean_s,
                    energy_mean_j: summary.energy_mean_j,
                });
            }
        }
    }
    Ok(rows)
}

/// Tab-separated, one header row.
pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut s = String::from("error_scale\tremap\tdetect");
    if let Some(first) = rows.first() {
        for (k, _) in &first.precision {
            let _ = write!(s, "\tp_at_{k}");
        }
    }
    s.push_str("\tmean_abs_score_error\tresidual_errors\tresenses\tmismatches\tlatency_mean_s\tenergy_mean_j\n");
    for r in rows {
        let _ = write!(s, "{}\t{}\t{}", r.error_scale, switch(r.remap), switch(r.detection));
        for (_, p) in &r.precision {
            let _ = write!(s, "\t{p}");
        }
        let _ = writeln!(
            s,
            "\t{:e}\t{}\t{}\t{}\t{:e}\t{:e}",
            r.mean_abs_score_error, r.residual_errors, r.resenses, r.mismatches, r.latency_mean_s, r.energy_mean_j
        );
    }
    s
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_sweep(
    build_dir: &Path,
    queries: &Path,
    qrels: &Path,
    grid: &SweepGrid,
    cfg: &RunConfig,
    ks: &[usize],
    out: &Path,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::InvalidInput("sweep grid is empty".into()));
    }
    let db = match store::read_embedding_file(&build_dir.join(DB_FILE))? {
        EmbeddingFile::Quantized(q) => q,
        EmbeddingFile::Float(_) => return Err(Error::Inconsistent("build database holds float vectors".into())),
    };
    let base_map = match &cfg.error_map {
        Some(src) => src.resolve()?,
        None => SpatialErrorMap::load(&build_dir.join(MAP_FILE))?,
    };
    let qs = load_queries(queries, db.precision())?;
    let qrels = Qrels::load(qrels)?;
    let rows = run_sweep(&db, &qs, &qrels, &base_map, grid, cfg, ks)?;
    write_file(out, format_sweep(&rows))?;
    Ok(rows)
}

pub fn cmd_gen_map(params: &ErrorMapParams, out: &Path) -> Result<SpatialErrorMap> {
    let map = generate_error_map(params)?;
    map.save(out)?;
    Ok(map)
}

pub fn cmd_calibrate(
    targets: &CalibrationTargets,
    shape: &WorkloadShape,
    base: Option<&Path>,
    out: &Path,
) -> Result<PerfParams> {
    let base = match base {
        Some(p) => PerfParams::load(p)?,
        None => PerfParams::reference(),
    };
    let p = perf::calibrate(targets, shape, &base)?;
    write_file(out, p.to_text())?;
    Ok(p)
}

pub const SYNTH_DOCS_FILE: &str = "docs.drc";
pub const SYNTH_QUERIES_FILE: &str = "queries.drc";
pub const SYNTH_QRELS_FILE: &str = "qrels.tsv";

pub fn cmd_synth(params: &SynthParams, out: &Path) -> Result<()> {
    // reject shapes the array cannot hold before writing anything
    Shape::new(params.dim, Precision::Int8)?;
    let data = synth::generate(params)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    store::write_float_db(&out.join(SYNTH_DOCS_FILE), &data.docs)?;
    store::write_float_db(&out.join(SYNTH_QUERIES_FILE), &data.queries)?;
    data.qrels.save(&out.join(SYNTH_QRELS_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_source_parsing() {
        assert_eq!("zero".parse::<ErrorMapSource>().unwrap(), ErrorMapSource::Zero);
        let g: ErrorMapSource = "gen:rail=0.1,readout=0.05,base=0.01,noise=0.002,seed=7".parse().unwrap();
        match &g {
            ErrorMapSource::Generated(p) => {
                assert_eq!(p.rail_effect, 0.1);
                assert_eq!(p.noise_seed, 7);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(g.to_string().parse::<ErrorMapSource>().unwrap(), g);
        assert!("gen:wobble=1".parse::<ErrorMapSource>().is_err());
        assert!(matches!("maps/a.txt".parse::<ErrorMapSource>().unwrap(), ErrorMapSource::File(_)));
    }

    #[test]
    fn config_text() {
        let mut c = RunConfig::default();
        c.apply_config_text("# run\nmode = mips\nk = 3\ndetect = off\nerror_map = zero\nseed = 9\n")
            .unwrap();
        assert_eq!(c.mode, ScoreMode::Mips);
        assert_eq!(c.k, 3);
        assert!(!c.detection);
        assert_eq!(c.seed, 9);
        assert!(c.apply_config_text("colour = blue").is_err());
        c.k = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_grid_rejected() {
        let db = QuantizedDb::empty(128, Precision::Int8);
        let grid = SweepGrid {
            error_scales: vec![],
            remap: vec![true],
            detection: vec![true],
        };
        let r = run_sweep(&db, &[], &Qrels::new(), &SpatialErrorMap::zero(), &grid, &RunConfig::default(), &[1]);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
        assert!(SweepGrid::parse_scales("0.5,-1").is_err());
        assert_eq!(SweepGrid::parse_switches("on,off").unwrap(), vec![true, false]);
    }
}
