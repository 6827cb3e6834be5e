use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dirc_core::device::ErrorMapParams;
use dirc_core::eval::comparison_table;
use dirc_core::harness::{self, ErrorMapSource, RunConfig, SweepGrid};
use dirc_core::perf::{CalibrationTargets, WorkloadShape};
use dirc_core::retrieval::ScoreMode;
use dirc_core::store::Precision;
use dirc_core::synth::SynthParams;
use dirc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "dirc", version, about = "DIRC retrieval accelerator simulator and evaluation harness")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        matches!(s, Switch::On)
    }
}

/// Flags shared by every verb. They override values from `--config`.
#[derive(Args)]
struct Common {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// File of `key = value` run settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    precision: Option<Precision>,
    #[arg(long, global = true)]
    mode: Option<ScoreMode>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true, value_enum)]
    detect: Option<Switch>,
    #[arg(long, global = true, value_enum)]
    remap: Option<Switch>,
    /// `zero`, `gen:rail=..,readout=..,base=..,noise=..,seed=..`, or a map file.
    #[arg(long, global = true)]
    error_map: Option<ErrorMapSource>,
    /// Performance parameter file; defaults to the bundled calibration.
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    #[arg(long, global = true)]
    max_resense: Option<u32>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.load_config(path)?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.precision {
            cfg.precision = v;
        }
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.detect {
            cfg.detection = v.into();
        }
        if let Some(v) = self.remap {
            cfg.remap = v.into();
        }
        if let Some(v) = &self.error_map {
            cfg.error_map = Some(v.clone());
        }
        if let Some(v) = &self.params {
            cfg.params = Some(v.clone());
        }
        if let Some(v) = self.max_resense {
            cfg.max_resense = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_k(s: &str) -> std::result::Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("bad k `{s}`")),
        Ok(k) => Ok(k),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a database and persist it with its layout, D-Sum LUT and error map.
    Build {
        /// Embedding file (float or quantized).
        #[arg(long)]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run queries against a build; writes ranked results and a performance report.
    Query {
        #[arg(long)]
        build: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Results TSV.
        #[arg(long)]
        out: PathBuf,
        /// Performance report (key = value).
        #[arg(long)]
        report: PathBuf,
    },
    /// Precision@k of one or more results files.
    Eval {
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long = "results", required = true, num_args = 1..)]
        results: Vec<PathBuf>,
        #[arg(long, default_value = "1,3,5", value_delimiter = ',', value_parser = parse_k)]
        ks: Vec<usize>,
        /// Also write the comparison table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid over error scale, remap and detection; writes one TSV row per point.
    Sweep {
        #[arg(long)]
        build: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Comma-separated multipliers on the error map.
        #[arg(long, default_value = "0,0.5,1")]
        scales: String,
        #[arg(long, default_value = "on,off")]
        remap_grid: String,
        #[arg(long, default_value = "on,off")]
        detect_grid: String,
        #[arg(long, default_value = "1,3,5", value_delimiter = ',', value_parser = parse_k)]
        ks: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic spatial error map (noise seeded by --seed).
    GenMap {
        #[arg(long, default_value_t = 0.0)]
        rail: f64,
        #[arg(long, default_value_t = 0.0)]
        readout: f64,
        #[arg(long, default_value_t = 0.0)]
        base: f64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit pipeline fill and per-event energies to latency and energy targets.
    Calibrate {
        #[arg(long, default_value_t = 5.6)]
        latency_us: f64,
        #[arg(long, default_value_t = 0.956)]
        energy_uj: f64,
        #[arg(long, default_value_t = 8192)]
        docs: usize,
        #[arg(long, default_value_t = 512)]
        dim: usize,
        /// Parameter file whose energy ratios are kept; defaults to the reference ratios.
        #[arg(long)]
        base_params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic planted-neighbor dataset (docs, queries, qrels).
    Synth {
        #[arg(long, default_value_t = 1024)]
        docs: usize,
        #[arg(long, default_value_t = 100)]
        queries: usize,
        #[arg(long, default_value_t = 128)]
        dim: usize,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.common.run_config()?;
    match cli.command {
        Command::Build { input, out } => {
            let s = harness::cmd_build(&input, &out, &cfg)?;
            print!("{}", s.manifest);
        }
        Command::Query {
            build,
            queries,
            out,
            report,
        } => {
            let run = harness::cmd_query(&build, &queries, &cfg, &out, &report)?;
            print!("{}", run.summary.to_table());
        }
        Command::Eval { qrels, results, ks, out } => {
            let reports = harness::cmd_eval(&results, &qrels, &ks)?;
            let table = comparison_table(&reports);
            if let Some(path) = out {
                std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
            }
            print!("{table}");
        }
        Command::Sweep {
            build,
            queries,
            qrels,
            scales,
            remap_grid,
            detect_grid,
            ks,
            out,
        } => {
            let grid = SweepGrid {
                error_scales: SweepGrid::parse_scales(&scales)?,
                remap: SweepGrid::parse_switches(&remap_grid)?,
                detection: SweepGrid::parse_switches(&detect_grid)?,
            };
            let rows = harness::cmd_sweep(&build, &queries, &qrels, &grid, &cfg, &ks, &out)?;
            print!("{}", harness::format_sweep(&rows));
        }
        Command::GenMap {
            rail,
            readout,
            base,
            noise,
            out,
        } => {
            let params = ErrorMapParams {
                rail_effect: rail,
                readout_effect: readout,
                base,
                noise,
                noise_seed: cfg.seed,
            };
            print!("{}", harness::cmd_gen_map(&params, &out)?.to_text());
        }
        Command::Calibrate {
            latency_us,
            energy_uj,
            docs,
            dim,
            base_params,
            out,
        } => {
            let targets = CalibrationTargets {
                latency_s: latency_us * 1e-6,
                energy_j: energy_uj * 1e-6,
            };
            let shape = WorkloadShape {
                docs,
                dim,
                precision: cfg.precision,
                detection: cfg.detection,
                mode: cfg.mode,
                k: cfg.k,
            };
            let p = harness::cmd_calibrate(&targets, &shape, base_params.as_deref(), &out)?;
            print!("{}", p.to_text());
        }
        Command::Synth {
            docs,
            queries,
            dim,
            noise,
            out,
        } => {
            let params = SynthParams {
                docs,
                queries,
                dim,
                noise,
                seed: cfg.seed,
            };
            harness::cmd_synth(&params, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
