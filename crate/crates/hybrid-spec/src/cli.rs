//! Command-line surface.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use hybrid_spec_core::config::EngineConfig;
use hybrid_spec_core::harness::{build_database, profile_bounds, record_demonstrations};
use hybrid_spec_core::kinematics::{suite_bounds, NormalizationBounds};
use hybrid_spec_core::scheduler::Mode;

use crate::analyze;
use crate::calib::{calibrate_store, load_calibration, save_calibration};
use crate::config::{load_or_default, render_config};
use crate::error::{AppError, Result};
use crate::eval::{evaluate, render_table, write_artifacts};
use crate::store::{load_store, save_store};

#[derive(Debug, Parser)]
#[command(name = "hybrid-spec", version, about = "Hybrid retrieval/drafter speculative decoding for action-token policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Engine config (JSON). Defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Database directory (or a single shard file).
    #[arg(long, global = true)]
    pub db: Option<PathBuf>,
    /// Calibration file written by `calibrate-skip`.
    #[arg(long, global = true)]
    pub calib: Option<PathBuf>,
    /// Output directory or file, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `env.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for evaluation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overrides `mode`: hybrid, pure_retrieval, pure_drafter or ar.
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record oracle demonstrations and write one shard file per task.
    RecordBuild,
    /// Offline verify-skip calibration over the stored features.
    CalibrateSkip,
    /// Evaluate every task and print SR / Speed / AL / Steps.
    Eval,
    /// Per-step R, D, F and segment labels of an `x,y,z[,label]` CSV.
    AnalyzeTraj {
        input: PathBuf,
        /// Choose θ from the labelled rows before labelling.
        #[arg(long)]
        sweep: bool,
    },
    /// Profile normalization bounds, keyed by suite name.
    NormBounds {
        /// Trajectory CSVs; the configured tasks' demonstrations when empty.
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "toy")]
        suite: String,
    },
    /// Print the effective config with all defaults.
    PrintConfig,
}

impl Cli {
    fn engine_config(&self) -> Result<EngineConfig> {
        let mut cfg = load_or_default(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.env.seed = seed;
        }
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        Ok(cfg)
    }

    fn require<'a>(flag: &str, v: &'a Option<PathBuf>) -> Result<&'a Path> {
        v.as_deref().ok_or_else(|| AppError::Config(format!("--{flag} is required")))
    }
}

/// Write to `path`, or stdout when absent.
fn emit(path: Option<&Path>, body: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, body).map_err(|e| AppError::io(p, e)),
        None => io::stdout().write_all(body).map_err(|e| AppError::io("<stdout>", e)),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.engine_config()?;
    match &cli.command {
        Command::PrintConfig => emit(cli.out.as_deref(), format!("{}\n", render_config(&cfg)).as_bytes()),
        Command::RecordBuild => {
            let out = Cli::require("out", &cli.out)?;
            let demos = record_demonstrations(&cfg)?;
            let store = build_database(&demos, cfg.retrieval.dim)?;
            save_store(&store, out)?;
            for shard in store.shards() {
                println!("{:<24} {:>8}", shard.name(), shard.len());
            }
            println!("{:<24} {:>8}", "total", store.total_records());
            Ok(())
        }
        Command::CalibrateSkip => {
            let store = load_store(Cli::require("db", &cli.db)?)?;
            let c = calibrate_store(&store, cfg.skip.t, cfg.skip.delta)?;
            match cli.out.as_deref() {
                Some(p) => save_calibration(&c, p)?,
                None => println!("{}", serde_json::to_string_pretty(&c).expect("calibration serializes")),
            }
            eprintln!("min_S = {}, O_dist = {}", c.min_s, c.o_dist);
            Ok(())
        }
        Command::Eval => {
            let store = match cli.db.as_deref() {
                Some(p) => {
                    let mut s = load_store(p)?;
                    if cfg.retrieval.hnsw {
                        s.build_hnsw(cfg.retrieval.hnsw_params())?;
                    }
                    Some(s)
                }
                None => None,
            };
            let calibration = match (cfg.skip.enabled, cli.calib.as_deref()) {
                (true, Some(p)) => Some(load_calibration(p)?),
                (true, None) => {
                    log::info!("no calibration file given; verify-skip stays off");
                    None
                }
                (false, _) => None,
            };
            let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let eval = evaluate(&cfg, store.as_ref(), calibration.as_ref(), jobs)?;
            print!("{}", render_table(&eval.report));
            if let Some(dir) = cli.out.as_deref() {
                let path = write_artifacts(&eval, dir)?;
                eprintln!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::AnalyzeTraj { input, sweep } => {
            let rows = analyze::load_trajectory(input)?;
            let mut metric = cfg.metric;
            if *sweep {
                let s = analyze::sweep(std::slice::from_ref(&rows), &metric, &cfg.bounds)?;
                eprintln!("theta = {}, balanced accuracy = {}", s.threshold, s.balanced_accuracy);
                metric.threshold = s.threshold;
            }
            let out = analyze::analyze(&rows, &metric, &cfg.bounds)?;
            let mut buf = Vec::new();
            analyze::write_analysis(&out, &mut buf).map_err(|e| AppError::io("<buffer>", e))?;
            emit(cli.out.as_deref(), &buf)
        }
        Command::NormBounds { inputs, suite } => {
            let bounds = if inputs.is_empty() {
                profile_bounds(&cfg)?
            } else {
                let mut trajectories = Vec::new();
                for p in inputs {
                    trajectories.push(analyze::load_trajectory(p)?.into_iter().map(|r| r.pos).collect());
                }
                suite_bounds(&trajectories, cfg.metric.window, cfg.metric.r_cap)?
            };
            let table = BTreeMap::from([(suite.clone(), bounds)]);
            emit(cli.out.as_deref(), render_bounds(&table).as_bytes())
        }
    }
}

pub fn render_bounds(table: &BTreeMap<String, NormalizationBounds>) -> String {
    let mut s = serde_json::to_string_pretty(table).expect("bounds serialize");
    s.push('\n');
    s
}

/// Bounds file: a JSON object keyed by suite name.
pub fn load_bounds(path: &Path) -> Result<BTreeMap<String, NormalizationBounds>> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let table: BTreeMap<String, NormalizationBounds> =
        serde_json::from_str(&text).map_err(|e| AppError::parse(path, e.line(), e))?;
    for b in table.values() {
        b.validate()?;
    }
    Ok(table)
}
