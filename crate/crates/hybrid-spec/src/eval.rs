//! Batch evaluation: parallel over tasks, sequential over the trials of a task
//! (the verify-skip state carries from one trial to the next).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hybrid_spec_core::config::EngineConfig;
use hybrid_spec_core::harness::{evaluate_task, summarize, Summary, TrialResult};
use hybrid_spec_core::retrieval::RetrievalStore;
use hybrid_spec_core::scheduler::{EpisodeReport, Mode, StepRecord};
use rayon::prelude::*;
use serde::Serialize;

use crate::calib::Calibration;
use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mix {
    pub retrieval: f64,
    pub drafter: f64,
    pub skip: f64,
    pub autoregressive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskReport {
    pub task_id: String,
    pub episodes: usize,
    #[serde(rename = "SR")]
    pub success_rate: f64,
    #[serde(rename = "mean_AL")]
    pub mean_al: f64,
    pub speedup: f64,
    pub mean_steps: f64,
    pub mix: Mix,
}

impl From<&Summary> for TaskReport {
    fn from(s: &Summary) -> Self {
        Self {
            task_id: s.name.clone(),
            episodes: s.episodes,
            success_rate: s.success_rate,
            mean_al: s.mean_al,
            speedup: s.speedup,
            mean_steps: s.mean_steps,
            mix: Mix { retrieval: s.mix.retrieval, drafter: s.mix.drafter, skip: s.mix.skip, autoregressive: s.mix.autoregressive },
        }
    }
}

/// Per-episode report as written next to its trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub task_id: String,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
    #[serde(rename = "mean_AL")]
    pub mean_al: f64,
    pub cost_units: f64,
    pub ar_cost_units: f64,
    pub speedup: f64,
    pub trace: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub seed: u64,
    pub tasks: Vec<TaskReport>,
    pub aggregate: TaskReport,
    pub episodes: Vec<EpisodeSummary>,
}

/// Everything `evaluate` produced.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub results: Vec<TrialResult>,
    pub report: EvalReport,
}

/// Trace file name for one episode.
pub fn trace_file_name(task_id: &str, trial: usize, seed: u64) -> String {
    format!("trace_{task_id}_trial{trial}_seed{seed}.csv")
}

/// Run every trial of every configured task. `jobs` bounds the worker threads.
pub fn evaluate(
    cfg: &EngineConfig,
    store: Option<&RetrievalStore>,
    calibration: Option<&Calibration>,
    jobs: usize,
) -> Result<Evaluation> {
    if store.is_none() && matches!(cfg.mode, Mode::Hybrid | Mode::PureRetrieval) {
        return Err(AppError::Config(format!("mode {} needs a database (--db)", cfg.mode)));
    }
    let mut cfg = cfg.clone();
    if let Some(c) = calibration {
        cfg.skip.t = c.t;
        cfg.skip.delta = c.delta;
    }
    let calib = calibration.map(|c| (c.min_s, c.o_dist));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| AppError::Config(format!("thread pool: {e}")))?;
    let per_task: Vec<Result<Vec<TrialResult>>> = pool.install(|| {
        (0..cfg.env.tasks.len())
            .into_par_iter()
            .map(|t| evaluate_task(&cfg, t, store, calib).map_err(AppError::from))
            .collect()
    });
    let mut results = Vec::new();
    for r in per_task {
        results.extend(r?);
    }
    let degraded: usize = results.iter().flat_map(|r| &r.report.trace).filter(|s| s.degraded).count();
    if degraded > 0 {
        log::warn!("{degraded} rounds fell back to autoregressive decoding after an engine error");
    }
    let report = build_report(&cfg, &results);
    Ok(Evaluation { results, report })
}

pub fn build_report(cfg: &EngineConfig, results: &[TrialResult]) -> EvalReport {
    let (tasks, all) = summarize(results);
    let seed = cfg.env.seed;
    EvalReport {
        mode: cfg.mode,
        seed,
        tasks: tasks.iter().map(TaskReport::from).collect(),
        aggregate: TaskReport::from(&all),
        episodes: results.iter().map(|r| episode_summary(r, seed)).collect(),
    }
}

fn episode_summary(r: &TrialResult, seed: u64) -> EpisodeSummary {
    let EpisodeReport { success, steps, mean_al, cost_units, ar_cost_units, speedup, .. } = r.report;
    EpisodeSummary {
        task_id: r.task_id.clone(),
        trial: r.trial,
        seed,
        success,
        steps,
        mean_al,
        cost_units,
        ar_cost_units,
        speedup,
        trace: trace_file_name(&r.task_id, r.trial, seed),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace<W: Write>(trace: &[StepRecord], w: W) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "decision", "F", "R", "D", "accept_length", "skipped", "verifier_calls", "cost"])?;
    for s in trace {
        out.write_record([
            s.step.to_string(),
            s.decision.as_str().to_string(),
            opt(s.metric.map(|m| m.fused)),
            opt(s.metric.map(|m| m.radius)),
            opt(s.metric.map(|m| m.displacement)),
            s.accept_length.to_string(),
            s.skipped.to_string(),
            s.verifier_calls.to_string(),
            s.cost.to_string(),
        ])?;
    }
    out.flush()
}

/// Write `report.json` and one trace CSV per episode into `dir`.
pub fn write_artifacts(eval: &Evaluation, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    for (r, ep) in eval.results.iter().zip(&eval.report.episodes) {
        let path = dir.join(&ep.trace);
        let file = File::create(&path).map_err(|e| AppError::io(&path, e))?;
        write_trace(&r.report.trace, BufWriter::new(file)).map_err(|e| AppError::io(&path, e))?;
    }
    let path = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&eval.report).expect("report serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| AppError::io(&path, e))?;
    Ok(path)
}

/// Per-task table: SR, Speed, AL, Steps.
pub fn render_table(report: &EvalReport) -> String {
    let width = report.tasks.iter().map(|t| t.task_id.len()).max().unwrap_or(0).max(4);
    let mut s = format!("{:<width$}  {:>6}  {:>7}  {:>5}  {:>6}\n", "task", "SR", "Speed", "AL", "Steps");
    for t in report.tasks.iter().chain(std::iter::once(&report.aggregate)) {
        s.push_str(&format!(
            "{:<width$}  {:>5.1}%  {:>6.2}x  {:>5.2}  {:>6.1}\n",
            t.task_id,
            100.0 * t.success_rate,
            t.speedup,
            t.mean_al,
            t.mean_steps
        ));
    }
    s
}
