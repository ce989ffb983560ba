//! Offline trajectory analysis: per-step R, D, F and segment labels.

use std::io::{Read, Write};
use std::path::Path;

use hybrid_spec_core::kinematics::{
    classify_segment, sweep_threshold, window_series, FusedMetricParams, NormalizationBounds, SdMode, ThresholdSweep,
    TrajectoryPoint,
};

use crate::error::{AppError, Result};

pub const COLD: &str = "cold";
/// Grid resolution of the threshold sweep.
pub const SWEEP_STEPS: usize = 100;

/// One input row; the optional label marks the expected segment type.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajRow {
    pub pos: [f64; 3],
    pub label: Option<SdMode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRow {
    pub step: usize,
    /// `None` for cold rows (fewer than `w` points so far).
    pub r: Option<f64>,
    pub d: Option<f64>,
    pub f: Option<f64>,
    pub label: &'static str,
}

pub fn parse_label(s: &str) -> Option<SdMode> {
    match s {
        "retrieval_sd" => Some(SdMode::RetrievalSd),
        "drafter_sd" => Some(SdMode::DrafterSd),
        _ => None,
    }
}

/// Parse `x,y,z[,label]` rows. A first row whose leading field is not a
/// number is taken as a header. Errors carry 1-based row numbers.
pub fn read_trajectory<R: Read>(reader: R, origin: &Path) -> Result<Vec<TrajRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| AppError::parse(origin, row, e))?;
        if row == 1 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() != 3 && rec.len() != 4 {
            return Err(AppError::parse(origin, row, format!("expected 3 or 4 fields, found {}", rec.len())));
        }
        let mut pos = [0.0; 3];
        for (k, p) in pos.iter_mut().enumerate() {
            let field = &rec[k];
            *p = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| AppError::parse(origin, row, format!("bad coordinate '{field}'")))?;
        }
        let label = match rec.get(3) {
            None | Some("") => None,
            Some(s) => Some(parse_label(s).ok_or_else(|| AppError::parse(origin, row, format!("unknown label '{s}'")))?),
        };
        rows.push(TrajRow { pos, label });
    }
    Ok(rows)
}

pub fn load_trajectory(path: &Path) -> Result<Vec<TrajRow>> {
    let file = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    read_trajectory(file, path)
}

fn points(rows: &[TrajRow]) -> Vec<TrajectoryPoint> {
    rows.iter().enumerate().map(|(i, r)| TrajectoryPoint::new(r.pos, i)).collect()
}

/// Per-step features and labels at the configured threshold.
pub fn analyze(rows: &[TrajRow], params: &FusedMetricParams, bounds: &NormalizationBounds) -> Result<Vec<AnalysisRow>> {
    let series = window_series(&points(rows), params, bounds)?;
    Ok(series
        .into_iter()
        .enumerate()
        .map(|(step, f)| match f {
            None => AnalysisRow { step, r: None, d: None, f: None, label: COLD },
            Some(w) => AnalysisRow {
                step,
                r: Some(w.radius),
                d: Some(w.displacement),
                f: Some(w.fused),
                label: classify_segment(w.fused, params.threshold).as_str(),
            },
        })
        .collect())
}

/// Pick θ from the labelled, warm rows of one or more trajectories.
pub fn sweep(
    trajectories: &[Vec<TrajRow>],
    params: &FusedMetricParams,
    bounds: &NormalizationBounds,
) -> Result<ThresholdSweep> {
    let mut samples = Vec::new();
    for rows in trajectories {
        let series = window_series(&points(rows), params, bounds)?;
        for (row, f) in rows.iter().zip(series) {
            if let (Some(label), Some(w)) = (row.label, f) {
                samples.push((w.fused, label));
            }
        }
    }
    Ok(sweep_threshold(&samples, SWEEP_STEPS)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_analysis<W: Write>(rows: &[AnalysisRow], w: W) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "R", "D", "F", "label"])?;
    for r in rows {
        out.write_record([r.step.to_string(), opt(r.r), opt(r.d), opt(r.f), r.label.to_string()])?;
    }
    out.flush()
}
