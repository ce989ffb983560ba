//! Verify-skip calibration files.

use std::fs;
use std::path::Path;

use hybrid_spec_core::retrieval::RetrievalStore;
use hybrid_spec_core::verification::offline_calibrate_skip;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "min_S")]
    pub min_s: f64,
    #[serde(rename = "O_dist")]
    pub o_dist: usize,
    pub delta: f64,
}

/// Offline calibration over the per-episode features of every shard.
pub fn calibrate_store(store: &RetrievalStore, t: f64, delta: f64) -> Result<Calibration> {
    let mut trajectories = Vec::new();
    for shard in store.shards() {
        let per_episode = shard
            .feature_trajectories()
            .ok_or_else(|| AppError::Config(format!("no features stored in shard '{}'", shard.name())))?;
        trajectories.extend(per_episode);
    }
    if trajectories.is_empty() {
        return Err(AppError::Config("no features stored in database".into()));
    }
    let (min_s, o_dist) =
        offline_calibrate_skip(&trajectories, t).map_err(|e| AppError::Calibration(e.to_string()))?;
    Ok(Calibration { t, min_s, o_dist, delta })
}

pub fn save_calibration(c: &Calibration, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(c).expect("calibration serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

pub fn load_calibration(path: &Path) -> Result<Calibration> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::parse(path, e.line(), e))
}
