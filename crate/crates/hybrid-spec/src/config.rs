//! Engine configuration files.

use std::fs;
use std::path::Path;

use hybrid_spec_core::config::EngineConfig;
use serde_json::error::Category;

use crate::error::{AppError, Result};

/// Parse and validate a config document. Unknown keys and out-of-range values
/// are validation errors; malformed JSON is a parse error.
pub fn parse_config(text: &str, origin: &Path) -> Result<EngineConfig> {
    let cfg: EngineConfig = serde_json::from_str(text).map_err(|e| match e.classify() {
        Category::Data => AppError::Validation(vec![e.to_string()]),
        _ => AppError::parse(origin, e.line(), e),
    })?;
    cfg.validate().map_err(|e| match e {
        hybrid_spec_core::Error::Validation(keys) => AppError::Validation(keys),
        other => other.into(),
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<EngineConfig> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_config(&text, path)
}

/// The config at `path`, or the defaults.
pub fn load_or_default(path: Option<&Path>) -> Result<EngineConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(EngineConfig::default()),
    }
}

/// Canonical pretty JSON with every default spelled out.
pub fn render_config(cfg: &EngineConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}
