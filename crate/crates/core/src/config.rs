//! Engine configuration: every module's parameters in one validated tree.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::actions::{ActionSpaceBounds, Quantizer, DEFAULT_BINS, DOF};
use crate::drafting::MAX_DRAFTS;
use crate::harness::EnvConfig;
use crate::hnsw::HnswParams;
use crate::kinematics::{FusedMetricParams, NormalizationBounds};
use crate::scheduler::{CostModel, HybridConfig, Mode, SkipConfig};
use crate::verification::RelaxedAcceptance;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ActionConfig {
    pub bounds: ActionSpaceBounds,
    pub bins: u32,
}

impl Default for ActionConfig {
    fn default() -> Self {
        Self { bounds: ActionSpaceBounds::default(), bins: DEFAULT_BINS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct RetrievalConfig {
    pub k_top: usize,
    /// Embedding (and feature) dimension.
    pub dim: usize,
    pub hnsw: bool,
    pub m: usize,
    pub ef_construct: usize,
    pub ef_search: usize,
    pub hnsw_seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        let h = HnswParams::default();
        Self { k_top: 3, dim: 64, hnsw: false, m: h.m, ef_construct: h.ef_construct, ef_search: h.ef_search, hnsw_seed: h.seed }
    }
}

impl RetrievalConfig {
    pub fn hnsw_params(&self) -> HnswParams {
        HnswParams { m: self.m, ef_construct: self.ef_construct, ef_search: self.ef_search, seed: self.hnsw_seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct DrafterConfig {
    /// Probability that a drafted token equals the verifier's choice.
    pub accuracy: f64,
    pub draft_len: usize,
    pub seed: u64,
}

impl Default for DrafterConfig {
    fn default() -> Self {
        Self { accuracy: 0.85, draft_len: DOF, seed: 11 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct EngineConfig {
    pub mode: Mode,
    pub actions: ActionConfig,
    pub metric: FusedMetricParams,
    pub bounds: NormalizationBounds,
    pub acceptance: RelaxedAcceptance,
    pub skip: SkipConfig,
    pub retrieval: RetrievalConfig,
    pub drafter: DrafterConfig,
    pub cost: CostModel,
    pub chain_cap: usize,
    pub env: EnvConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Hybrid,
            actions: ActionConfig::default(),
            metric: FusedMetricParams::default(),
            bounds: NormalizationBounds::default(),
            acceptance: RelaxedAcceptance::default(),
            skip: SkipConfig::default(),
            retrieval: RetrievalConfig::default(),
            drafter: DrafterConfig::default(),
            cost: CostModel::default(),
            chain_cap: 64,
            env: EnvConfig::default(),
        }
    }
}

fn prefixed(out: &mut Vec<String>, prefix: &str, fields: Vec<&'static str>) {
    out.extend(fields.into_iter().map(|f| format!("{prefix}.{f}")));
}

impl EngineConfig {
    /// Dotted paths of every invalid value, e.g. `metric.alpha`.
    pub fn invalid_keys(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.actions.bins < 2 || self.actions.bins > 65536 {
            bad.push("actions.bins".into());
        }
        prefixed(&mut bad, "metric", self.metric.invalid_fields());
        if self.bounds.validate().is_err() {
            bad.push("bounds".into());
        }
        prefixed(&mut bad, "acceptance", self.acceptance.invalid_fields());
        prefixed(&mut bad, "skip", self.skip.invalid_fields());
        let r = &self.retrieval;
        if r.k_top == 0 || r.k_top > MAX_DRAFTS {
            bad.push("retrieval.k_top".into());
        }
        if r.dim < 11 + self.env.tasks.len() {
            bad.push("retrieval.dim".into());
        }
        prefixed(&mut bad, "retrieval", r.hnsw_params().invalid_fields());
        if !(0.0..=1.0).contains(&self.drafter.accuracy) {
            bad.push("drafter.accuracy".into());
        }
        if self.drafter.draft_len == 0 {
            bad.push("drafter.draft_len".into());
        }
        prefixed(&mut bad, "cost", self.cost.invalid_fields());
        if self.chain_cap == 0 {
            bad.push("chain_cap".into());
        }
        prefixed(&mut bad, "env", self.env.invalid_fields());
        prefixed(&mut bad, "env.world", self.env.world.invalid_fields());
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.invalid_keys();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    pub fn quantizer(&self) -> Result<Quantizer> {
        Quantizer::new(self.actions.bounds, self.actions.bins)
    }

    pub fn hybrid(&self) -> Result<HybridConfig> {
        Ok(HybridConfig {
            quantizer: self.quantizer()?,
            metric: self.metric,
            bounds: self.bounds,
            acceptance: self.acceptance,
            skip: self.skip,
            k_top: self.retrieval.k_top,
            draft_len: self.drafter.draft_len,
            chain_cap: self.chain_cap,
            cost: self.cost,
            mode: self.mode,
        })
    }

    /// Index of a task by id.
    pub fn task_index(&self, id: &str) -> Option<usize> {
        self.env.tasks.iter().position(|t| t.id == id)
    }
}
