//! The per-round hybrid decision and the decode loop.
//!
//! One round picks a drafting mode from the trailing trajectory window, obtains
//! drafts (retrieval or drafter), optionally skips verification, verifies the
//! draft tree and emits tokens. Every 7 emitted tokens form an action slice
//! that is executed in the environment. Cost is tracked in verifier-call units.

use alloc::vec::Vec;
use core::fmt;

use crate::actions::{Quantizer, Token, DOF};
use crate::drafting::{build_sequence_tree, drafter_generate, retrieve_drafts, Draft};
use crate::kinematics::{
    classify_segment, window_features, FusedMetricParams, NormalizationBounds, SdMode, TrajectoryPoint,
    WindowFeatures,
};
use crate::models::{DrafterModel, Environment, VerifierModel};
use crate::retrieval::{Collection, LOOKAHEAD};
use crate::verification::{
    generate_autoregressive, offline_calibrate_skip, should_skip, update_skip_state, verify_tree, RelaxedAcceptance,
    UpdateDirection, VerifyOutcome, VerifySkipState,
};
use crate::Result;

/// Which drafting strategy the engine runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mode {
    #[default]
    Hybrid,
    PureRetrieval,
    PureDrafter,
    #[cfg_attr(feature = "serde", serde(rename = "ar", alias = "autoregressive"))]
    Autoregressive,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Hybrid => "hybrid",
            Mode::PureRetrieval => "pure_retrieval",
            Mode::PureDrafter => "pure_drafter",
            Mode::Autoregressive => "ar",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hybrid" => Ok(Mode::Hybrid),
            "pure_retrieval" => Ok(Mode::PureRetrieval),
            "pure_drafter" => Ok(Mode::PureDrafter),
            "ar" | "autoregressive" => Ok(Mode::Autoregressive),
            other => Err(crate::Error::invalid(alloc::format!("unknown mode '{other}'"))),
        }
    }
}

/// Cost weights in verifier-forward-pass units.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct CostModel {
    pub verifier_call: f64,
    pub drafter_token: f64,
    /// 5.13 ms per query against a 13.93 ms verification pass.
    pub retrieval_query: f64,
    pub skip: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { verifier_call: 1.0, drafter_token: 0.1, retrieval_query: 0.37, skip: 0.0 }
    }
}

impl CostModel {
    pub fn invalid_fields(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        for (name, v) in [
            ("verifier_call", self.verifier_call),
            ("drafter_token", self.drafter_token),
            ("retrieval_query", self.retrieval_query),
            ("skip", self.skip),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bad.push(name);
            }
        }
        if self.verifier_call == 0.0 && !bad.contains(&"verifier_call") {
            bad.push("verifier_call");
        }
        bad
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct SkipConfig {
    pub enabled: bool,
    #[cfg_attr(feature = "serde", serde(rename = "T"))]
    pub t: f64,
    pub delta: f64,
    pub direction: UpdateDirection,
}

impl Default for SkipConfig {
    fn default() -> Self {
        Self { enabled: true, t: 0.9, delta: 0.1, direction: UpdateDirection::AsWritten }
    }
}

impl SkipConfig {
    pub fn invalid_fields(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        if !(-1.0..=1.0).contains(&self.t) {
            bad.push("T");
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            bad.push("delta");
        }
        bad
    }
}

/// Everything the decode loop needs.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridConfig {
    pub quantizer: Quantizer,
    pub metric: FusedMetricParams,
    pub bounds: NormalizationBounds,
    pub acceptance: RelaxedAcceptance,
    pub skip: SkipConfig,
    pub k_top: usize,
    pub draft_len: usize,
    pub chain_cap: usize,
    pub cost: CostModel,
    pub mode: Mode,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            quantizer: Quantizer::default(),
            metric: FusedMetricParams::default(),
            bounds: NormalizationBounds::default(),
            acceptance: RelaxedAcceptance::default(),
            skip: SkipConfig::default(),
            k_top: 3,
            draft_len: DOF,
            chain_cap: 64,
            cost: CostModel::default(),
            mode: Mode::Hybrid,
        }
    }
}

/// What a round actually did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    RetrievalSd,
    DrafterSd,
    Autoregressive,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::RetrievalSd => "retrieval_sd",
            Decision::DrafterSd => "drafter_sd",
            Decision::Autoregressive => "autoregressive",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<SdMode> for Decision {
    fn from(m: SdMode) -> Self {
        match m {
            SdMode::RetrievalSd => Decision::RetrievalSd,
            SdMode::DrafterSd => Decision::DrafterSd,
        }
    }
}

/// Mode for the next round from the trailing window. Fewer than `w` points
/// means no kinematic evidence yet, so the drafter is used. Pure modes ignore
/// the window.
pub fn decide_sd(history: &[TrajectoryPoint], cfg: &HybridConfig) -> (SdMode, Option<WindowFeatures>) {
    match cfg.mode {
        Mode::PureRetrieval => return (SdMode::RetrievalSd, None),
        Mode::PureDrafter | Mode::Autoregressive => return (SdMode::DrafterSd, None),
        Mode::Hybrid => {}
    }
    let w = cfg.metric.window;
    if history.len() < w {
        return (SdMode::DrafterSd, None);
    }
    match window_features(&history[history.len() - w..], &cfg.metric, &cfg.bounds) {
        Ok(f) => (classify_segment(f.fused, cfg.metric.threshold), Some(f)),
        Err(_) => (SdMode::DrafterSd, None),
    }
}

/// One trace row per decode round.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Executed action slices before the round.
    pub env_step: usize,
    pub decision: Decision,
    pub metric: Option<WindowFeatures>,
    pub tokens_emitted: usize,
    pub accept_length: usize,
    pub skipped: bool,
    pub fallback_used: bool,
    /// The round hit a non-verifier error and was decoded autoregressively.
    pub degraded: bool,
    pub verifier_calls: usize,
    pub drafter_tokens: usize,
    pub retrieval_queries: usize,
    pub cost: f64,
}

impl StepRecord {
    /// Whether the round was a speculative (drafted) round.
    pub fn is_draft_round(&self) -> bool {
        self.decision != Decision::Autoregressive
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReport {
    pub success: bool,
    /// Executed action slices.
    pub steps: usize,
    pub mean_al: f64,
    pub cost_units: f64,
    pub ar_cost_units: f64,
    pub speedup: f64,
    pub tokens: Vec<Token>,
    pub trace: Vec<StepRecord>,
    pub positions: Vec<[f64; 3]>,
    /// Skip state after the end-of-episode feedback.
    pub skip_state: Option<VerifySkipState>,
}

/// Fractions of rounds by what they did; sums to 1 over a non-empty trace.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DecisionMix {
    pub retrieval: f64,
    pub drafter: f64,
    pub skip: f64,
    pub autoregressive: f64,
}

impl DecisionMix {
    pub fn from_trace<'a>(rows: impl IntoIterator<Item = &'a StepRecord>) -> Self {
        let (mut r, mut d, mut s, mut a) = (0usize, 0usize, 0usize, 0usize);
        for row in rows {
            match (row.decision, row.skipped) {
                (_, true) => s += 1,
                (Decision::RetrievalSd, false) => r += 1,
                (Decision::DrafterSd, false) => d += 1,
                (Decision::Autoregressive, false) => a += 1,
            }
        }
        let n = (r + d + s + a) as f64;
        if n == 0.0 {
            return Self::default();
        }
        Self { retrieval: r as f64 / n, drafter: d as f64 / n, skip: s as f64 / n, autoregressive: a as f64 / n }
    }
}

/// Mean accepted draft tokens per draft round (skipped rounds count their
/// whole draft).
pub fn mean_accept_length<'a>(rows: impl IntoIterator<Item = &'a StepRecord>) -> f64 {
    let (mut sum, mut n) = (0usize, 0usize);
    for row in rows.into_iter().filter(|r| r.is_draft_round()) {
        sum += row.accept_length;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

/// Decoding state for one episode.
pub struct Engine<'a, V, D> {
    cfg: &'a HybridConfig,
    verifier: V,
    drafter: D,
    shard: Option<&'a Collection>,
    skip: Option<VerifySkipState>,
    historical_min_s: f64,
    history: Vec<TrajectoryPoint>,
    features: Vec<Vec<f64>>,
    pending: Vec<Token>,
    emitted: Vec<Token>,
    env_steps: usize,
    trace: Vec<StepRecord>,
}

struct RoundPlan {
    decision: Decision,
    outcome: VerifyOutcome,
    drafter_tokens: usize,
    retrieval_queries: usize,
}

impl<'a, V, D> Engine<'a, V, D>
where
    V: VerifierModel,
    D: DrafterModel<Obs = V::Obs>,
{
    /// `skip` is the calibrated state; it is ignored unless skipping is
    /// enabled. Its `min_s` at construction is kept as the historical minimum
    /// for the end-of-episode feedback.
    pub fn new(
        cfg: &'a HybridConfig,
        verifier: V,
        drafter: D,
        shard: Option<&'a Collection>,
        skip: Option<VerifySkipState>,
    ) -> Self {
        let skip = skip.filter(|_| cfg.skip.enabled);
        Self {
            cfg,
            verifier,
            drafter,
            shard,
            historical_min_s: skip.map_or(1.0, |s| s.min_s),
            skip,
            history: Vec::new(),
            features: Vec::new(),
            pending: Vec::new(),
            emitted: Vec::new(),
            env_steps: 0,
            trace: Vec::new(),
        }
    }

    /// Override the historical minimum used by the feedback rule.
    pub fn with_historical_min_s(mut self, min_s_h: f64) -> Self {
        self.historical_min_s = min_s_h;
        self
    }

    pub fn trace(&self) -> &[StepRecord] {
        &self.trace
    }

    fn observe_point<E: Environment<Obs = V::Obs>>(&mut self, env: &E) {
        self.history.push(TrajectoryPoint::new(env.position(), self.env_steps));
        self.features.push(self.verifier.features(&env.observe()));
    }

    fn plan_retrieval(&mut self, obs: &V::Obs) -> Result<Option<(Vec<Draft>, usize)>> {
        let Some(shard) = self.shard.filter(|s| !s.is_empty()) else {
            return Ok(None);
        };
        let query = self.verifier.embed(obs);
        let drafts = retrieve_drafts(shard, &query, self.cfg.k_top, &self.cfg.quantizer, self.pending.len())?;
        Ok(Some((drafts, 1)))
    }

    fn draft_round(&mut self, obs: &V::Obs, mode: SdMode) -> Result<RoundPlan> {
        let cfg = self.cfg;
        let mut retrieval_queries = 0;
        if mode == SdMode::RetrievalSd {
            if let Some((drafts, queries)) = self.plan_retrieval(obs)? {
                retrieval_queries = queries;
                if !drafts.is_empty() {
                    if let Some(state) = &self.skip {
                        if should_skip(&self.features, state, LOOKAHEAD) {
                            let tokens = drafts[0].tokens();
                            let outcome = VerifyOutcome {
                                accept_length: tokens.len(),
                                accepted_tokens: tokens,
                                skipped: true,
                                ..Default::default()
                            };
                            return Ok(RoundPlan {
                                decision: Decision::RetrievalSd,
                                outcome,
                                drafter_tokens: 0,
                                retrieval_queries,
                            });
                        }
                    }
                    let tree = build_sequence_tree(&drafts)?;
                    let outcome =
                        verify_tree(&tree, &self.verifier, obs, &self.pending, &cfg.acceptance, cfg.chain_cap)?;
                    return Ok(RoundPlan { decision: Decision::RetrievalSd, outcome, drafter_tokens: 0, retrieval_queries });
                }
            }
        }
        let draft = drafter_generate(&mut self.drafter, obs, &self.pending, cfg.draft_len)?;
        let drafter_tokens = draft.token_count();
        let tree = build_sequence_tree(core::slice::from_ref(&draft))?;
        let outcome = verify_tree(&tree, &self.verifier, obs, &self.pending, &cfg.acceptance, cfg.chain_cap)?;
        Ok(RoundPlan { decision: Decision::DrafterSd, outcome, drafter_tokens, retrieval_queries })
    }

    fn ar_round(&self, obs: &V::Obs) -> Result<RoundPlan> {
        let n = DOF - self.pending.len();
        let tokens = generate_autoregressive(&self.verifier, obs, &self.pending, n)?;
        let outcome = VerifyOutcome { fallback_tokens: tokens, verifier_calls: n, ..Default::default() };
        Ok(RoundPlan { decision: Decision::Autoregressive, outcome, drafter_tokens: 0, retrieval_queries: 0 })
    }

    fn emit<E: Environment<Obs = V::Obs>>(&mut self, env: &mut E, tokens: &[Token], horizon: usize) -> Result<usize> {
        let mut n = 0;
        for &t in tokens {
            if env.done() || self.env_steps >= horizon {
                break;
            }
            self.pending.push(t);
            self.emitted.push(t);
            n += 1;
            if self.pending.len() == DOF {
                let slice: [Token; DOF] = self.pending[..].try_into().expect("full slice");
                let action = self.cfg.quantizer.dequantize_tokens(&slice)?;
                env.apply(&action);
                self.pending.clear();
                self.env_steps += 1;
                self.observe_point(env);
            }
        }
        Ok(n)
    }

    /// Execute one decode round.
    pub fn run_step<E: Environment<Obs = V::Obs>>(&mut self, env: &mut E, horizon: usize) -> Result<StepRecord> {
        if self.history.is_empty() {
            self.observe_point(env);
        }
        let obs = env.observe();
        let env_step = self.env_steps;
        let (mode, metric) = decide_sd(&self.history, self.cfg);
        let mut degraded = false;
        let plan = if self.cfg.mode == Mode::Autoregressive {
            self.ar_round(&obs)?
        } else {
            match self.draft_round(&obs, mode) {
                Ok(p) => p,
                Err(_) => {
                    degraded = true;
                    self.ar_round(&obs)?
                }
            }
        };
        let emitted = plan.outcome.emitted();
        let tokens_emitted = self.emit(env, &emitted, horizon)?;
        let c = &self.cfg.cost;
        let cost = plan.outcome.verifier_calls as f64 * c.verifier_call
            + plan.drafter_tokens as f64 * c.drafter_token
            + plan.retrieval_queries as f64 * c.retrieval_query
            + if plan.outcome.skipped { c.skip } else { 0.0 };
        let record = StepRecord {
            step: self.trace.len(),
            env_step,
            decision: plan.decision,
            metric,
            tokens_emitted,
            accept_length: plan.outcome.accept_length,
            skipped: plan.outcome.skipped,
            fallback_used: plan.outcome.fallback_used,
            degraded,
            verifier_calls: plan.outcome.verifier_calls,
            drafter_tokens: plan.drafter_tokens,
            retrieval_queries: plan.retrieval_queries,
            cost,
        };
        self.trace.push(record.clone());
        Ok(record)
    }

    /// Run rounds until the environment is done or `horizon` slices ran,
    /// then apply the skip feedback.
    pub fn run_episode<E: Environment<Obs = V::Obs>>(mut self, env: &mut E, horizon: usize) -> Result<EpisodeReport> {
        if horizon > 0 {
            self.observe_point(env);
        }
        while horizon > 0 && !env.done() && self.env_steps < horizon {
            self.run_step(env, horizon)?;
        }
        let success = horizon > 0 && env.success();
        let skip_state = self.skip.map(|state| {
            let s_c = offline_calibrate_skip(core::slice::from_ref(&self.features), state.t)
                .map_or(self.historical_min_s, |(m, _)| m);
            update_skip_state(&state, success, s_c, self.historical_min_s)
        });
        let cost_units: f64 = self.trace.iter().map(|r| r.cost).sum();
        let ar_cost_units = self.emitted.len() as f64 * self.cfg.cost.verifier_call;
        let speedup = if self.emitted.is_empty() {
            1.0
        } else if cost_units == 0.0 {
            f64::INFINITY
        } else {
            ar_cost_units / cost_units
        };
        Ok(EpisodeReport {
            success,
            steps: self.env_steps,
            mean_al: mean_accept_length(&self.trace),
            cost_units,
            ar_cost_units,
            speedup,
            tokens: self.emitted,
            positions: self.history.iter().map(TrajectoryPoint::pos).collect(),
            trace: self.trace,
            skip_state,
        })
    }
}

/// Convenience for building a skip state from config and a calibration result.
pub fn skip_state_from(cfg: &SkipConfig, min_s: f64, o_dist: usize) -> Result<VerifySkipState> {
    VerifySkipState::new(cfg.t, min_s, o_dist, cfg.delta, cfg.direction)
}
