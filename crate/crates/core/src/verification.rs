//! Sequence-wise relaxed verification of draft trees, and adaptive
//! verify-skip.
//!
//! A group (position triple, rotation triple or gripper singleton) is accepted
//! when its bin-index deviations from the verifier's greedy tokens stay within
//! a per-token cap and a per-sequence cap; gripper groups must match exactly.
//! With relaxation disabled only exact matches pass, which makes decoding
//! lossless.

use alloc::vec::Vec;

use crate::actions::Token;
use crate::drafting::{DraftTree, GroupKind};
use crate::linalg::cosine;
use crate::models::VerifierModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct RelaxedAcceptance {
    pub enabled: bool,
    pub bias_seq_max: u32,
    pub bias_token_max: u32,
}

impl Default for RelaxedAcceptance {
    fn default() -> Self {
        Self { enabled: true, bias_seq_max: 30, bias_token_max: 15 }
    }
}

impl RelaxedAcceptance {
    /// Exact-match acceptance.
    pub fn strict() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn invalid_fields(&self) -> Vec<&'static str> {
        if self.bias_token_max > self.bias_seq_max {
            alloc::vec!["bias_token_max"]
        } else {
            Vec::new()
        }
    }
}

pub fn token_bias(draft: Token, verify: Token) -> u32 {
    u32::from(draft.abs_diff(verify))
}

/// Accept or reject one group against the verifier's greedy tokens.
pub fn accept_sequence(kind: GroupKind, draft: &[Token], verify: &[Token], params: &RelaxedAcceptance) -> Result<bool> {
    if draft.len() != verify.len() {
        return Err(Error::invalid("draft and verifier sequences differ in length"));
    }
    let mut sum = 0u32;
    let mut max = 0u32;
    for (&d, &v) in draft.iter().zip(verify) {
        let b = token_bias(d, v);
        sum += b;
        max = max.max(b);
    }
    if !params.enabled || kind == GroupKind::Gripper {
        return Ok(sum == 0);
    }
    Ok(sum <= params.bias_seq_max && max <= params.bias_token_max)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifyOutcome {
    /// Draft tokens accepted (whole groups).
    pub accepted_tokens: Vec<Token>,
    /// Verifier tokens emitted when no draft group was accepted.
    pub fallback_tokens: Vec<Token>,
    pub accept_length: usize,
    pub verifier_calls: usize,
    pub skipped: bool,
    pub fallback_used: bool,
}

impl VerifyOutcome {
    /// Tokens to emit, in order.
    pub fn emitted(&self) -> Vec<Token> {
        let mut out = self.accepted_tokens.clone();
        out.extend_from_slice(&self.fallback_tokens);
        out
    }
}

struct CachedCall {
    chain: Vec<usize>,
    /// Per-level accept flags, valid for levels `0..chain.len()`.
    accepted: Vec<bool>,
}

fn accepted_prefix(flags: &[bool]) -> usize {
    flags.iter().take_while(|&&a| a).count()
}

/// Verify chains depth-first, one verifier call per chain, keeping the longest
/// accepted group prefix (earliest chain on ties).
///
/// Chains whose outcome is already implied by earlier calls are not sent to
/// the verifier: greedy tokens for a level only depend on the levels before
/// it, so a chain sharing its first `m` nodes with a verified chain inherits
/// those `m` verdicts. A chain is also skipped when even full acceptance
/// could not beat the current best. Verification stops at the first fully
/// accepted chain.
///
/// If no group is accepted, the verifier's own group at the current position
/// is emitted: its first token comes from the verification pass, each further
/// token costs one more call.
pub fn verify_tree<V: VerifierModel>(
    tree: &DraftTree,
    verifier: &V,
    obs: &V::Obs,
    pending: &[Token],
    params: &RelaxedAcceptance,
    cap: usize,
) -> Result<VerifyOutcome> {
    let depth = tree.depth();
    let chains = tree.enumerate_chains(cap);
    let mut calls = 0usize;
    let mut cache: Vec<CachedCall> = Vec::new();
    let mut first_greedy: Option<Token> = None;
    let mut best: Option<(usize, Vec<usize>)> = None;

    for chain in chains {
        let best_len = best.as_ref().map_or(0, |b| b.0);
        // Longest shared node prefix with any verified chain.
        let (shared, known) = cache
            .iter()
            .map(|c| {
                let p = c.chain.iter().zip(&chain).take_while(|(a, b)| a == b).count();
                (p, c)
            })
            .max_by_key(|(p, _)| *p)
            .map_or((0, None), |(p, c)| (p, Some(c)));
        let inherited = known.map_or(0, |c| accepted_prefix(&c.accepted[..shared]));
        if inherited < shared {
            // A shared level was rejected: outcome fully determined.
            if inherited > best_len {
                best = Some((inherited, chain));
            }
            continue;
        }
        if depth <= best_len {
            break;
        }
        let tokens = tree.chain_tokens(&chain);
        let greedy = verifier.greedy(obs, pending, &tokens)?;
        calls += 1;
        if greedy.len() != tokens.len() + 1 {
            return Err(Error::invalid("verifier returned the wrong number of tokens"));
        }
        first_greedy.get_or_insert(greedy[0]);
        let mut accepted = Vec::with_capacity(depth);
        let mut pos = 0;
        for node in tree.chain_groups(&chain) {
            let n = node.tokens.len();
            accepted.push(accept_sequence(node.kind, &node.tokens, &greedy[pos..pos + n], params)?);
            pos += n;
        }
        let len = accepted_prefix(&accepted);
        cache.push(CachedCall { chain: chain.clone(), accepted });
        if len > best_len {
            best = Some((len, chain));
        }
        if len == depth {
            break;
        }
    }

    let mut out = VerifyOutcome { verifier_calls: calls, ..Default::default() };
    match best {
        Some((len, chain)) if len > 0 => {
            out.accepted_tokens = tree.chain_tokens(&chain[..len]);
            out.accept_length = out.accepted_tokens.len();
        }
        _ => {
            let group = GroupKind::starting_at(pending.len() % crate::actions::DOF)
                .ok_or_else(|| Error::invalid("pending tokens are not group aligned"))?;
            let first = match first_greedy {
                Some(t) => t,
                None => {
                    out.verifier_calls += 1;
                    verifier.greedy(obs, pending, &[])?[0]
                }
            };
            out.fallback_tokens.push(first);
            while out.fallback_tokens.len() < group.len() {
                let g = verifier.greedy(obs, pending, &out.fallback_tokens)?;
                out.verifier_calls += 1;
                out.fallback_tokens.push(g[out.fallback_tokens.len()]);
            }
            out.fallback_used = true;
        }
    }
    Ok(out)
}

/// Autoregressive generation of `n` tokens, one verifier call each.
pub fn generate_autoregressive<V: VerifierModel>(
    verifier: &V,
    obs: &V::Obs,
    pending: &[Token],
    n: usize,
) -> Result<Vec<Token>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let g = verifier.greedy(obs, pending, &out)?;
        out.push(g[out.len()]);
    }
    Ok(out)
}

/// Sign convention for the online feedback of the skip boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum UpdateDirection {
    /// Success raises `min_s`, failure lowers it.
    #[default]
    AsWritten,
    /// Success lowers `min_s`, failure raises it.
    Inverted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifySkipState {
    pub t: f64,
    pub min_s: f64,
    pub o_dist: usize,
    pub delta: f64,
    pub direction: UpdateDirection,
}

impl VerifySkipState {
    pub fn new(t: f64, min_s: f64, o_dist: usize, delta: f64, direction: UpdateDirection) -> Result<Self> {
        if !(-1.0..=1.0).contains(&t) || !(t..=1.0).contains(&min_s) {
            return Err(Error::invalid("skip state needs -1 <= T <= min_S <= 1"));
        }
        if o_dist == 0 {
            return Err(Error::invalid("point distance must be at least 1"));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::invalid("feedback step must be nonnegative"));
        }
        Ok(Self { t, min_s, o_dist, delta, direction })
    }
}

/// Offline stage: over every pair `(i, i + d)` of every trajectory, the
/// smallest similarity that still exceeds `t`, and its distance. Among equal
/// minima the larger distance wins.
pub fn offline_calibrate_skip(trajectories: &[Vec<Vec<f64>>], t: f64) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for traj in trajectories {
        for i in 0..traj.len() {
            for d in 1..traj.len() - i {
                let s = cosine(&traj[i], &traj[i + d]);
                if s <= t {
                    continue;
                }
                best = match best {
                    Some((m, od)) if s > m || (s == m && d <= od) => Some((m, od)),
                    _ => Some((s, d)),
                };
            }
        }
    }
    best.ok_or_else(|| Error::CalibrationFailed(alloc::format!("no feature pair has similarity above T = {t}")))
}

/// Skip verification iff the draft gap is within the learned point distance
/// and the current features are at least `min_s` similar to those `d` steps
/// back. `history` ends with the current step.
pub fn should_skip(history: &[Vec<f64>], state: &VerifySkipState, d: usize) -> bool {
    if d == 0 || d > state.o_dist || history.len() <= d {
        return false;
    }
    let now = &history[history.len() - 1];
    let then = &history[history.len() - 1 - d];
    cosine(now, then) >= state.min_s
}

/// Online feedback with an explicit similarity gap.
pub fn apply_feedback(state: &VerifySkipState, success: bool, gap: f64) -> VerifySkipState {
    let step = state.delta * gap.abs();
    let raise = match state.direction {
        UpdateDirection::AsWritten => success,
        UpdateDirection::Inverted => !success,
    };
    let min_s = if raise { state.min_s + step } else { state.min_s - step };
    let o_dist = if success { state.o_dist + 1 } else { state.o_dist.saturating_sub(1).max(1) };
    VerifySkipState { min_s: min_s.clamp(state.t, 1.0), o_dist, ..*state }
}

/// Online feedback after a task: the gap is `|s_c - min_s_h|`.
pub fn update_skip_state(state: &VerifySkipState, success: bool, s_c: f64, min_s_h: f64) -> VerifySkipState {
    apply_feedback(state, success, s_c - min_s_h)
}
