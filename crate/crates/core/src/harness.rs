//! Deterministic toy pick-and-place world with a scripted oracle policy.
//!
//! The world is kinematic only: an action slice displaces the gripper by its
//! position delta, turns it by its rotation delta and opens or closes it.
//! Closing within `grasp_tol` of the object grasps it; opening releases it
//! where the gripper is.
//!
//! The oracle is a state-feedback policy. Far from its current target it
//! moves in a straight line at `v_fast`; inside `approach_radius` it spirals
//! in at `v_slow`, which gives every episode a straight transport phase and a
//! curved fine-approach phase. It emits the nearest bin of its continuous
//! action, and is the verifier: greedy tokens are the oracle's tokens in the
//! state reached by executing the teacher-forced slices.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actions::{gripper_binary, ActionSlice, Gripper, Quantizer, Token, DOF, GRIPPER_DIM};
use crate::config::EngineConfig;
use crate::drafting::NoisyDrafter;
use crate::kinematics::{suite_bounds, NormalizationBounds};
use crate::linalg::dist3;
use crate::models::{Environment, VerifierModel};
use crate::retrieval::{l2_normalize, Collection, Payload, RetrievalStore, LOOKAHEAD};
use crate::scheduler::{skip_state_from, DecisionMix, Engine, EpisodeReport};
use crate::verification::VerifySkipState;
use crate::{Error, Result};

/// One pick-and-place task.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TaskSpec {
    pub id: String,
    pub instruction: String,
    pub start: [f64; 3],
    pub object: [f64; 3],
    pub goal: [f64; 3],
    /// Target heading of the gripper (rad).
    pub yaw: f64,
}

/// The four built-in tasks.
pub fn default_tasks() -> Vec<TaskSpec> {
    let t = |id: &str, instruction: &str, start, object, goal, yaw| TaskSpec {
        id: id.into(),
        instruction: instruction.into(),
        start,
        object,
        goal,
        yaw,
    };
    vec![
        t("place_bowl_left", "put the bowl on the left plate", [0.0, 0.0, 0.15], [0.18, 0.08, 0.02], [0.05, 0.28, 0.05], 0.3),
        t("stack_block", "stack the red block on the green block", [0.10, -0.15, 0.18], [0.28, -0.05, 0.02], [0.10, 0.12, 0.06], -0.4),
        t("drawer_cup", "move the cup into the open drawer", [-0.10, 0.10, 0.15], [-0.28, 0.20, 0.03], [0.0, 0.05, 0.10], 0.6),
        t("shelf_can", "place the can on the top shelf", [0.20, 0.20, 0.10], [0.08, -0.05, 0.03], [0.25, 0.15, 0.20], 0.0),
    ]
}

/// Geometry and controller constants of the toy world.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct WorldParams {
    /// Success tolerance on gripper and object distance to the goal.
    pub success_tol: f64,
    pub grasp_tol: f64,
    /// Distance at which the oracle considers a target reached.
    pub arrive_tol: f64,
    pub v_fast: f64,
    pub v_slow: f64,
    /// Radius inside which the oracle switches from straight motion to the spiral.
    pub approach_radius: f64,
    /// Share of the slow step spent moving inward (the rest is tangential).
    pub inward_fraction: f64,
    pub rot_gain: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            success_tol: 0.02,
            grasp_tol: 0.02,
            arrive_tol: 0.001,
            v_fast: 0.01,
            v_slow: 0.002,
            approach_radius: 0.025,
            inward_fraction: 0.5,
            rot_gain: 0.5,
        }
    }
}

impl WorldParams {
    pub fn invalid_fields(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        let positive = [
            ("success_tol", self.success_tol),
            ("grasp_tol", self.grasp_tol),
            ("arrive_tol", self.arrive_tol),
            ("v_fast", self.v_fast),
            ("v_slow", self.v_slow),
            ("approach_radius", self.approach_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(name);
            }
        }
        if !(self.inward_fraction > 0.0 && self.inward_fraction <= 1.0) {
            bad.push("inward_fraction");
        }
        if !(self.rot_gain >= 0.0 && self.rot_gain <= 1.0) {
            bad.push("rot_gain");
        }
        bad
    }
}

/// Harness configuration: tasks, instance sampling and episode budget.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct EnvConfig {
    pub tasks: Vec<TaskSpec>,
    pub world: WorldParams,
    pub horizon: usize,
    /// Demonstration episodes recorded per task.
    pub demo_episodes: usize,
    /// Radius of the per-episode jitter applied to start, object and goal.
    pub instance_jitter: f64,
    pub eval_trials: usize,
    /// Extra perturbation of evaluation instances; 0 replays demo instances.
    pub eval_perturbation: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            tasks: default_tasks(),
            world: WorldParams::default(),
            horizon: 150,
            demo_episodes: 20,
            instance_jitter: 0.05,
            eval_trials: 10,
            eval_perturbation: 0.02,
            seed: 7,
        }
    }
}

/// A concrete task instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub task_index: usize,
    pub task_count: usize,
    pub spec: TaskSpec,
}

fn mix(seed: u64, a: u64, b: u64, stream: u64) -> u64 {
    // splitmix64 over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9) ^ stream.rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed derived from a base seed and two indices; distinct streams do not collide.
pub fn derive_seed(seed: u64, a: u64, b: u64, stream: u64) -> u64 {
    mix(seed, a, b, stream)
}

fn ball_offset(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 3] {
    if radius == 0.0 {
        return [0.0; 3];
    }
    loop {
        let v: [f64; 3] = core::array::from_fn(|_| rng.random::<f64>() * 2.0 - 1.0);
        if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            return v.map(|x| x * radius);
        }
    }
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn perturb(spec: &TaskSpec, rng: &mut ChaCha8Rng, radius: f64) -> TaskSpec {
    let mut s = spec.clone();
    s.start = add(s.start, ball_offset(rng, radius));
    s.object = add(s.object, ball_offset(rng, radius));
    s.goal = add(s.goal, ball_offset(rng, radius));
    s
}

impl EnvConfig {
    /// Instance of demonstration episode `episode` of task `task_index`.
    pub fn demo_instance(&self, task_index: usize, episode: usize) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, task_index as u64, episode as u64, 1));
        Instance {
            task_index,
            task_count: self.tasks.len(),
            spec: perturb(&self.tasks[task_index], &mut rng, self.instance_jitter),
        }
    }

    /// Evaluation instance: demo instance `trial` plus `eval_perturbation`.
    pub fn eval_instance(&self, task_index: usize, trial: usize) -> Instance {
        let mut inst = self.demo_instance(task_index, trial);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, task_index as u64, trial as u64, 2));
        inst.spec = perturb(&inst.spec, &mut rng, self.eval_perturbation);
        inst
    }

    pub fn invalid_fields(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        if self.tasks.iter().enumerate().any(|(i, t)| self.tasks[..i].iter().any(|u| u.id == t.id)) {
            bad.push("tasks");
        }
        if self.horizon == 0 {
            bad.push("horizon");
        }
        if !(self.instance_jitter >= 0.0 && self.instance_jitter.is_finite()) {
            bad.push("instance_jitter");
        }
        if !(self.eval_perturbation >= 0.0 && self.eval_perturbation.is_finite()) {
            bad.push("eval_perturbation");
        }
        bad
    }
}

/// Full world state; also the observation.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub pos: [f64; 3],
    pub rot: [f64; 3],
    pub gripper_closed: bool,
    pub holding: bool,
    pub object: [f64; 3],
    pub step: usize,
}

/// What the oracle is doing in a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Straight motion toward the current target.
    Transport,
    /// Spiral fine approach near the target.
    Approach,
    Grasp,
    Release,
    /// Reopening after a missed grasp, or idle once delivered.
    Recover,
}

/// Pure dynamics, oracle policy and feature map for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub params: WorldParams,
    pub quantizer: Quantizer,
    pub instance: Instance,
    pub feature_dim: usize,
}

impl World {
    pub fn new(params: WorldParams, quantizer: Quantizer, instance: Instance, feature_dim: usize) -> Result<Self> {
        if feature_dim < 11 + instance.task_count {
            return Err(Error::Config(alloc::format!(
                "feature dim {feature_dim} too small for {} tasks (need {})",
                instance.task_count,
                11 + instance.task_count
            )));
        }
        Ok(Self { params, quantizer, instance, feature_dim })
    }

    pub fn initial_state(&self) -> EnvState {
        EnvState {
            pos: self.instance.spec.start,
            rot: [0.0; 3],
            gripper_closed: false,
            holding: false,
            object: self.instance.spec.object,
            step: 0,
        }
    }

    pub fn step(&self, s: &EnvState, a: &ActionSlice) -> EnvState {
        let mut n = s.clone();
        n.pos = add(s.pos, a.position());
        n.rot = add(s.rot, a.rotation());
        let closed = gripper_binary(a.gripper(), &self.quantizer.bounds) == Gripper::Closed;
        if closed && !s.gripper_closed && !s.holding && dist3(n.pos, s.object) <= self.params.grasp_tol {
            n.holding = true;
        }
        if !closed && s.holding {
            n.holding = false;
        }
        n.gripper_closed = closed;
        if n.holding {
            n.object = n.pos;
        }
        n.step = s.step + 1;
        n
    }

    pub fn delivered(&self, s: &EnvState) -> bool {
        !s.holding && dist3(s.object, self.instance.spec.goal) <= self.params.success_tol
    }

    pub fn success(&self, s: &EnvState) -> bool {
        self.delivered(s) && !s.gripper_closed && dist3(s.pos, self.instance.spec.goal) <= self.params.success_tol
    }

    fn target(&self, s: &EnvState) -> [f64; 3] {
        if s.holding {
            self.instance.spec.goal
        } else {
            s.object
        }
    }

    pub fn phase(&self, s: &EnvState) -> Phase {
        let target = self.target(s);
        let r = dist3(s.pos, target);
        if s.holding {
            if r <= self.params.arrive_tol {
                return Phase::Release;
            }
        } else if self.delivered(s) || s.gripper_closed {
            return Phase::Recover;
        } else if r <= self.params.arrive_tol {
            return Phase::Grasp;
        }
        if r > self.params.approach_radius {
            Phase::Transport
        } else {
            Phase::Approach
        }
    }

    fn motion(&self, s: &EnvState, target: [f64; 3]) -> [f64; 3] {
        let p = &self.params;
        let d = [target[0] - s.pos[0], target[1] - s.pos[1], target[2] - s.pos[2]];
        let r = dist3(s.pos, target);
        if r > p.approach_radius {
            let k = p.v_fast.min(r) / r;
            return d.map(|x| x * k);
        }
        if r <= p.v_slow {
            return d;
        }
        let rh = libm::hypot(d[0], d[1]);
        if rh < 0.5 * p.v_slow {
            let k = p.v_slow / r;
            return d.map(|x| x * k);
        }
        // Next point on the spiral: turn by the tangential share of the step,
        // shrink the horizontal radius by the inward share.
        let out = [-d[0] / rh, -d[1] / rh];
        let cos_b = libm::sqrt(1.0 - p.inward_fraction * p.inward_fraction);
        let radial = p.v_slow * p.inward_fraction;
        let turn = (p.v_slow * cos_b / rh).min(0.5);
        let (sin_t, cos_t) = (libm::sin(turn), libm::cos(turn));
        let dir = [out[0] * cos_t - out[1] * sin_t, out[0] * sin_t + out[1] * cos_t];
        let r_next = (rh - radial).max(0.0);
        let dz = d[2] * (radial / rh).min(1.0);
        [d[0] + r_next * dir[0], d[1] + r_next * dir[1], dz]
    }

    /// Continuous oracle action in state `s`.
    pub fn oracle_action(&self, s: &EnvState) -> ActionSlice {
        let (lo, hi) = self.quantizer.bounds.dim(GRIPPER_DIM);
        let mut a = [0.0; DOF];
        let yaw_target = [0.0, 0.0, self.instance.spec.yaw];
        for k in 0..3 {
            a[3 + k] = self.params.rot_gain * (yaw_target[k] - s.rot[k]);
        }
        let (motion, closed) = match self.phase(s) {
            Phase::Grasp => ([0.0; 3], true),
            Phase::Release | Phase::Recover => ([0.0; 3], false),
            Phase::Transport | Phase::Approach => (self.motion(s, self.target(s)), s.holding),
        };
        a[..3].copy_from_slice(&motion);
        a[GRIPPER_DIM] = if closed { hi } else { lo };
        ActionSlice(a)
    }

    /// Nearest-bin tokens of the oracle action.
    pub fn oracle_tokens(&self, s: &EnvState) -> [Token; DOF] {
        let a = self.oracle_action(s);
        core::array::from_fn(|i| self.quantizer.nearest_token(i, a.0[i]).expect("finite oracle action"))
    }

    /// L2-normalized (pose, goal, goal - pose, task one-hot), zero padded.
    /// The pose includes the heading and the gripper opening.
    pub fn features(&self, s: &EnvState) -> Vec<f64> {
        let g = self.instance.spec.goal;
        let mut v = vec![0.0; self.feature_dim];
        let pose = [s.pos[0], s.pos[1], s.pos[2], s.rot[2], if s.gripper_closed { 1.0 } else { 0.0 }];
        v[..5].copy_from_slice(&pose);
        v[5..8].copy_from_slice(&g);
        for k in 0..3 {
            v[8 + k] = g[k] - s.pos[k];
        }
        v[11 + self.instance.task_index] = 1.0;
        l2_normalize(&v).expect("one-hot keeps the feature nonzero")
    }
}

/// Environment wrapper around [`World`].
#[derive(Debug, Clone)]
pub struct ToyEnv {
    world: World,
    state: EnvState,
    horizon: usize,
}

impl ToyEnv {
    pub fn new(world: World, horizon: usize) -> Self {
        let state = world.initial_state();
        Self { world, state, horizon }
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn world(&self) -> &World {
        &self.world
    }
}

impl Environment for ToyEnv {
    type Obs = EnvState;

    fn observe(&self) -> EnvState {
        self.state.clone()
    }

    fn apply(&mut self, action: &ActionSlice) {
        self.state = self.world.step(&self.state, action);
    }

    fn position(&self) -> [f64; 3] {
        self.state.pos
    }

    fn done(&self) -> bool {
        self.world.success(&self.state) || self.state.step >= self.horizon
    }

    fn success(&self) -> bool {
        self.world.success(&self.state)
    }
}

/// The oracle as verifier model.
#[derive(Debug, Clone)]
pub struct OracleVerifier {
    world: World,
}

impl OracleVerifier {
    pub fn new(world: World) -> Self {
        Self { world }
    }
}

impl VerifierModel for OracleVerifier {
    type Obs = EnvState;

    fn greedy(&self, obs: &EnvState, pending: &[Token], chain: &[Token]) -> Result<Vec<Token>> {
        let mut tokens = Vec::with_capacity(pending.len() + chain.len());
        tokens.extend_from_slice(pending);
        tokens.extend_from_slice(chain);
        let mut state = obs.clone();
        let mut slice_tokens = self.world.oracle_tokens(&state);
        let mut out = Vec::with_capacity(chain.len() + 1);
        for p in pending.len()..=tokens.len() {
            if p > 0 && p % DOF == 0 {
                let done: [Token; DOF] = tokens[p - DOF..p].try_into().expect("slice");
                state = self.world.step(&state, &self.world.quantizer.dequantize_tokens(&done)?);
                slice_tokens = self.world.oracle_tokens(&state);
            }
            out.push(slice_tokens[p % DOF]);
        }
        Ok(out)
    }

    fn features(&self, obs: &EnvState) -> Vec<f64> {
        self.world.features(obs)
    }
}

/// One recorded demonstration step.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoStep {
    pub features: Vec<f64>,
    pub current_action: [f64; DOF],
    pub next_actions: [[f64; DOF]; LOOKAHEAD],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demo {
    pub task_id: String,
    pub instruction: String,
    pub episode_idx: usize,
    pub success: bool,
    pub positions: Vec<[f64; 3]>,
    pub phases: Vec<Phase>,
    pub steps: Vec<DemoStep>,
}

/// Roll out the oracle autoregressively on `world` for at most `horizon` steps.
pub fn oracle_rollout(world: &World, horizon: usize) -> (Vec<EnvState>, Vec<[f64; DOF]>) {
    let mut env = ToyEnv::new(world.clone(), horizon);
    let mut states = vec![env.state.clone()];
    let mut actions = Vec::new();
    while !env.done() {
        let tokens = world.oracle_tokens(&env.state);
        let a = world.quantizer.dequantize_tokens(&tokens).expect("valid tokens");
        env.apply(&a);
        actions.push(a.0);
        states.push(env.state.clone());
    }
    (states, actions)
}

/// Record one demonstration. Step `t` stores the state before action `t`;
/// its current action is the one that led there (a resting action at
/// `t = 0`) and its lookahead is actions `t..t+3`, padded with the last
/// action at the episode tail.
pub fn record_episode(world: &World, horizon: usize, episode_idx: usize) -> Demo {
    let (states, actions) = oracle_rollout(world, horizon);
    let (g_lo, _) = world.quantizer.bounds.dim(GRIPPER_DIM);
    let mut rest = [0.0; DOF];
    rest[GRIPPER_DIM] = g_lo;
    let rest = world.quantizer.dequantize_tokens(&world.quantizer.tokens(&ActionSlice(rest)).expect("finite")).expect("valid").0;
    let steps = (0..actions.len())
        .map(|t| DemoStep {
            features: world.features(&states[t]),
            current_action: if t == 0 { rest } else { actions[t - 1] },
            next_actions: core::array::from_fn(|k| actions[(t + k).min(actions.len() - 1)]),
        })
        .collect();
    let spec = &world.instance.spec;
    Demo {
        task_id: spec.id.clone(),
        instruction: spec.instruction.clone(),
        episode_idx,
        success: world.success(states.last().expect("initial state")),
        positions: states.iter().map(|s| s.pos).collect(),
        phases: states.iter().map(|s| world.phase(s)).collect(),
        steps,
    }
}

fn world_for(cfg: &EngineConfig, instance: Instance) -> Result<World> {
    World::new(cfg.env.world, cfg.quantizer()?, instance, cfg.retrieval.dim)
}

/// Oracle demonstrations for every task, `demo_episodes` each.
pub fn record_demonstrations(cfg: &EngineConfig) -> Result<Vec<Demo>> {
    let mut demos = Vec::new();
    for task in 0..cfg.env.tasks.len() {
        for ep in 0..cfg.env.demo_episodes {
            let world = world_for(cfg, cfg.env.demo_instance(task, ep))?;
            demos.push(record_episode(&world, cfg.env.horizon, ep));
        }
    }
    Ok(demos)
}

/// One collection per task; features are stored for skip calibration.
pub fn build_database(demos: &[Demo], dim: usize) -> Result<RetrievalStore> {
    let mut store = RetrievalStore::new();
    for demo in demos {
        if store.get(&demo.task_id).is_none() {
            store.add(Collection::new(demo.task_id.clone(), dim)?);
        }
        let shard = store.get_mut(&demo.task_id).expect("just added");
        for (t, step) in demo.steps.iter().enumerate() {
            let payload = Payload {
                dataset_name: demo.task_id.clone(),
                episode_idx: demo.episode_idx as u64,
                step_idx: t as u64,
                current_action: step.current_action,
                next_actions: step.next_actions,
                language_instruction: demo.instruction.clone(),
            };
            shard.insert(step.features.clone(), payload, Some(step.features.clone()))?;
        }
    }
    Ok(store)
}

/// Normalization bounds profiled from the demonstrations of `cfg`.
pub fn profile_bounds(cfg: &EngineConfig) -> Result<NormalizationBounds> {
    let demos = record_demonstrations(cfg)?;
    let trajectories: Vec<Vec<[f64; 3]>> = demos.into_iter().map(|d| d.positions).collect();
    suite_bounds(&trajectories, cfg.metric.window, cfg.metric.r_cap)
}

/// Run one evaluation episode.
pub fn run_trial(
    cfg: &EngineConfig,
    task_index: usize,
    trial: usize,
    store: Option<&RetrievalStore>,
    skip: Option<VerifySkipState>,
    historical_min_s: f64,
) -> Result<EpisodeReport> {
    let world = world_for(cfg, cfg.env.eval_instance(task_index, trial))?;
    let hybrid = cfg.hybrid()?;
    let shard = store.and_then(|s| s.get(&cfg.env.tasks[task_index].id));
    let drafter = NoisyDrafter::new(
        OracleVerifier::new(world.clone()),
        cfg.drafter.accuracy,
        hybrid.quantizer.bins,
        derive_seed(cfg.drafter.seed, task_index as u64, trial as u64, 3),
    )?;
    let mut env = ToyEnv::new(world.clone(), cfg.env.horizon);
    Engine::new(&hybrid, OracleVerifier::new(world), drafter, shard, skip)
        .with_historical_min_s(historical_min_s)
        .run_episode(&mut env, cfg.env.horizon)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub task_id: String,
    pub trial: usize,
    pub report: EpisodeReport,
}

/// All trials of one task, in order; the skip state carries over from one
/// trial to the next.
pub fn evaluate_task(
    cfg: &EngineConfig,
    task_index: usize,
    store: Option<&RetrievalStore>,
    calibration: Option<(f64, usize)>,
) -> Result<Vec<TrialResult>> {
    let mut skip = match calibration {
        Some((min_s, o_dist)) if cfg.skip.enabled => Some(skip_state_from(&cfg.skip, min_s, o_dist)?),
        _ => None,
    };
    let historical = calibration.map_or(1.0, |c| c.0);
    let mut out = Vec::with_capacity(cfg.env.eval_trials);
    for trial in 0..cfg.env.eval_trials {
        let report = run_trial(cfg, task_index, trial, store, skip, historical)?;
        skip = report.skip_state.or(skip);
        out.push(TrialResult { task_id: cfg.env.tasks[task_index].id.clone(), trial, report });
    }
    Ok(out)
}

/// Aggregate statistics over a set of episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub name: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_al: f64,
    /// Ratio of summed autoregressive cost to summed actual cost.
    pub speedup: f64,
    pub mean_steps: f64,
    pub mix: DecisionMix,
}

impl Summary {
    pub fn of(name: &str, trials: &[&TrialResult]) -> Self {
        let n = trials.len();
        if n == 0 {
            return Self {
                name: name.into(),
                episodes: 0,
                success_rate: 0.0,
                mean_al: 0.0,
                speedup: 1.0,
                mean_steps: 0.0,
                mix: DecisionMix::default(),
            };
        }
        let rows = || trials.iter().flat_map(|t| t.report.trace.iter());
        let cost: f64 = trials.iter().map(|t| t.report.cost_units).sum();
        let ar: f64 = trials.iter().map(|t| t.report.ar_cost_units).sum();
        Self {
            name: name.into(),
            episodes: n,
            success_rate: trials.iter().filter(|t| t.report.success).count() as f64 / n as f64,
            mean_al: crate::scheduler::mean_accept_length(rows()),
            speedup: if cost > 0.0 { ar / cost } else { 1.0 },
            mean_steps: trials.iter().map(|t| t.report.steps as f64).sum::<f64>() / n as f64,
            mix: DecisionMix::from_trace(rows()),
        }
    }
}

/// Per-task summaries plus the aggregate over all tasks.
pub fn summarize(results: &[TrialResult]) -> (Vec<Summary>, Summary) {
    let mut names: Vec<&str> = Vec::new();
    for r in results {
        if !names.contains(&r.task_id.as_str()) {
            names.push(&r.task_id);
        }
    }
    let per_task = names
        .iter()
        .map(|name| {
            let trials: Vec<&TrialResult> = results.iter().filter(|r| r.task_id == *name).collect();
            Summary::of(name, &trials)
        })
        .collect();
    let all: Vec<&TrialResult> = results.iter().collect();
    (per_task, Summary::of("all", &all))
}
