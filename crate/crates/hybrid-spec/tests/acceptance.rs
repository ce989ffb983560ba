//! The ten acceptance criteria, one line of output each.
//!
//! Run with `cargo test -p hybrid-spec --test acceptance -- --nocapture` to see
//! the per-criterion lines.

use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use hybrid_spec::analyze::{load_trajectory, sweep};
use hybrid_spec::calib::calibrate_store;
use hybrid_spec::cli::load_bounds;
use hybrid_spec::eval::evaluate;
use hybrid_spec_core::actions::{ActionSlice, ActionSpaceBounds, Quantizer, Token, DOF};
use hybrid_spec_core::config::EngineConfig;
use hybrid_spec_core::drafting::GroupKind;
use hybrid_spec_core::harness::{
    build_database, record_demonstrations, record_episode, run_trial, EnvConfig, Phase, TaskSpec, World, WorldParams,
};
use hybrid_spec_core::hnsw::HnswParams;
use hybrid_spec_core::kinematics::{
    compute_percentile_bounds, curvature_radius_of, normalize, suite_bounds, FusedMetricParams, SdMode,
    TrajectoryPoint, LIBERO_SUITE_BOUNDS,
};
use hybrid_spec_core::retrieval::{l2_normalize, Collection, Payload};
use hybrid_spec_core::scheduler::{decide_sd, HybridConfig, Mode};
use hybrid_spec_core::verification::{
    accept_sequence, apply_feedback, offline_calibrate_skip, RelaxedAcceptance, UpdateDirection, VerifySkipState,
};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(elapsed: Duration, limit: Duration) -> Check {
    ensure!(elapsed < limit, "took {elapsed:.2?}, limit {limit:?}");
    Ok(format!("{elapsed:.2?}"))
}

fn quantization() -> Check {
    let start = Instant::now();
    let q = Quantizer::new(ActionSpaceBounds::uniform(-1.0, 1.0).unwrap(), 256).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let a: [f64; DOF] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        let back = q.dequantize_tokens(&q.tokens(&ActionSlice(a)).unwrap()).unwrap();
        for (x, y) in a.iter().zip(back.0) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure!(worst <= 2.0 / 255.0, "round-trip error {worst}");
    for b in 0..256u32 {
        let t = [b as Token; DOF];
        let again = q.tokens(&q.dequantize_tokens(&t).unwrap()).unwrap();
        ensure!(again == t, "bin {b} maps to {again:?}");
    }
    let time = within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("max round-trip error {worst:.5} <= {:.5}; 256 bins idempotent; {time}", 2.0 / 255.0))
}

/// Variance-of-radii minimizer by zooming grid search over in-plane centers.
fn grid_radius(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len() as f64;
    let dists = |c: [f64; 2]| pts.iter().map(move |p| (p[0] - c[0]).hypot(p[1] - c[1]));
    let cost = |c: [f64; 2]| {
        let mu = dists(c).sum::<f64>() / n;
        dists(c).map(|d| (d - mu) * (d - mu)).sum::<f64>()
    };
    let mut center = [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
    let mut half = 1.0;
    const G: i32 = 10;
    while half > 1e-13 {
        let step = half / G as f64;
        let mut best = (f64::INFINITY, center);
        for i in -G..=G {
            for j in -G..=G {
                let c = [center[0] + i as f64 * step, center[1] + j as f64 * step];
                let v = cost(c);
                if v < best.0 {
                    best = (v, c);
                }
            }
        }
        center = best.1;
        half = 3.0 * step;
    }
    dists(center).sum::<f64>() / n
}

fn circle_fit() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let r = rng.random_range(0.01..=0.5);
        let span = rng.random_range(1.0..6.0);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        // Random plane through a random center.
        let n = l2_normalize(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0)]).unwrap();
        let u = l2_normalize(&[n[1], -n[0], 0.0]).unwrap();
        let v = [n[1] * u[2] - n[2] * u[1], n[2] * u[0] - n[0] * u[2], n[0] * u[1] - n[1] * u[0]];
        let c: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let mut window = Vec::new();
        let mut plane = Vec::new();
        for i in 0..15 {
            let t = phase + span * i as f64 / 14.0;
            let (a, b) = (r * t.cos(), r * t.sin());
            window.push(std::array::from_fn(|k| c[k] + a * u[k] + b * v[k]));
            plane.push([a, b]);
        }
        let ours = curvature_radius_of(&window, 1.0).map_err(|e| e.to_string())?;
        let oracle = grid_radius(&plane);
        ensure!((oracle - r).abs() <= 1e-5 * r, "case {case}: oracle {oracle} vs truth {r}");
        ensure!((ours - r).abs() <= 1e-5 * r, "case {case}: fit {ours} vs truth {r}");
        worst = worst.max((ours - r).abs() / r);
    }
    let time = within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("200 circles, worst relative error {worst:.2e}, grid oracle agrees; {time}"))
}

fn normalization_fixture() -> Check {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/libero_bounds.json");
    let table = load_bounds(&path).map_err(|e| e.to_string())?;
    let goal = table.get("libero_goal").ok_or("libero_goal missing from fixture")?;
    ensure!(Some(goal) == LIBERO_SUITE_BOUNDS.iter().find(|(n, _)| *n == "libero_goal").map(|(_, b)| b), "fixture differs from table");
    let hi = normalize(0.123381, goal.d_min, goal.d_max95).map_err(|e| e.to_string())?.value;
    let lo = normalize(0.000009, goal.d_min, goal.d_max95).map_err(|e| e.to_string())?.value;
    ensure!(hi == 1.0 && lo == 0.0, "normalize gave {hi} and {lo}");
    let samples: Vec<f64> = (1..=100).map(f64::from).collect();
    let p = compute_percentile_bounds(&samples).map_err(|e| e.to_string())?;
    ensure!(p == (1.0, 95.0), "percentiles {p:?}");
    Ok("normalize(0.123381) = 1.0, normalize(0.000009) = 0.0, percentiles of 1..100 = (1, 95)".into())
}

fn bias_accepts(kind: GroupKind, bias: &[u32]) -> bool {
    let verify: Vec<Token> = vec![100; bias.len()];
    let draft: Vec<Token> = bias.iter().enumerate().map(|(i, b)| if i % 2 == 0 { 100 + *b as Token } else { 100 - *b as Token }).collect();
    accept_sequence(kind, &draft, &verify, &RelaxedAcceptance::default()).unwrap()
}

fn relaxed_acceptance() -> Check {
    let pos = GroupKind::Position;
    ensure!(bias_accepts(pos, &[15, 15, 0]), "(15,15,0) rejected");
    ensure!(!bias_accepts(pos, &[16, 0, 0]), "(16,0,0) accepted");
    ensure!(!bias_accepts(pos, &[11, 10, 10]), "(11,10,10) accepted");
    ensure!(!bias_accepts(GroupKind::Gripper, &[1]), "gripper bias 1 accepted");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let b: [u32; 3] = std::array::from_fn(|_| rng.random_range(0..=30));
        let lower: [u32; 3] = std::array::from_fn(|i| rng.random_range(0..=b[i]));
        let kind = if rng.random() { GroupKind::Position } else { GroupKind::Rotation };
        ensure!(!bias_accepts(kind, &b) || bias_accepts(kind, &lower), "monotonicity broken: {b:?} vs {lower:?}");
    }
    Ok("fixture vectors as expected; monotone over 10^4 random bias vectors".into())
}

fn brute_top_k(vectors: &[Vec<f64>], q: &[f64], k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = vectors.iter().enumerate().map(|(i, v)| (v.iter().zip(q).map(|(a, b)| a * b).sum(), i)).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|x| x.1).collect()
}

fn retrieval() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let dim = 32;
    let unit = |rng: &mut ChaCha8Rng| l2_normalize(&(0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
    let vectors: Vec<Vec<f64>> = (0..1000).map(|_| unit(&mut rng)).collect();
    let mut c = Collection::new("acceptance", dim).unwrap();
    for (i, v) in vectors.iter().enumerate() {
        let p = Payload {
            dataset_name: "acceptance".into(),
            episode_idx: 0,
            step_idx: i as u64,
            current_action: [0.0; 7],
            next_actions: [[0.0; 7]; 3],
            language_instruction: String::new(),
        };
        c.insert(v.clone(), p, None).unwrap();
    }
    let queries: Vec<Vec<f64>> = (0..100).map(|_| unit(&mut rng)).collect();
    for q in &queries {
        for k in [1, 3, 5, 10] {
            let got: Vec<usize> = c.search_exact(q, k).unwrap().iter().map(|h| h.record_id).collect();
            ensure!(got == brute_top_k(&vectors, q, k), "exact top-{k} differs from the full scan");
        }
    }
    let params = HnswParams::default();
    ensure!(params.m == 16 && params.ef_construct == 100, "unexpected HNSW defaults");
    c.build_hnsw(params).unwrap();
    let mut found = 0;
    for q in &queries {
        let truth = brute_top_k(&vectors, q, 5);
        found += c.search(q, 5).unwrap().iter().filter(|h| truth.contains(&h.record_id)).count();
    }
    let recall = found as f64 / 500.0;
    ensure!(recall >= 0.95, "HNSW recall@5 {recall}");
    Ok(format!("exact top-k equals the full scan for k in {{1,3,5,10}}; HNSW recall@5 = {recall:.3}"))
}

fn lossless() -> Check {
    let start = Instant::now();
    let mut cfg = EngineConfig::default();
    cfg.acceptance = RelaxedAcceptance::strict();
    cfg.skip.enabled = false;
    cfg.env.eval_trials = 25;
    let store = build_database(&record_demonstrations(&cfg).unwrap(), cfg.retrieval.dim).unwrap();
    let (cfg, store) = (&cfg, &store);
    let pairs: Vec<(usize, usize)> =
        (0..cfg.env.tasks.len()).flat_map(|task| (0..cfg.env.eval_trials).map(move |trial| (task, trial))).collect();
    let mismatches: Vec<String> = pairs
        .par_iter()
        .flat_map_iter(|&(task, trial)| {
            let ar = run_trial(&EngineConfig { mode: Mode::Autoregressive, ..cfg.clone() }, task, trial, None, None, 1.0).unwrap();
            [Mode::PureDrafter, Mode::PureRetrieval].into_iter().filter_map(move |mode| {
                let r = run_trial(&EngineConfig { mode, ..cfg.clone() }, task, trial, Some(store), None, 1.0).unwrap();
                (r.tokens != ar.tokens).then(|| format!("{mode} diverges from AR on task {task} trial {trial}"))
            }).collect::<Vec<_>>()
        })
        .collect();
    ensure!(mismatches.is_empty(), "{}", mismatches.join("; "));
    let episodes = pairs.len();
    let time = within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("{episodes} episodes: drafter and retrieval token streams equal AR; {time}"))
}

fn replay_closure() -> Check {
    let start = Instant::now();
    let mut cfg = EngineConfig::default();
    cfg.env.eval_perturbation = 0.0;
    ensure!(cfg.env.eval_trials <= cfg.env.demo_episodes, "replay needs every evaluated instance recorded");
    let store = build_database(&record_demonstrations(&cfg).unwrap(), cfg.retrieval.dim).unwrap();
    let calib = calibrate_store(&store, cfg.skip.t, cfg.skip.delta).map_err(|e| e.to_string())?;
    let eval = evaluate(&cfg, Some(&store), Some(&calib), 4).map_err(|e| e.to_string())?;
    let a = &eval.report.aggregate;
    ensure!(a.success_rate == 1.0, "SR {}", a.success_rate);
    ensure!(a.mean_al >= 4.0, "mean AL {}", a.mean_al);
    ensure!(a.speedup >= 2.0, "speedup {}", a.speedup);
    let time = within(start.elapsed(), Duration::from_secs(300))?;
    Ok(format!("SR {:.2}, mean AL {:.2}, speedup {:.2}x over {} episodes; {time}", a.success_rate, a.mean_al, a.speedup, a.episodes))
}

/// Long straight transports and spiral fine approaches.
fn boundary_world(cfg: &EnvConfig, episode: usize) -> World {
    World::new(cfg.world, Quantizer::default(), cfg.demo_instance(0, episode), 64).unwrap()
}

fn write_labelled_csv(path: &Path, positions: &[[f64; 3]], phases: &[Phase]) {
    let mut s = String::from("x,y,z,label\n");
    for (p, ph) in positions.iter().zip(phases) {
        let label = match ph {
            Phase::Transport => "retrieval_sd",
            Phase::Approach => "drafter_sd",
            _ => "",
        };
        writeln!(s, "{},{},{},{label}", p[0], p[1], p[2]).unwrap();
    }
    std::fs::write(path, s).unwrap();
}

fn hybrid_boundary() -> Check {
    let env = EnvConfig {
        tasks: vec![TaskSpec {
            id: "long_reach".into(),
            instruction: "carry the block across the table".into(),
            start: [0.0, 0.0, 0.3],
            object: [1.2, 0.6, 0.02],
            goal: [0.0, 1.4, 0.1],
            yaw: 0.2,
        }],
        world: WorldParams { approach_radius: 0.06, v_slow: 0.0015, inward_fraction: 0.25, ..WorldParams::default() },
        ..EnvConfig::default()
    };
    let demos: Vec<_> = (0..10).map(|e| record_episode(&boundary_world(&env, e), 2000, e)).collect();
    ensure!(demos.iter().all(|d| d.success), "scripted episodes did not finish");
    let metric = FusedMetricParams::default();
    let trajectories: Vec<Vec<[f64; 3]>> = demos.iter().map(|d| d.positions.clone()).collect();
    let bounds = suite_bounds(&trajectories, metric.window, metric.r_cap).map_err(|e| e.to_string())?;

    // θ from the analyze-traj sweep over the first five episodes.
    let dir = tempfile::tempdir().unwrap();
    let mut labelled = Vec::new();
    for d in &demos[..5] {
        let path = dir.path().join(format!("episode{}.csv", d.episode_idx));
        write_labelled_csv(&path, &d.positions, &d.phases);
        labelled.push(load_trajectory(&path).map_err(|e| e.to_string())?);
    }
    let swept = sweep(&labelled, &metric, &bounds).map_err(|e| e.to_string())?;
    let cfg = HybridConfig { metric: FusedMetricParams { threshold: swept.threshold, ..metric }, bounds, ..HybridConfig::default() };

    // Held-out episodes: the engine's per-step decision on each warm step.
    let (mut straight, mut curved) = ((0, 0), (0, 0));
    for d in &demos[5..] {
        let points: Vec<TrajectoryPoint> = d.positions.iter().enumerate().map(|(i, p)| TrajectoryPoint::new(*p, i)).collect();
        for i in metric.window - 1..points.len() {
            let (mode, _) = decide_sd(&points[..=i], &cfg);
            let tally = match d.phases[i] {
                Phase::Transport => &mut straight,
                Phase::Approach => &mut curved,
                _ => continue,
            };
            tally.1 += 1;
            let want = if d.phases[i] == Phase::Transport { SdMode::RetrievalSd } else { SdMode::DrafterSd };
            if mode == want {
                tally.0 += 1;
            }
        }
    }
    let frac = |t: (usize, usize)| t.0 as f64 / t.1 as f64;
    ensure!(straight.1 > 0 && curved.1 > 0, "missing phases");
    ensure!(frac(straight) >= 0.9 && frac(curved) >= 0.9, "straight {straight:?}, curved {curved:?}");
    Ok(format!(
        "theta {:.2}; straight {}/{} retrieval_sd ({:.1}%), curved {}/{} drafter_sd ({:.1}%)",
        swept.threshold,
        straight.0,
        straight.1,
        100.0 * frac(straight),
        curved.0,
        curved.1,
        100.0 * frac(curved)
    ))
}

fn skip_arithmetic() -> Check {
    let n = 30;
    let features: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut v = vec![0.0; n + 100];
            v[i..i + 100].iter_mut().for_each(|x| *x = 1.0);
            v
        })
        .collect();
    let offline = offline_calibrate_skip(&[features], 0.9).map_err(|e| e.to_string())?;
    ensure!(offline == (0.91, 9), "offline fixture gave {offline:?}");
    let state = VerifySkipState::new(0.8, 0.9, 5, 0.1, UpdateDirection::AsWritten).unwrap();
    let next = apply_feedback(&state, true, 0.05);
    ensure!((next.min_s, next.o_dist) == (0.905, 6), "online update gave ({}, {})", next.min_s, next.o_dist);
    Ok("offline (0.91, 9); online success update (0.905, 6)".into())
}

fn ablation() -> Check {
    let base = EngineConfig::default();
    let store = build_database(&record_demonstrations(&base).unwrap(), base.retrieval.dim).unwrap();
    let calib = calibrate_store(&store, base.skip.t, base.skip.delta).map_err(|e| e.to_string())?;
    let run = |relaxed: bool, skip: bool| {
        let mut cfg = base.clone();
        cfg.acceptance.enabled = relaxed;
        cfg.skip.enabled = skip;
        let c = skip.then_some(&calib);
        evaluate(&cfg, Some(&store), c, 4).map(|e| e.report.aggregate).map_err(|e| e.to_string())
    };
    let only = run(false, false)?;
    let skip = run(false, true)?;
    let full = run(true, true)?;
    ensure!(full.speedup > skip.speedup && skip.speedup > only.speedup, "speedups {:.3} / {:.3} / {:.3}", only.speedup, skip.speedup, full.speedup);
    let drop = |a: f64, b: f64| 100.0 * (a - b);
    ensure!(drop(only.success_rate, skip.success_rate) <= 5.0, "SR drop hybrid -> +skip");
    ensure!(drop(skip.success_rate, full.success_rate) <= 5.0, "SR drop +skip -> +relaxed");
    Ok(format!(
        "speedup {:.2}x < {:.2}x < {:.2}x; SR {:.2} / {:.2} / {:.2}",
        only.speedup, skip.speedup, full.speedup, only.success_rate, skip.success_rate, full.success_rate
    ))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("quantization suite", quantization),
        ("circle-fit oracle", circle_fit),
        ("normalization fixture", normalization_fixture),
        ("relaxed-acceptance fixture", relaxed_acceptance),
        ("retrieval correctness", retrieval),
        ("lossless equivalence", lossless),
        ("replay-closure speedup", replay_closure),
        ("hybrid-boundary behavior", hybrid_boundary),
        ("verify-skip arithmetic", skip_arithmetic),
        ("ablation ordering", ablation),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
