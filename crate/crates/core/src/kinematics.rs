//! Windowed trajectory kinematics: curvature radius, cumulative displacement,
//! percentile-clipped min-max normalization and the fused metric that picks
//! the drafting mode.
//!
//! A window of `w` positions is centered on its mean and projected onto the
//! plane of its two dominant principal axes. A circle center is fitted there by
//! minimizing the variance of point-to-center distances; the curvature radius is
//! the mean distance to that center, capped at `r_cap`. The displacement is the
//! direction-free path length through the window.

use alloc::vec::Vec;
use core::fmt;

use crate::linalg::{dist2, dist3, solve3, symmetric_eigen3};
use crate::{Error, Result};

/// Spread (max pairwise distance) below which a window counts as stationary.
pub const DEGENERATE_SPREAD: f64 = 1e-9;
const FIT_TOL: f64 = 1e-10;
const FIT_MAX_ITERS: usize = 100;
/// Ratio of the minor to major in-plane variance under which a window is a line.
const COLLINEAR_RATIO: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrajectoryPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub step_index: usize,
}

impl TrajectoryPoint {
    pub fn new(pos: [f64; 3], step_index: usize) -> Self {
        Self { x: pos[0], y: pos[1], z: pos[2], step_index }
    }

    pub fn pos(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowFeatures {
    pub radius: f64,
    pub displacement: f64,
    pub fused: f64,
    pub window: usize,
}

/// Per-suite normalization bounds: minimum and 95th percentile of each indicator.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct NormalizationBounds {
    pub d_min: f64,
    pub d_max95: f64,
    pub r_min: f64,
    pub r_max95: f64,
}

impl NormalizationBounds {
    pub fn validate(&self) -> Result<()> {
        let all = [self.d_min, self.d_max95, self.r_min, self.r_max95];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("normalization bounds must be finite and nonnegative"));
        }
        if self.d_min > self.d_max95 || self.r_min > self.r_max95 {
            return Err(Error::invalid("normalization lower bound exceeds its 95th percentile"));
        }
        Ok(())
    }
}

impl Default for NormalizationBounds {
    /// Bounds of the built-in toy suite, profiled over its default
    /// demonstrations with `w = 15` and `r_cap = 1`.
    fn default() -> Self {
        TOY_SUITE_BOUNDS
    }
}

/// Profiled bounds of the built-in toy suite (see `harness::profile_bounds`).
pub const TOY_SUITE_BOUNDS: NormalizationBounds = NormalizationBounds {
    d_min: 0.023045231718069048,
    d_max95: 0.1406714164835082,
    r_min: 0.0061691673821638185,
    r_max95: 1.0,
};

/// Published per-suite bounds for the four LIBERO suites.
pub const LIBERO_SUITE_BOUNDS: [(&str, NormalizationBounds); 4] = [
    ("libero_goal", NormalizationBounds { d_min: 0.000009, d_max95: 0.123381, r_min: 0.000001, r_max95: 0.014989 }),
    ("libero_spatial", NormalizationBounds { d_min: 0.000027, d_max95: 0.128629, r_min: 0.000019, r_max95: 0.015654 }),
    ("libero_object", NormalizationBounds { d_min: 0.000098, d_max95: 0.116458, r_min: 0.000010, r_max95: 0.014151 }),
    ("libero_long", NormalizationBounds { d_min: 0.000008, d_max95: 0.102298, r_min: 0.000001, r_max95: 0.012479 }),
];

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct FusedMetricParams {
    pub alpha: f64,
    pub window: usize,
    pub threshold: f64,
    pub r_cap: f64,
}

impl Default for FusedMetricParams {
    fn default() -> Self {
        Self { alpha: 0.5, window: 15, threshold: 0.5, r_cap: 1.0 }
    }
}

impl FusedMetricParams {
    /// Names of the offending fields, relative to the params object.
    pub fn invalid_fields(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        if !(0.0..=1.0).contains(&self.alpha) {
            bad.push("alpha");
        }
        if self.window < 3 {
            bad.push("window");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            bad.push("threshold");
        }
        if !(self.r_cap > 0.0 && self.r_cap.is_finite()) {
            bad.push("r_cap");
        }
        bad
    }
}

/// Drafting mode chosen for a decode round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SdMode {
    RetrievalSd,
    DrafterSd,
}

impl SdMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SdMode::RetrievalSd => "retrieval_sd",
            SdMode::DrafterSd => "drafter_sd",
        }
    }
}

impl fmt::Display for SdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_finite(points: &[[f64; 3]]) -> Result<()> {
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite trajectory coordinate"));
    }
    Ok(())
}

fn positions(points: &[TrajectoryPoint]) -> Vec<[f64; 3]> {
    points.iter().map(TrajectoryPoint::pos).collect()
}

/// Center a window on its mean and project it onto its top-2 principal axes.
pub fn project_window(points: &[TrajectoryPoint]) -> Result<Vec<[f64; 2]>> {
    project_positions(&positions(points))
}

pub fn project_positions(points: &[[f64; 3]]) -> Result<Vec<[f64; 2]>> {
    if points.len() < 3 {
        return Err(Error::InsufficientWindow { needed: 3, got: points.len() });
    }
    check_finite(points)?;
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for k in 0..3 {
            mean[k] += p[k] / n;
        }
    }
    let centered: Vec<[f64; 3]> = points.iter().map(|p| [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]]).collect();
    let mut cov = [[0.0; 3]; 3];
    for p in &centered {
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += p[i] * p[j];
            }
        }
    }
    let (_, axes) = symmetric_eigen3(cov);
    Ok(centered
        .iter()
        .map(|p| {
            let u = p[0] * axes[0][0] + p[1] * axes[0][1] + p[2] * axes[0][2];
            let v = p[0] * axes[1][0] + p[1] * axes[1][1] + p[2] * axes[1][2];
            [u, v]
        })
        .collect())
}

/// Result of the circle-center fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CircleFit {
    /// All points coincide (spread below [`DEGENERATE_SPREAD`]).
    Degenerate { centroid: [f64; 2] },
    /// Points are collinear; the best center lies at infinity.
    Line,
    Circle { center: [f64; 2], radius: f64 },
}

impl CircleFit {
    /// Fitted radius, with `Line` mapped to `r_cap` and everything capped.
    pub fn capped_radius(&self, r_cap: f64) -> f64 {
        match *self {
            CircleFit::Degenerate { .. } => 0.0,
            CircleFit::Line => r_cap,
            CircleFit::Circle { radius, .. } => radius.min(r_cap),
        }
    }
}

fn radii_cost(points: &[[f64; 2]], c: [f64; 2]) -> f64 {
    let n = points.len() as f64;
    let d: Vec<f64> = points.iter().map(|p| dist2(*p, c)).collect();
    let mu = d.iter().sum::<f64>() / n;
    d.iter().map(|di| (di - mu) * (di - mu)).sum()
}

/// Damped Gauss-Newton (Levenberg-Marquardt) on the variance of radii.
fn refine_center(points: &[[f64; 2]], start: [f64; 2]) -> [f64; 2] {
    let n = points.len() as f64;
    let mut c = start;
    let mut cost = radii_cost(points, c);
    let mut lambda = 1e-3;
    for _ in 0..FIT_MAX_ITERS {
        let d: Vec<f64> = points.iter().map(|p| dist2(*p, c)).collect();
        let mu = d.iter().sum::<f64>() / n;
        let units: Vec<[f64; 2]> = points
            .iter()
            .zip(&d)
            .map(|(p, &di)| if di > 0.0 { [(c[0] - p[0]) / di, (c[1] - p[1]) / di] } else { [0.0, 0.0] })
            .collect();
        let mut ubar = [0.0; 2];
        for u in &units {
            ubar[0] += u[0] / n;
            ubar[1] += u[1] / n;
        }
        let (mut a00, mut a01, mut a11, mut g0, mut g1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (u, di) in units.iter().zip(&d) {
            let j = [u[0] - ubar[0], u[1] - ubar[1]];
            let r = di - mu;
            a00 += j[0] * j[0];
            a01 += j[0] * j[1];
            a11 += j[1] * j[1];
            g0 += j[0] * r;
            g1 += j[1] * r;
        }
        let mut stepped = false;
        while lambda < 1e12 {
            let m00 = a00 * (1.0 + lambda) + 1e-300;
            let m11 = a11 * (1.0 + lambda) + 1e-300;
            let det = m00 * m11 - a01 * a01;
            if det <= 0.0 || !det.is_finite() {
                lambda *= 10.0;
                continue;
            }
            let dx = -(m11 * g0 - a01 * g1) / det;
            let dy = -(m00 * g1 - a01 * g0) / det;
            let cand = [c[0] + dx, c[1] + dy];
            let cand_cost = radii_cost(points, cand);
            if cand_cost.is_finite() && cand_cost < cost {
                c = cand;
                cost = cand_cost;
                lambda = (lambda * 0.1).max(1e-12);
                stepped = true;
                if libm::hypot(dx, dy) < FIT_TOL {
                    return c;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !stepped {
            break;
        }
    }
    c
}

/// Algebraic (Kasa) circle fit; `None` when the system is singular.
fn algebraic_center(points: &[[f64; 2]]) -> Option<[f64; 2]> {
    // x^2 + y^2 = 2a x + 2b y + c in least squares.
    let mut m = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for p in points {
        let row = [2.0 * p[0], 2.0 * p[1], 1.0];
        let z = p[0] * p[0] + p[1] * p[1];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += row[i] * row[j];
            }
            rhs[i] += row[i] * z;
        }
    }
    solve3(m, rhs).map(|s| [s[0], s[1]])
}

/// Fit the center minimizing the variance of point-to-center distances.
///
/// The damped Gauss-Newton search runs from the centroid and from the
/// algebraic fit, keeping whichever ends lower.
pub fn fit_circle_center(points: &[[f64; 2]]) -> Result<CircleFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientWindow { needed: 3, got: points.len() });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite point"));
    }
    let n = points.len() as f64;
    let mut centroid = [0.0; 2];
    for p in points {
        centroid[0] += p[0] / n;
        centroid[1] += p[1] / n;
    }
    let mut spread: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            spread = spread.max(dist2(*a, *b));
        }
    }
    if spread < DEGENERATE_SPREAD {
        return Ok(CircleFit::Degenerate { centroid });
    }
    // Work in centroid-relative coordinates for conditioning.
    let local: Vec<[f64; 2]> = points.iter().map(|p| [p[0] - centroid[0], p[1] - centroid[1]]).collect();
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &local {
        sxx += p[0] * p[0];
        sxy += p[0] * p[1];
        syy += p[1] * p[1];
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = libm::sqrt((0.25 * tr * tr - det).max(0.0));
    let major = 0.5 * tr + disc;
    let minor = (0.5 * tr - disc).max(0.0);
    if minor <= COLLINEAR_RATIO * major {
        return Ok(CircleFit::Line);
    }

    let mut best = refine_center(&local, [0.0, 0.0]);
    let mut best_cost = radii_cost(&local, best);
    if let Some(start) = algebraic_center(&local) {
        let c = refine_center(&local, start);
        let cost = radii_cost(&local, c);
        if cost < best_cost {
            best = c;
            best_cost = cost;
        }
    }
    let _ = best_cost;
    let radius = local.iter().map(|p| dist2(*p, best)).sum::<f64>() / n;
    if !radius.is_finite() {
        return Ok(CircleFit::Line);
    }
    Ok(CircleFit::Circle { center: [best[0] + centroid[0], best[1] + centroid[1]], radius })
}

/// Mean in-plane distance to the fitted center, capped at `r_cap`.
pub fn curvature_radius(points: &[TrajectoryPoint], r_cap: f64) -> Result<f64> {
    curvature_radius_of(&positions(points), r_cap)
}

pub fn curvature_radius_of(points: &[[f64; 3]], r_cap: f64) -> Result<f64> {
    let projected = project_positions(points)?;
    Ok(fit_circle_center(&projected)?.capped_radius(r_cap))
}

/// Sum of consecutive 3-D step lengths; direction is ignored.
pub fn cumulative_displacement(points: &[TrajectoryPoint]) -> Result<f64> {
    cumulative_displacement_of(&positions(points))
}

pub fn cumulative_displacement_of(points: &[[f64; 3]]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InsufficientWindow { needed: 2, got: points.len() });
    }
    check_finite(points)?;
    Ok(points.windows(2).map(|w| dist3(w[0], w[1])).sum())
}

/// Normalized value plus a flag for collapsed bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalized {
    pub value: f64,
    pub degenerate: bool,
}

/// `clip((x - lo) / (hi95 - lo), 0, 1)`; collapsed bounds give 0 and a flag.
pub fn normalize(x: f64, lo: f64, hi95: f64) -> Result<Normalized> {
    if !x.is_finite() || !lo.is_finite() || !hi95.is_finite() {
        return Err(Error::invalid("non-finite value in normalize"));
    }
    if lo > hi95 {
        return Err(Error::invalid("normalize: lower bound above upper bound"));
    }
    if lo == hi95 {
        return Ok(Normalized { value: 0.0, degenerate: true });
    }
    Ok(Normalized { value: ((x - lo) / (hi95 - lo)).clamp(0.0, 1.0), degenerate: false })
}

/// Minimum and nearest-rank 95th percentile of a sample list.
pub fn compute_percentile_bounds(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("percentile bounds of an empty sample list"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = libm::ceil(0.95 * n as f64) as usize;
    Ok((sorted[0], sorted[rank.max(1) - 1]))
}

pub fn fused_metric(r: f64, d: f64, params: &FusedMetricParams, bounds: &NormalizationBounds) -> Result<f64> {
    if r < 0.0 || d < 0.0 {
        return Err(Error::invalid("radius and displacement must be nonnegative"));
    }
    let nr = normalize(r, bounds.r_min, bounds.r_max95)?.value;
    let nd = normalize(d, bounds.d_min, bounds.d_max95)?.value;
    Ok((params.alpha * nr + (1.0 - params.alpha) * nd).clamp(0.0, 1.0))
}

/// Retrieval iff `f` strictly exceeds the threshold.
pub fn classify_segment(f: f64, threshold: f64) -> SdMode {
    if f > threshold {
        SdMode::RetrievalSd
    } else {
        SdMode::DrafterSd
    }
}

/// R, D and F over one window (the whole slice is the window).
pub fn window_features(
    points: &[TrajectoryPoint],
    params: &FusedMetricParams,
    bounds: &NormalizationBounds,
) -> Result<WindowFeatures> {
    let pos = positions(points);
    let radius = curvature_radius_of(&pos, params.r_cap)?;
    let displacement = cumulative_displacement_of(&pos)?;
    let fused = fused_metric(radius, displacement, params, bounds)?;
    Ok(WindowFeatures { radius, displacement, fused, window: points.len() })
}

/// Features of the trailing window ending at every index; `None` while fewer
/// than `w` points are available.
pub fn window_series(
    points: &[TrajectoryPoint],
    params: &FusedMetricParams,
    bounds: &NormalizationBounds,
) -> Result<Vec<Option<WindowFeatures>>> {
    let w = params.window;
    (0..points.len())
        .map(|i| if i + 1 < w { Ok(None) } else { window_features(&points[i + 1 - w..=i], params, bounds).map(Some) })
        .collect()
}

/// Raw R and D samples over every full sliding window of every trajectory.
pub fn raw_window_samples(trajectories: &[Vec<[f64; 3]>], w: usize, r_cap: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if w < 3 {
        return Err(Error::invalid("window must be at least 3"));
    }
    let mut radii = Vec::new();
    let mut disps = Vec::new();
    for traj in trajectories {
        for win in traj.windows(w) {
            radii.push(curvature_radius_of(win, r_cap)?);
            disps.push(cumulative_displacement_of(win)?);
        }
    }
    Ok((radii, disps))
}

/// Profile a suite: min / 95th percentile of windowed D and R.
pub fn suite_bounds(trajectories: &[Vec<[f64; 3]>], w: usize, r_cap: f64) -> Result<NormalizationBounds> {
    let (radii, disps) = raw_window_samples(trajectories, w, r_cap)?;
    let (d_min, d_max95) = compute_percentile_bounds(&disps)?;
    let (r_min, r_max95) = compute_percentile_bounds(&radii)?;
    Ok(NormalizationBounds { d_min, d_max95, r_min, r_max95 })
}

/// Outcome of a threshold sweep against labelled windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSweep {
    pub threshold: f64,
    pub balanced_accuracy: f64,
}

/// Sweep `theta` over `0, 1/steps, ..., 1` and keep the value maximizing the
/// balanced accuracy of `classify_segment` against the labels. Among equally
/// good thresholds the middle one is returned.
pub fn sweep_threshold(samples: &[(f64, SdMode)], steps: usize) -> Result<ThresholdSweep> {
    let positives = samples.iter().filter(|(_, l)| *l == SdMode::RetrievalSd).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 || steps == 0 {
        return Err(Error::invalid("threshold sweep needs samples of both labels"));
    }
    let mut scored = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let theta = i as f64 / steps as f64;
        let (mut tp, mut tn) = (0usize, 0usize);
        for &(f, label) in samples {
            match (classify_segment(f, theta), label) {
                (SdMode::RetrievalSd, SdMode::RetrievalSd) => tp += 1,
                (SdMode::DrafterSd, SdMode::DrafterSd) => tn += 1,
                _ => {}
            }
        }
        let acc = 0.5 * (tp as f64 / positives as f64 + tn as f64 / negatives as f64);
        scored.push((theta, acc));
    }
    let best = scored.iter().map(|s| s.1).fold(f64::MIN, f64::max);
    let ties: Vec<f64> = scored.iter().filter(|s| s.1 == best).map(|s| s.0).collect();
    Ok(ThresholdSweep { threshold: ties[ties.len() / 2], balanced_accuracy: best })
}
