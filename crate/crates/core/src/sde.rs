//! Euler–Maruyama simulation of dX = (σ/√ρ)(X)dW + b(X)dt.
//!
//! Steps are capped so the drift displacement stays a fixed fraction of the
//! distance to the origin, which keeps the singular drift of power weights
//! under control. Paths can be killed on leaving an annulus or a ball, and
//! every crossing (domain exit, explosion radius, target ball) is located by
//! linear interpolation inside the step. While a target ball is monitored,
//! steps shrink near it and the radius between steps is treated as a Brownian
//! bridge, so entries that happen between grid points are still counted.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forms::{CoefficientField, SdeCoefficients};
use crate::geometry::{check_dim, dot, norm, norm_sq};
use crate::rng::{fill_normal, stream};
use crate::stats::{mean_se, quantile_sorted, wilson, MeanSe, Proportion};

/// Near an unhit target the step is capped at (TARGET_STEP · (‖x‖ − ε))².
const TARGET_STEP: f64 = 0.1;
/// Floor of the target refinement under fixed stepping.
const TARGET_DT_FLOOR: f64 = 1e-10;

/// Note attached to batches started at the origin when d + α < 2.
pub const ORIGIN_HEURISTIC: &str = "origin-start: heuristic";

/// Step-size control for the Euler scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepPolicy {
    Fixed,
    /// Shrink the step so that ‖b(x)‖·dt ≤ θ·max(‖x‖, √dt_min), never below dt_min.
    Adaptive {
        theta: f64,
        dt_min: f64,
    },
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::Adaptive {
            theta: 0.1,
            dt_min: 1e-8,
        }
    }
}

/// Region a path lives in; leaving it kills the path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    #[default]
    Full,
    /// {1/k < ‖x‖ < k}
    Annulus { k: u32 },
    /// {‖x‖ < radius}
    Ball { radius: f64 },
}

impl Domain {
    pub fn contains(&self, x: &[f64]) -> bool {
        match *self {
            Domain::Full => x.iter().all(|v| v.is_finite()),
            Domain::Annulus { k } => {
                let r = norm(x);
                1.0 / (k as f64) < r && r < k as f64
            }
            Domain::Ball { radius } => norm(x) < radius,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Domain::Annulus { k } if k < 1 => Err(Error::param("domain.k", "must be at least 1")),
            Domain::Ball { radius } if !(radius > 0.0) => Err(Error::param("domain.radius", "must be positive")),
            _ => Ok(()),
        }
    }

    /// First fraction s ∈ [0, 1] at which x + s·dx leaves the domain.
    pub fn exit_fraction(&self, x: &[f64], dx: &[f64]) -> Option<f64> {
        self.exit_on(&Segment::new(x, dx))
    }

    fn exit_on(&self, seg: &Segment) -> Option<f64> {
        match *self {
            Domain::Full => None,
            Domain::Annulus { k } => {
                let (inner, outer) = (1.0 / k as f64, k as f64);
                let out = seg.leaves_ball(outer);
                let inn = if seg.min_norm(1.0) <= inner {
                    seg.crossing(inner)
                } else {
                    None
                };
                match (out, inn) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                }
            }
            Domain::Ball { radius } => seg.leaves_ball(radius),
        }
    }
}

/// The segment x + s·dx, s ∈ [0, 1], through its norms.
struct Segment {
    /// ‖dx‖²
    a: f64,
    /// ⟨x, dx⟩
    b: f64,
    /// ‖x‖²
    c0: f64,
}

impl Segment {
    fn new(x: &[f64], dx: &[f64]) -> Self {
        Segment {
            a: norm_sq(dx),
            b: dot(x, dx),
            c0: norm_sq(x),
        }
    }

    fn end_norm_sq(&self) -> f64 {
        self.c0 + 2.0 * self.b + self.a
    }

    /// First s ∈ [0, 1] where the norm equals r.
    fn crossing(&self, r: f64) -> Option<f64> {
        let c = self.c0 - r * r;
        if c == 0.0 {
            return Some(0.0);
        }
        if self.a == 0.0 {
            return None;
        }
        let disc = self.b * self.b - self.a * c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        // Outside the sphere the entry root is the smaller one; inside only the larger root is ahead.
        let s = if c > 0.0 {
            (-self.b - sq) / self.a
        } else {
            (-self.b + sq) / self.a
        };
        (0.0..=1.0).contains(&s).then_some(s)
    }

    /// Exit fraction from the open ball of radius r, for a start inside it.
    fn leaves_ball(&self, r: f64) -> Option<f64> {
        if self.end_norm_sq() < r * r {
            None
        } else {
            self.crossing(r)
        }
    }

    /// Smallest norm on s ∈ [0, s_end].
    fn min_norm(&self, s_end: f64) -> f64 {
        let s = if self.a == 0.0 {
            0.0
        } else {
            (-self.b / self.a).clamp(0.0, s_end)
        };
        (self.c0 + s * (2.0 * self.b + s * self.a)).max(0.0).sqrt()
    }
}

/// First s ∈ [0, 1] where ‖x + s·dx‖ = r.
pub fn sphere_crossing(x: &[f64], dx: &[f64], r: f64) -> Option<f64> {
    Segment::new(x, dx).crossing(r)
}

/// Ball B_ε(0) whose first entry is monitored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub radius: f64,
    /// Stop the path at the first entry.
    #[serde(default)]
    pub stop: bool,
}

/// Simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    #[serde(default)]
    pub policy: StepPolicy,
    /// Replace b by b/(1 + dt‖b‖).
    #[serde(default)]
    pub taming: bool,
    #[serde(default)]
    pub domain: Domain,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
    /// Record every `record_stride`-th step; 0 keeps only the start and the end.
    #[serde(default)]
    pub record_stride: usize,
    /// Times at which the state is stored exactly. The horizon is always added.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default)]
    pub target: Option<Target>,
}

fn default_r_max() -> f64 {
    1e6
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        let cfg = SimConfig {
            horizon,
            dt,
            policy: StepPolicy::default(),
            taming: false,
            domain: Domain::Full,
            r_max: default_r_max(),
            record_stride: 0,
            snapshot_times: Vec::new(),
            target: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_policy(mut self, policy: StepPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_taming(mut self, taming: bool) -> Self {
        self.taming = taming;
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_r_max(mut self, r_max: f64) -> Self {
        self.r_max = r_max;
        self
    }

    pub fn with_record_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_snapshots(mut self, times: &[f64]) -> Self {
        self.snapshot_times = times.to_vec();
        self
    }

    pub fn with_target(mut self, radius: f64, stop: bool) -> Self {
        self.target = Some(Target { radius, stop });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::param("horizon", "must be positive and finite"));
        }
        if !(self.dt > 0.0 && self.dt <= self.horizon) {
            return Err(Error::param("dt", format!("must lie in (0, horizon], got {}", self.dt)));
        }
        if let StepPolicy::Adaptive { theta, dt_min } = self.policy {
            if !(theta > 0.0 && theta < 1.0) {
                return Err(Error::param("theta", "must lie in (0, 1)"));
            }
            if !(dt_min > 0.0 && dt_min <= self.dt) {
                return Err(Error::param("dt_min", "must lie in (0, dt]"));
            }
        }
        if !(self.r_max > 0.0) {
            return Err(Error::param("r_max", "must be positive"));
        }
        if let Some(t) = self
            .snapshot_times
            .iter()
            .find(|t| !(**t >= 0.0 && **t <= self.horizon))
        {
            return Err(Error::param("snapshot_times", format!("{t} lies outside [0, horizon]")));
        }
        if let Some(target) = &self.target {
            if !(target.radius > 0.0) {
                return Err(Error::param("target.radius", "must be positive"));
            }
        }
        self.domain.validate()
    }

    /// Sorted, deduplicated snapshot times including the horizon.
    pub fn marks(&self) -> Vec<f64> {
        let mut m = self.snapshot_times.clone();
        m.push(self.horizon);
        m.sort_by(f64::total_cmp);
        m.dedup();
        m
    }
}

/// How a path ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Terminal {
    RanToHorizon,
    ExitedDomain { t: f64, x: Vec<f64> },
    ExceededRmax { t: f64, x: Vec<f64> },
    HitTarget { t: f64, x: Vec<f64> },
}

impl Terminal {
    pub fn time(&self) -> Option<f64> {
        match self {
            Terminal::RanToHorizon => None,
            Terminal::ExitedDomain { t, .. } | Terminal::ExceededRmax { t, .. } | Terminal::HitTarget { t, .. } => {
                Some(*t)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub x: Vec<f64>,
}

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub stream: u64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub terminal: Terminal,
    pub snapshots: Vec<Snapshot>,
    /// Time of first entry into the monitored target ball.
    pub first_hit: Option<f64>,
    /// Smallest ‖X‖ seen along the piecewise-linear path.
    pub min_norm: f64,
    pub steps: u64,
}

impl PathSample {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("a path always holds its start")
    }

    pub fn snapshot(&self, t: f64) -> Option<&[f64]> {
        self.snapshots.iter().find(|s| s.t == t).map(|s| s.x.as_slice())
    }
}

/// One Euler–Maruyama step.
///
/// `dw` is an N(0, dt·I) increment; when the adaptive policy shrinks the step
/// it is rescaled by √(dt_used/dt). Returns the new state and the step used.
///
/// ```
/// use wdiff::forms::{DiffusionField, SdeCoefficients};
/// use wdiff::sde::{em_step, StepPolicy};
///
/// let c = SdeCoefficients::new(DiffusionField::isotropic_power(1.0, 3).unwrap());
/// let (x, dt) = em_step(&c, &[1.0, 0.0, 0.0], 0.01, &[0.0; 3], StepPolicy::default(), false).unwrap();
/// assert!((x[0] - 1.005).abs() < 1e-15 && dt == 0.01);
/// ```
pub fn em_step(
    c: &SdeCoefficients,
    x: &[f64],
    dt: f64,
    dw: &[f64],
    policy: StepPolicy,
    taming: bool,
) -> Result<(Vec<f64>, f64)> {
    check_dim(x, c.dim())?;
    check_dim(dw, c.dim())?;
    let mut scratch = Scratch::new(c.dim());
    let mut out = vec![0.0; c.dim()];
    let mut dw = dw.to_vec();
    let dt_used = scratch.step(c, x, dt, &mut dw, policy, taming, false, &mut out)?;
    Ok((out, dt_used))
}

struct Scratch {
    drift: Vec<f64>,
    noise: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Scratch {
            drift: vec![0.0; d],
            noise: vec![0.0; d],
        }
    }

    /// Writes the new state into `out` and returns dt_used; `dw` is rescaled in place.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        c: &SdeCoefficients,
        x: &[f64],
        dt: f64,
        dw: &mut [f64],
        policy: StepPolicy,
        taming: bool,
        skip_drift: bool,
        out: &mut [f64],
    ) -> Result<f64> {
        if skip_drift {
            self.drift.iter_mut().for_each(|v| *v = 0.0);
        } else {
            c.drift_into(x, &mut self.drift)?;
        }
        let mut b_norm = norm(&self.drift);
        if taming && b_norm > 0.0 {
            let f = 1.0 / (1.0 + dt * b_norm);
            self.drift.iter_mut().for_each(|v| *v *= f);
            b_norm *= f;
        }
        let mut dt_used = dt;
        let mut drift_scale = 1.0;
        if let StepPolicy::Adaptive { theta, dt_min } = policy {
            let cap = theta * norm(x).max(dt_min.sqrt());
            if b_norm * dt > cap {
                dt_used = (cap / b_norm).max(dt_min).min(dt);
                if b_norm * dt_used > cap {
                    drift_scale = cap / (b_norm * dt_used);
                }
                let s = (dt_used / dt).sqrt();
                dw.iter_mut().for_each(|v| *v *= s);
            }
        }
        c.diffuse_into(x, dw, &mut self.noise)?;
        let h = dt_used * drift_scale;
        for i in 0..x.len() {
            out[i] = x[i] + self.noise[i] + self.drift[i] * h;
        }
        Ok(dt_used)
    }
}

/// Whether the radius, as a Brownian bridge between the step's endpoints,
/// dips below `eps`; returns the fraction of the step at which it is counted.
fn bridge_entry<R: Rng>(
    c: &SdeCoefficients,
    x: &[f64],
    y: &[f64],
    eps: f64,
    dt: f64,
    rng: &mut R,
) -> Result<Option<f64>> {
    let (g0, g1) = (norm(x) - eps, norm(y) - eps);
    if !(g0 > 0.0 && g1 > 0.0) {
        return Ok(None);
    }
    // Cheap rejection with the largest possible radial variance.
    let lambda = c.field().lambda();
    if 2.0 * g0 * g1 / (lambda * dt) > 40.0 {
        return Ok(None);
    }
    let q = radial_variance(c, x)?;
    let p = (-2.0 * g0 * g1 / (q * dt)).exp();
    if rng.random::<f64>() < p {
        Ok(Some(g0 / (g0 + g1)))
    } else {
        Ok(None)
    }
}

/// ⟨(A/ρ)(x) x̂, x̂⟩, the rate of the quadratic variation of ‖X‖ at x.
fn radial_variance(c: &SdeCoefficients, x: &[f64]) -> Result<f64> {
    if c.unit_dispersion() {
        return Ok(1.0);
    }
    let d = x.len();
    let r2 = norm_sq(x);
    if r2 == 0.0 {
        return Ok(c.field().lambda());
    }
    let m = c.field().normalized_matrix(x)?;
    let mut q = 0.0;
    for i in 0..d {
        for j in 0..d {
            q += x[i] * m[i * d + j] * x[j];
        }
    }
    Ok(q / r2)
}

fn lerp(x: &[f64], y: &[f64], s: f64) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a + s * (b - a)).collect()
}

/// Simulate one path with the RNG stream `(seed, stream_id)`.
pub fn simulate_path(
    c: &SdeCoefficients,
    x0: &[f64],
    cfg: &SimConfig,
    seed: u64,
    stream_id: u64,
) -> Result<PathSample> {
    cfg.validate()?;
    check_dim(x0, c.dim())?;
    run_path(c, x0, cfg, &cfg.marks(), seed, stream_id)
}

fn run_path(
    c: &SdeCoefficients,
    x0: &[f64],
    cfg: &SimConfig,
    marks: &[f64],
    seed: u64,
    stream_id: u64,
) -> Result<PathSample> {
    let d = x0.len();
    let mut rng = stream(seed, stream_id);
    let mut path = PathSample {
        stream: stream_id,
        times: vec![0.0],
        states: vec![x0.to_vec()],
        terminal: Terminal::RanToHorizon,
        snapshots: Vec::new(),
        first_hit: None,
        min_norm: norm(x0),
        steps: 0,
    };
    if !cfg.domain.contains(x0) {
        path.terminal = Terminal::ExitedDomain { t: 0.0, x: x0.to_vec() };
        return Ok(path);
    }
    if let Some(target) = cfg.target {
        if norm(x0) <= target.radius {
            path.first_hit = Some(0.0);
            if target.stop {
                path.terminal = Terminal::HitTarget { t: 0.0, x: x0.to_vec() };
                return Ok(path);
            }
        }
    }

    let mut x = x0.to_vec();
    let mut next = vec![0.0; d];
    let mut dx = vec![0.0; d];
    let mut dw = vec![0.0; d];
    let mut scratch = Scratch::new(d);
    let mut t = 0.0;
    let mut mark_idx = 0;
    while marks.get(mark_idx).is_some_and(|m| *m <= 0.0) {
        path.snapshots.push(Snapshot { t: 0.0, x: x.clone() });
        mark_idx += 1;
    }
    let origin_start = norm_sq(x0) == 0.0;

    while mark_idx < marks.len() {
        let mark = marks[mark_idx];
        let remaining = mark - t;
        let mut dt_nom = if remaining <= cfg.dt * (1.0 + 1e-9) {
            remaining
        } else {
            cfg.dt
        };
        if let (Some(tg), None) = (cfg.target, path.first_hit) {
            let floor = match cfg.policy {
                StepPolicy::Adaptive { dt_min, .. } => dt_min,
                StepPolicy::Fixed => TARGET_DT_FLOOR,
            };
            let cap = (TARGET_STEP * (norm(&x) - tg.radius)).powi(2).max(floor);
            dt_nom = dt_nom.min(cap);
        }
        fill_normal(&mut rng, dt_nom, &mut dw);
        let skip_drift = origin_start && path.steps == 0;
        let dt_used = scratch.step(c, &x, dt_nom, &mut dw, cfg.policy, cfg.taming, skip_drift, &mut next)?;
        path.steps += 1;
        let t_next = if dt_used == dt_nom && dt_nom == remaining {
            mark
        } else {
            t + dt_used
        };

        if !next.iter().all(|v| v.is_finite()) {
            path.terminal = Terminal::ExceededRmax {
                t: t_next,
                x: x.clone(),
            };
            path.times.push(t_next);
            path.states.push(x.clone());
            return Ok(path);
        }
        for i in 0..d {
            dx[i] = next[i] - x[i];
        }

        // Earliest event inside this step.
        let seg = Segment::new(&x, &dx);
        let exit = cfg.domain.exit_on(&seg);
        let blowup = seg.leaves_ball(cfg.r_max);
        let entry = match (cfg.target, path.first_hit) {
            (Some(tg), None) if seg.min_norm(1.0) <= tg.radius => seg.crossing(tg.radius),
            (Some(tg), None) => bridge_entry(c, &x, &next, tg.radius, t_next - t, &mut rng)?,
            _ => None,
        };
        let kill = match (exit, blowup) {
            (Some(a), Some(b)) if b < a => Some((b, false)),
            (Some(a), _) => Some((a, true)),
            (None, Some(b)) => Some((b, false)),
            (None, None) => None,
        };
        if let Some(s_hit) = entry.filter(|s| kill.is_none_or(|(k, _)| *s <= k)) {
            let te = t + s_hit * (t_next - t);
            path.first_hit = Some(te);
            let radius = cfg.target.map_or(0.0, |tg| tg.radius);
            path.min_norm = path.min_norm.min(seg.min_norm(s_hit)).min(radius);
            if cfg.target.is_some_and(|tg| tg.stop) {
                let mut xe = lerp(&x, &next, s_hit);
                // Entries found by the bridge test lie between the grid points; report them on the sphere.
                let r = norm(&xe);
                if r > radius {
                    xe.iter_mut().for_each(|v| *v *= radius / r);
                }
                path.times.push(te);
                path.states.push(xe.clone());
                path.terminal = Terminal::HitTarget { t: te, x: xe };
                return Ok(path);
            }
        }
        if let Some((s_kill, is_exit)) = kill {
            path.min_norm = path.min_norm.min(seg.min_norm(s_kill));
            let te = t + s_kill * (t_next - t);
            let xe = lerp(&x, &next, s_kill);
            path.times.push(te);
            path.states.push(xe.clone());
            path.terminal = if is_exit {
                Terminal::ExitedDomain { t: te, x: xe }
            } else {
                Terminal::ExceededRmax { t: te, x: xe }
            };
            return Ok(path);
        }
        path.min_norm = path.min_norm.min(seg.min_norm(1.0));

        std::mem::swap(&mut x, &mut next);
        t = t_next;
        let at_mark = t == mark;
        if at_mark {
            path.snapshots.push(Snapshot { t, x: x.clone() });
            mark_idx += 1;
        }
        let last = mark_idx == marks.len();
        if last || (cfg.record_stride > 0 && path.steps.is_multiple_of(cfg.record_stride as u64)) {
            path.times.push(t);
            path.states.push(x.clone());
        }
    }
    Ok(path)
}

/// Number of paths per terminal event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventCounts {
    pub ran_to_horizon: usize,
    pub exited_domain: usize,
    pub exceeded_rmax: usize,
    pub hit_target: usize,
}

impl EventCounts {
    pub fn total(&self) -> usize {
        self.ran_to_horizon + self.exited_domain + self.exceeded_rmax + self.hit_target
    }

    fn add(&mut self, t: &Terminal) {
        match t {
            Terminal::RanToHorizon => self.ran_to_horizon += 1,
            Terminal::ExitedDomain { .. } => self.exited_domain += 1,
            Terminal::ExceededRmax { .. } => self.exceeded_rmax += 1,
            Terminal::HitTarget { .. } => self.hit_target += 1,
        }
    }

    fn of(paths: &[PathSample]) -> Self {
        let mut c = EventCounts::default();
        paths.iter().for_each(|p| c.add(&p.terminal));
        c
    }
}

/// N independent paths sharing a configuration and coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathBatch {
    pub config: SimConfig,
    pub coefficients: serde_json::Value,
    pub x0: Vec<f64>,
    pub master_seed: u64,
    pub paths: Vec<PathSample>,
    pub counts: EventCounts,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// ‖X_t‖² moments over the paths alive at a snapshot time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMoment {
    pub t: f64,
    pub alive: usize,
    pub mean_sq_norm: f64,
    pub se: f64,
}

/// Compact, comparable description of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n: usize,
    pub counts: EventCounts,
    pub moments: Vec<SnapshotMoment>,
    pub total_steps: u64,
    /// SHA-256 over every recorded time and state, bit for bit.
    pub digest: String,
}

fn descriptor(c: &SdeCoefficients) -> serde_json::Value {
    let f = c.field();
    serde_json::json!({
        "name": f.name(),
        "dim": c.dim(),
        "weight": f.weight(),
        "lambda": f.lambda(),
        "singular_policy": f.policy(),
        "divergence": f.divergence_mode(),
    })
}

/// Simulate `n` paths; path i uses stream i of `master_seed`.
///
/// `threads` caps the worker count; the result does not depend on it.
pub fn simulate_batch(
    c: &SdeCoefficients,
    x0: &[f64],
    n: usize,
    cfg: &SimConfig,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<PathBatch> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    cfg.validate()?;
    check_dim(x0, c.dim())?;
    let marks = cfg.marks();
    let run = || -> Result<Vec<PathSample>> {
        (0..n as u64)
            .into_par_iter()
            .map(|i| run_path(c, x0, cfg, &marks, master_seed, i))
            .collect()
    };
    let paths = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::param("threads", e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    let mut notes = Vec::new();
    if norm_sq(x0) == 0.0 {
        if let Some(gamma) = c.field().weight().origin_exponent() {
            if c.dim() as f64 + gamma < 2.0 {
                notes.push(ORIGIN_HEURISTIC.to_string());
            }
        }
    }
    Ok(PathBatch {
        config: cfg.clone(),
        coefficients: descriptor(c),
        x0: x0.to_vec(),
        master_seed,
        counts: EventCounts::of(&paths),
        paths,
        notes,
    })
}

impl PathBatch {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// States of the paths alive at snapshot time `t`.
    pub fn states_at(&self, t: f64) -> Result<Vec<&[f64]>> {
        if !self.config.marks().contains(&t) && t != 0.0 {
            return Err(Error::NotRecorded { t });
        }
        if t == 0.0 {
            return Ok(self.paths.iter().map(|p| p.states[0].as_slice()).collect());
        }
        let v: Vec<&[f64]> = self.paths.iter().filter_map(|p| p.snapshot(t)).collect();
        if v.is_empty() {
            return Err(Error::EmptyBatch { t });
        }
        Ok(v)
    }

    pub fn summary(&self) -> BatchSummary {
        let mut hasher = Sha256::new();
        let mut total_steps = 0;
        for p in &self.paths {
            total_steps += p.steps;
            for (t, x) in p.times.iter().zip(&p.states) {
                hasher.update(t.to_bits().to_le_bytes());
                x.iter().for_each(|v| hasher.update(v.to_bits().to_le_bytes()));
            }
            for s in &p.snapshots {
                hasher.update(s.t.to_bits().to_le_bytes());
                s.x.iter().for_each(|v| hasher.update(v.to_bits().to_le_bytes()));
            }
            if let Some(h) = p.first_hit {
                hasher.update(h.to_bits().to_le_bytes());
            }
        }
        let moments = self
            .config
            .marks()
            .into_iter()
            .map(|t| {
                let sq: Vec<f64> = self.paths.iter().filter_map(|p| p.snapshot(t)).map(norm_sq).collect();
                let m = mean_se(&sq);
                SnapshotMoment {
                    t,
                    alive: sq.len(),
                    mean_sq_norm: m.mean,
                    se: m.se,
                }
            })
            .collect();
        let digest = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        BatchSummary {
            n: self.paths.len(),
            counts: self.counts,
            moments,
            total_steps,
            digest,
        }
    }
}

/// Truncate a path at its first exit from `domain`, interpolating the crossing.
///
/// Crossings are searched on the segments between recorded states, so the
/// result matches in-simulation killing when every step was recorded.
pub fn kill_at_exit(p: &PathSample, domain: &Domain) -> PathSample {
    if matches!(domain, Domain::Full) {
        return p.clone();
    }
    let mut out = p.clone();
    if !domain.contains(&p.states[0]) {
        out.times.truncate(1);
        out.states.truncate(1);
        out.snapshots.retain(|s| s.t <= 0.0);
        out.terminal = Terminal::ExitedDomain {
            t: 0.0,
            x: p.states[0].clone(),
        };
        return out;
    }
    let n = p.states.len();
    let already_cut = matches!(&p.terminal, Terminal::ExitedDomain { t, .. } if p.times.last() == Some(t));
    let crossing = (1..n).find_map(|i| {
        let (a, b) = (&p.states[i - 1], &p.states[i]);
        let dx: Vec<f64> = a.iter().zip(b).map(|(u, v)| v - u).collect();
        domain.exit_fraction(a, &dx).map(|s| (i, s))
    });
    let Some((i, s)) = crossing else {
        return out;
    };
    if already_cut && i == n - 1 && s > 1.0 - 1e-9 {
        return out;
    }
    let (a, b) = (&p.states[i - 1], &p.states[i]);
    let (te, xe) = (p.times[i - 1] + s * (p.times[i] - p.times[i - 1]), lerp(a, b, s));
    if let Some(t_old) = p.terminal.time() {
        if t_old < te {
            return out;
        }
    }
    out.times.truncate(i + 1);
    out.states.truncate(i + 1);
    out.times[i] = te;
    out.states[i] = xe.clone();
    out.snapshots.retain(|s| s.t < te);
    if out.first_hit.is_some_and(|h| h > te) {
        out.first_hit = None;
    }
    out.terminal = Terminal::ExitedDomain { t: te, x: xe };
    out
}

/// Hit fraction of B_ε(0) with a Wilson interval and first-hit time quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingStats {
    pub eps: f64,
    pub hits: Proportion,
    /// (level, time) pairs over the paths that hit.
    pub quantiles: Vec<(f64, f64)>,
    /// Whether the hit times come from in-step monitoring of exactly this ball.
    pub exact_times: bool,
    pub notes: Vec<String>,
}

pub fn hitting_stats(b: &PathBatch, eps: f64, confidence: f64) -> Result<HittingStats> {
    if !(eps > 0.0) {
        return Err(Error::param("eps", "must be positive"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::param("confidence", "must lie in (0, 1)"));
    }
    let monitored = b.config.target.is_some_and(|t| t.radius == eps);
    let mut times = Vec::new();
    let mut hits = 0;
    for p in &b.paths {
        if p.min_norm > eps && p.first_hit.is_none() {
            continue;
        }
        hits += 1;
        let t = if monitored {
            p.first_hit
        } else if norm(&p.states[0]) <= eps {
            Some(0.0)
        } else {
            recorded_entry(p, eps)
        };
        if let Some(t) = t {
            times.push(t);
        }
    }
    times.sort_by(f64::total_cmp);
    let mut notes = b.notes.clone();
    if !monitored && b.config.record_stride != 1 {
        notes.push("hit times interpolated from recorded states only".into());
    }
    let quantiles = if times.is_empty() {
        Vec::new()
    } else {
        [0.1, 0.25, 0.5, 0.75, 0.9]
            .iter()
            .map(|q| (*q, quantile_sorted(&times, *q)))
            .collect()
    };
    Ok(HittingStats {
        eps,
        hits: wilson(hits, b.len(), confidence),
        quantiles,
        exact_times: monitored,
        notes,
    })
}

fn recorded_entry(p: &PathSample, eps: f64) -> Option<f64> {
    p.states.windows(2).zip(p.times.windows(2)).find_map(|(x, t)| {
        let dx: Vec<f64> = x[0].iter().zip(&x[1]).map(|(a, b)| b - a).collect();
        sphere_crossing(&x[0], &dx, eps).map(|s| t[0] + s * (t[1] - t[0]))
    })
}

/// Realized versus predicted quadratic covariation along one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariationReport {
    /// Σ(ΔX − bΔt)(ΔX − bΔt)ᵀ, row-major.
    pub realized: Vec<f64>,
    /// Σ(A/ρ)(X)Δt, row-major.
    pub predicted: Vec<f64>,
    /// max |realized − predicted| / max |predicted|.
    pub relative_gap: f64,
}

/// Needs a path recorded at every step.
pub fn quadratic_covariation(c: &SdeCoefficients, p: &PathSample) -> Result<CovariationReport> {
    let d = c.dim();
    if p.states.len() < 2 {
        return Err(Error::param("path", "needs at least two recorded states"));
    }
    let mut realized = vec![0.0; d * d];
    let mut predicted = vec![0.0; d * d];
    for k in 0..p.states.len() - 1 {
        let x = &p.states[k];
        let h = p.times[k + 1] - p.times[k];
        let b = c.drift(x)?;
        let s = c.dispersion(x)?;
        let m: Vec<f64> = (0..d).map(|i| p.states[k + 1][i] - x[i] - b[i] * h).collect();
        for i in 0..d {
            for j in 0..d {
                realized[i * d + j] += m[i] * m[j];
                predicted[i * d + j] += h * (0..d).map(|l| s[i * d + l] * s[j * d + l]).sum::<f64>();
            }
        }
    }
    let scale = predicted.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let gap = realized
        .iter()
        .zip(&predicted)
        .fold(0.0f64, |a, (r, q)| a.max((r - q).abs()));
    Ok(CovariationReport {
        realized,
        predicted,
        relative_gap: gap / scale,
    })
}

/// Mean of ‖X_t‖² over paths alive at `t`.
pub fn mean_sq_norm(b: &PathBatch, t: f64) -> Result<MeanSe> {
    let v: Vec<f64> = b.states_at(t)?.into_iter().map(norm_sq).collect();
    Ok(mean_se(&v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_crossing_roots() {
        assert_eq!(sphere_crossing(&[0.5, 0.0], &[1.0, 0.0], 1.0), Some(0.5));
        assert_eq!(sphere_crossing(&[2.0, 0.0], &[-2.0, 0.0], 1.0), Some(0.5));
        // passes through the ball within the step
        let s = sphere_crossing(&[1.0, 0.05], &[-2.0, 0.0], 0.1).unwrap();
        assert!((s - (1.0 - (0.01f64 - 0.0025).sqrt()) / 2.0).abs() < 1e-12);
        assert_eq!(sphere_crossing(&[2.0, 0.0], &[0.0, 1.0], 1.0), None);
    }

    #[test]
    fn segment_minimum() {
        let seg = Segment::new(&[-1.0, 0.5], &[2.0, 0.0]);
        assert!((seg.min_norm(1.0) - 0.5).abs() < 1e-15);
        assert!((seg.min_norm(0.25) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((Segment::new(&[1.0, 0.0], &[1.0, 0.0]).min_norm(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(1.0, 2.0).is_err());
        assert!(SimConfig::new(1.0, 1e-3)
            .unwrap()
            .with_snapshots(&[2.0])
            .validate()
            .is_err());
        let bad = SimConfig::new(1.0, 1e-3).unwrap().with_policy(StepPolicy::Adaptive {
            theta: 1.5,
            dt_min: 1e-8,
        });
        assert!(bad.validate().is_err());
        assert_eq!(
            SimConfig::new(1.0, 0.1).unwrap().with_snapshots(&[0.5, 1.0]).marks(),
            vec![0.5, 1.0]
        );
    }
}
