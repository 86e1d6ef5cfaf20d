//! Quadrature kernels shared by the weight, form and potential checks.
//!
//! Three families are provided:
//!
//! * one-dimensional composite Gauss–Legendre on panels graded geometrically
//!   toward possibly singular endpoints. The panel contributions near a
//!   singular endpoint form a geometric sequence; its ratio gives both the
//!   tail correction and the divergence test (ratio ≥ 1 means the integral
//!   is not locally finite);
//! * deterministic product rules: radial-shell integrals of radial functions
//!   over balls (exact spherical-cap geometry), shell integrals about a point
//!   with a sphere rule for the angular part, and tensor-grid Gauss rules on
//!   boxes;
//! * stratified Monte Carlo on balls and cubes, optionally importance-sampled
//!   around an origin singularity, with a two-level convergence test.
//!
//! Every adaptive routine compares two resolution levels and reports the
//! difference as its error estimate.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{norm, unit_sphere_area, Ball, BoxRegion};
use crate::rng;

/// A quadrature value together with its estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub fn relative_error(&self) -> f64 {
        if self.value == 0.0 {
            self.error
        } else {
            self.error / self.value.abs()
        }
    }
}

/// Tolerances and budgets for the adaptive integrators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadConfig {
    /// Relative tolerance of the deterministic two-level tests.
    pub rtol: f64,
    /// Relative tolerance of the Monte Carlo two-level test.
    pub mc_rtol: f64,
    /// Gauss–Legendre order of the coarse level.
    pub order: usize,
    /// Initial Monte Carlo sample count.
    pub mc_samples: usize,
    /// Monte Carlo budget; exceeding it without convergence is reported as divergence.
    pub mc_max_samples: usize,
    /// Largest number of tensor-grid nodes per evaluation.
    pub max_grid_nodes: usize,
    pub seed: u64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            rtol: 1e-3,
            mc_rtol: 1e-2,
            order: 8,
            mc_samples: 1 << 14,
            mc_max_samples: 1 << 21,
            max_grid_nodes: 4_000_000,
            seed: 0x5eed,
        }
    }
}

impl QuadConfig {
    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut pp = 1.0;
            for _ in 0..100 {
                let (mut p1, mut p2) = (1.0, 0.0);
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
                }
                pp = nf * (z * p1 - p2) / (z * z - 1.0);
                let z_prev = z;
                z = z_prev - p1 / pp;
                if (z - z_prev).abs() < 1e-15 {
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            let w = 2.0 / ((1.0 - z * z) * pp * pp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// ∫_a^b f with this rule mapped onto [a, b].
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

const MAX_LEVELS: usize = 64;
const DIVERGENCE_RUN: usize = 6;

/// ∫ f over the segment between `from` and `to` (positively oriented), with
/// panels halving in length toward `to`, which may carry an integrable
/// singularity.
fn graded_toward<F: FnMut(f64) -> f64>(f: &mut F, from: f64, to: f64, rule: &GaussLegendre) -> Result<f64> {
    let span = from - to;
    if span == 0.0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    let mut prev = f64::NAN;
    let mut rising = 0usize;
    let mut zero_run = 0usize;
    let mut last_ratio = f64::NAN;
    for level in 0..MAX_LEVELS {
        let outer = to + span / 2f64.powi(level as i32);
        let inner = to + span / 2f64.powi(level as i32 + 1);
        if (inner - to).abs() <= 64.0 * f64::EPSILON * to.abs() {
            // Panels no longer resolve in floating point near a nonzero endpoint.
            break;
        }
        let (a, b) = if from < to { (outer, inner) } else { (inner, outer) };
        let c = rule.integrate(a, b, &mut *f);
        if !c.is_finite() {
            return Err(Error::divergent("non-finite integrand near a panel endpoint"));
        }
        sum += c;
        if c == 0.0 {
            zero_run += 1;
            if zero_run >= 3 {
                return Ok(sum);
            }
            prev = 0.0;
            continue;
        }
        zero_run = 0;
        if prev.is_finite() && prev != 0.0 {
            let ratio = (c / prev).abs();
            last_ratio = ratio;
            if ratio >= 1.0 - 1e-9 {
                rising += 1;
                if rising >= DIVERGENCE_RUN {
                    return Err(Error::divergent(format!(
                        "panel contributions do not decay toward {to} (ratio {ratio:.4})"
                    )));
                }
            } else {
                rising = 0;
            }
            if level >= 4 && c.abs() <= 1e-17 * sum.abs() && ratio < 0.9 {
                return Ok(sum);
            }
        }
        prev = c;
    }
    // Geometric tail of the untouched innermost panel.
    if prev == 0.0 {
        Ok(sum)
    } else if last_ratio.is_finite() && last_ratio < 1.0 {
        Ok(sum + prev * last_ratio / (1.0 - last_ratio))
    } else {
        Err(Error::divergent(format!("no geometric decay toward {to}")))
    }
}

/// Which endpoints of an interval may be singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ends {
    Left,
    Right,
    Both,
}

/// ∫_a^b f on graded panels at the given rule order.
fn graded_once<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, ends: Ends, order: usize) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let rule = GaussLegendre::new(order);
    match ends {
        Ends::Left => graded_toward(f, b, a, &rule),
        Ends::Right => graded_toward(f, a, b, &rule),
        Ends::Both => {
            let mid = 0.5 * (a + b);
            Ok(graded_toward(f, mid, a, &rule)? + graded_toward(f, mid, b, &rule)?)
        }
    }
}

/// ∫_a^b f with the two-level test (order q vs 2q).
pub fn integrate_1d<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, ends: Ends, cfg: &QuadConfig) -> Result<Estimate> {
    let coarse = graded_once(&mut f, a, b, ends, cfg.order)?;
    let fine = graded_once(&mut f, a, b, ends, 2 * cfg.order)?;
    let error = (fine - coarse).abs();
    if error > cfg.rtol * fine.abs() + 1e-300 {
        return Err(Error::divergent(format!(
            "order doubling changed the value by {error:e} (rtol {})",
            cfg.rtol
        )));
    }
    Ok(Estimate { value: fine, error })
}

/// ∫_0^θ sin^n.
fn sin_power_integral(n: usize, theta: f64) -> f64 {
    match n {
        0 => theta,
        1 => 2.0 * (0.5 * theta).sin().powi(2),
        _ => {
            let nf = n as f64;
            -theta.sin().powi(n as i32 - 1) * theta.cos() / nf + (nf - 1.0) / nf * sin_power_integral(n - 2, theta)
        }
    }
}

/// Area of {‖y‖ = s} ∩ B_r(c) with ‖c‖ = a, in ℝ^d.
pub fn sphere_ball_intersection_area(d: usize, s: f64, a: f64, r: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let full = unit_sphere_area(d) * s.powi(d as i32 - 1);
    if s + a <= r {
        return full;
    }
    if s >= a + r || s <= a - r {
        return 0.0;
    }
    let kappa = ((s * s + a * a - r * r) / (2.0 * s * a)).clamp(-1.0, 1.0);
    let theta = kappa.acos();
    unit_sphere_area(d - 1) * s.powi(d as i32 - 1) * sin_power_integral(d - 2, theta)
}

fn radial_ball_once<F: Fn(f64) -> f64>(f: &F, d: usize, a: f64, r: f64, order: usize) -> Result<f64> {
    let mut total = 0.0;
    if a < r {
        let full = unit_sphere_area(d);
        let mut g = |s: f64| f(s) * full * s.powi(d as i32 - 1);
        total += graded_once(&mut g, 0.0, r - a, Ends::Left, order)?;
    }
    if a > 0.0 {
        let mut g = |s: f64| f(s) * sphere_ball_intersection_area(d, s, a, r);
        total += graded_once(&mut g, (a - r).abs(), a + r, Ends::Both, order)?;
    }
    Ok(total)
}

/// ∫_{B_r(c)} f(‖y‖) dy for a radial integrand, where `center_norm` = ‖c‖.
///
/// The integrand may be singular at the origin; non-integrable singularities
/// are reported as [`Error::DivergentIntegral`].
pub fn radial_ball_integral<F: Fn(f64) -> f64>(
    f: F,
    d: usize,
    center_norm: f64,
    radius: f64,
    cfg: &QuadConfig,
) -> Result<Estimate> {
    let coarse = radial_ball_once(&f, d, center_norm, radius, cfg.order)?;
    let fine = radial_ball_once(&f, d, center_norm, radius, 2 * cfg.order)?;
    let error = (fine - coarse).abs();
    if !(error <= cfg.rtol * fine.abs()) {
        return Err(Error::divergent(format!(
            "radial shell quadrature unstable (difference {error:e})"
        )));
    }
    Ok(Estimate { value: fine, error })
}

/// Directions on S^{d-1} with weights summing to its area.
pub fn sphere_rule(d: usize, level: usize) -> Vec<(Vec<f64>, f64)> {
    match d {
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        2 => {
            let n = 16 << level;
            let w = 2.0 * PI / n as f64;
            (0..n)
                .map(|i| {
                    let t = (i as f64 + 0.5) * 2.0 * PI / n as f64;
                    (vec![t.cos(), t.sin()], w)
                })
                .collect()
        }
        3 => {
            let m = 8 << level;
            let gl = GaussLegendre::new(m);
            let n_phi = 2 * m;
            let mut out = Vec::with_capacity(m * n_phi);
            for (z, wz) in gl.nodes.iter().zip(&gl.weights) {
                let rho = (1.0 - z * z).sqrt();
                for j in 0..n_phi {
                    let p = (j as f64 + 0.5) * 2.0 * PI / n_phi as f64;
                    out.push((vec![rho * p.cos(), rho * p.sin(), *z], wz * 2.0 * PI / n_phi as f64));
                }
            }
            out
        }
        _ => {
            let n = 512 << level;
            let w = unit_sphere_area(d) / n as f64;
            let mut rng = rng::stream(0x5_9e4e, level as u64);
            let mut out = Vec::with_capacity(n);
            // Antithetic pairs keep odd moments exact.
            for _ in 0..n / 2 {
                let v = rng::unit_vector(&mut rng, d);
                let neg: Vec<f64> = v.iter().map(|x| -x).collect();
                out.push((v, w));
                out.push((neg, w));
            }
            out
        }
    }
}

fn shell_once<F, W>(
    f: &F,
    radial_weight: &W,
    center: &[f64],
    s_lo: f64,
    s_hi: f64,
    level: usize,
    order: usize,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
    W: Fn(f64) -> f64,
{
    let d = center.len();
    let rule = sphere_rule(d, level);
    let mut y = vec![0.0; d];
    let mut g = |s: f64| {
        let mut acc = 0.0;
        for (dir, w) in &rule {
            for k in 0..d {
                y[k] = center[k] + s * dir[k];
            }
            acc += w * f(&y);
        }
        acc * s.powi(d as i32 - 1) * radial_weight(s)
    };
    let ends = if s_lo == 0.0 { Ends::Left } else { Ends::Both };
    graded_once(&mut g, s_lo, s_hi, ends, order)
}

/// ∫_{s_lo < ‖y − c‖ < s_hi} w(‖y − c‖) f(y) dy in spherical coordinates about `c`.
///
/// The radial factor `w` may be singular at `s = 0`. Both the angular rule and
/// the radial order are doubled until two successive levels agree.
pub fn shell_integral<F, W>(
    f: F,
    radial_weight: W,
    center: &[f64],
    s_lo: f64,
    s_hi: f64,
    cfg: &QuadConfig,
) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64,
    W: Fn(f64) -> f64,
{
    if !(s_lo >= 0.0 && s_hi > s_lo) {
        return Err(Error::param(
            "shell",
            format!("need 0 <= s_lo < s_hi, got [{s_lo}, {s_hi}]"),
        ));
    }
    let mut coarse = shell_once(&f, &radial_weight, center, s_lo, s_hi, 0, cfg.order)?;
    for level in 1..=SHELL_MAX_LEVEL {
        let fine = shell_once(&f, &radial_weight, center, s_lo, s_hi, level, cfg.order << level)?;
        let error = (fine - coarse).abs();
        if error <= cfg.rtol * fine.abs() + 1e-300 {
            return Ok(Estimate { value: fine, error });
        }
        if level == SHELL_MAX_LEVEL {
            return Err(Error::divergent(format!(
                "shell quadrature unstable (coarse {coarse:e}, fine {fine:e})"
            )));
        }
        coarse = fine;
    }
    unreachable!()
}

const SHELL_MAX_LEVEL: usize = 3;

/// Tensor-product composite Gauss–Legendre on a box, several integrands at once.
///
/// `f(x, out)` writes `n_out` integrand values at `x`.
pub fn tensor_box_once<F>(f: &F, region: &BoxRegion, cells: usize, order: usize, n_out: usize) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]),
{
    let d = region.dim();
    let gl = GaussLegendre::new(order);
    let axes: Vec<Vec<(f64, f64)>> = (0..d)
        .map(|k| {
            let (lo, hi) = (region.lo[k], region.hi[k]);
            let h = (hi - lo) / cells as f64;
            let mut pts = Vec::with_capacity(cells * order);
            for c in 0..cells {
                let a = lo + c as f64 * h;
                for (x, w) in gl.nodes.iter().zip(&gl.weights) {
                    pts.push((a + 0.5 * h * (x + 1.0), 0.5 * h * w));
                }
            }
            pts
        })
        .collect();
    let per_axis = cells * order;
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut vals = vec![0.0; n_out];
    let mut acc = vec![0.0; n_out];
    loop {
        let mut w = 1.0;
        for k in 0..d {
            let (p, wk) = axes[k][idx[k]];
            x[k] = p;
            w *= wk;
        }
        f(&x, &mut vals);
        for (a, v) in acc.iter_mut().zip(&vals) {
            *a += w * v;
        }
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < per_axis {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == d {
                return acc;
            }
        }
    }
}

/// Tensor-grid Gauss rule on a box with cell refinement until successive
/// levels agree to `rtol`.
///
/// Each component is compared relative to itself, or, with
/// `scale_component = Some(k)`, relative to the magnitude of component `k`
/// (useful when a signed integral may be close to zero).
pub fn integrate_box<F>(
    f: F,
    region: &BoxRegion,
    n_out: usize,
    scale_component: Option<usize>,
    cfg: &QuadConfig,
) -> Result<Vec<Estimate>>
where
    F: Fn(&[f64], &mut [f64]),
{
    let d = region.dim() as i32;
    let order = cfg.order.clamp(2, 8);
    let finite = |v: &[f64]| {
        if v.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::divergent("non-finite integrand on the tensor grid"))
        }
    };
    let mut cells = 1usize;
    let mut prev = tensor_box_once(&f, region, cells, order, n_out);
    finite(&prev)?;
    loop {
        let next_cells = cells * 2;
        let nodes = ((next_cells * order) as f64).powi(d);
        if nodes > cfg.max_grid_nodes as f64 {
            return Err(Error::divergent(format!(
                "tensor grid reached {} nodes without meeting rtol {}",
                ((cells * order) as f64).powi(d),
                cfg.rtol
            )));
        }
        let cur = tensor_box_once(&f, region, next_cells, order, n_out);
        finite(&cur)?;
        let ok = cur.iter().zip(&prev).all(|(c, p)| {
            let s = scale_component.map_or(c.abs(), |k| cur[k].abs());
            (c - p).abs() <= cfg.rtol * s + 1e-300
        });
        if ok {
            return Ok(cur
                .iter()
                .zip(&prev)
                .map(|(c, p)| Estimate {
                    value: *c,
                    error: (c - p).abs(),
                })
                .collect());
        }
        prev = cur;
        cells = next_cells;
    }
}

/// Weighted Monte Carlo nodes: ∫ f ≈ Σ wᵢ f(xᵢ).
#[derive(Debug, Clone)]
pub struct Nodes {
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Nodes {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }
}

/// Stratified sample of a ball.
///
/// Without `origin_exponent` the radius about the ball center is stratified
/// (one point per stratum of the volume fraction) and directions come in
/// antithetic pairs. With `Some(γ)` and the origin close to the ball, radii
/// are drawn about the origin with density ∝ s^{d−1+γ}, which cancels an
/// integrand singularity ‖y‖^γ (γ < 0).
pub fn stratified_ball_nodes(ball: &Ball, n: usize, seed: u64, origin_exponent: Option<f64>) -> Nodes {
    let d = ball.dim();
    let mut rng = rng::stream(seed, n as u64);
    let mut points = Vec::with_capacity(n * d);
    let mut weights = Vec::with_capacity(n);
    let c_norm = norm(&ball.center);
    let gamma = origin_exponent
        .filter(|g| *g < 0.0 && c_norm < 2.0 * ball.radius)
        .map(|g| g.max(-(d as f64) + 0.05));
    match gamma {
        None => {
            let w = ball.volume() / n as f64;
            let mut dir = vec![0.0; d];
            for i in 0..n {
                let u = (i as f64 + rng.random::<f64>()) / n as f64;
                let s = ball.radius * u.powf(1.0 / d as f64);
                if i % 2 == 0 {
                    dir = rng::unit_vector(&mut rng, d);
                } else {
                    dir.iter_mut().for_each(|v| *v = -*v);
                }
                points.extend(ball.center.iter().zip(&dir).map(|(c, v)| c + s * v));
                weights.push(w);
            }
        }
        Some(gamma) => {
            let beta = d as f64 - 1.0 + gamma;
            let r_enc = c_norm + ball.radius;
            let norm_const = unit_sphere_area(d) * r_enc.powf(beta + 1.0) / ((beta + 1.0) * n as f64);
            for i in 0..n {
                let u = (i as f64 + rng.random::<f64>()) / n as f64;
                let s = r_enc * u.powf(1.0 / (beta + 1.0));
                let dir = rng::unit_vector(&mut rng, d);
                let y: Vec<f64> = dir.iter().map(|v| s * v).collect();
                let w = if ball.contains(&y) && s > 0.0 {
                    norm_const * s.powf(-gamma)
                } else {
                    0.0
                };
                points.extend_from_slice(&y);
                weights.push(w);
            }
        }
    }
    Nodes {
        dim: d,
        points,
        weights,
    }
}

/// Jittered-grid sample of a box: one point per cell of a k^d grid.
pub fn stratified_box_nodes(region: &BoxRegion, n: usize, seed: u64) -> Nodes {
    let d = region.dim();
    let k = ((n as f64).powf(1.0 / d as f64).round() as usize).max(1);
    let total = k.pow(d as u32);
    let mut rng = rng::stream(seed, total as u64);
    let w = region.volume() / total as f64;
    let mut points = Vec::with_capacity(total * d);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        for ((lo, hi), i) in region.lo.iter().zip(&region.hi).zip(&idx) {
            let h = (hi - lo) / k as f64;
            points.push(lo + (*i as f64 + rng.random::<f64>()) * h);
        }
        for i in idx.iter_mut() {
            *i += 1;
            if *i < k {
                break;
            }
            *i = 0;
        }
    }
    Nodes {
        dim: d,
        points,
        weights: vec![w; total],
    }
}

/// Two-level Monte Carlo convergence: compare the estimate from `n` nodes with
/// an independent one from `n/2` nodes, doubling `n` until they agree to
/// `mc_rtol`. Failure within the budget is reported as divergence.
pub fn two_level_mc<G>(cfg: &QuadConfig, mut estimate: G) -> Result<Estimate>
where
    G: FnMut(usize, u64) -> Result<f64>,
{
    let mut n = cfg.mc_samples.max(16);
    let mut round = 0u64;
    loop {
        let full = estimate(n, cfg.seed.wrapping_add(2 * round))?;
        let half = estimate(n / 2, cfg.seed.wrapping_add(2 * round + 1))?;
        let error = (full - half).abs();
        if !full.is_finite() || !half.is_finite() {
            return Err(Error::divergent("non-finite Monte Carlo estimate"));
        }
        if error <= cfg.mc_rtol * full.abs() + 1e-300 {
            return Ok(Estimate { value: full, error });
        }
        n *= 2;
        round += 1;
        if n > cfg.mc_max_samples {
            return Err(Error::divergent(format!(
                "Monte Carlo estimate did not stabilise within {} samples (last {full:e} vs {half:e})",
                cfg.mc_max_samples
            )));
        }
    }
}
