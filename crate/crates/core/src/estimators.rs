//! Estimators that turn path batches and quadrature into verdicts: kernel
//! density estimates of the transition density, the heat-kernel envelope and
//! its fitted constant, the resolvent envelope, Riesz potentials and moment
//! summaries.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::{check_dim, distance, norm, norm_sq, Ball};
use crate::quadrature::{integrate_box, radial_ball_integral, shell_integral, Estimate, QuadConfig};
use crate::sde::PathBatch;
use crate::stats::{mean_se, MeanSe};
use crate::weights::{ball_mass, Weight};

/// Kernel bandwidth choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bandwidth {
    /// Silverman's rule per coordinate: h_j = σ_j·(4/((d+2)n))^{1/(d+4)}.
    #[default]
    Silverman,
    /// The same bandwidth in every coordinate.
    Fixed {
        h: f64,
    },
    PerAxis {
        h: Vec<f64>,
    },
}

/// Density at the evaluation points under a rescaled bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSensitivity {
    pub factor: f64,
    pub density: Vec<f64>,
}

/// Estimated transition density with respect to m = ρ·dx.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub t: f64,
    pub points: Vec<Vec<f64>>,
    pub density: Vec<f64>,
    pub se: Vec<f64>,
    pub bandwidth: Vec<f64>,
    /// Paths in the batch; killed paths count as lost mass.
    pub n: usize,
    /// Paths alive at time t.
    pub alive: usize,
    pub sensitivity: Vec<BandwidthSensitivity>,
}

impl DensityEstimate {
    /// Upper confidence bound p̂ + k·SE at every point.
    pub fn upper(&self, k: f64) -> Vec<f64> {
        self.density.iter().zip(&self.se).map(|(p, s)| p + k * s).collect()
    }
}

fn silverman(samples: &[&[f64]]) -> Vec<f64> {
    let n = samples.len();
    let d = samples[0].len();
    let factor = (4.0 / ((d as f64 + 2.0) * n as f64)).powf(1.0 / (d as f64 + 4.0));
    (0..d)
        .map(|j| {
            let col: Vec<f64> = samples.iter().map(|x| x[j]).collect();
            let m = mean_se(&col);
            let sd = m.se * (n as f64).sqrt();
            (sd * factor).max(1e-12)
        })
        .collect()
}

/// Kernel values K_h(y − x_i) averaged over all n paths, with standard error.
fn kde_at(y: &[f64], samples: &[&[f64]], n_total: usize, h: &[f64]) -> (f64, f64) {
    let d = y.len();
    let norm_const: f64 = h
        .iter()
        .map(|hj| 1.0 / (hj * (2.0 * std::f64::consts::PI).sqrt()))
        .product();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for x in samples {
        let mut q = 0.0;
        for j in 0..d {
            let u = (y[j] - x[j]) / h[j];
            q += u * u;
        }
        let k = norm_const * (-0.5 * q).exp();
        sum += k;
        sum_sq += k * k;
    }
    let n = n_total as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Gaussian-kernel estimate of p_t(x0, y) with respect to m, at the points `ys`.
///
/// The Lebesgue density of X_t is estimated from the paths alive at `t` (killed
/// paths carry no mass) and divided by ρ(y). Densities at 0.5× and 2× the
/// bandwidth are reported alongside.
pub fn kde_transition_density(
    b: &PathBatch,
    t: f64,
    ys: &[Vec<f64>],
    weight: &Weight,
    bandwidth: &Bandwidth,
) -> Result<DensityEstimate> {
    let samples = b.states_at(t)?;
    if samples.is_empty() {
        return Err(Error::EmptyBatch { t });
    }
    let d = b.dim();
    let h = match bandwidth {
        Bandwidth::Silverman => silverman(&samples),
        Bandwidth::Fixed { h } => vec![*h; d],
        Bandwidth::PerAxis { h } => {
            check_dim(h, d)?;
            h.clone()
        }
    };
    if h.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::param("bandwidth", "must be positive"));
    }
    let rho: Vec<f64> = ys
        .iter()
        .map(|y| {
            check_dim(y, d)?;
            let r = weight.eval(y)?;
            if !(r > 0.0) {
                return Err(Error::SingularPoint { point: y.clone() });
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let n = b.len();
    let eval = |scale: f64| -> Vec<(f64, f64)> {
        let hs: Vec<f64> = h.iter().map(|v| v * scale).collect();
        ys.par_iter()
            .zip(&rho)
            .map(|(y, r)| {
                let (p, se) = kde_at(y, &samples, n, &hs);
                (p / r, se / r)
            })
            .collect()
    };
    let main = eval(1.0);
    let sensitivity = [0.5, 2.0]
        .iter()
        .map(|f| BandwidthSensitivity {
            factor: *f,
            density: eval(*f).into_iter().map(|v| v.0).collect(),
        })
        .collect();
    Ok(DensityEstimate {
        t,
        points: ys.to_vec(),
        density: main.iter().map(|v| v.0).collect(),
        se: main.iter().map(|v| v.1).collect(),
        bandwidth: h,
        n,
        alive: samples.len(),
        sensitivity,
    })
}

/// m(B_√t(x))^{−1/2}·m(B_√t(y))^{−1/2}·exp(−‖x−y‖²/(λ(4+ε)t)).
pub fn heat_kernel_envelope(w: &Weight, lambda: f64, x: &[f64], y: &[f64], t: f64, eps: f64) -> Result<f64> {
    HeatKernelEnvelope::new(w.clone(), lambda, eps)?.eval(x, y, t)
}

/// Heat-kernel envelope with cached ball masses.
#[derive(Debug)]
pub struct HeatKernelEnvelope {
    weight: Weight,
    lambda: f64,
    eps: f64,
    quad: QuadConfig,
    cache: Mutex<HashMap<Vec<i64>, f64>>,
}

fn bucket(v: f64) -> i64 {
    (v * 1e9).round() as i64
}

impl HeatKernelEnvelope {
    pub fn new(weight: Weight, lambda: f64, eps: f64) -> Result<Self> {
        if !(lambda >= 1.0) {
            return Err(Error::param("lambda", "must be at least 1"));
        }
        if !(eps > 0.0) {
            return Err(Error::param("eps", "must be positive"));
        }
        Ok(HeatKernelEnvelope {
            weight,
            lambda,
            eps,
            quad: QuadConfig::default(),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// m(B_r(c)), cached by (center, radius) buckets; radial weights key on ‖c‖.
    pub fn ball_mass(&self, c: &[f64], r: f64) -> Result<f64> {
        let mut key: Vec<i64> = if self.weight.radial_profile().is_some() {
            vec![bucket(norm(c))]
        } else {
            c.iter().map(|v| bucket(*v)).collect()
        };
        key.push(bucket(r));
        if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(*v);
        }
        let m = ball_mass(&self.weight, &Ball::new(c.to_vec(), r)?, &self.quad)?.value;
        self.cache.lock().expect("cache lock").insert(key, m);
        Ok(m)
    }

    pub fn eval(&self, x: &[f64], y: &[f64], t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::param("t", "must be positive"));
        }
        check_dim(x, self.weight.dim())?;
        check_dim(y, self.weight.dim())?;
        let r = t.sqrt();
        let mx = self.ball_mass(x, r)?;
        let my = self.ball_mass(y, r)?;
        let d2 = norm_sq(&x.iter().zip(y).map(|(a, b)| a - b).collect::<Vec<_>>());
        Ok((mx * my).sqrt().recip() * (-d2 / (self.lambda * (4.0 + self.eps) * t)).exp())
    }
}

/// Result of fitting the constant in p_t(x, y) ≤ c·envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub t: f64,
    pub eps: f64,
    pub c_hat: f64,
    /// Grid points whose upper bound exceeds ĉ·envelope (zero by construction).
    pub exceedances: usize,
    /// Standard errors added to p̂ before the comparison.
    pub confidence_k: f64,
    pub points: Vec<Vec<f64>>,
    pub ratios: Vec<f64>,
    pub excluded: usize,
    /// Set when every p̂ vanished and ĉ comes from standard errors alone.
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

/// ĉ = max over the grid of (p̂ + 3·SE)/envelope.
pub fn fit_heat_kernel_constant(est: &DensityEstimate, envelope: &[f64], eps: f64) -> Result<EnvelopeReport> {
    if envelope.len() != est.density.len() {
        return Err(Error::DimensionMismatch {
            expected: est.density.len(),
            got: envelope.len(),
        });
    }
    let k = 3.0;
    let upper = est.upper(k);
    let mut warnings = Vec::new();
    let mut ratios = Vec::with_capacity(upper.len());
    let mut excluded = 0;
    for (u, e) in upper.iter().zip(envelope) {
        if *e > 0.0 && e.is_finite() {
            ratios.push(u / e);
        } else {
            excluded += 1;
            ratios.push(f64::NAN);
        }
    }
    if excluded > 0 {
        warnings.push(format!("{excluded} points with zero envelope excluded"));
    }
    let c_hat = ratios.iter().filter(|r| r.is_finite()).fold(0.0f64, |a, r| a.max(*r));
    let degenerate = est.density.iter().all(|p| *p == 0.0);
    if degenerate {
        warnings.push("density estimate vanishes on the grid; constant reflects standard errors only".into());
    }
    let exceedances = upper
        .iter()
        .zip(envelope)
        .filter(|(u, e)| **e > 0.0 && **u > c_hat * **e * (1.0 + 1e-12))
        .count();
    Ok(EnvelopeReport {
        t: est.t,
        eps,
        c_hat,
        exceedances,
        confidence_k: k,
        points: est.points.clone(),
        ratios,
        excluded,
        degenerate,
        warnings,
    })
}

/// Spread of fitted constants over a time sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSweep {
    pub times: Vec<f64>,
    pub c_hats: Vec<f64>,
    /// max ĉ / min ĉ
    pub spread: f64,
    pub stable: bool,
}

/// Flags instability when ĉ varies by more than `max_spread` across the reports.
pub fn envelope_sweep(reports: &[EnvelopeReport], max_spread: f64) -> EnvelopeSweep {
    let c: Vec<f64> = reports.iter().map(|r| r.c_hat).collect();
    let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    EnvelopeSweep {
        times: reports.iter().map(|r| r.t).collect(),
        c_hats: c,
        spread,
        stable: spread < max_spread && lo > 0.0 && hi.is_finite(),
    }
}

/// Φ(x,y) + Ψ(x,y)·1{α < 0} with Φ = ‖x−y‖^{−(α+d−2)} and Ψ = ‖x−y‖^{2−d}‖y‖^{−α}.
pub fn resolvent_envelope(alpha: f64, d: usize, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(x, d)?;
    check_dim(y, d)?;
    if !(alpha > -(d as f64)) {
        return Err(Error::param("alpha", "must exceed -d"));
    }
    let r = distance(x, y);
    if r == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    let df = d as f64;
    let phi = r.powf(-(alpha + df - 2.0));
    if alpha >= 0.0 {
        return Ok(phi);
    }
    let ny = norm(y);
    if ny == 0.0 {
        return Err(Error::SingularPoint { point: y.to_vec() });
    }
    Ok(phi + r.powf(2.0 - df) * ny.powf(-alpha))
}

/// V_η g(x) = ∫ ‖x−y‖^{η−d} g(y) dy for a compactly supported g.
///
/// Ball indicators use exact sphere–ball geometry. Otherwise points near the
/// support use spherical shells about x, which absorb the kernel singularity,
/// and points farther than ten support diameters use a tensor grid.
///
/// ```
/// use wdiff::estimators::riesz_potential;
/// use wdiff::field::ScalarField;
/// use wdiff::quadrature::QuadConfig;
///
/// let g = ScalarField::BallIndicator { center: vec![0.0; 3], radius: 1.0 };
/// let v = riesz_potential(&g, 3, 2.0, &[0.0; 3], &QuadConfig::default()).unwrap();
/// assert!((v.value - 2.0 * std::f64::consts::PI).abs() < 1e-6);
/// ```
pub fn riesz_potential(g: &ScalarField, d: usize, eta: f64, x: &[f64], cfg: &QuadConfig) -> Result<Estimate> {
    check_dim(x, d)?;
    if !(eta > 0.0 && eta < d as f64) {
        return Err(Error::param("eta", format!("must lie in (0, {d})")));
    }
    if let ScalarField::Constant { value } = g {
        if *value == 0.0 {
            return Ok(Estimate { value: 0.0, error: 0.0 });
        }
    }
    if let ScalarField::BallIndicator { center, radius } = g {
        check_dim(center, d)?;
        let offset = distance(center, x);
        return radial_ball_integral(|s| s.powf(eta - d as f64), d, offset, *radius, cfg);
    }
    let support = g
        .support()
        .ok_or_else(|| Error::param("g", "needs a compactly supported field"))?;
    check_dim(&support.lo, d)?;
    let kernel_exp = eta - d as f64;
    if support.distance_to(x) >= 10.0 * support.diameter() {
        let est = integrate_box(
            |y, out| out[0] = distance(x, y).powf(kernel_exp) * g.value(y),
            &support,
            1,
            None,
            cfg,
        )?;
        return Ok(est[0]);
    }
    let reach = support.farthest_distance(x);
    shell_integral(|y| g.value(y), |s| s.powf(kernel_exp), x, 0.0, reach, cfg)
}

/// Outcome of the hypotheses behind Hölder continuity of V_η g.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoelderReport {
    pub eta: f64,
    pub p: f64,
    pub dim: usize,
    /// η − d/p
    pub order: f64,
    pub order_ok: bool,
    pub eta_ok: bool,
    /// ∫(1+‖y‖)^{η−d}|g(y)| dy
    pub tail_integral: Option<f64>,
    pub tail_ok: bool,
    pub pass: bool,
    pub notes: Vec<String>,
}

/// Checks 0 < η − d/p < 1, η ∈ (0, d) and finiteness of the weighted tail integral of g.
pub fn check_hoelder_hypotheses(g: &ScalarField, p: f64, eta: f64, d: usize, cfg: &QuadConfig) -> HoelderReport {
    let order = eta - d as f64 / p;
    let order_ok = order > 0.0 && order < 1.0;
    let eta_ok = eta > 0.0 && eta < d as f64;
    let mut notes = Vec::new();
    if !order_ok {
        notes.push(format!("eta - d/p = {order:.4} lies outside (0, 1)"));
    }
    if !eta_ok {
        notes.push(format!("eta = {eta} lies outside (0, {d})"));
    }
    let kernel_exp = eta - d as f64;
    let tail = match (g, g.support()) {
        (ScalarField::BallIndicator { center, radius }, _) => {
            radial_ball_integral(|s| (1.0 + s).powf(kernel_exp), d, norm(center), *radius, cfg).map(|e| e.value)
        }
        (_, Some(support)) => {
            let origin = vec![0.0; d];
            let reach = support.farthest_distance(&origin);
            shell_integral(
                |y| g.value(y).abs(),
                |s| (1.0 + s).powf(kernel_exp),
                &origin,
                0.0,
                reach,
                cfg,
            )
            .map(|e| e.value)
        }
        (_, None) => Err(Error::param("g", "no compact support")),
    };
    let tail_integral = match tail {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("tail integral not established: {e}"));
            None
        }
    };
    let tail_ok = tail_integral.is_some_and(|v| v.is_finite());
    HoelderReport {
        eta,
        p,
        dim: d,
        order,
        order_ok,
        eta_ok,
        tail_integral,
        tail_ok,
        pass: order_ok && eta_ok && tail_ok,
        notes,
    }
}

/// Sample moments of X_t over the paths alive at t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub t: f64,
    pub n: usize,
    pub mean_sq_norm: MeanSe,
    /// 95% normal interval for E‖X_t‖².
    pub ci95: (f64, f64),
    pub component_means: Vec<MeanSe>,
    /// Unbiased covariance, row-major.
    pub covariance: Vec<f64>,
}

pub fn moment_summary(b: &PathBatch, t: f64) -> Result<MomentSummary> {
    let xs = b.states_at(t)?;
    if xs.is_empty() {
        return Err(Error::EmptyBatch { t });
    }
    let d = b.dim();
    let n = xs.len();
    let sq: Vec<f64> = xs.iter().map(|x| norm_sq(x)).collect();
    let m = mean_se(&sq);
    let comps: Vec<MeanSe> = (0..d)
        .map(|j| mean_se(&xs.iter().map(|x| x[j]).collect::<Vec<_>>()))
        .collect();
    let mut cov = vec![0.0; d * d];
    if n > 1 {
        for x in &xs {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (x[i] - comps[i].mean) * (x[j] - comps[j].mean);
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    }
    Ok(MomentSummary {
        t,
        n,
        ci95: (m.mean - 1.96 * m.se, m.mean + 1.96 * m.se),
        mean_sq_norm: m,
        component_means: comps,
        covariance: cov,
    })
}

/// Regular grid of points x0 + r·e for r in `radii` and ±e over the coordinate axes.
pub fn axis_grid(x0: &[f64], radii: &[f64]) -> Vec<Vec<f64>> {
    let d = x0.len();
    let mut pts = vec![x0.to_vec()];
    for r in radii.iter().filter(|r| **r > 0.0) {
        for j in 0..d {
            for sign in [-1.0, 1.0] {
                let mut p = x0.to_vec();
                p[j] += sign * r;
                pts.push(p);
            }
        }
    }
    pts
}
