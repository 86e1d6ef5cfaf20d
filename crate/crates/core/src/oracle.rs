//! Exact references for the isotropic field A = ‖x‖^α·I.
//!
//! There the SDE reduces to dX = dW + (α/2)X/‖X‖²dt, and ‖X‖² is a squared
//! Bessel process of dimension δ = d + α.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::geometry::norm_sq;
use crate::quadrature::{integrate_1d, Ends, GaussLegendre, QuadConfig};
use crate::rng::{standard_normal, stream};

/// Bessel dimension δ = d + α of the isotropic power field.
pub fn bessel_dimension(d: usize, alpha: f64) -> Result<f64> {
    if !(alpha > -(d as f64)) || !alpha.is_finite() {
        return Err(Error::param(
            "alpha",
            format!("need alpha > -d = {}, got {alpha}", -(d as f64)),
        ));
    }
    Ok(d as f64 + alpha)
}

/// Whether the radial process of dimension δ reaches the origin.
pub fn hits_origin(delta: f64) -> bool {
    delta < 2.0
}

/// Behaviour of the radial process at 0 when δ < 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryConvention {
    #[default]
    Reflecting,
    Absorbing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BesselOracle {
    pub d: usize,
    pub alpha: f64,
    pub delta: f64,
}

impl BesselOracle {
    pub fn new(d: usize, alpha: f64) -> Result<Self> {
        Ok(BesselOracle {
            d,
            alpha,
            delta: bessel_dimension(d, alpha)?,
        })
    }

    /// E‖X_t‖² = ‖x0‖² + δt.
    pub fn besq_mean(&self, x0: &[f64], t: f64) -> f64 {
        norm_sq(x0) + self.delta * t
    }

    pub fn hits_origin(&self) -> bool {
        hits_origin(self.delta)
    }

    pub fn radial_density(&self, r: f64, t: f64, r0: f64, convention: BoundaryConvention) -> Result<f64> {
        besq_radial_density(r, t, r0, self.delta, convention)
    }
}

/// ln I_ν(z) for z > 0 and ν > −1.
pub fn ln_bessel_i(nu: f64, z: f64) -> f64 {
    if z > 1500.0 {
        ln_bessel_i_hankel(nu, z)
    } else {
        ln_bessel_i_series(nu, z)
    }
}

fn ln_bessel_i_hankel(nu: f64, z: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..12 {
        let kf = k as f64;
        term *= -(mu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0 * z);
        sum += term;
    }
    z - 0.5 * (2.0 * std::f64::consts::PI * z).ln() + sum.ln()
}

fn ln_bessel_i_series(nu: f64, z: f64) -> f64 {
    let lh = (0.5 * z).ln();
    let peak = (0.5 * z) as usize;
    let ln_term = |k: usize| {
        let kf = k as f64;
        (2.0 * kf + nu) * lh - ln_gamma(kf + 1.0) - ln_gamma(kf + nu + 1.0)
    };
    let top = ln_term(peak);
    let mut sum = 0.0;
    for k in (0..=peak).rev() {
        let e = (ln_term(k) - top).exp();
        sum += e;
        if e < 1e-18 {
            break;
        }
    }
    for k in peak + 1.. {
        let e = (ln_term(k) - top).exp();
        sum += e;
        if e < 1e-18 {
            break;
        }
    }
    top + sum.ln()
}

/// Density of ‖X_t‖ at r given ‖X_0‖ = r0, for the radial process of dimension δ.
///
/// Uses the noncentral chi-square form of the squared Bessel transition
/// density. For δ < 2 the reflecting convention keeps unit mass; the absorbing
/// one returns the density of the part that has not reached 0.
pub fn besq_radial_density(r: f64, t: f64, r0: f64, delta: f64, convention: BoundaryConvention) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::param("t", "must be positive"));
    }
    if !(delta > 0.0) {
        return Err(Error::param("delta", "must be positive"));
    }
    if !(r0 >= 0.0) {
        return Err(Error::param("r0", "must be nonnegative"));
    }
    if r <= 0.0 {
        return Ok(0.0);
    }
    let nu = 0.5 * delta - 1.0;
    let absorbing = delta < 2.0 && convention == BoundaryConvention::Absorbing;
    let y = r * r;
    let ln_q = if r0 == 0.0 {
        if absorbing {
            return Ok(0.0);
        }
        // Gamma(δ/2, 2t) law of ‖X_t‖².
        nu * y.ln() - y / (2.0 * t) - (0.5 * delta) * (2.0 * t).ln() - ln_gamma(0.5 * delta)
    } else {
        let x = r0 * r0;
        let order = if absorbing { nu.abs() } else { nu };
        -(2.0 * t).ln() + 0.5 * nu * (y / x).ln() - (x + y) / (2.0 * t) + ln_bessel_i(order, (x * y).sqrt() / t)
    };
    let ln_p = ln_q + (2.0 * r).ln();
    if !(ln_p > -700.0) {
        return Err(Error::NumericUnderflow { log_value: ln_p });
    }
    Ok(ln_p.exp())
}

/// P(‖X_t‖ ≤ r) by quadrature of the radial density (closed form when r0 = 0).
pub fn besq_radial_cdf(r: f64, t: f64, r0: f64, delta: f64, convention: BoundaryConvention) -> Result<f64> {
    if r <= 0.0 {
        return Ok(0.0);
    }
    if r0 == 0.0 && !(delta < 2.0 && convention == BoundaryConvention::Absorbing) {
        return Ok(gamma_lr(0.5 * delta, r * r / (2.0 * t)));
    }
    let dens = |s: f64| besq_radial_density(s, t, r0, delta, convention).unwrap_or(0.0);
    let head = (0.02 * t.sqrt()).min(r);
    let mut total = integrate_1d(dens, 0.0, head, Ends::Left, &QuadConfig::default().with_rtol(1e-6))?.value;
    if r > head {
        let rule = GaussLegendre::new(16);
        let panels = ((r - head) / (0.05 * t.sqrt())).ceil().max(1.0) as usize;
        let h = (r - head) / panels as f64;
        for i in 0..panels {
            let a = head + i as f64 * h;
            total += rule.integrate(a, a + h, dens);
        }
    }
    Ok(total)
}

/// Probability that reflected Brownian motion from `r0` enters [0, ε] by time `t`.
///
/// This is the δ = 1 case of the radial process, 2Φ(−(r0 − ε)/√t).
///
/// ```
/// let p = wdiff::oracle::reflected_hit_probability(1.0, 1.0, 5.0);
/// assert_eq!(p, 1.0);
/// ```
pub fn reflected_hit_probability(r0: f64, eps: f64, t: f64) -> f64 {
    if r0 <= eps {
        return 1.0;
    }
    erfc((r0 - eps) / (2.0 * t).sqrt())
}

/// Near an unhit radius the step is capped at (HIT_STEP · (R − ε))².
const HIT_STEP: f64 = 0.1;

/// Settings for the one-dimensional radial reference simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialSimOptions {
    pub convention: BoundaryConvention,
    /// Reflection floor near 0.
    pub r_floor: f64,
    /// Drift displacement cap as a fraction of R.
    pub theta: f64,
    pub dt_min: f64,
    /// Radius whose first entry is timed, using Brownian-bridge crossing probabilities between steps.
    pub hit_radius: Option<f64>,
}

impl Default for RadialSimOptions {
    fn default() -> Self {
        RadialSimOptions {
            convention: BoundaryConvention::Reflecting,
            r_floor: 1e-6,
            theta: 0.1,
            dt_min: 1e-8,
            hit_radius: None,
        }
    }
}

/// Terminal radii of the reference simulation together with boundary events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialSample {
    pub delta: f64,
    pub values: Vec<f64>,
    /// Number of paths that touched the floor.
    pub touches: usize,
    /// First entry time into the hit radius, per path.
    pub hit_times: Vec<Option<f64>>,
}

impl RadialSample {
    pub fn hit_count(&self) -> usize {
        self.hit_times.iter().filter(|h| h.is_some()).count()
    }
}

/// Simulate dR = dW + ((δ−1)/2R)dt up to time t, n paths, path i on stream i.
pub fn radial_reference_sim(
    delta: f64,
    r0: f64,
    t: f64,
    n: usize,
    dt: f64,
    seed: u64,
    opts: &RadialSimOptions,
) -> Result<RadialSample> {
    if !(delta > 0.0) {
        return Err(Error::param("delta", "must be positive"));
    }
    if !(t > 0.0 && dt > 0.0 && dt <= t) {
        return Err(Error::param("dt", "need 0 < dt <= t"));
    }
    if !(r0 >= 0.0) {
        return Err(Error::param("r0", "must be nonnegative"));
    }
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let runs: Vec<(f64, bool, Option<f64>)> = (0..n as u64)
        .into_par_iter()
        .map(|i| radial_path(delta, r0, t, dt, seed, i, opts))
        .collect();
    Ok(RadialSample {
        delta,
        touches: runs.iter().filter(|r| r.1).count(),
        values: runs.iter().map(|r| r.0).collect(),
        hit_times: runs.iter().map(|r| r.2).collect(),
    })
}

fn radial_path(
    delta: f64,
    r0: f64,
    horizon: f64,
    dt: f64,
    seed: u64,
    id: u64,
    o: &RadialSimOptions,
) -> (f64, bool, Option<f64>) {
    let mut rng = stream(seed, id);
    let c = 0.5 * (delta - 1.0);
    let mut r = r0;
    let mut t = 0.0;
    let mut touched = false;
    let mut hit = o.hit_radius.filter(|e| r0 <= *e).map(|_| 0.0);
    if r0 == 0.0 {
        let h = dt.min(horizon);
        if o.convention == BoundaryConvention::Absorbing && delta < 2.0 {
            return (0.0, true, hit);
        }
        // Exact first step from the origin: R² ~ Gamma(δ/2, scale 2h).
        let g = Gamma::new(0.5 * delta, 2.0 * h).expect("positive shape and scale");
        r = g.sample(&mut rng).sqrt();
        t = h;
    }
    while t < horizon {
        let remaining = horizon - t;
        let mut nominal = if remaining <= dt * (1.0 + 1e-9) { remaining } else { dt };
        if let (Some(eps), None) = (o.hit_radius, hit) {
            // Keep the drift negligible over a step so the bridge test stays accurate.
            nominal = nominal.min((HIT_STEP * (r - eps)).powi(2).max(o.dt_min));
        }
        let z = standard_normal(&mut rng);
        let b = c / r.max(o.r_floor);
        let cap = o.theta * r.max(o.dt_min.sqrt());
        let mut h = nominal;
        let mut disp_scale = 1.0;
        if b.abs() * h > cap {
            h = (cap / b.abs()).max(o.dt_min).min(nominal);
            if b.abs() * h > cap {
                disp_scale = cap / (b.abs() * h);
            }
        }
        let mut next = r + h.sqrt() * z + b * h * disp_scale;
        if let (Some(eps), None) = (o.hit_radius, hit) {
            if next <= eps {
                let s = if r > eps { (r - eps) / (r - next) } else { 0.0 };
                hit = Some(t + s * h);
            } else {
                // Probability that the bridge between the endpoints dipped below eps.
                let p = (-2.0 * (r - eps) * (next - eps) / h).exp();
                if rng.random::<f64>() < p {
                    hit = Some(t + h * rng.random::<f64>());
                }
            }
        }
        if next < o.r_floor {
            touched = true;
            match o.convention {
                BoundaryConvention::Absorbing if delta < 2.0 => return (0.0, touched, hit),
                _ => next = next.abs().max(o.r_floor),
            }
        }
        r = next;
        t = if h == nominal && nominal == remaining {
            horizon
        } else {
            t + h
        };
    }
    (r, touched, hit)
}
