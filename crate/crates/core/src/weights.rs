//! Weight functions ρ and numerical checks of the weight-class conditions:
//! doubling, Muckenhoupt A₂, a Poincaré-type ratio and the exponential-BMO
//! average.
//!
//! Ball integrals of radial weights (power weights, and exponential or
//! custom weights whose exponent or density depends on ‖x‖ only) are
//! computed by deterministic radial-shell quadrature with exact spherical-cap
//! geometry. Everything else uses stratified Monte Carlo with a two-level
//! convergence test, importance-sampled around the origin when the weight
//! behaves like ‖x‖^γ there.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::{norm, norm_sq, Ball, BoxRegion};
use crate::quadrature::{
    radial_ball_integral, stratified_ball_nodes, stratified_box_nodes, two_level_mc, Estimate, Nodes, QuadConfig,
};
use crate::rng;

/// The family a weight belongs to.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightKind {
    /// ρ(x) = ‖x‖^α
    Power { alpha: f64 },
    /// ρ(x) = e^{φ(x)}
    Exponential { phi: ScalarField },
    /// ρ(x) = m(x)·base(x) with a multiplier m taking values in [1/bound, bound].
    Product {
        multiplier: ScalarField,
        bound: f64,
        base: Box<Weight>,
    },
    /// ρ(x) = density(x); the density's own gradient is used for ∇ρ.
    Custom { density: ScalarField },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeightSpec {
    #[serde(flatten)]
    kind: WeightKind,
    dim: usize,
}

/// A positive density ρ on ℝ^d.
///
/// ```
/// use wdiff::weights::Weight;
/// let w: Weight = serde_json::from_str(r#"{"kind":"power","alpha":1.0,"dim":3}"#).unwrap();
/// assert_eq!(w.eval(&[2.0, 0.0, 0.0]).unwrap(), 2.0);
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "WeightSpec", into = "WeightSpec")]
pub struct Weight {
    kind: WeightKind,
    dim: usize,
}

impl TryFrom<WeightSpec> for Weight {
    type Error = Error;

    fn try_from(spec: WeightSpec) -> Result<Self> {
        Weight::new(spec.kind, spec.dim)
    }
}

impl From<Weight> for WeightSpec {
    fn from(w: Weight) -> Self {
        WeightSpec {
            kind: w.kind,
            dim: w.dim,
        }
    }
}

const MULTIPLIER_PROBES: usize = 512;

impl Weight {
    pub fn new(kind: WeightKind, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidWeight(format!("dimension must be at least 2, got {dim}")));
        }
        match &kind {
            WeightKind::Power { alpha } => {
                if !alpha.is_finite() || *alpha <= -(dim as f64) {
                    return Err(Error::InvalidWeight(format!(
                        "power weight needs alpha > -d = {}, got {alpha}",
                        -(dim as f64)
                    )));
                }
            }
            WeightKind::Product {
                multiplier,
                bound,
                base,
            } => {
                if !(*bound >= 1.0) {
                    return Err(Error::InvalidWeight(format!(
                        "multiplier bound must be >= 1, got {bound}"
                    )));
                }
                if base.dim != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: base.dim,
                    });
                }
                check_multiplier(multiplier, *bound, dim)?;
            }
            WeightKind::Exponential { .. } | WeightKind::Custom { .. } => {}
        }
        Ok(Weight { kind, dim })
    }

    pub fn power(alpha: f64, dim: usize) -> Result<Self> {
        Weight::new(WeightKind::Power { alpha }, dim)
    }

    pub fn exponential(phi: ScalarField, dim: usize) -> Result<Self> {
        Weight::new(WeightKind::Exponential { phi }, dim)
    }

    pub fn product(multiplier: ScalarField, bound: f64, base: Weight) -> Result<Self> {
        let dim = base.dim;
        Weight::new(
            WeightKind::Product {
                multiplier,
                bound,
                base: Box::new(base),
            },
            dim,
        )
    }

    pub fn custom(density: ScalarField, dim: usize) -> Result<Self> {
        Weight::new(WeightKind::Custom { density }, dim)
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The power exponent α for power weights.
    pub fn power_alpha(&self) -> Option<f64> {
        match self.kind {
            WeightKind::Power { alpha } => Some(alpha),
            _ => None,
        }
    }

    /// ρ(x) without singularity checks; may be 0 or ∞.
    pub fn eval_raw(&self, x: &[f64]) -> f64 {
        match &self.kind {
            WeightKind::Power { alpha } => {
                if *alpha == 0.0 {
                    1.0
                } else {
                    norm(x).powf(*alpha)
                }
            }
            WeightKind::Exponential { phi } => phi.value(x).exp(),
            WeightKind::Product { multiplier, base, .. } => multiplier.value(x) * base.eval_raw(x),
            WeightKind::Custom { density } => density.value(x),
        }
    }

    /// ρ(x), rejecting points where the weight is singular.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let v = self.eval_raw(x);
        if v.is_finite() && v >= 0.0 {
            Ok(v)
        } else {
            Err(Error::SingularPoint { point: x.to_vec() })
        }
    }

    /// ∇log ρ(x).
    pub fn grad_log(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = match &self.kind {
            WeightKind::Power { alpha } => {
                let r2 = norm_sq(x);
                if *alpha == 0.0 {
                    vec![0.0; x.len()]
                } else if r2 == 0.0 {
                    return Err(Error::SingularPoint { point: x.to_vec() });
                } else {
                    x.iter().map(|v| alpha * v / r2).collect()
                }
            }
            WeightKind::Exponential { phi } => phi.gradient(x),
            WeightKind::Product { multiplier, base, .. } => {
                let m = multiplier.value(x);
                let gm = multiplier.gradient(x);
                let gb = base.grad_log(x)?;
                gm.iter().zip(&gb).map(|(a, b)| a / m + b).collect()
            }
            WeightKind::Custom { density } => {
                let v = density.value(x);
                if !(v > 0.0) {
                    return Err(Error::SingularPoint { point: x.to_vec() });
                }
                density.gradient(x).iter().map(|g| g / v).collect()
            }
        };
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(Error::SingularPoint { point: x.to_vec() })
        }
    }

    /// ∇ρ(x).
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let rho = self.eval(x)?;
        Ok(self.grad_log(x)?.into_iter().map(|g| g * rho).collect())
    }

    /// s ↦ ρ at any point of norm s, for weights depending on ‖x‖ only.
    pub fn radial_profile(&self) -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        match &self.kind {
            WeightKind::Power { alpha } => {
                let a = *alpha;
                Some(Box::new(move |s: f64| if a == 0.0 { 1.0 } else { s.powf(a) }))
            }
            WeightKind::Exponential { phi } => {
                let p = phi.radial_profile()?;
                Some(Box::new(move |s| p(s).exp()))
            }
            WeightKind::Product { multiplier, base, .. } => {
                let m = multiplier.radial_profile()?;
                let b = base.radial_profile()?;
                Some(Box::new(move |s| m(s) * b(s)))
            }
            WeightKind::Custom { density } => density.radial_profile(),
        }
    }

    /// Exponent γ with ρ(x) ≍ ‖x‖^γ near the origin, when known.
    pub fn origin_exponent(&self) -> Option<f64> {
        match &self.kind {
            WeightKind::Power { alpha } => Some(*alpha),
            WeightKind::Exponential { phi } => match phi {
                ScalarField::LogNorm { scale } => Some(*scale),
                _ => None,
            },
            WeightKind::Product { base, .. } => base.origin_exponent(),
            WeightKind::Custom { density } => density.origin_exponent(),
        }
    }
}

fn check_multiplier(m: &ScalarField, bound: f64, dim: usize) -> Result<()> {
    let mut rng = rng::stream(0x3417, dim as u64);
    for _ in 0..MULTIPLIER_PROBES {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        let v = m.value(&x);
        if !(v >= 1.0 / bound && v <= bound) {
            return Err(Error::InvalidWeight(format!(
                "multiplier value {v} at {x:?} outside [1/{bound}, {bound}]"
            )));
        }
    }
    Ok(())
}

/// ∫_b ρ^p dx.
pub fn ball_power_integral(w: &Weight, b: &Ball, p: f64, cfg: &QuadConfig) -> Result<Estimate> {
    if b.dim() != w.dim {
        return Err(Error::DimensionMismatch {
            expected: w.dim,
            got: b.dim(),
        });
    }
    if let Some(profile) = w.radial_profile() {
        return radial_ball_integral(|s| profile(s).powf(p), w.dim, norm(&b.center), b.radius, cfg);
    }
    let gamma = w.origin_exponent().map(|g| g * p);
    two_level_mc(cfg, |n, seed| {
        let nodes = stratified_ball_nodes(b, n, seed, gamma);
        Ok(nodes
            .iter()
            .map(|(y, wt)| if wt == 0.0 { 0.0 } else { wt * w.eval_raw(y).powf(p) })
            .sum())
    })
}

/// m(B) = ∫_B ρ dx.
pub fn ball_mass(w: &Weight, b: &Ball, cfg: &QuadConfig) -> Result<Estimate> {
    ball_power_integral(w, b, 1.0, cfg)
}

fn ratio_estimate(num: Estimate, den: Estimate, scale: f64) -> Estimate {
    let value = scale * num.value / den.value;
    Estimate {
        value,
        error: value.abs() * (num.relative_error() + den.relative_error()),
    }
}

/// (avg_b ρ)·(avg_b ρ⁻¹).
pub fn a2_ratio(w: &Weight, b: &Ball, cfg: &QuadConfig) -> Result<Estimate> {
    let plus = ball_power_integral(w, b, 1.0, cfg)?;
    let minus = ball_power_integral(w, b, -1.0, cfg)?;
    let vol = b.volume();
    let value = plus.value * minus.value / (vol * vol);
    Ok(Estimate {
        value,
        error: value * (plus.relative_error() + minus.relative_error()),
    })
}

/// m(B_{2r}(x)) / m(B_r(x)).
pub fn doubling_ratio(w: &Weight, b: &Ball, cfg: &QuadConfig) -> Result<Estimate> {
    let big = ball_mass(w, &b.scaled(2.0), cfg)?;
    let small = ball_mass(w, b, cfg)?;
    Ok(ratio_estimate(big, small, 1.0))
}

/// Sampling and verdict settings for the batch weight-class checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassCheckOptions {
    /// Radii are drawn log-uniformly from this range.
    pub radius_range: (f64, f64),
    /// Pass threshold; `None` selects the condition's default.
    pub threshold: Option<f64>,
    pub quad: QuadConfig,
}

impl Default for ClassCheckOptions {
    fn default() -> Self {
        ClassCheckOptions {
            radius_range: (1e-3, 10.0),
            threshold: None,
            quad: QuadConfig::default(),
        }
    }
}

/// Default A₂ pass threshold.
pub const A2_THRESHOLD: f64 = 1e3;

/// Default doubling threshold 2^{d+|γ|+1}, with γ the weight's origin exponent (0 if unknown).
pub fn default_doubling_threshold(w: &Weight) -> f64 {
    2f64.powf(w.dim as f64 + w.origin_exponent().unwrap_or(0.0).abs() + 1.0)
}

/// Numeric evidence for one weight-class condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightClassReport {
    pub condition: String,
    /// Largest sampled ratio; infinite when some ball integral diverged.
    pub worst_ratio: f64,
    /// The ball attaining the worst ratio.
    pub worst_ball: Option<Ball>,
    pub region: BoxRegion,
    pub radius_range: (f64, f64),
    pub n_samples: usize,
    /// Balls on which a quadrature failed its convergence test.
    pub n_divergent: usize,
    pub threshold: f64,
    pub pass: bool,
    pub rtol: f64,
    /// Quadrature error estimate of the worst finite ratio.
    pub quad_error: f64,
}

fn sample_ball(region: &BoxRegion, range: (f64, f64), seed: u64, index: usize) -> Result<Ball> {
    let mut rng = rng::stream(seed, index as u64);
    let center: Vec<f64> = region
        .lo
        .iter()
        .zip(&region.hi)
        .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
        .collect();
    let (lo, hi) = (range.0.ln(), range.1.ln());
    let radius = (lo + (hi - lo) * rng.random::<f64>()).exp();
    Ball::new(center, radius)
}

#[allow(clippy::too_many_arguments)]
fn class_check<F>(
    condition: &str,
    w: &Weight,
    region: &BoxRegion,
    n_balls: usize,
    seed: u64,
    opts: &ClassCheckOptions,
    threshold: f64,
    ratio: F,
) -> Result<WeightClassReport>
where
    F: Fn(&Weight, &Ball, &QuadConfig) -> Result<Estimate> + Sync,
{
    if n_balls == 0 {
        return Err(Error::param("n_balls", "must be at least 1"));
    }
    if region.dim() != w.dim {
        return Err(Error::DimensionMismatch {
            expected: w.dim,
            got: region.dim(),
        });
    }
    let (r_lo, r_hi) = opts.radius_range;
    if !(r_lo > 0.0 && r_hi >= r_lo) {
        return Err(Error::param(
            "radius_range",
            format!("need 0 < lo <= hi, got ({r_lo}, {r_hi})"),
        ));
    }
    let results: Vec<Result<(Ball, Option<Estimate>)>> = (0..n_balls)
        .into_par_iter()
        .map(|i| {
            let ball = sample_ball(region, opts.radius_range, seed, i)?;
            let cfg = opts.quad.clone().with_seed(opts.quad.seed.wrapping_add(i as u64));
            match ratio(w, &ball, &cfg) {
                Ok(e) => Ok((ball, Some(e))),
                Err(Error::DivergentIntegral { .. }) => Ok((ball, None)),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut worst = f64::NEG_INFINITY;
    let mut worst_ball = None;
    let mut quad_error = 0.0;
    let mut first_divergent = None;
    let mut n_divergent = 0;
    for r in results {
        match r? {
            (ball, Some(e)) => {
                if e.value > worst {
                    worst = e.value;
                    quad_error = e.error;
                    worst_ball = Some(ball);
                }
            }
            (ball, None) => {
                n_divergent += 1;
                first_divergent.get_or_insert(ball);
            }
        }
    }
    if n_divergent > 0 {
        worst = f64::INFINITY;
        quad_error = f64::INFINITY;
        worst_ball = first_divergent;
    }
    Ok(WeightClassReport {
        condition: condition.to_string(),
        worst_ratio: worst,
        worst_ball,
        region: region.clone(),
        radius_range: opts.radius_range,
        n_samples: n_balls,
        n_divergent,
        threshold,
        pass: worst.is_finite() && worst <= threshold,
        rtol: opts.quad.rtol,
        quad_error,
    })
}

/// Sample balls in `region` and report the largest A₂ ratio.
///
/// A ball on which ρ or ρ⁻¹ fails the quadrature convergence test counts as
/// an infinite ratio and fails the check.
pub fn check_a2(
    w: &Weight,
    region: &BoxRegion,
    n_balls: usize,
    seed: u64,
    opts: &ClassCheckOptions,
) -> Result<WeightClassReport> {
    let threshold = opts.threshold.unwrap_or(A2_THRESHOLD);
    class_check("a2", w, region, n_balls, seed, opts, threshold, a2_ratio)
}

/// Sample balls in `region` and report the largest doubling ratio.
pub fn check_doubling(
    w: &Weight,
    region: &BoxRegion,
    n_balls: usize,
    seed: u64,
    opts: &ClassCheckOptions,
) -> Result<WeightClassReport> {
    let threshold = opts.threshold.unwrap_or_else(|| default_doubling_threshold(w));
    class_check("doubling", w, region, n_balls, seed, opts, threshold, doubling_ratio)
}

fn bmo_once(phi: &ScalarField, nodes: &Nodes, volume: f64) -> f64 {
    let values: Vec<f64> = nodes.iter().map(|(x, _)| phi.value(x)).collect();
    let mean: f64 = nodes.weights.iter().zip(&values).map(|(w, v)| w * v).sum::<f64>() / volume;
    nodes
        .weights
        .iter()
        .zip(&values)
        .map(|(w, v)| w * (v - mean).abs().exp())
        .sum::<f64>()
        / volume
}

/// (1/|Q|)∫_Q e^{|φ − φ_Q|} dx, with φ_Q the average of φ over Q.
pub fn bmo_exp_avg(phi: &ScalarField, cube: &BoxRegion, cfg: &QuadConfig) -> Result<Estimate> {
    let volume = cube.volume();
    two_level_mc(cfg, |n, seed| {
        let nodes = stratified_box_nodes(cube, n, seed);
        Ok(bmo_once(phi, &nodes, volume))
    })
}

/// [∫_b |u − ū_b|² dm] / [r² ∫_b ‖∇u‖² dm], a sampled lower bound for the Poincaré constant.
pub fn poincare_ratio(w: &Weight, b: &Ball, u: &ScalarField, cfg: &QuadConfig) -> Result<Estimate> {
    if b.dim() != w.dim {
        return Err(Error::DimensionMismatch {
            expected: w.dim,
            got: b.dim(),
        });
    }
    let gamma = w.origin_exponent();
    let r2 = b.radius * b.radius;
    two_level_mc(cfg, |n, seed| {
        let nodes = stratified_ball_nodes(b, n, seed, gamma);
        let (mut mass, mut first) = (0.0, 0.0);
        let mut cache = Vec::with_capacity(nodes.len());
        for (y, wt) in nodes.iter() {
            if wt == 0.0 {
                cache.push((0.0, 0.0, 0.0));
                continue;
            }
            let m = wt * w.eval_raw(y);
            let v = u.value(y);
            let g = norm_sq(&u.gradient(y));
            mass += m;
            first += m * v;
            cache.push((m, v, g));
        }
        let mean = first / mass;
        let (mut num, mut den) = (0.0, 0.0);
        for (m, v, g) in cache {
            num += m * (v - mean).powi(2);
            den += m * g;
        }
        if den == 0.0 {
            return Err(Error::DegenerateTestFunction);
        }
        Ok(num / (r2 * den))
    })
}

/// Reference value for [`mean_deviation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    OwnMean,
    Value(f64),
}

/// Σρ(xᵢ)(uᵢ − c)² / Σρ(xᵢ), with c the weighted mean or a given value.
pub fn mean_deviation(samples: &[(Vec<f64>, f64)], w: &Weight, reference: Reference) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::param("samples", "must be nonempty"));
    }
    let weights = samples.iter().map(|(x, _)| w.eval(x)).collect::<Result<Vec<_>>>()?;
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::param("samples", "total weight is zero"));
    }
    let c = match reference {
        Reference::Value(c) => c,
        Reference::OwnMean => weights.iter().zip(samples).map(|(r, (_, u))| r * u).sum::<f64>() / total,
    };
    Ok(weights
        .iter()
        .zip(samples)
        .map(|(r, (_, u))| r * (u - c).powi(2))
        .sum::<f64>()
        / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_weight_rejects_non_integrable_exponent() {
        assert!(matches!(Weight::power(-3.0, 3), Err(Error::InvalidWeight(_))));
        assert!(Weight::power(-2.99, 3).is_ok());
    }

    #[test]
    fn eval_singular_point() {
        let w = Weight::power(-1.0, 3).unwrap();
        assert!(matches!(w.eval(&[0.0; 3]), Err(Error::SingularPoint { .. })));
        assert_eq!(Weight::power(0.0, 3).unwrap().eval(&[0.0; 3]).unwrap(), 1.0);
    }

    #[test]
    fn exponential_log_norm_is_identity_on_norm() {
        let w = Weight::exponential(ScalarField::LogNorm { scale: 1.0 }, 3).unwrap();
        let e = std::f64::consts::E;
        assert!((w.eval(&[e, 0.0, 0.0]).unwrap() - e).abs() < 1e-14);
        assert_eq!(w.origin_exponent(), Some(1.0));
    }

    #[test]
    fn product_bound_is_enforced() {
        let base = Weight::power(1.0, 2).unwrap();
        let good = ScalarField::Oscillation {
            base: 2.0,
            amplitude: 0.5,
            frequency: vec![1.0, 1.0],
        };
        assert!(Weight::product(good.clone(), 3.0, base.clone()).is_ok());
        assert!(Weight::product(good, 1.5, base).is_err());
    }

    #[test]
    fn json_form_roundtrips() {
        let w: Weight = serde_json::from_str(r#"{"kind":"power","alpha":1.0,"dim":3}"#).unwrap();
        assert_eq!(w.power_alpha(), Some(1.0));
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(s, r#"{"kind":"power","alpha":1.0,"dim":3}"#);
        let bad = serde_json::from_str::<Weight>(r#"{"kind":"power","alpha":-4.0,"dim":3}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn grad_log_of_product_adds() {
        let base = Weight::power(2.0, 2).unwrap();
        let m = ScalarField::Oscillation {
            base: 2.0,
            amplitude: 0.5,
            frequency: vec![1.0, 0.0],
        };
        let w = Weight::product(m, 3.0, base).unwrap();
        let x = [0.7, -0.4];
        let g = w.gradient(&x).unwrap();
        let fd = crate::field::central_gradient(|y| w.eval_raw(y), &x);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn mean_deviation_examples() {
        let w = Weight::power(0.0, 2).unwrap();
        let s = vec![(vec![1.0, 0.0], 0.0), (vec![0.0, 1.0], 1.0)];
        assert!((mean_deviation(&s, &w, Reference::OwnMean).unwrap() - 0.25).abs() < 1e-15);
        assert!((mean_deviation(&s, &w, Reference::Value(0.0)).unwrap() - 0.5).abs() < 1e-15);
    }
}
