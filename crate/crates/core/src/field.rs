//! Scalar fields on ℝ^d with analytic first and second derivatives.
//!
//! These serve as exponents φ of exponential weights, bounded multipliers,
//! test functions u, f, g, and sources of Riesz potentials. The built-in
//! variants serialize to JSON; closures can be wrapped with
//! [`ScalarField::custom`] and fall back to central differences for
//! derivatives.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{distance, dot, norm, norm_sq, BoxRegion};

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A user-supplied scalar field.
#[derive(Clone)]
pub struct CustomField {
    pub name: String,
    value: Arc<ValueFn>,
    gradient: Option<Arc<GradientFn>>,
    support: Option<BoxRegion>,
}

impl fmt::Debug for CustomField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomField")
            .field("name", &self.name)
            .field("analytic_gradient", &self.gradient.is_some())
            .field("support", &self.support)
            .finish()
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarField {
    Constant {
        value: f64,
    },
    /// ⟨coef, x⟩ + offset
    Linear {
        coef: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    /// The i-th coordinate function x ↦ x_i (zero-based).
    Coordinate {
        index: usize,
    },
    /// scale · log‖x‖
    LogNorm {
        #[serde(default = "one")]
        scale: f64,
    },
    /// ‖x‖^exponent
    PowerNorm {
        exponent: f64,
    },
    /// ‖x‖²
    SquaredNorm,
    /// amplitude · exp(1 − 1/(1 − ‖x − c‖²/R²)) inside B_R(c), zero outside.
    /// The value at the center equals `amplitude`.
    Bump {
        center: Vec<f64>,
        radius: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Indicator of the open ball B_R(c).
    BallIndicator {
        center: Vec<f64>,
        radius: f64,
    },
    /// base + amplitude · sin⟨frequency, x⟩
    Oscillation {
        base: f64,
        amplitude: f64,
        frequency: Vec<f64>,
    },
    #[serde(skip)]
    Custom(CustomField),
}

const FD_STEP: f64 = 1e-5;

impl ScalarField {
    pub fn custom<F>(name: impl Into<String>, value: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        ScalarField::Custom(CustomField {
            name: name.into(),
            value: Arc::new(value),
            gradient: None,
            support: None,
        })
    }

    /// Attach an analytic gradient to a custom field (no-op for built-ins).
    pub fn with_gradient<G>(self, gradient: G) -> Self
    where
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        match self {
            ScalarField::Custom(mut c) => {
                c.gradient = Some(Arc::new(gradient));
                ScalarField::Custom(c)
            }
            other => other,
        }
    }

    /// Declare a compact support box for a custom field (no-op for built-ins).
    pub fn with_support(self, support: BoxRegion) -> Self {
        match self {
            ScalarField::Custom(mut c) => {
                c.support = Some(support);
                ScalarField::Custom(c)
            }
            other => other,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ScalarField::Constant { value } => *value,
            ScalarField::Linear { coef, offset } => dot(coef, x) + offset,
            ScalarField::Coordinate { index } => x[*index],
            ScalarField::LogNorm { scale } => scale * norm(x).ln(),
            ScalarField::PowerNorm { exponent } => {
                if *exponent == 0.0 {
                    1.0
                } else {
                    norm(x).powf(*exponent)
                }
            }
            ScalarField::SquaredNorm => norm_sq(x),
            ScalarField::Bump {
                center,
                radius,
                amplitude,
            } => {
                let q = distance(x, center).powi(2) / (radius * radius);
                if q < 1.0 {
                    amplitude * (1.0 - 1.0 / (1.0 - q)).exp()
                } else {
                    0.0
                }
            }
            ScalarField::BallIndicator { center, radius } => {
                if distance(x, center) < *radius {
                    1.0
                } else {
                    0.0
                }
            }
            ScalarField::Oscillation {
                base,
                amplitude,
                frequency,
            } => base + amplitude * dot(frequency, x).sin(),
            ScalarField::Custom(c) => (c.value)(x),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        match self {
            ScalarField::Constant { .. } | ScalarField::BallIndicator { .. } => vec![0.0; d],
            ScalarField::Linear { coef, .. } => coef.clone(),
            ScalarField::Coordinate { index } => {
                let mut g = vec![0.0; d];
                g[*index] = 1.0;
                g
            }
            ScalarField::LogNorm { scale } => {
                let r2 = norm_sq(x);
                x.iter().map(|v| scale * v / r2).collect()
            }
            ScalarField::PowerNorm { exponent } => {
                if *exponent == 0.0 {
                    return vec![0.0; d];
                }
                let r = norm(x);
                let c = exponent * r.powf(exponent - 2.0);
                x.iter().map(|v| c * v).collect()
            }
            ScalarField::SquaredNorm => x.iter().map(|v| 2.0 * v).collect(),
            ScalarField::Bump {
                center,
                radius,
                amplitude,
            } => {
                let r2 = radius * radius;
                let q = distance(x, center).powi(2) / r2;
                if q >= 1.0 {
                    return vec![0.0; d];
                }
                let one_m = 1.0 - q;
                let val = amplitude * (1.0 - 1.0 / one_m).exp();
                // d/dq exp(1 - 1/(1-q)) = -exp(..)/(1-q)^2 ; dq/dx = 2(x-c)/R^2
                let c = -val / (one_m * one_m) * 2.0 / r2;
                x.iter().zip(center).map(|(xi, ci)| c * (xi - ci)).collect()
            }
            ScalarField::Oscillation {
                amplitude, frequency, ..
            } => {
                let c = amplitude * dot(frequency, x).cos();
                frequency.iter().map(|k| c * k).collect()
            }
            ScalarField::Custom(c) => match &c.gradient {
                Some(g) => g(x),
                None => central_gradient(|y| (c.value)(y), x),
            },
        }
    }

    /// Row-major d×d Hessian.
    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut h = vec![0.0; d * d];
        match self {
            ScalarField::Constant { .. }
            | ScalarField::Linear { .. }
            | ScalarField::Coordinate { .. }
            | ScalarField::BallIndicator { .. } => {}
            ScalarField::SquaredNorm => {
                for i in 0..d {
                    h[i * d + i] = 2.0;
                }
            }
            ScalarField::LogNorm { scale } => {
                let r2 = norm_sq(x);
                for i in 0..d {
                    for j in 0..d {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        h[i * d + j] = scale * (delta / r2 - 2.0 * x[i] * x[j] / (r2 * r2));
                    }
                }
            }
            ScalarField::PowerNorm { exponent } => {
                let p = *exponent;
                if p != 0.0 {
                    let r = norm(x);
                    let a = p * r.powf(p - 2.0);
                    let b = p * (p - 2.0) * r.powf(p - 4.0);
                    for i in 0..d {
                        for j in 0..d {
                            let delta = if i == j { 1.0 } else { 0.0 };
                            h[i * d + j] = a * delta + b * x[i] * x[j];
                        }
                    }
                }
            }
            ScalarField::Bump {
                center,
                radius,
                amplitude,
            } => {
                let r2 = radius * radius;
                let q = distance(x, center).powi(2) / r2;
                if q < 1.0 {
                    let m = 1.0 - q;
                    let e = amplitude * (1.0 - 1.0 / m).exp();
                    // g(q) = e(q); g' = -e/m^2; g'' = e/m^4 - 2e/m^3
                    let g1 = -e / (m * m);
                    let g2 = e / m.powi(4) - 2.0 * e / m.powi(3);
                    for i in 0..d {
                        for j in 0..d {
                            let delta = if i == j { 1.0 } else { 0.0 };
                            let yi = x[i] - center[i];
                            let yj = x[j] - center[j];
                            h[i * d + j] = g2 * 4.0 * yi * yj / (r2 * r2) + g1 * 2.0 * delta / r2;
                        }
                    }
                }
            }
            ScalarField::Oscillation {
                amplitude, frequency, ..
            } => {
                let s = -amplitude * dot(frequency, x).sin();
                for i in 0..d {
                    for j in 0..d {
                        h[i * d + j] = s * frequency[i] * frequency[j];
                    }
                }
            }
            ScalarField::Custom(_) => {
                let step = FD_STEP * norm(x).max(1.0);
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                for j in 0..d {
                    xp[j] += step;
                    xm[j] -= step;
                    let gp = self.gradient(&xp);
                    let gm = self.gradient(&xm);
                    xp[j] = x[j];
                    xm[j] = x[j];
                    for i in 0..d {
                        h[i * d + j] = (gp[i] - gm[i]) / (2.0 * step);
                    }
                }
                // symmetrize
                for i in 0..d {
                    for j in 0..i {
                        let m = 0.5 * (h[i * d + j] + h[j * d + i]);
                        h[i * d + j] = m;
                        h[j * d + i] = m;
                    }
                }
            }
        }
        h
    }

    /// Axis-aligned box outside of which the field vanishes, if it has compact support.
    pub fn support(&self) -> Option<BoxRegion> {
        match self {
            ScalarField::Bump { center, radius, .. } | ScalarField::BallIndicator { center, radius } => {
                Some(BoxRegion {
                    lo: center.iter().map(|c| c - radius).collect(),
                    hi: center.iter().map(|c| c + radius).collect(),
                })
            }
            ScalarField::Custom(c) => c.support.clone(),
            _ => None,
        }
    }

    /// If the field depends on ‖x‖ only, its profile s ↦ f(s).
    pub fn radial_profile(&self) -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        match self {
            ScalarField::Constant { value } => {
                let v = *value;
                Some(Box::new(move |_| v))
            }
            ScalarField::LogNorm { scale } => {
                let c = *scale;
                Some(Box::new(move |s: f64| c * s.ln()))
            }
            ScalarField::PowerNorm { exponent } => {
                let p = *exponent;
                Some(Box::new(move |s: f64| if p == 0.0 { 1.0 } else { s.powf(p) }))
            }
            ScalarField::SquaredNorm => Some(Box::new(|s: f64| s * s)),
            _ => None,
        }
    }

    /// Exponent γ of a power-type behaviour ‖x‖^γ at the origin, when known.
    pub fn origin_exponent(&self) -> Option<f64> {
        match self {
            ScalarField::PowerNorm { exponent } => Some(*exponent),
            _ => None,
        }
    }

    /// Whether the field is finite at x.
    pub fn is_finite_at(&self, x: &[f64]) -> bool {
        self.value(x).is_finite()
    }
}

/// Central-difference gradient with relative step 10⁻⁵·max(1, ‖x‖).
pub fn central_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
    let step = FD_STEP * norm(x).max(1.0);
    let mut y = x.to_vec();
    (0..x.len())
        .map(|j| {
            y[j] = x[j] + step;
            let fp = f(&y);
            y[j] = x[j] - step;
            let fm = f(&y);
            y[j] = x[j];
            (fp - fm) / (2.0 * step)
        })
        .collect()
}
