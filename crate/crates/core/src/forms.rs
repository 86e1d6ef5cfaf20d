//! Diffusion matrices A(x) and everything derived from them: ellipticity,
//! SDE coefficients, the generator, the energy form, the integration-by-parts
//! identity, intrinsic-metric bounds and the local integrability conditions.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::{distance, norm, norm_sq, BoxRegion, Region};
use crate::quadrature::{
    integrate_box, shell_integral, stratified_ball_nodes, stratified_box_nodes, two_level_mc, Estimate, QuadConfig,
};
use crate::rng;
use crate::weights::Weight;

/// A symmetric matrix field A(x) with its row divergence, tied to a weight ρ.
pub trait CoefficientField: Send + Sync {
    fn dim(&self) -> usize;
    fn weight(&self) -> &Weight;
    /// Row-major A(x).
    fn matrix(&self, x: &[f64]) -> Vec<f64>;
    /// (Σⱼ ∂ⱼ a_ij(x))_i.
    fn divergence(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// What drift and dispersion return where the weight is singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularPolicy {
    /// Drift 0 and the dispersion of a nearby regular point.
    #[default]
    ZeroAtSingularity,
    Error,
}

/// How the row divergence is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceMode {
    #[default]
    Analytic,
    /// Central differences with step 10⁻⁵·max(1, ‖x‖).
    FiniteDifference,
}

type MatrixFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type VectorFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
enum Structure {
    /// A = ρ·M for a constant SPD matrix M.
    Scaled {
        m: Vec<f64>,
        sqrt_m: Vec<f64>,
        identity: bool,
    },
    General {
        matrix: Arc<MatrixFn>,
        divergence: Option<Arc<VectorFn>>,
    },
}

/// A diffusion matrix field with declared ellipticity constant.
#[derive(Clone)]
pub struct DiffusionField {
    name: String,
    dim: usize,
    weight: Weight,
    structure: Structure,
    lambda: f64,
    policy: SingularPolicy,
    divergence_mode: DivergenceMode,
}

impl fmt::Debug for DiffusionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("weight", &self.weight)
            .field("lambda", &self.lambda)
            .field("policy", &self.policy)
            .field("divergence_mode", &self.divergence_mode)
            .finish()
    }
}

const FD_REL_STEP: f64 = 1e-5;

fn fd_step(x: &[f64]) -> f64 {
    FD_REL_STEP * norm(x).max(1.0)
}

fn symmetric_eigen(m: &[f64], d: usize) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(DMatrix::from_row_slice(d, d, m))
}

fn asymmetry(m: &[f64], d: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..i {
            worst = worst.max((m[i * d + j] - m[j * d + i]).abs());
        }
    }
    worst
}

fn max_abs(m: &[f64]) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Symmetric positive semidefinite square root of a row-major d×d matrix.
///
/// Eigenvalues in [−10⁻¹²‖M‖, 0) are clamped to zero; anything more negative
/// is rejected.
///
/// ```
/// let s = wdiff::forms::sqrt_spd(&[4.0, 0.0, 0.0, 9.0], 2).unwrap();
/// assert!((s[0] - 2.0).abs() < 1e-14 && (s[3] - 3.0).abs() < 1e-14);
/// ```
pub fn sqrt_spd(m: &[f64], d: usize) -> Result<Vec<f64>> {
    if m.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            got: m.len(),
        });
    }
    let scale = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let asym = asymmetry(m, d);
    if asym > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NonSymmetric { asymmetry: asym });
    }
    let eig = symmetric_eigen(m, d);
    let tol = 1e-12 * scale;
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -tol {
        return Err(Error::Indefinite { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&roots) * v.transpose();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = 0.5 * (s[(i, j)] + s[(j, i)]);
        }
    }
    Ok(out)
}

fn matrix_rows(rows: &[Vec<f64>], pointer: &str) -> Result<(Vec<f64>, usize)> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::schema(pointer, "matrix must be square and nonempty"));
    }
    Ok((rows.iter().flatten().copied().collect(), d))
}

impl DiffusionField {
    fn scaled(name: String, weight: Weight, m: Vec<f64>) -> Result<Self> {
        let d = weight.dim();
        if m.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: m.len(),
            });
        }
        let asym = asymmetry(&m, d);
        if asym > 1e-12 * max_abs(&m) {
            return Err(Error::NonSymmetric { asymmetry: asym });
        }
        let eig = symmetric_eigen(&m, d);
        let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(lo > 0.0) {
            return Err(Error::Indefinite { min_eigenvalue: lo });
        }
        let identity = (0..d).all(|i| (0..d).all(|j| m[i * d + j] == if i == j { 1.0 } else { 0.0 }));
        let sqrt_m = sqrt_spd(&m, d)?;
        Ok(DiffusionField {
            name,
            dim: d,
            weight,
            structure: Structure::Scaled { m, sqrt_m, identity },
            lambda: hi.max(1.0 / lo).max(1.0),
            policy: SingularPolicy::default(),
            divergence_mode: DivergenceMode::default(),
        })
    }

    /// A = ‖x‖^α·I.
    pub fn isotropic_power(alpha: f64, dim: usize) -> Result<Self> {
        let mut m = vec![0.0; dim * dim];
        for i in 0..dim {
            m[i * dim + i] = 1.0;
        }
        DiffusionField::scaled("isotropic_power".into(), Weight::power(alpha, dim)?, m)
    }

    /// A = ‖x‖^α·M for a constant SPD matrix M given by rows.
    pub fn power_times_const_spd(alpha: f64, matrix: &[Vec<f64>]) -> Result<Self> {
        let (m, d) = matrix_rows(matrix, "/matrix")?;
        DiffusionField::scaled("power_times_const_spd".into(), Weight::power(alpha, d)?, m)
    }

    /// A = ρ·M for an arbitrary weight ρ and constant SPD matrix M.
    pub fn weight_times_const_spd(weight: Weight, matrix: &[Vec<f64>]) -> Result<Self> {
        let (m, d) = matrix_rows(matrix, "/matrix")?;
        if d != weight.dim() {
            return Err(Error::DimensionMismatch {
                expected: weight.dim(),
                got: d,
            });
        }
        DiffusionField::scaled("weight_times_const_spd".into(), weight, m)
    }

    /// A field given by closures. Without a divergence closure the divergence
    /// is taken by central differences.
    pub fn from_fn<M, D>(
        name: impl Into<String>,
        weight: Weight,
        lambda: f64,
        matrix: M,
        divergence: Option<D>,
    ) -> Result<Self>
    where
        M: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        D: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        if !(lambda >= 1.0) {
            return Err(Error::param("lambda", format!("must be >= 1, got {lambda}")));
        }
        let mode = if divergence.is_some() {
            DivergenceMode::Analytic
        } else {
            DivergenceMode::FiniteDifference
        };
        Ok(DiffusionField {
            name: name.into(),
            dim: weight.dim(),
            weight,
            structure: Structure::General {
                matrix: Arc::new(matrix),
                divergence: divergence.map(|d| Arc::new(d) as Arc<VectorFn>),
            },
            lambda,
            policy: SingularPolicy::default(),
            divergence_mode: mode,
        })
    }

    /// Look up a field in the registry of named custom fields.
    ///
    /// * `rotating_anisotropic_power`: A(x) = ‖x‖^α (I + s·v vᵀ) with
    ///   v = (cos x₁, sin x₁, 0, …); parameter `strength` s ≥ 0 (default 0.5),
    ///   λ = 1 + s. Its divergence is taken by finite differences.
    pub fn registry(id: &str, dim: usize, alpha: f64, params: &BTreeMap<String, f64>) -> Result<Self> {
        match id {
            "rotating_anisotropic_power" => {
                let s = params.get("strength").copied().unwrap_or(0.5);
                if !(s >= 0.0) {
                    return Err(Error::schema("/params/strength", "must be nonnegative"));
                }
                if let Some(k) = params.keys().find(|k| k.as_str() != "strength") {
                    return Err(Error::schema(format!("/params/{k}"), "unknown parameter"));
                }
                let weight = Weight::power(alpha, dim)?;
                let w = weight.clone();
                DiffusionField::from_fn(
                    id,
                    weight,
                    1.0 + s,
                    move |x: &[f64]| {
                        let rho = w.eval_raw(x);
                        let (c, sn) = (x[0].cos(), x[0].sin());
                        let mut v = vec![0.0; dim];
                        v[0] = c;
                        v[1] = sn;
                        let mut a = vec![0.0; dim * dim];
                        for i in 0..dim {
                            for j in 0..dim {
                                let delta = if i == j { 1.0 } else { 0.0 };
                                a[i * dim + j] = rho * (delta + s * v[i] * v[j]);
                            }
                        }
                        a
                    },
                    None::<fn(&[f64]) -> Vec<f64>>,
                )
            }
            _ => Err(Error::UnknownField(id.to_string())),
        }
    }

    pub fn with_policy(mut self, policy: SingularPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_divergence_mode(mut self, mode: DivergenceMode) -> Self {
        if matches!(self.structure, Structure::General { divergence: None, .. }) {
            return self;
        }
        self.divergence_mode = mode;
        self
    }

    /// Override the declared ellipticity constant.
    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda >= 1.0) {
            return Err(Error::param("lambda", format!("must be >= 1, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Declared ellipticity constant λ.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn policy(&self) -> SingularPolicy {
        self.policy
    }

    pub fn divergence_mode(&self) -> DivergenceMode {
        self.divergence_mode
    }

    /// The constant factor M when A = ρ·M.
    pub fn constant_factor(&self) -> Option<&[f64]> {
        match &self.structure {
            Structure::Scaled { m, .. } => Some(m),
            Structure::General { .. } => None,
        }
    }

    /// Whether A = ‖x‖^α·I, the case with a Bessel reference.
    pub fn isotropic_alpha(&self) -> Option<f64> {
        match &self.structure {
            Structure::Scaled { identity: true, .. } => self.weight.power_alpha(),
            _ => None,
        }
    }

    fn is_singular(&self, x: &[f64]) -> bool {
        let r = self.weight.eval_raw(x);
        !(r.is_finite() && r > 0.0)
    }

    fn singular<T>(&self, x: &[f64], zero: T) -> Result<T> {
        match self.policy {
            SingularPolicy::ZeroAtSingularity => Ok(zero),
            SingularPolicy::Error => Err(Error::SingularPoint { point: x.to_vec() }),
        }
    }

    fn fd_divergence(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let h = fd_step(x);
        let mut y = x.to_vec();
        let mut div = vec![0.0; d];
        for j in 0..d {
            y[j] = x[j] + h;
            let ap = self.matrix(&y);
            y[j] = x[j] - h;
            let am = self.matrix(&y);
            y[j] = x[j];
            for i in 0..d {
                div[i] += (ap[i * d + j] - am[i * d + j]) / (2.0 * h);
            }
        }
        div
    }

    /// A(x)/ρ(x).
    pub fn normalized_matrix(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.structure {
            Structure::Scaled { m, .. } => Ok(m.clone()),
            Structure::General { matrix, .. } => {
                let rho = self.weight.eval_raw(x);
                if !(rho.is_finite() && rho > 0.0) {
                    return Err(Error::SingularPoint { point: x.to_vec() });
                }
                Ok(matrix(x).into_iter().map(|a| a / rho).collect())
            }
        }
    }

    /// ½(Σⱼ∂ⱼa_ij/ρ)(x), subject to the singular-point policy.
    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim;
        if let (Structure::Scaled { m, .. }, DivergenceMode::Analytic) = (&self.structure, self.divergence_mode) {
            let g = match self.weight.grad_log(x) {
                Ok(g) => g,
                Err(Error::SingularPoint { .. }) => return self.singular(x, vec![0.0; d]),
                Err(e) => return Err(e),
            };
            return Ok((0..d)
                .map(|i| 0.5 * (0..d).map(|j| m[i * d + j] * g[j]).sum::<f64>())
                .collect());
        }
        if self.is_singular(x) {
            return self.singular(x, vec![0.0; d]);
        }
        let rho = self.weight.eval_raw(x);
        let div = self.divergence(x)?;
        let b: Vec<f64> = div.iter().map(|v| 0.5 * v / rho).collect();
        if b.iter().all(|v| v.is_finite()) {
            Ok(b)
        } else {
            self.singular(x, vec![0.0; d])
        }
    }

    /// (σ/√ρ)(x) = √(A(x)/ρ(x)), row-major.
    pub fn dispersion(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.structure {
            Structure::Scaled { sqrt_m, .. } => Ok(sqrt_m.clone()),
            Structure::General { .. } => {
                if self.is_singular(x) {
                    if self.policy == SingularPolicy::Error {
                        return Err(Error::SingularPoint { point: x.to_vec() });
                    }
                    let mut y = x.to_vec();
                    y[0] += 1e-8 * norm(x).max(1.0);
                    return sqrt_spd(&self.normalized_matrix(&y)?, self.dim);
                }
                sqrt_spd(&self.normalized_matrix(x)?, self.dim)
            }
        }
    }
}

impl CoefficientField for DiffusionField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn weight(&self) -> &Weight {
        &self.weight
    }

    fn matrix(&self, x: &[f64]) -> Vec<f64> {
        match &self.structure {
            Structure::Scaled { m, .. } => {
                let rho = self.weight.eval_raw(x);
                m.iter().map(|v| rho * v).collect()
            }
            Structure::General { matrix, .. } => matrix(x),
        }
    }

    fn divergence(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim;
        let div = match (&self.structure, self.divergence_mode) {
            (Structure::Scaled { m, .. }, DivergenceMode::Analytic) => {
                let g = self.weight.gradient(x)?;
                (0..d).map(|i| (0..d).map(|j| m[i * d + j] * g[j]).sum()).collect()
            }
            (
                Structure::General {
                    divergence: Some(f), ..
                },
                DivergenceMode::Analytic,
            ) => f(x),
            _ => self.fd_divergence(x),
        };
        if div.iter().all(|v: &f64| v.is_finite()) {
            Ok(div)
        } else {
            Err(Error::SingularPoint { point: x.to_vec() })
        }
    }
}

/// JSON description of a [`DiffusionField`].
///
/// ```
/// use wdiff::forms::{CoefficientField, DiffusionField};
/// let f: DiffusionField = serde_json::from_str::<wdiff::forms::FieldSpec>(
///     r#"{"kind":"isotropic_power","alpha":1.0,"dim":3}"#,
/// )
/// .unwrap()
/// .build()
/// .unwrap();
/// assert_eq!(f.dim(), 3);
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub kind: FieldKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    /// Declared ellipticity constant; derived from M when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub singular_policy: SingularPolicy,
    #[serde(default)]
    pub divergence: DivergenceMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    IsotropicPower,
    PowerTimesConstSpd,
    WeightTimesConstSpd,
    Custom,
}

impl FieldSpec {
    pub fn isotropic_power(alpha: f64, dim: usize) -> Self {
        FieldSpec {
            kind: FieldKind::IsotropicPower,
            dim: Some(dim),
            alpha: Some(alpha),
            matrix: None,
            weight: None,
            id: None,
            params: BTreeMap::new(),
            lambda: None,
            singular_policy: SingularPolicy::default(),
            divergence: DivergenceMode::default(),
        }
    }

    /// Validate and build the field. Errors carry a JSON pointer to the offending key.
    pub fn build(&self) -> Result<DiffusionField> {
        let need_alpha = || {
            self.alpha
                .ok_or_else(|| Error::schema("/alpha", "required for this kind"))
        };
        let need_dim = || self.dim.ok_or_else(|| Error::schema("/dim", "required for this kind"));
        let need_matrix = || {
            self.matrix
                .as_ref()
                .ok_or_else(|| Error::schema("/matrix", "required for this kind"))
        };
        let at = |pointer: &'static str| {
            move |e: Error| match e {
                Error::Schema { .. } => e,
                other => Error::schema(pointer, other.to_string()),
            }
        };
        let field = match self.kind {
            FieldKind::IsotropicPower => {
                DiffusionField::isotropic_power(need_alpha()?, need_dim()?).map_err(at("/alpha"))?
            }
            FieldKind::PowerTimesConstSpd => {
                let rows = need_matrix()?;
                if let Some(d) = self.dim {
                    if d != rows.len() {
                        return Err(Error::schema("/dim", format!("matrix is {0}x{0}", rows.len())));
                    }
                }
                DiffusionField::power_times_const_spd(need_alpha()?, rows).map_err(at("/matrix"))?
            }
            FieldKind::WeightTimesConstSpd => {
                let raw = self
                    .weight
                    .as_ref()
                    .ok_or_else(|| Error::schema("/weight", "required for this kind"))?;
                let weight: Weight = serde_path_to_error::deserialize(raw).map_err(|e| {
                    let path = e.path().to_string();
                    let pointer = if path == "." {
                        "/weight".to_string()
                    } else {
                        format!("/weight/{}", path.replace('.', "/"))
                    };
                    Error::schema(pointer, e.inner().to_string())
                })?;
                DiffusionField::weight_times_const_spd(weight, need_matrix()?).map_err(at("/matrix"))?
            }
            FieldKind::Custom => {
                let id = self
                    .id
                    .as_deref()
                    .ok_or_else(|| Error::schema("/id", "required for custom fields"))?;
                DiffusionField::registry(id, need_dim()?, need_alpha()?, &self.params).map_err(at("/id"))?
            }
        };
        let field = field
            .with_policy(self.singular_policy)
            .with_divergence_mode(self.divergence);
        match self.lambda {
            Some(l) => field.with_lambda(l).map_err(at("/lambda")),
            None => Ok(field),
        }
    }
}

/// Drift and dispersion of the SDE dX = (σ/√ρ)(X)dW + b(X)dt, with fast paths
/// for A = ρ·M.
#[derive(Debug, Clone)]
pub struct SdeCoefficients {
    field: DiffusionField,
}

impl SdeCoefficients {
    pub fn new(field: DiffusionField) -> Self {
        SdeCoefficients { field }
    }

    pub fn field(&self) -> &DiffusionField {
        &self.field
    }

    pub fn dim(&self) -> usize {
        self.field.dim
    }

    /// b(x) = ½(Σⱼ∂ⱼa_ij/ρ)(x).
    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.field.drift(x)
    }

    /// (σ/√ρ)(x), row-major.
    pub fn dispersion(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.field.dispersion(x)
    }

    /// Write b(x) into `out`.
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let f = &self.field;
        if let (Structure::Scaled { m, identity, .. }, DivergenceMode::Analytic, Some(alpha)) =
            (&f.structure, f.divergence_mode, f.weight.power_alpha())
        {
            let r2 = norm_sq(x);
            if alpha == 0.0 {
                out.iter_mut().for_each(|v| *v = 0.0);
                return Ok(());
            }
            if r2 == 0.0 {
                f.singular(x, ())?;
                out.iter_mut().for_each(|v| *v = 0.0);
                return Ok(());
            }
            let c = 0.5 * alpha / r2;
            if *identity {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = c * xi;
                }
            } else {
                let d = x.len();
                for i in 0..d {
                    out[i] = c * (0..d).map(|j| m[i * d + j] * x[j]).sum::<f64>();
                }
            }
            return Ok(());
        }
        out.copy_from_slice(&f.drift(x)?);
        Ok(())
    }

    /// Write (σ/√ρ)(x)·dw into `out`.
    pub fn diffuse_into(&self, x: &[f64], dw: &[f64], out: &mut [f64]) -> Result<()> {
        let d = x.len();
        let s = match &self.field.structure {
            Structure::Scaled { identity: true, .. } => {
                out.copy_from_slice(dw);
                return Ok(());
            }
            Structure::Scaled { sqrt_m, .. } => {
                for i in 0..d {
                    out[i] = (0..d).map(|j| sqrt_m[i * d + j] * dw[j]).sum();
                }
                return Ok(());
            }
            Structure::General { .. } => self.field.dispersion(x)?,
        };
        for i in 0..d {
            out[i] = (0..d).map(|j| s[i * d + j] * dw[j]).sum();
        }
        Ok(())
    }

    /// Whether the dispersion is the identity everywhere.
    pub fn unit_dispersion(&self) -> bool {
        matches!(self.field.structure, Structure::Scaled { identity: true, .. })
    }
}

/// A twice-differentiable test function with an optional compact support box.
#[derive(Debug, Clone)]
pub struct SmoothTestFunction {
    pub field: ScalarField,
    pub support: Option<BoxRegion>,
}

impl SmoothTestFunction {
    pub fn new(field: ScalarField) -> Self {
        let support = field.support();
        SmoothTestFunction { field, support }
    }

    /// The bump exp(1 − 1/(1 − ‖x − c‖²/R²)) supported in B_R(c).
    pub fn bump(center: Vec<f64>, radius: f64) -> Self {
        SmoothTestFunction::new(ScalarField::Bump {
            center,
            radius,
            amplitude: 1.0,
        })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.field.value(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.field.gradient(x)
    }

    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        self.field.hessian(x)
    }
}

/// ½Σ_ij[(a_ij/ρ)∂_ij f + (∂ⱼa_ij/ρ)∂_i f](x).
pub fn apply_generator(c: &SdeCoefficients, f: &SmoothTestFunction, x: &[f64]) -> Result<f64> {
    let d = c.dim();
    let a = c.field.normalized_matrix(x)?;
    let h = f.hessian(x);
    let g = f.gradient(x);
    let b = c.drift(x)?;
    let second: f64 = a.iter().zip(&h).map(|(a, h)| a * h).sum();
    let first: f64 = (0..d).map(|i| b[i] * g[i]).sum();
    Ok(0.5 * second + first)
}

fn support_box(f: &SmoothTestFunction, g: &SmoothTestFunction) -> Result<BoxRegion> {
    match (&f.support, &g.support) {
        (Some(a), Some(b)) => a
            .intersect(b)
            .ok_or_else(|| Error::param("support", "test function supports do not overlap")),
        (Some(a), None) | (None, Some(a)) => Ok(a.clone()),
        (None, None) => Err(Error::param(
            "support",
            "at least one test function needs compact support",
        )),
    }
}

fn quadratic(a: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let d = u.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += a[i * d + j] * u[i] * v[j];
        }
    }
    s
}

/// ℰ^A(f, g) = ½∫⟨A∇f, ∇g⟩dx over the common support box.
pub fn form_energy<F: CoefficientField + ?Sized>(
    field: &F,
    f: &SmoothTestFunction,
    g: &SmoothTestFunction,
    cfg: &QuadConfig,
) -> Result<Estimate> {
    let region = support_box(f, g)?;
    let est = integrate_box(
        |x, out| {
            let a = field.matrix(x);
            let (gf, gg) = (f.gradient(x), g.gradient(x));
            // Summing both orientations keeps ℰ(f,g) and ℰ(g,f) bit-identical.
            let s = 0.25 * (quadratic(&a, &gf, &gg) + quadratic(&a, &gg, &gf));
            out[0] = s;
            out[1] = s.abs();
        },
        &region,
        2,
        Some(1),
        cfg,
    )?;
    Ok(est[0])
}

/// Both sides of the integration-by-parts identity for the coordinate function xᵢ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IbpReport {
    pub index: usize,
    /// ℰ^A(xᵢ, g) = ½∫Σⱼ a_ij ∂ⱼg dx
    pub energy: f64,
    /// ½∫(Σⱼ∂ⱼa_ij/ρ) g dm
    pub drift_term: f64,
    /// |energy + drift_term|
    pub residual: f64,
    /// ½∫|Σⱼ a_ij ∂ⱼg| dx + ½∫|Σⱼ∂ⱼa_ij g| dx
    pub scale: f64,
    pub relative: f64,
    pub quad_error: f64,
}

/// Residual of −ℰ^A(xᵢ, g) = ½∫(Σⱼ∂ⱼa_ij/ρ) g dm over the support of g.
pub fn check_ibp<F: CoefficientField + ?Sized>(
    field: &F,
    index: usize,
    g: &SmoothTestFunction,
    cfg: &QuadConfig,
) -> Result<IbpReport> {
    let d = field.dim();
    if index >= d {
        return Err(Error::param(
            "index",
            format!("coordinate {index} out of range for d = {d}"),
        ));
    }
    let region = g
        .support
        .clone()
        .ok_or_else(|| Error::param("support", "test function needs compact support"))?;
    let est = integrate_box(
        |x, out| {
            let gv = g.value(x);
            let gg = g.gradient(x);
            let a = field.matrix(x);
            let lhs = 0.5 * (0..d).map(|j| a[index * d + j] * gg[j]).sum::<f64>();
            let rhs = if gv == 0.0 {
                0.0
            } else {
                match field.divergence(x) {
                    Ok(div) => 0.5 * div[index] * gv,
                    Err(_) => f64::NAN,
                }
            };
            out[0] = lhs;
            out[1] = rhs;
            out[2] = lhs.abs() + rhs.abs();
        },
        &region,
        3,
        Some(2),
        cfg,
    )?;
    let (energy, drift_term, scale) = (est[0].value, est[1].value, est[2].value);
    let residual = (energy + drift_term).abs();
    Ok(IbpReport {
        index,
        energy,
        drift_term,
        residual,
        scale,
        relative: if scale > 0.0 { residual / scale } else { residual },
        quad_error: est[0].error + est[1].error,
    })
}

/// A closed interval [lo, hi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// The enclosure [‖x−y‖/√λ, √λ‖x−y‖] of the intrinsic distance.
pub fn intrinsic_bounds(lambda: f64, x: &[f64], y: &[f64]) -> Result<Interval> {
    if !(lambda >= 1.0) {
        return Err(Error::param("lambda", format!("must be >= 1, got {lambda}")));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let r = distance(x, y);
    let s = lambda.sqrt();
    Ok(Interval { lo: r / s, hi: s * r })
}

/// Integrability conditions on the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "hp3-i")]
    Hp3I,
    #[serde(rename = "hp3-ii")]
    Hp3Ii,
    #[serde(rename = "hp3-iii")]
    Hp3Iii,
    #[serde(rename = "hp3prime")]
    Hp3Prime,
    #[serde(rename = "hp5")]
    Hp5,
    #[serde(rename = "hp6")]
    Hp6,
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition::Hp3I,
        Condition::Hp3Ii,
        Condition::Hp3Iii,
        Condition::Hp3Prime,
        Condition::Hp5,
        Condition::Hp6,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::Hp3I => "hp3-i",
            Condition::Hp3Ii => "hp3-ii",
            Condition::Hp3Iii => "hp3-iii",
            Condition::Hp3Prime => "hp3prime",
            Condition::Hp5 => "hp5",
            Condition::Hp6 => "hp6",
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .to_ascii_lowercase()
            .chars()
            .filter(|c| !matches!(c, '(' | ')' | '_' | '\''))
            .collect();
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == norm || c.as_str().replace('-', "") == norm)
            .ok_or_else(|| Error::param("condition", format!("unknown condition `{s}`")))
    }
}

/// A set of admissible integrability exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExponentSet {
    /// The open interval (lo, hi); `hi = None` means +∞.
    Open { lo: f64, hi: Option<f64> },
    /// A single exponent.
    Point { value: f64 },
    /// Local boundedness (exponent ∞).
    Infinity,
}

impl ExponentSet {
    pub fn contains(&self, p: f64) -> bool {
        match *self {
            ExponentSet::Open { lo, hi } => p > lo && hi.is_none_or(|h| p < h),
            ExponentSet::Point { value } => p == value,
            ExponentSet::Infinity => p == f64::INFINITY,
        }
    }
}

/// Exponents for which a condition's integrability requirements are met.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentWindow {
    pub condition: Condition,
    pub alpha: f64,
    pub dim: usize,
    /// Whether α lies in the range the condition is stated for; otherwise the window is empty.
    pub applies: bool,
    /// Exponent p for ∂ⱼa_ij ∈ L^p_loc(dx) (or the single stated exponent).
    pub p: Option<ExponentSet>,
    /// Exponent q for ∂ⱼa_ij/ρ ∈ L^q_loc(dx).
    pub q: Option<ExponentSet>,
    pub note: String,
}

/// Solve the condition's strict inequalities for the exponents.
///
/// ```
/// use wdiff::forms::{exponent_window, Condition, ExponentSet};
/// let w = exponent_window(0.0, 3, Condition::Hp3Iii).unwrap();
/// assert_eq!(w.p, Some(ExponentSet::Open { lo: 1.5, hi: Some(3.0) }));
/// ```
pub fn exponent_window(alpha: f64, dim: usize, condition: Condition) -> Result<ExponentWindow> {
    if dim < 2 {
        return Err(Error::param("dim", format!("must be at least 2, got {dim}")));
    }
    let d = dim as f64;
    // 0 < 2 − d/q < 1  ⇔  q ∈ (d/2, d)
    let q_window = ExponentSet::Open {
        lo: d / 2.0,
        hi: Some(d),
    };
    // 0 < 2 − α − d/p < 1  ⇔  d/p ∈ (1 − α, 2 − α)
    let p_window = ExponentSet::Open {
        lo: d / (2.0 - alpha),
        hi: if alpha >= 1.0 { None } else { Some(d / (1.0 - alpha)) },
    };
    let mut w = ExponentWindow {
        condition,
        alpha,
        dim,
        applies: false,
        p: None,
        q: None,
        note: String::new(),
    };
    match condition {
        Condition::Hp3I => {
            w.applies = alpha > -d && alpha <= -d + 2.0;
            w.note = "alpha in (-d, -d+2]; ∂ⱼa_ij/ρ in L^1_loc(m) and in L^q_loc(dx)".into();
            if w.applies {
                w.q = Some(q_window);
            }
        }
        Condition::Hp3Ii => {
            w.applies = alpha > -d + 2.0 && alpha < 0.0;
            w.note = "alpha in (-d+2, 0); ∂ⱼa_ij in L^p_loc(dx), ∂ⱼa_ij/ρ in L^q_loc(dx)".into();
            if w.applies {
                w.p = Some(p_window);
                w.q = Some(q_window);
            }
        }
        Condition::Hp3Iii => {
            w.applies = (0.0..2.0).contains(&alpha);
            w.note = "alpha in [0, 2); ∂ⱼa_ij in L^p_loc(dx)".into();
            if w.applies {
                w.p = Some(p_window);
            }
        }
        Condition::Hp3Prime => {
            w.applies = alpha > -d;
            w.note = "∂ⱼa_ij in L^{d/2+ε}_loc(dx) for some ε > 0; the setting it accompanies has alpha >= 2".into();
            if w.applies {
                w.p = Some(ExponentSet::Open { lo: d / 2.0, hi: None });
            }
        }
        Condition::Hp5 => {
            w.applies = true;
            w.note = "∂ⱼa_ij and the exponent φ locally bounded".into();
            w.p = Some(ExponentSet::Infinity);
        }
        Condition::Hp6 => {
            w.applies = true;
            w.note = "σ_ij/√ρ continuous; ‖∇(σ_ij/√ρ)‖ and Σ_k ∂_k a_ik/ρ in L^{2(d+1)}_loc(dx)".into();
            w.p = Some(ExponentSet::Point { value: 2.0 * (d + 1.0) });
        }
    }
    Ok(w)
}

/// Result of a local L^p check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalNormReport {
    pub p: f64,
    pub region: Region,
    /// ∫_region |f|^p (dx or dm); absent when the quadrature diverged.
    pub value: Option<f64>,
    pub error: Option<f64>,
    pub converged: bool,
    pub pass: bool,
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Estimate ∫_region |f|^p dx (or dm when `measure` is given) and flag divergence.
///
/// Origin-centered balls and annuli use shell quadrature about the origin,
/// whose graded radial panels expose power singularities at 0; other
/// regions use stratified Monte Carlo.
pub fn check_local_norms<F>(
    magnitude: F,
    p: f64,
    region: &Region,
    measure: Option<&Weight>,
    cfg: &QuadConfig,
) -> Result<LocalNormReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(p >= 1.0) {
        return Err(Error::param("p", format!("must be >= 1, got {p}")));
    }
    let d = region.dim();
    let integrand = |x: &[f64]| {
        let v = magnitude(x).abs();
        let v = if v == 0.0 { 0.0 } else { v.powf(p) };
        match measure {
            Some(w) if v != 0.0 => v * w.eval_raw(x),
            _ => v,
        }
    };
    let origin = vec![0.0; d];
    let (result, method) = match region {
        Region::Ball { center, radius } if norm(center) == 0.0 => {
            (shell_integral(integrand, |_| 1.0, &origin, 0.0, *radius, cfg), "shell")
        }
        Region::Annulus { inner, outer, .. } => (
            shell_integral(integrand, |_| 1.0, &origin, *inner, *outer, cfg),
            "shell",
        ),
        Region::Ball { center, radius } => {
            let ball = crate::geometry::Ball::new(center.clone(), *radius)?;
            (
                two_level_mc(cfg, |n, seed| {
                    let nodes = stratified_ball_nodes(&ball, n, seed, None);
                    Ok(nodes.iter().map(|(x, w)| w * integrand(x)).sum())
                }),
                "monte_carlo",
            )
        }
        Region::Box { lo, hi } => {
            let b = BoxRegion::new(lo.clone(), hi.clone())?;
            (
                two_level_mc(cfg, |n, seed| {
                    let nodes = stratified_box_nodes(&b, n, seed);
                    Ok(nodes.iter().map(|(x, w)| w * integrand(x)).sum())
                }),
                "monte_carlo",
            )
        }
    };
    match result {
        Ok(e) => Ok(LocalNormReport {
            p,
            region: region.clone(),
            value: Some(e.value),
            error: Some(e.error),
            converged: true,
            pass: e.value.is_finite(),
            method: method.into(),
            reason: None,
        }),
        Err(Error::DivergentIntegral { reason }) => Ok(LocalNormReport {
            p,
            region: region.clone(),
            value: None,
            error: None,
            converged: false,
            pass: false,
            method: method.into(),
            reason: Some(reason),
        }),
        Err(e) => Err(e),
    }
}

/// Estimated ellipticity constant with the sample attaining it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipticityReport {
    /// max over samples of max(q, 1/q), q = ⟨Aξ,ξ⟩/(ρ‖ξ‖²).
    pub lambda_hat: f64,
    pub declared: Option<f64>,
    pub worst_point: Vec<f64>,
    pub n_points: usize,
    pub n_dirs: usize,
    /// λ̂ does not exceed the declared λ.
    pub consistent: bool,
}

fn sample_region<R: Rng>(rng: &mut R, region: &Region) -> Result<Vec<f64>> {
    let bb = region.bounding_box();
    for _ in 0..100_000 {
        let x: Vec<f64> = bb
            .lo
            .iter()
            .zip(&bb.hi)
            .map(|(a, b)| a + (b - a) * rng.random::<f64>())
            .collect();
        if region.contains(&x) {
            return Ok(x);
        }
    }
    Err(Error::param("region", "could not sample a point inside the region"))
}

/// Sampled lower bound for the ellipticity constant λ of A relative to ρ.
///
/// Each point is probed along `n_dirs` random directions, the coordinate axes
/// and the eigenvectors of A(x)/ρ(x).
pub fn ellipticity_lambda<F: CoefficientField + ?Sized>(
    field: &F,
    n_points: usize,
    n_dirs: usize,
    region: &Region,
    seed: u64,
) -> Result<EllipticityReport> {
    let d = field.dim();
    if region.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: region.dim(),
        });
    }
    let mut rng = rng::stream(seed, 0);
    let mut lambda_hat = 1.0f64;
    let mut worst_point = Vec::new();
    let mut used = 0;
    while used < n_points {
        let x = sample_region(&mut rng, region)?;
        let rho = field.weight().eval_raw(&x);
        if !(rho.is_finite() && rho > 0.0) {
            continue;
        }
        used += 1;
        let a = field.matrix(&x);
        let asym = asymmetry(&a, d);
        if asym > 1e-10 * max_abs(&a).max(f64::MIN_POSITIVE) {
            return Err(Error::NonSymmetric { asymmetry: asym });
        }
        let mut dirs: Vec<Vec<f64>> = (0..n_dirs).map(|_| rng::unit_vector(&mut rng, d)).collect();
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            dirs.push(e);
        }
        let normalized: Vec<f64> = a.iter().map(|v| v / rho).collect();
        let eig = symmetric_eigen(&normalized, d);
        for k in 0..d {
            dirs.push(eig.eigenvectors.column(k).iter().copied().collect());
        }
        for xi in &dirs {
            let q = quadratic(&a, xi, xi) / (rho * norm_sq(xi));
            if !(q > 0.0) {
                return Err(Error::NonPositiveRatio { ratio: q, point: x });
            }
            let l = q.max(1.0 / q);
            if l > lambda_hat {
                lambda_hat = l;
                worst_point = x.clone();
            }
        }
    }
    Ok(EllipticityReport {
        lambda_hat,
        declared: None,
        worst_point,
        n_points,
        n_dirs,
        consistent: true,
    })
}

impl DiffusionField {
    /// [`ellipticity_lambda`] compared against the declared λ.
    pub fn check_ellipticity(
        &self,
        n_points: usize,
        n_dirs: usize,
        region: &Region,
        seed: u64,
    ) -> Result<EllipticityReport> {
        let mut r = ellipticity_lambda(self, n_points, n_dirs, region, seed)?;
        r.declared = Some(self.lambda);
        r.consistent = r.lambda_hat <= self.lambda * (1.0 + 1e-9);
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_rejects_indefinite() {
        assert!(matches!(
            sqrt_spd(&[1.0, 0.0, 0.0, -1.0], 2),
            Err(Error::Indefinite { .. })
        ));
        let s = sqrt_spd(&[1.0, 0.0, 0.0, -1e-15], 2).unwrap();
        assert_eq!(s[3], 0.0);
    }

    #[test]
    fn declared_lambda_from_matrix() {
        let f = DiffusionField::power_times_const_spd(1.0, &[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(f.lambda(), 2.0);
        let f = DiffusionField::power_times_const_spd(0.0, &[vec![0.25, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(f.lambda(), 4.0);
    }

    #[test]
    fn condition_names_parse() {
        assert_eq!("HP3-iii".parse::<Condition>().unwrap(), Condition::Hp3Iii);
        assert_eq!("hp3prime".parse::<Condition>().unwrap(), Condition::Hp3Prime);
        assert_eq!("(HP6)".parse::<Condition>().unwrap(), Condition::Hp6);
        assert!("hp7".parse::<Condition>().is_err());
    }

    #[test]
    fn spec_errors_point_at_keys() {
        let spec: FieldSpec = serde_json::from_str(r#"{"kind":"isotropic_power","dim":3}"#).unwrap();
        match spec.build() {
            Err(Error::Schema { pointer, .. }) => assert_eq!(pointer, "/alpha"),
            other => panic!("{other:?}"),
        }
        let spec: FieldSpec = serde_json::from_str(r#"{"kind":"custom","id":"nope","alpha":1,"dim":3}"#).unwrap();
        assert!(matches!(spec.build(), Err(Error::Schema { pointer, .. }) if pointer == "/id"));
    }
}
