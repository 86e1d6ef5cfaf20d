//! Simulation and numerical verification of diffusions whose coefficient
//! matrix is a possibly singular weight times a uniformly elliptic matrix.
//!
//! The process solves `dX = (σ/√ρ)(X) dW + ½(Σⱼ∂ⱼaᵢⱼ/ρ)(X) dt` with `A = σσᵀ`
//! and `λ⁻¹ρ|ξ|² ≤ ⟨Aξ, ξ⟩ ≤ λρ|ξ|²`.
//!
//! ```
//! use wdiff::forms::{DiffusionField, SdeCoefficients};
//! use wdiff::sde::{mean_sq_norm, simulate_batch, SimConfig};
//!
//! let c = SdeCoefficients::new(DiffusionField::isotropic_power(0.0, 3)?);
//! let b = simulate_batch(&c, &[0.0; 3], 2000, &SimConfig::new(1.0, 0.5)?, 1, None)?;
//! assert!(mean_sq_norm(&b, 1.0)?.covers(3.0, 4.0));
//! # Ok::<(), wdiff::Error>(())
//! ```
//!
//! The guide in `book/` walks through each module; its snippets run as doctests.

// Negated comparisons are how parameters reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod field;
pub mod forms;
pub mod geometry;
pub mod oracle;
pub mod quadrature;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod weights;

pub use error::{Error, Result};

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

// The guide's chapters are compiled and run by `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/weights.md")]
    mod weights {}
    #[doc = include_str!("../../../book/src/forms.md")]
    mod forms {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/acceptance.md")]
    mod acceptance {}
}
