//! Points, balls, cubes and boxes in ℝ^d.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn norm_sq(x: &[f64]) -> f64 {
    dot(x, x)
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn check_dim(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    Ok(())
}

/// Surface area of the unit sphere S^{n-1} ⊂ ℝ^n.
pub fn unit_sphere_area(n: usize) -> f64 {
    use std::f64::consts::PI;
    match n {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI / (n as f64 - 2.0) * unit_sphere_area(n - 2),
    }
}

/// Lebesgue volume of the unit ball in ℝ^d.
pub fn unit_ball_volume(d: usize) -> f64 {
    unit_sphere_area(d) / d as f64
}

/// Open Euclidean ball B_r(c).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::param("radius", format!("must be positive, got {radius}")));
        }
        Ok(Ball { center, radius })
    }

    pub fn centered(dim: usize, radius: f64) -> Result<Self> {
        Ball::new(vec![0.0; dim], radius)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        distance(&self.center, x) < self.radius
    }

    pub fn volume(&self) -> f64 {
        unit_ball_volume(self.dim()) * self.radius.powi(self.dim() as i32)
    }

    pub fn scaled(&self, factor: f64) -> Ball {
        Ball {
            center: self.center.clone(),
            radius: self.radius * factor,
        }
    }

    pub fn bounding_box(&self) -> BoxRegion {
        BoxRegion {
            lo: self.center.iter().map(|c| c - self.radius).collect(),
            hi: self.center.iter().map(|c| c + self.radius).collect(),
        }
    }
}

/// Axis-aligned box ∏[lo_i, hi_i].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::param("box", "every lower corner must lie below the upper one"));
        }
        Ok(BoxRegion { lo, hi })
    }

    /// The cube [-h, h]^d.
    pub fn symmetric(dim: usize, half: f64) -> Result<Self> {
        BoxRegion::new(vec![-half; dim], vec![half; dim])
    }

    /// The cube with the given lower corner and side length.
    pub fn cube(corner: Vec<f64>, side: f64) -> Result<Self> {
        let hi = corner.iter().map(|c| c + side).collect();
        BoxRegion::new(corner, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    pub fn diameter(&self) -> f64 {
        distance(&self.lo, &self.hi)
    }

    /// Euclidean distance from `x` to the box (zero inside).
    pub fn distance_to(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (a, b))| {
                let gap = if v < a {
                    a - v
                } else if v > b {
                    v - b
                } else {
                    0.0
                };
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Largest distance from `x` to a point of the box.
    pub fn farthest_distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (a, b))| {
                let gap = (v - a).abs().max((v - b).abs());
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn intersect(&self, other: &BoxRegion) -> Option<BoxRegion> {
        let lo: Vec<f64> = self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect();
        let hi: Vec<f64> = self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(*b)).collect();
        BoxRegion::new(lo, hi).ok()
    }
}

/// Integration region for local-norm checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    /// {inner < ‖x‖ < outer}
    Annulus {
        dim: usize,
        inner: f64,
        outer: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl Region {
    pub fn dim(&self) -> usize {
        match self {
            Region::Ball { center, .. } => center.len(),
            Region::Annulus { dim, .. } => *dim,
            Region::Box { lo, .. } => lo.len(),
        }
    }

    /// Smallest axis-aligned box containing the region.
    pub fn bounding_box(&self) -> BoxRegion {
        match self {
            Region::Ball { center, radius } => BoxRegion {
                lo: center.iter().map(|c| c - radius).collect(),
                hi: center.iter().map(|c| c + radius).collect(),
            },
            Region::Annulus { dim, outer, .. } => BoxRegion {
                lo: vec![-outer; *dim],
                hi: vec![*outer; *dim],
            },
            Region::Box { lo, hi } => BoxRegion {
                lo: lo.clone(),
                hi: hi.clone(),
            },
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Ball { center, radius } => distance(center, x) < *radius,
            Region::Annulus { inner, outer, .. } => {
                let r = norm(x);
                *inner < r && r < *outer
            }
            Region::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *a <= *v && *v <= *b),
        }
    }
}
