//! Refractive-index fields on the period cell.
//!
//! Fields are evaluated in cell coordinates `(x₁, x₂) ∈ (0,1) × (0,H)`; the
//! cosine profile is written in terms of the centred coordinate
//! `X = x₁ − 1/2`, so it is automatically even about the mirror line.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Region {
    Rect { x1: [f64; 2], x2: [f64; 2], value: f64 },
    Disk { center: [f64; 2], radius: f64, value: f64 },
}

impl Region {
    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Region::Rect { x1, x2, .. } => x > x1[0] && x < x1[1] && y > x2[0] && y < x2[1],
            Region::Disk { center, radius, .. } => {
                (x - center[0]).powi(2) + (y - center[1]).powi(2) < radius * radius
            }
        }
    }

    fn value(&self) -> f64 {
        match self {
            Region::Rect { value, .. } | Region::Disk { value, .. } => *value,
        }
    }
}

/// A scalar field on the cell, either one of the named built-ins or an
/// arbitrary closure (used by tests and programmatic callers).
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    /// `offset + amplitude · cos(2π · frequency · X)` inside the transverse
    /// window `x₂ ∈ (window[0], window[1])`, `offset` outside it.
    CosineProfile { offset: f64, amplitude: f64, frequency: f64, window: [f64; 2] },
    /// `background` except inside the listed regions (later regions win).
    Piecewise { background: f64, regions: Vec<Region> },
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarField::Constant(v) => write!(f, "Constant({v})"),
            ScalarField::CosineProfile { offset, amplitude, frequency, window } => write!(
                f,
                "CosineProfile {{ offset: {offset}, amplitude: {amplitude}, frequency: {frequency}, window: {window:?} }}"
            ),
            ScalarField::Piecewise { background, regions } => {
                write!(f, "Piecewise {{ background: {background}, regions: {regions:?} }}")
            }
            ScalarField::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl ScalarField {
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        let x1 = x1.rem_euclid(1.0);
        match self {
            ScalarField::Constant(v) => *v,
            ScalarField::CosineProfile { offset, amplitude, frequency, window } => {
                if x2 > window[0] && x2 < window[1] {
                    offset + amplitude * (2.0 * PI * frequency * (x1 - 0.5)).cos()
                } else {
                    *offset
                }
            }
            ScalarField::Piecewise { background, regions } => regions
                .iter()
                .rev()
                .find(|r| r.contains(x1, x2))
                .map(|r| r.value())
                .unwrap_or(*background),
            ScalarField::Custom(f) => f(x1, x2),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarField::Constant(v) if *v == 0.0)
            || matches!(self, ScalarField::CosineProfile { offset, amplitude, .. } if *offset == 0.0 && *amplitude == 0.0)
    }
}

/// Base index `n` and perturbation direction `δn`; the perturbed index is
/// `n_ε = n + ε δn`.
#[derive(Debug, Clone)]
pub struct IndexField {
    pub base: ScalarField,
    pub direction: ScalarField,
}

impl IndexField {
    pub fn uniform(n: f64) -> Self {
        IndexField { base: ScalarField::Constant(n), direction: ScalarField::Constant(0.0) }
    }

    /// Checks mirror symmetry of both fields at element quadrature points.
    pub fn validate_symmetry(&self, mesh: &Mesh) -> Result<()> {
        for e in 0..mesh.elements.len() {
            let c = mesh.centroid(e);
            for (name, f) in [("base", &self.base), ("direction", &self.direction)] {
                let a = f.eval(c[0], c[1]);
                let b = f.eval(1.0 - c[0], c[1]);
                if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(Error::NotSymmetric(format!(
                        "{name} index differs from its mirror image at ({:.4}, {:.4})",
                        c[0], c[1]
                    )));
                }
            }
        }
        Ok(())
    }
}
