//! Run configuration: a single TOML file with one table per pipeline stage.
//!
//! Every table and every key is optional; missing entries take the defaults
//! below, which describe the shipped structure (an empty strip of height
//! 0.24 with a cosine perturbation on its lower half). The fully resolved
//! configuration is what gets hashed and echoed into run manifests, so two
//! files that differ only in omitted defaults hash identically.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bands::DiracSettings;
use crate::error::{Error, Result};
use crate::greens::QuadratureSettings;
use crate::index::{IndexField, Region, ScalarField};
use crate::interface::{LimitSettings, SearchSettings};
use crate::mesh::{CellGeometry, Obstacle};
use crate::supercell::SupercellSettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub strip_height: f64,
    pub obstacles: Vec<Obstacle>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig { strip_height: 0.24, obstacles: Vec::new() }
    }
}

/// Serializable description of a scalar field on the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant {
        value: f64,
    },
    CosineProfile {
        #[serde(default)]
        offset: f64,
        amplitude: f64,
        frequency: f64,
        /// Transverse window `(x₂ lo, x₂ hi)`; the whole strip when omitted.
        #[serde(default)]
        window: Option<[f64; 2]>,
    },
    PiecewiseRegions {
        background: f64,
        #[serde(default)]
        regions: Vec<Region>,
    },
}

impl FieldSpec {
    pub fn to_field(&self, strip_height: f64) -> ScalarField {
        match self {
            FieldSpec::Constant { value } => ScalarField::Constant(*value),
            FieldSpec::CosineProfile { offset, amplitude, frequency, window } => ScalarField::CosineProfile {
                offset: *offset,
                amplitude: *amplitude,
                frequency: *frequency,
                window: window.unwrap_or([0.0, strip_height]),
            },
            FieldSpec::PiecewiseRegions { background, regions } => {
                ScalarField::Piecewise { background: *background, regions: regions.clone() }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub base: FieldSpec,
    pub direction: FieldSpec,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            base: FieldSpec::Constant { value: 1.0 },
            direction: FieldSpec::CosineProfile {
                offset: 0.0,
                amplitude: 0.005,
                frequency: 2.0,
                window: Some([0.0, 0.12]),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationConfig {
    /// Target element size.
    pub h: f64,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        DiscretizationConfig { h: 1.0 / 24.0 }
    }
}

/// Parameters of the asymptotic checks and the default perturbation size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Perturbation size used when a command gets no `--eps`.
    pub eps: f64,
    /// Perturbation sizes of the gap-law sweep.
    pub gap_eps: Vec<f64>,
    /// Quasi-momenta of the dispersion sweeps, in units of `|t*|ε/α`.
    pub p_factors: Vec<f64>,
    /// Perturbation size of the eigenvector-law sweep.
    pub eigvec_eps: f64,
    /// Perturbation sizes of the fold check.
    pub fold_eps: Vec<f64>,
    /// Offsets `p − q*` sampled by the fold check.
    pub fold_offsets: Vec<f64>,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            eps: 1e-2,
            gap_eps: vec![1e-2, 1e-3],
            p_factors: vec![0.0, 0.25, 0.5, 1.0, 2.0, 5.0],
            eigvec_eps: 1e-3,
            fold_eps: vec![0.0, 1e-3, 1e-2],
            fold_offsets: vec![-1e-1, -3e-2, -1e-2, -3e-3, 3e-3, 1e-2, 3e-2, 1e-1],
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContoursConfig {
    pub quadrature: QuadratureSettings,
    pub limit: LimitSettings,
}

/// The complete, resolved run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub geometry: GeometryConfig,
    pub index: IndexConfig,
    pub discretization: DiscretizationConfig,
    pub dirac: DiracSettings,
    pub perturbation: PerturbationConfig,
    pub contours: ContoursConfig,
    pub search: SearchSettings,
    pub supercell: SupercellSettings,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical TOML rendering of the resolved configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    /// SHA-256 of the canonical rendering, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cell_geometry(&self) -> CellGeometry {
        CellGeometry {
            strip_height: self.geometry.strip_height,
            obstacles: self.geometry.obstacles.clone(),
            mesh_target_h: self.discretization.h,
        }
    }

    pub fn index_field(&self) -> IndexField {
        let height = self.geometry.strip_height;
        IndexField { base: self.index.base.to_field(height), direction: self.index.direction.to_field(height) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = Config::parse("").unwrap();
        assert_eq!(cfg.geometry, GeometryConfig::default());
        assert_eq!(cfg.discretization.h, 1.0 / 24.0);
        assert_eq!(cfg.hash(), Config::default().hash());
    }

    #[test]
    fn canonical_form_round_trips() {
        let cfg = Config::parse(
            r#"
            [index.direction]
            kind = "piecewise_regions"
            background = 0.0
            regions = [{ shape = "rect", x1 = [0.3, 0.7], x2 = [0.0, 0.1], value = 1.0 }]
            "#,
        )
        .unwrap();
        let again = Config::parse(&cfg.canonical()).unwrap();
        assert_eq!(cfg.canonical(), again.canonical());
        assert_eq!(cfg.hash(), again.hash());
        assert_ne!(cfg.hash(), Config::default().hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(Config::parse("[geometry]\nheight = 1.0\n"), Err(Error::Config(_))));
    }

    #[test]
    fn omitted_window_spans_the_strip() {
        let cfg = Config::parse(
            "[geometry]\nstrip_height = 0.3\n[index.direction]\nkind = \"cosine_profile\"\namplitude = 1.0\nfrequency = 2.0\n",
        )
        .unwrap();
        match cfg.index_field().direction {
            ScalarField::CosineProfile { window, .. } => assert_eq!(window, [0.0, 0.3]),
            other => panic!("unexpected field {other:?}"),
        }
    }
}
