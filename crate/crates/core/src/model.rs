//! The cell model of a configuration: mesh, assembled forms, Dirac data and
//! coupling, built once and shared by every downstream stage.

use crate::bands::{find_dirac, DiracData};
use crate::cell::{assemble_forms, AssembledForms};
use crate::config::Config;
use crate::error::Result;
use crate::mesh::{build_mesh, Mesh};
use crate::perturbation::{compute_coupling, CouplingData};

#[derive(Debug, Clone)]
pub struct CellModel {
    pub config: Config,
    pub mesh: Mesh,
    pub forms: AssembledForms,
}

impl CellModel {
    pub fn build(config: &Config) -> Result<Self> {
        let geometry = config.cell_geometry();
        geometry.validate()?;
        let mesh = build_mesh(&geometry)?;
        let index = config.index_field();
        index.validate_symmetry(&mesh)?;
        let forms = assemble_forms(&mesh, &index)?;
        Ok(CellModel { config: config.clone(), mesh, forms })
    }

    pub fn dirac(&self) -> Result<DiracData> {
        find_dirac(&self.forms, &self.config.dirac)
    }

    /// Dirac data and coupling; fails with an assumption error when the
    /// perturbation does not open a gap (`t* = 0`).
    pub fn dirac_and_coupling(&self) -> Result<(DiracData, CouplingData)> {
        let dirac = self.dirac()?;
        let coupling = compute_coupling(&dirac, &self.forms);
        if coupling.t_star.norm() <= 1e-12 * dirac.lambda_star {
            return Err(crate::Error::ZeroCoupling(coupling.t_star.norm()));
        }
        Ok((dirac, coupling))
    }
}
