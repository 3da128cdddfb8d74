//! Shared fixtures: the default model is built once per test binary.

#![allow(dead_code)]

use std::sync::OnceLock;

use proptest::test_runner::Config as ProptestConfig;

use waveguide_core::bands::DiracData;
use waveguide_core::config::Config;
use waveguide_core::model::CellModel;
use waveguide_core::perturbation::CouplingData;

pub struct Fixture {
    pub config: Config,
    pub model: CellModel,
    pub dirac: DiracData,
    pub coupling: CouplingData,
}

impl Fixture {
    pub fn t_abs(&self) -> f64 {
        self.coupling.t_star.norm()
    }
}

fn build(config: Config) -> Fixture {
    let model = CellModel::build(&config).expect("model builds");
    let (dirac, coupling) = model.dirac_and_coupling().expect("Dirac point and coupling");
    Fixture { config, model, dirac, coupling }
}

/// The shipped default structure.
pub fn default_fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| build(Config::default()))
}

/// The default structure on a coarse mesh, for the expensive operators.
pub fn coarse_fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut config = Config::default();
        config.discretization.h = 1.0 / 12.0;
        build(config)
    })
}

pub fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, failure_persistence: None, ..ProptestConfig::default() }
}
