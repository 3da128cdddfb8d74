//! Acceptance suite: every criterion of the project runs here and prints
//! one `PASS`/`FAIL` line. The test fails if any criterion fails.
//!
//! Run with `cargo test --release -p waveguide-cli --test acceptance -- --nocapture`
//! to see the report (the workspace test profile is optimized, so a plain
//! `cargo test` takes a few minutes).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;

use num_complex::Complex64 as C64;

use waveguide_core::bands::{group_velocity, solve_bands, BlochSolver, DiracData};
use waveguide_core::config::Config;
use waveguide_core::greens::{find_complex_roots, residue_identity_check};
use waveguide_core::interface::{
    assemble_limit_operator, convergence_study, default_h_samples, find_characteristic_value, kernel_residual,
    radiating_growth, Classification, InterfaceOperator,
};
use waveguide_core::model::CellModel;
use waveguide_core::perturbation::{
    eigenfunction_asymptotics_check, eigvec_floor, fit_loglog, gap_asymptotics_check, gap_ratio, CouplingData,
};
use waveguide_core::supercell::{build_supercell, solve_supercell};
use waveguide_core::Result;

// ═══════════════════════════════════════════════════════════════════
// Tolerances
// ═══════════════════════════════════════════════════════════════════

/// P1 elements converge at second order in the eigenvalues.
const EIGEN_ORDER: (f64, f64) = (1.8, 2.2);
/// Hellmann–Feynman slope against a centred difference with step 1e-4:
/// truncation `O(δp²)` plus round-off `ε_mach λ/δp` stays far below this.
const HF_REL: f64 = 1e-6;
const HF_STEP: f64 = 1e-4;
/// Bands whose gap to the neighbours exceeds this fraction of the eigenvalue
/// are compared with the plain difference quotient.
const HF_SEPARATED: f64 = 1e-2;
/// Flux identities are discretized through P1 normal derivatives (first
/// order); the cross terms vanish by symmetry up to round-off.
const FLUX_ORDER: f64 = 1.0;
const FLUX_ROUNDOFF: f64 = 1e-10;
/// Gap at `p = 0` relative to the leading-order prediction.
const GAP_BAND: (f64, f64) = (0.95, 1.05);
/// Relative defect of the dispersion hyperbola for `|αp| ≤ 5|t*|ε`.
const HYPERBOLA_REL: f64 = 0.05;
/// Eigenvalue round-off of the dense eigensolver, in units of
/// `ε_mach · λ_max`, used as the floor of the gap-deviation comparison.
const EIGEN_ROUNDOFF_UNITS: f64 = 10.0;
/// Subspace angle of the eigenvector law above the discretization floor.
const EIGVEC_ANGLE: f64 = 0.05;
/// Residue identity: relative operator discrepancy, and the round-off level
/// below which refinement can no longer be expected to decrease it.
const RESIDUE_REL: f64 = 1e-4;
const RESIDUE_ROUNDOFF: f64 = 1e-10;
/// Complex momentum roots: Newton residual and the size of `Im q₊` treated
/// as zero for real energies.
const ROOT_RESIDUAL: f64 = 1e-10;
const ROOT_REAL: f64 = 1e-12;
/// Characteristic value: upper bound on `Im h` and on `σ_min / ‖matrix‖`.
const IM_H_TOL: f64 = 1e-8;
const SIGMA_REL: f64 = 1e-8;
/// Finite-strip cross-check of the interface mode.
const SUPERCELL_LAMBDA: f64 = 1e-2;
const SUPERCELL_SCORE: f64 = 0.8;
const DECAY_REL: f64 = 0.10;
/// Far-field growth of a resonant mode against `|Im q₊|`.
const GROWTH_REL: f64 = 0.15;

// ═══════════════════════════════════════════════════════════════════
// Harness
// ═══════════════════════════════════════════════════════════════════

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Outcome { passed, detail }
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn shipped(name: &str) -> Config {
    Config::load(&workspace_root().join("configs").join(name)).expect("shipped configuration parses")
}

fn with_h(mut config: Config, h: f64) -> Config {
    config.discretization.h = h;
    config
}

/// Default model with its Dirac data and coupling, shared by several checks.
struct Fixture {
    model: CellModel,
    dirac: DiracData,
    coupling: CouplingData,
}

impl Fixture {
    fn new(config: &Config) -> Result<Self> {
        let model = CellModel::build(config)?;
        let (dirac, coupling) = model.dirac_and_coupling()?;
        Ok(Fixture { model, dirac, coupling })
    }

    fn t_abs(&self) -> f64 {
        self.coupling.t_star.norm()
    }
}

fn sci(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn orders(hs: &[f64], errors: &[f64]) -> Vec<f64> {
    hs.windows(2).zip(errors.windows(2)).map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln()).collect()
}

// ═══════════════════════════════════════════════════════════════════
// Criteria
// ═══════════════════════════════════════════════════════════════════

/// Empty cell: periodic × Neumann rectangle, `λ = (p + 2πj)² + (πm/H)²`.
fn discretization_oracle() -> Result<Outcome> {
    let p = 0.7;
    let n_bands = 6;
    let height = Config::default().geometry.strip_height;
    let mut exact: Vec<f64> = (-4i32..=4)
        .flat_map(|j| (0..4).map(move |m| (p + 2.0 * PI * j as f64).powi(2) + (PI * m as f64 / height).powi(2)))
        .collect();
    exact.sort_by(f64::total_cmp);
    let mut hs = Vec::new();
    let mut errors = Vec::new();
    for h in [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0] {
        let model = CellModel::build(&with_h(Config::default(), h))?;
        let diagram = solve_bands(&model.forms, &[p], 0.0, n_bands)?;
        let err = (0..n_bands).map(|n| (diagram.value(n, 0) - exact[n]).abs() / exact[n]).fold(0.0, f64::max);
        hs.push(model.mesh.stats().max_diameter);
        errors.push(err);
    }
    let ord = orders(&hs, &errors);
    let passed = ord.iter().all(|o| (EIGEN_ORDER.0..=EIGEN_ORDER.1).contains(o));
    Ok(Outcome::new(passed, format!("errors {}, orders {ord:.3?}", sci(&errors))))
}

fn hellmann_feynman(fx: &Fixture) -> Result<Outcome> {
    let forms = &fx.model.forms;
    let eps = 1e-2;
    let n_bands = 6;
    let mut worst = 0.0f64;
    let mut worst_extrapolated = 0.0f64;
    let (mut direct, mut extrapolated) = (0, 0);
    for p in [0.3, 0.55, 0.7, 1.5, 2.5] {
        let centre = solve_bands(forms, &[p], eps, n_bands)?;
        let sides = solve_bands(forms, &[p - 2.0 * HF_STEP, p - HF_STEP, p + HF_STEP, p + 2.0 * HF_STEP], eps, n_bands)?;
        for n in 0..n_bands {
            let pair = &centre.bands[n][0];
            let v = group_velocity(forms, pair, eps)?;
            let fd = (sides.value(n, 2) - sides.value(n, 1)) / (2.0 * HF_STEP);
            let fd_wide = (sides.value(n, 3) - sides.value(n, 0)) / (4.0 * HF_STEP);
            let err = (v - fd).abs() / v.abs().max(1.0);
            if pair.gap >= HF_SEPARATED * pair.value.re {
                worst = worst.max(err);
                direct += 1;
            } else {
                // Close to an avoided crossing the O(δp²) truncation of the
                // plain difference is visible; remove it by extrapolation.
                let richardson = fd + (fd - fd_wide) / 3.0;
                worst_extrapolated = worst_extrapolated.max((v - richardson).abs() / v.abs().max(1.0));
                extrapolated += 1;
            }
        }
    }
    Ok(Outcome::new(
        worst <= HF_REL && worst_extrapolated <= HF_REL && direct > 0,
        format!(
            "{direct} separated bands, max relative error {worst:.2e}; \
             {extrapolated} near-crossing bands against extrapolated differences {worst_extrapolated:.2e}"
        ),
    ))
}

fn flux_identities() -> Result<Outcome> {
    let mut defect = Vec::new();
    let mut cross = Vec::new();
    for h in [1.0 / 12.0, 1.0 / 18.0, 1.0 / 36.0] {
        let model = CellModel::build(&with_h(Config::default(), h))?;
        let d = model.dirac()?;
        let size = model.mesh.stats().max_diameter;
        defect.push((size, d.report.flux_defect / d.alpha));
        cross.push((size, d.report.cross_flux / d.alpha));
    }
    let order = fit_loglog(&defect);
    let cross_max = cross.iter().map(|c| c.1).fold(0.0, f64::max);
    let cross_order = fit_loglog(&cross);
    let cross_ok = cross_max <= FLUX_ROUNDOFF || cross_order >= FLUX_ORDER;
    let decreasing = defect.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(Outcome::new(
        order >= FLUX_ORDER && decreasing && cross_ok,
        format!(
            "flux defect {} (order {order:.2}); cross terms ≤ {cross_max:.1e}",
            sci(&defect.iter().map(|d| d.1).collect::<Vec<_>>())
        ),
    ))
}

fn gap_law(fx: &Fixture) -> Result<Outcome> {
    let forms = &fx.model.forms;
    let (d, cp) = (&fx.dirac, &fx.coupling);
    let lambda_max = *BlochSolver::new(forms, 0.0)?.eigenvalues(0.0).last().expect("non-empty spectrum");
    let mut ratios = Vec::new();
    let mut hyperbola = 0.0f64;
    for eps in [1e-2, 1e-3] {
        let ratio = gap_ratio(forms, d, cp, eps)?;
        let floor = EIGEN_ROUNDOFF_UNITS * f64::EPSILON * lambda_max / (2.0 * fx.t_abs() * eps);
        ratios.push((eps, ratio, (ratio - 1.0).abs(), floor));
        let scale = fx.t_abs() * eps / d.alpha;
        let ps: Vec<f64> = [0.0, 0.5, 1.0, 2.0, 3.0, 5.0].iter().map(|f| f * scale).collect();
        let rep = gap_asymptotics_check(forms, d, cp, &[eps], &ps)?;
        hyperbola = rep.rows.iter().map(|r| r.defect).fold(hyperbola, f64::max);
    }
    let in_band = ratios.iter().all(|r| (GAP_BAND.0..=GAP_BAND.1).contains(&r.1));
    // Deviation must fall at least in proportion to ε, unless it already sits
    // at the eigensolver round-off floor.
    let (coarse, fine) = (ratios[0], ratios[1]);
    let shrinks = fine.2 <= (fine.0 / coarse.0) * coarse.2 * 1.2 || fine.2 <= fine.3;
    Ok(Outcome::new(
        in_band && shrinks && hyperbola <= HYPERBOLA_REL,
        format!(
            "gap/prediction {:.9} (ε=1e-2), {:.9} (ε=1e-3); deviations {:.1e}/{:.1e} (round-off floor {:.1e}); hyperbola defect ≤ {hyperbola:.1e}",
            coarse.1, fine.1, coarse.2, fine.2, fine.3
        ),
    ))
}

fn eigenfunction_law(fx: &Fixture) -> Result<Outcome> {
    let forms = &fx.model.forms;
    let eps = 1e-3;
    let floor = eigvec_floor(forms, &fx.dirac, &fx.coupling, eps)?;
    let scale = fx.t_abs() * eps / fx.dirac.alpha;
    let mut worst = 0.0f64;
    for f in [0.0, 0.25, 0.5, 1.0, 2.0, 5.0, -0.5, -2.0, -5.0] {
        let row = eigenfunction_asymptotics_check(forms, &fx.dirac, &fx.coupling, eps, f * scale)?;
        worst = worst.max(row.angle - floor);
    }
    Ok(Outcome::new(worst <= EIGVEC_ANGLE, format!("max angle above floor {worst:.2e} rad (floor {floor:.1e})")))
}

fn residue_identity(fx: &Fixture) -> Result<Outcome> {
    let forms = &fx.model.forms;
    let eps = 1e-2;
    let quad = Config::default().contours.quadrature;
    let lambda = fx.dirac.lambda_star + 0.25 * fx.t_abs() * eps;
    let base = residue_identity_check(forms, &fx.dirac, eps, lambda, &quad)?;
    let doubled = residue_identity_check(forms, &fx.dirac, eps, lambda, &quad.refined())?;
    let raw: Vec<f64> = base.pv_by_tau.iter().map(|t| t.1).collect();
    let tau_monotone = raw.windows(2).all(|w| w[1] < w[0]);
    let extrapolation_helps = base.discrepancy < raw.iter().copied().fold(f64::INFINITY, f64::min);
    let doubling_ok = doubled.discrepancy <= base.discrepancy.max(RESIDUE_ROUNDOFF);
    Ok(Outcome::new(
        base.discrepancy <= RESIDUE_REL && tau_monotone && extrapolation_helps && doubling_ok,
        format!(
            "discrepancy {:.2e}, doubled nodes {:.2e}, per-τ {}, without residue {:.2e}",
            base.discrepancy, doubled.discrepancy, sci(&raw), base.discrepancy_without_residue
        ),
    ))
}

fn root_structure(fx: &Fixture) -> Result<Outcome> {
    let eps = 1e-2;
    let step = 0.25 * fx.t_abs() * eps;
    let mut exact_mirror = true;
    let mut signs = true;
    let mut worst_residual = 0.0f64;
    for a in [-1.0, 0.0, 1.0] {
        for b in [-1.0, 0.0, 1.0] {
            let lambda = C64::new(fx.dirac.lambda_star + a * step, b * step);
            let root = find_complex_roots(&fx.model.forms, &fx.dirac, eps, lambda, eps.cbrt())?;
            exact_mirror &= root.q_minus == -root.q_plus;
            signs &= if b == 0.0 { root.q_plus.im.abs() <= ROOT_REAL } else { root.q_plus.im.signum() == b };
            signs &= root.branch_certificate.consistent;
            worst_residual = worst_residual.max(root.newton_residuals.last().copied().unwrap_or(f64::INFINITY));
        }
    }
    Ok(Outcome::new(
        exact_mirror && signs && worst_residual <= ROOT_RESIDUAL,
        format!("q₋ = −q₊ exactly: {exact_mirror}; sign pattern: {signs}; max residual {worst_residual:.1e}"),
    ))
}

fn limit_operator(fx: &Fixture) -> Result<Outcome> {
    let config = Config::default();
    let limit = assemble_limit_operator(&fx.model.forms, &fx.dirac, &fx.coupling, &config.contours.limit)?;
    let eps_list: Vec<f64> = [1e-1, 1e-2, 1e-3].iter().map(|s| s * fx.t_abs()).collect();
    let samples = default_h_samples(fx.t_abs(), config.search.c0);
    let study = convergence_study(
        &fx.model.forms,
        &fx.dirac,
        &fx.coupling,
        &limit,
        &eps_list,
        &samples,
        &config.contours.quadrature,
    )?;
    let mut kernel = Vec::new();
    for h in [1.0 / 12.0, 1.0 / 18.0, 1.0 / 24.0] {
        let f = Fixture::new(&with_h(Config::default(), h))?;
        let l = assemble_limit_operator(&f.model.forms, &f.dirac, &f.coupling, &config.contours.limit)?;
        kernel.push(kernel_residual(&f.model.forms, &f.dirac, &l));
    }
    let kernel_ok = kernel.windows(2).all(|w| w[1] < w[0]);
    let min_order = study.fitted_orders.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Outcome::new(
        study.monotone && kernel_ok,
        format!(
            "{} h samples monotone: {} (min order {min_order:.2}); kernel residual {}",
            samples.len(),
            study.monotone,
            sci(&kernel)
        ),
    ))
}

fn characteristic_value(fx: &Fixture) -> Result<Outcome> {
    let config = shipped("default.toml");
    let eps = config.perturbation.eps;
    let quad = &config.contours.quadrature;
    let op = InterfaceOperator::new(&fx.model.forms, &fx.dirac, &fx.coupling, eps, quad)?;
    let mode = find_characteristic_value(&fx.model.forms, &fx.dirac, &fx.coupling, &op, &config.search, quad)?;
    let sigma_rel = mode.sigma_min / mode.sigma_max;
    Ok(Outcome::new(
        mode.moments.count == 1 && mode.h_found.im <= IM_H_TOL && sigma_rel <= SIGMA_REL,
        format!("moment count {}, h = {:.6e}, σ_min/‖G‖ = {sigma_rel:.1e}", mode.moments.count, mode.h_found),
    ))
}

fn classification() -> Result<Outcome> {
    // Decoupled structure: genuine interface mode, cross-checked on a strip.
    let config = shipped("decoupled.toml");
    let eps = config.perturbation.eps;
    let quad = &config.contours.quadrature;
    let fx = Fixture::new(&config)?;
    let forms = &fx.model.forms;
    let op = InterfaceOperator::new(forms, &fx.dirac, &fx.coupling, eps, quad)?;
    let mode = find_characteristic_value(forms, &fx.dirac, &fx.coupling, &op, &config.search, quad)?;
    let te = fx.t_abs() * eps;
    let lambda = mode.lambda_star_found;
    let settings = &config.supercell;
    let problem = build_supercell(forms, eps, settings, (fx.dirac.lambda_star - te, fx.dirac.lambda_star + te))?;
    let modes = solve_supercell(&problem, lambda.re, settings.n_eigen, settings.tol)?;
    let best = modes
        .iter()
        .max_by(|a, b| a.localization_score.total_cmp(&b.localization_score))
        .expect("supercell window holds eigenvalues");
    let offset = (best.eigenvalue - lambda.re).abs() / te;
    let decay_right = (best.decay_right - mode.growth_right.abs()).abs() / mode.growth_right.abs();
    let decay_left = (best.decay_left - mode.growth_left.abs()).abs() / mode.growth_left.abs();
    let interface_ok = mode.classification == Classification::Interface
        && lambda.im.abs() <= IM_H_TOL * eps
        && offset <= SUPERCELL_LAMBDA
        && best.localization_score >= SUPERCELL_SCORE
        && decay_right.max(decay_left) <= DECAY_REL;

    // Generic structure: couplings survive, the mode radiates.
    let config = shipped("resonant.toml");
    let eps = config.perturbation.eps;
    let quad = &config.contours.quadrature;
    let gx = Fixture::new(&config)?;
    let forms = &gx.model.forms;
    let op = InterfaceOperator::new(forms, &gx.dirac, &gx.coupling, eps, quad)?;
    let res = find_characteristic_value(forms, &gx.dirac, &gx.coupling, &op, &config.search, quad)?;
    let k = config.search.window_cells as i64;
    let cells: Vec<i64> = (2 * k..=5 * k).step_by(2).collect();
    let growth = radiating_growth(forms, &gx.dirac, &gx.coupling, &res, &cells, quad.gl_order)?;
    let growth_err = (growth.rate - growth.expected).abs() / growth.expected;
    let coupling = res.coupling_plus.norm().max(res.coupling_minus.norm());
    let resonant_ok = res.classification == Classification::Resonant
        && coupling > res.coupling_tolerance
        && res.h_found.im < 0.0
        && growth_err <= GROWTH_REL;

    Ok(Outcome::new(
        interface_ok && resonant_ok,
        format!(
            "interface: Im λ {:.1e}, strip offset {offset:.2e}·|t*|ε, score {:.3}, decay {:.3}/{:.3} vs {:.3}/{:.3}; \
             resonant: coupling {coupling:.2e} > {:.1e}, Im h {:.3e}, growth {:.3e} vs |Im q₊| {:.3e} ({:.1}%)",
            lambda.im,
            best.localization_score,
            best.decay_right,
            best.decay_left,
            mode.growth_right.abs(),
            mode.growth_left.abs(),
            res.coupling_tolerance,
            res.h_found.im,
            growth.rate,
            growth.expected,
            100.0 * growth_err
        ),
    ))
}

fn determinism() -> Result<Outcome> {
    let base = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("determinism");
    let _ = std::fs::remove_dir_all(&base);
    std::fs::create_dir_all(&base)?;
    let config = base.join("coarse.toml");
    std::fs::write(&config, "[discretization]\nh = 0.0625\n")?;
    let mut dirs = Vec::new();
    for run in ["first", "second"] {
        let out = base.join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_waveguide"))
            .args(["interface", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()?;
        if !status.status.success() {
            return Ok(Outcome::new(false, format!("run failed: {}", String::from_utf8_lossy(&status.stderr))));
        }
        dirs.push(out);
    }
    let mut files: Vec<String> = std::fs::read_dir(&dirs[0])?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|f| f != "timings.csv");
    files.sort();
    let mut differing = Vec::new();
    for f in &files {
        if std::fs::read(dirs[0].join(f))? != std::fs::read(dirs[1].join(f))? {
            differing.push(f.clone());
        }
    }
    Ok(Outcome::new(
        differing.is_empty() && files.len() > 3,
        format!("{} report files compared, differing: {differing:?}", files.len()),
    ))
}

#[test]
fn acceptance_criteria() {
    let fx = Fixture::new(&Config::default()).expect("default model builds");
    let checks: Vec<(&str, Box<dyn Fn() -> Result<Outcome> + '_>)> = vec![
        ("discretization oracle", Box::new(discretization_oracle)),
        ("hellmann-feynman slopes", Box::new(|| hellmann_feynman(&fx))),
        ("flux identities", Box::new(flux_identities)),
        ("gap law", Box::new(|| gap_law(&fx))),
        ("eigenfunction law", Box::new(|| eigenfunction_law(&fx))),
        ("residue identity", Box::new(|| residue_identity(&fx))),
        ("root structure", Box::new(|| root_structure(&fx))),
        ("limit operator", Box::new(|| limit_operator(&fx))),
        ("characteristic value", Box::new(|| characteristic_value(&fx))),
        ("classification cross-check", Box::new(classification)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = Vec::new();
    for (name, check) in &checks {
        let outcome = check().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        println!("[{}] {name}: {}", if outcome.passed { "PASS" } else { "FAIL" }, outcome.detail);
        if !outcome.passed {
            failed.push(*name);
        }
    }
    assert!(failed.is_empty(), "failed acceptance criteria: {failed:?}");
}
