//! `waveguide`: command-line front end of the waveguide pipeline.
//!
//! Every subcommand reads one TOML configuration, runs one stage of the
//! pipeline and writes unit-annotated CSV tables plus a `manifest.toml`
//! into the output directory. Exit codes: 0 success, 2 configuration
//! error, 3 failed assumption check, 4 solver failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::rc::Rc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64 as C64;

use waveguide_core::bands::{solve_bands, symmetric_grid};
use waveguide_core::config::Config;
use waveguide_core::greens::{contour_check, find_complex_roots, residue_identity_check, ContinuedGreens, ContourSpec};
use waveguide_core::interface::{find_characteristic_value, radiating_growth, Classification, InterfaceOperator};
use waveguide_core::model::CellModel;
use waveguide_core::perturbation::{
    eigenfunction_asymptotics_check, eigvec_floor, fit_loglog, fold_asymptotics_check, gap_asymptotics_check,
    gap_ratio,
};
use waveguide_core::report::{matrix_text, MeshSummary, ReportWriter, RunManifest, Table, Value};
use waveguide_core::supercell::{build_supercell, solve_supercell, Truncation};
use waveguide_core::{Error, ErrorKind};

/// Environment variable overriding the worker-thread count.
const THREADS_VAR: &str = "WAVEGUIDE_THREADS";

#[derive(Parser)]
#[command(name = "waveguide", version, about = "Dirac-point interface modes of periodic waveguides")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Perturbation size; defaults to `perturbation.eps` of the config.
    #[arg(long, allow_hyphen_values = true)]
    eps: Option<f64>,
    /// Output directory; defaults to `out/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bc {
    Neumann,
    Dirichlet,
}

#[derive(Subcommand)]
enum Command {
    /// Mesh the period cell and export it.
    Mesh(Common),
    /// Band diagram on a symmetric grid of 2·N points.
    Bands {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long, default_value_t = 8)]
        n_bands: usize,
    },
    /// Dirac point, slope and fold crossing.
    Dirac(Common),
    /// Coupling coefficient of the perturbation.
    Coupling(Common),
    /// Gap law and dispersion hyperbola.
    CheckGap(Common),
    /// Eigenvector law near the Dirac point.
    CheckEigvec(Common),
    /// Band behaviour near the fold crossings.
    CheckFold(Common),
    /// Residue identity, complex roots and contour independence.
    GreensCheck {
        #[command(flatten)]
        common: Common,
        /// Energy (real part); defaults to `λ* + |t*|ε/4`.
        #[arg(long, allow_hyphen_values = true)]
        lambda_re: Option<f64>,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        lambda_im: f64,
    },
    /// Characteristic-value search and mode classification.
    Interface {
        #[command(flatten)]
        common: Common,
        /// Points of the real-h scan of the smallest singular value.
        #[arg(long, default_value_t = 21)]
        scan_grid: usize,
        /// Cells per side of the mode-field window.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Finite strip eigenproblem around the Dirac energy.
    Supercell {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_cells: Option<usize>,
        #[arg(long, value_enum)]
        bc: Option<Bc>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Mesh(_) => "mesh",
            Command::Bands { .. } => "bands",
            Command::Dirac(_) => "dirac",
            Command::Coupling(_) => "coupling",
            Command::CheckGap(_) => "check-gap",
            Command::CheckEigvec(_) => "check-eigvec",
            Command::CheckFold(_) => "check-fold",
            Command::GreensCheck { .. } => "greens-check",
            Command::Interface { .. } => "interface",
            Command::Supercell { .. } => "supercell",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Mesh(c) | Command::Dirac(c) | Command::Coupling(c) => c,
            Command::CheckGap(c) | Command::CheckEigvec(c) | Command::CheckFold(c) => c,
            Command::Bands { common, .. }
            | Command::GreensCheck { common, .. }
            | Command::Interface { common, .. }
            | Command::Supercell { common, .. } => common,
        }
    }
}

/// Shared state of one run: configuration, model and the report sink.
struct Run {
    config: Config,
    eps: f64,
    model: Rc<CellModel>,
    out: ReportWriter,
    clock: Instant,
}

impl Run {
    fn start(command: &Command) -> Result<Self, Error> {
        let common = command.common();
        let config = match &common.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        let eps = common.eps.unwrap_or(config.perturbation.eps);
        let dir = common.out.clone().unwrap_or_else(|| Path::new("out").join(command.name()));
        let clock = Instant::now();
        let model = CellModel::build(&config)?;
        let mut manifest = RunManifest::new(command.name(), &config);
        manifest.mesh = Some(MeshSummary::new(&model.mesh.stats(), model.forms.n_dofs));
        let mut out = ReportWriter::new(&dir, manifest);
        out.timing("mesh+assembly", clock.elapsed().as_secs_f64());
        out.summary("eps", eps);
        Ok(Run { config, eps, model: Rc::new(model), out, clock: Instant::now() })
    }

    fn lap(&mut self, stage: &str) {
        self.out.timing(stage, self.clock.elapsed().as_secs_f64());
        self.clock = Instant::now();
    }

    fn say(&mut self, key: &str, value: impl Into<Value> + Clone) {
        let v: Value = value.into();
        println!("{key} = {}", render(&v));
        self.out.summary(key, v);
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::Float(x) => format!("{x:e}"),
        Value::Int(i) => i.to_string(),
        Value::Text(s) => s.clone(),
    }
}

fn run(command: Command) -> Result<PathBuf, Error> {
    let mut r = Run::start(&command)?;
    match &command {
        Command::Mesh(_) => {
            let st = r.model.mesh.stats();
            r.out.raw("mesh.txt", r.model.mesh.export_text());
            r.say("nodes", st.n_nodes);
            r.say("elements", st.n_elements);
            r.say("max_diameter", st.max_diameter);
            r.say("min_quality", st.min_quality);
        }
        Command::Bands { grid, n_bands, .. } => bands(&mut r, *grid, *n_bands)?,
        Command::Dirac(_) => dirac(&mut r)?,
        Command::Coupling(_) => coupling(&mut r)?,
        Command::CheckGap(_) => check_gap(&mut r)?,
        Command::CheckEigvec(_) => check_eigvec(&mut r)?,
        Command::CheckFold(_) => check_fold(&mut r)?,
        Command::GreensCheck { lambda_re, lambda_im, .. } => greens_check(&mut r, *lambda_re, *lambda_im)?,
        Command::Interface { scan_grid, window, .. } => interface(&mut r, *scan_grid, *window)?,
        Command::Supercell { n_cells, bc, .. } => supercell(&mut r, *n_cells, *bc)?,
    }
    r.out.finish()
}

fn bands(r: &mut Run, grid: usize, n_bands: usize) -> Result<(), Error> {
    let p_grid = symmetric_grid(grid);
    let diagram = solve_bands(&r.model.forms, &p_grid, r.eps, n_bands)?;
    r.lap("bands");
    let mut t = Table::new("bands", &[("p", "L^-1"), ("band_ascending", "1"), ("band_analytic", "1"), ("lambda", "L^-2")]);
    for (k, &p) in p_grid.iter().enumerate() {
        for n in 0..diagram.bands.len() {
            t.push(vec![p.into(), n.into(), diagram.analytic_map[k][n].into(), diagram.value(n, k).into()]);
        }
    }
    r.out.table(&t);
    let mut g = Table::new("band_gaps", &[("band", "1"), ("min_gap_to_next", "L^-2")]);
    for (n, gap) in diagram.min_gaps().into_iter().enumerate() {
        g.push(vec![n.into(), gap.into()]);
    }
    r.out.table(&g);
    r.out.manifest.quadrature_nodes.insert("p_grid".into(), p_grid.len());
    r.say("rows", t.rows.len());
    r.say("ambiguous_transitions", diagram.ambiguous_transitions);
    Ok(())
}

fn dirac(r: &mut Run) -> Result<(), Error> {
    let d = r.model.dirac()?;
    r.lap("dirac");
    let rep = &d.report;
    let mut t = Table::new("dirac", &[("quantity", "-"), ("value", "-"), ("unit", "-")]);
    let rows: Vec<(&str, Value, &str)> = vec![
        ("lambda_star", d.lambda_star.into(), "L^-2"),
        ("alpha", d.alpha.into(), "L^-1"),
        ("q_star", d.q_star.into(), "L^-1"),
        ("band_lower", d.band_indices.0.into(), "1"),
        ("band_upper", d.band_indices.1.into(), "1"),
        ("gap_at_detection", rep.gap_at_detection.into(), "L^-2"),
        ("alpha_from_flux", rep.alpha_flux.into(), "L^-1"),
        ("flux_defect", rep.flux_defect.into(), "1"),
        ("cross_flux", rep.cross_flux.into(), "1"),
        ("cross_flux_fold", rep.cross_flux_literal.into(), "1"),
        ("mirror_factor_abs", rep.mirror_factor.norm().into(), "1"),
        ("mirror_residual", rep.mirror_residual.into(), "1"),
        ("q_residual", rep.q_residual.into(), "L^-2"),
        ("fold_slope", rep.fold_slope.into(), "L^-1"),
        ("separation", rep.separation.into(), "1"),
        ("min_band_gap", rep.min_band_gap.into(), "L^-2"),
        ("phase_rule", rep.phase_rule.into(), "-"),
    ];
    for (name, v, unit) in rows {
        t.push(vec![name.into(), v, unit.into()]);
    }
    r.out.table(&t);
    r.say("lambda_star", d.lambda_star);
    r.say("alpha", d.alpha);
    r.say("q_star", d.q_star);
    Ok(())
}

fn coupling(r: &mut Run) -> Result<(), Error> {
    let (d, cp) = r.model.dirac_and_coupling()?;
    r.lap("dirac+coupling");
    let mut t = Table::new(
        "coupling",
        &[
            ("t_star_re", "L^-2"),
            ("t_star_im", "L^-2"),
            ("t_star_abs", "L^-2"),
            ("diag_n_re", "L^-2"),
            ("diag_n_im", "L^-2"),
            ("diag_m_re", "L^-2"),
            ("diag_m_im", "L^-2"),
            ("relaxed_condition_margin", "L^-2"),
            ("strict_condition", "-"),
        ],
    );
    t.push(vec![
        cp.t_star.re.into(),
        cp.t_star.im.into(),
        cp.t_star.norm().into(),
        cp.diag_n.re.into(),
        cp.diag_n.im.into(),
        cp.diag_m.re.into(),
        cp.diag_m.im.into(),
        cp.relaxed_condition_margin.into(),
        cp.strict_condition(1e-8).into(),
    ]);
    r.out.table(&t);
    r.say("t_star_abs", cp.t_star.norm());
    r.say("gap_prediction", 2.0 * cp.t_star.norm() * r.eps.abs());
    r.say("lambda_star", d.lambda_star);
    Ok(())
}

fn check_gap(r: &mut Run) -> Result<(), Error> {
    let (d, cp) = r.model.dirac_and_coupling()?;
    let model = Rc::clone(&r.model);
    let forms = &model.forms;
    let pc = r.config.perturbation.clone();
    let mut t = Table::new(
        "gap",
        &[
            ("eps", "1"),
            ("p", "L^-1"),
            ("exact_minus", "L^-2"),
            ("exact_plus", "L^-2"),
            ("model_minus", "L^-2"),
            ("model_plus", "L^-2"),
            ("defect", "1"),
        ],
    );
    let mut ratios = Table::new("gap_ratio", &[("eps", "1"), ("gap_over_prediction", "1"), ("deviation", "1")]);
    let mut pts = Vec::new();
    for &eps in &pc.gap_eps {
        let scale = cp.t_star.norm() * eps.abs() / d.alpha;
        let ps: Vec<f64> = pc.p_factors.iter().map(|f| f * scale).collect();
        let rep = gap_asymptotics_check(forms, &d, &cp, &[eps], &ps)?;
        for row in &rep.rows {
            pts.push((row.p.abs() + row.eps.abs(), row.defect));
            t.push(vec![
                row.eps.into(),
                row.p.into(),
                row.exact_minus.into(),
                row.exact_plus.into(),
                row.model_minus.into(),
                row.model_plus.into(),
                row.defect.into(),
            ]);
        }
        let ratio = gap_ratio(forms, &d, &cp, eps)?;
        ratios.push(vec![eps.into(), ratio.into(), (ratio - 1.0).abs().into()]);
    }
    r.lap("gap sweep");
    r.out.table(&t);
    r.out.table(&ratios);
    r.say("fitted_order", fit_loglog(&pts));
    Ok(())
}

fn check_eigvec(r: &mut Run) -> Result<(), Error> {
    let (d, cp) = r.model.dirac_and_coupling()?;
    let model = Rc::clone(&r.model);
    let forms = &model.forms;
    let eps = r.config.perturbation.eigvec_eps;
    let scale = cp.t_star.norm() * eps / d.alpha;
    let floor = eigvec_floor(forms, &d, &cp, eps)?;
    let mut t = Table::new(
        "eigvec",
        &[
            ("eps", "1"),
            ("p", "L^-1"),
            ("coefficient_re", "1"),
            ("coefficient_im", "1"),
            ("angle", "rad"),
            ("angle_opposite_sign", "rad"),
            ("angle_mirror", "rad"),
            ("angle_above_floor", "rad"),
        ],
    );
    let mut worst = 0.0f64;
    for f in &r.config.perturbation.p_factors {
        for p in [f * scale, -f * scale] {
            if p == 0.0 && f.is_sign_negative() {
                continue;
            }
            let row = eigenfunction_asymptotics_check(forms, &d, &cp, eps, p)?;
            let excess = (row.angle - floor).max(0.0);
            worst = worst.max(excess);
            t.push(vec![
                row.eps.into(),
                row.p.into(),
                row.coefficient.re.into(),
                row.coefficient.im.into(),
                row.angle.into(),
                row.angle_opposite_sign.into(),
                row.angle_mirror.into(),
                excess.into(),
            ]);
            if p == 0.0 {
                break;
            }
        }
    }
    r.lap("eigenvector sweep");
    r.out.table(&t);
    r.say("discretization_floor", floor);
    r.say("max_angle_above_floor", worst);
    Ok(())
}

fn check_fold(r: &mut Run) -> Result<(), Error> {
    let d = r.model.dirac()?;
    let pc = r.config.perturbation.clone();
    let rep = fold_asymptotics_check(&r.model.forms, &d, &pc.fold_eps, &pc.fold_offsets)?;
    r.lap("fold sweep");
    let mut t = Table::new(
        "fold",
        &[
            ("eps", "1"),
            ("centre", "L^-1"),
            ("p", "L^-1"),
            ("defect", "L^-2"),
            ("slope_defect", "L^-1"),
            ("vector_angle", "rad"),
        ],
    );
    for row in &rep.rows {
        t.push(vec![
            row.eps.into(),
            row.centre.into(),
            row.p.into(),
            row.defect.into(),
            row.slope_defect.into(),
            row.vector_angle.into(),
        ]);
    }
    r.out.table(&t);
    r.say("c_value", rep.c_value);
    r.say("c_slope", rep.c_slope);
    r.say("c_vector", rep.c_vector);
    r.say("slope_at_fold", rep.slope_at_fold);
    Ok(())
}

fn greens_check(r: &mut Run, lambda_re: Option<f64>, lambda_im: f64) -> Result<(), Error> {
    let (d, cp) = r.model.dirac_and_coupling()?;
    let model = Rc::clone(&r.model);
    let forms = &model.forms;
    let quad = r.config.contours.quadrature.clone();
    let eps = r.eps;
    let te = cp.t_star.norm() * eps.abs();
    let lambda = C64::new(lambda_re.unwrap_or(d.lambda_star + 0.25 * te), lambda_im);
    let radius = eps.abs().cbrt();

    let res = residue_identity_check(forms, &d, eps, lambda.re, &quad)?;
    r.lap("residue identity");
    let mut t = Table::new(
        "residue",
        &[
            ("lambda", "L^-2"),
            ("q_plus", "L^-1"),
            ("slope_plus", "L^-1"),
            ("slope_minus", "L^-1"),
            ("discrepancy", "1"),
            ("discrepancy_without_residue", "1"),
            ("predicted_dyad_norm", "1"),
        ],
    );
    t.push(vec![
        res.lambda.into(),
        res.q_plus.into(),
        res.slope_plus.into(),
        res.slope_minus.into(),
        res.discrepancy.into(),
        res.discrepancy_without_residue.into(),
        res.predicted_dyad_norm.into(),
    ]);
    r.out.table(&t);
    let mut pv = Table::new("pv_by_tau", &[("tau", "L^-1"), ("discrepancy", "1")]);
    for &(tau, v) in &res.pv_by_tau {
        pv.push(vec![tau.into(), v.into()]);
    }
    r.out.table(&pv);
    r.say("residue_discrepancy", res.discrepancy);

    let mut roots = Table::new(
        "roots",
        &[
            ("lambda_re", "L^-2"),
            ("lambda_im", "L^-2"),
            ("q_plus_re", "L^-1"),
            ("q_plus_im", "L^-1"),
            ("q_minus_re", "L^-1"),
            ("q_minus_im", "L^-1"),
            ("residual", "L^-2"),
            ("sign_consistent", "-"),
        ],
    );
    let step = 0.25 * te;
    for a in [-1.0, 0.0, 1.0] {
        for b in [-1.0, 0.0, 1.0] {
            let l = C64::new(d.lambda_star + a * step, b * step);
            let root = find_complex_roots(forms, &d, eps, l, radius)?;
            roots.push(vec![
                l.re.into(),
                l.im.into(),
                root.q_plus.re.into(),
                root.q_plus.im.into(),
                root.q_minus.re.into(),
                root.q_minus.im.into(),
                root.newton_residuals.last().copied().unwrap_or(0.0).into(),
                root.branch_certificate.consistent.into(),
            ]);
        }
    }
    r.lap("complex roots");
    r.out.table(&roots);

    let cc = contour_check(forms, &d, cp.t_star.norm(), eps, lambda, &quad)?;
    r.lap("contour independence");
    let mut c = Table::new(
        "contour",
        &[
            ("lambda_re", "L^-2"),
            ("lambda_im", "L^-2"),
            ("radius", "L^-1"),
            ("radius_alternative", "L^-1"),
            ("independence", "1"),
            ("self_convergence", "1"),
        ],
    );
    c.push(vec![
        cc.lambda.re.into(),
        cc.lambda.im.into(),
        cc.radius.into(),
        cc.radius_alternative.into(),
        cc.independence.into(),
        cc.self_convergence.into(),
    ]);
    r.out.table(&c);
    r.out.manifest.quadrature_nodes.insert("c_eps_real".into(), cc.nodes.0);
    r.out.manifest.quadrature_nodes.insert("c_eps_arc".into(), cc.nodes.1);
    r.out.manifest.quadrature_nodes.insert("c_eps_refined_real".into(), cc.nodes_refined.0);
    r.out.manifest.quadrature_nodes.insert("c_eps_refined_arc".into(), cc.nodes_refined.1);
    r.say("contour_independence", cc.independence);
    r.say("self_convergence", cc.self_convergence);

    let g = ContinuedGreens::new(forms, &d, eps, ContourSpec::c_eps(&d, cp.t_star.norm(), eps, &quad))?;
    r.out.raw("operator.txt", matrix_text(&g.operator(lambda).matrix));
    Ok(())
}

fn interface(r: &mut Run, scan_grid: usize, window: Option<usize>) -> Result<(), Error> {
    let (d, cp) = r.model.dirac_and_coupling()?;
    r.lap("dirac+coupling");
    let model = Rc::clone(&r.model);
    let forms = &model.forms;
    let quad = r.config.contours.quadrature.clone();
    let mut search = r.config.search.clone();
    if let Some(k) = window {
        search.window_cells = k;
    }
    let op = InterfaceOperator::new(forms, &d, &cp, r.eps, &quad)?;
    let (nr, na) = op.plus.node_count();
    r.lap("interface operator");
    let mode = find_characteristic_value(forms, &d, &cp, &op, &search, &quad)?;
    r.lap("characteristic value");
    r.out.manifest.quadrature_nodes.insert("c_eps_real".into(), nr);
    r.out.manifest.quadrature_nodes.insert("c_eps_arc".into(), na);
    r.out.manifest.quadrature_nodes.insert("moment_contour".into(), mode.moments.nodes);

    let radius = search.c0 * cp.t_star.norm();
    let mut scan = Table::new("sigma_scan", &[("h", "L^-2"), ("sigma_min_rel", "1")]);
    for k in 0..scan_grid {
        let s = if scan_grid > 1 { -1.0 + 2.0 * k as f64 / (scan_grid - 1) as f64 } else { 0.0 };
        let sample = op.sample(C64::new(0.95 * s * radius, 0.0));
        scan.push(vec![sample.h.re.into(), (sample.sigma_min / sample.norm).into()]);
    }
    r.out.table(&scan);

    let mut newton = Table::new("newton", &[("h_re", "L^-2"), ("h_im", "L^-2"), ("sigma_rel", "1")]);
    for s in &mode.newton {
        newton.push(vec![s.h_re.into(), s.h_im.into(), s.sigma_rel.into()]);
    }
    r.out.table(&newton);

    let mut field = Table::new("mode_field", &[("cell", "1"), ("x1", "L"), ("x2", "L"), ("re_u", "arb"), ("im_u", "arb")]);
    for (k, values) in mode.mode.cells.iter().zip(&mode.mode.values) {
        for (node, u) in model.mesh.nodes.iter().zip(values) {
            field.push(vec![(*k).into(), (*k as f64 + node[0] - 0.5).into(), node[1].into(), u.re.into(), u.im.into()]);
        }
    }
    r.out.table(&field);
    let mut norms = Table::new("cell_norms", &[("cell", "1"), ("norm", "arb")]);
    for (k, n) in mode.mode.cells.iter().zip(&mode.mode.cell_norms) {
        norms.push(vec![(*k).into(), (*n).into()]);
    }
    r.out.table(&norms);

    r.say("moment_count", mode.moments.count);
    r.say("moment_raw_re", mode.moments.raw_re);
    r.say("moment_raw_im", mode.moments.raw_im);
    r.say("h_found_re", mode.h_found.re);
    r.say("h_found_im", mode.h_found.im);
    r.say("lambda_found_re", mode.lambda_star_found.re);
    r.say("lambda_found_im", mode.lambda_star_found.im);
    r.say("sigma_min_rel", mode.sigma_min / mode.sigma_max);
    r.say("residual", mode.residual);
    r.say("coupling_plus", mode.coupling_plus.norm());
    r.say("coupling_minus", mode.coupling_minus.norm());
    r.say("coupling_left_plus", mode.coupling_left_plus.norm());
    r.say("coupling_left_minus", mode.coupling_left_minus.norm());
    r.say("coupling_scale", mode.coupling_scale);
    r.say("coupling_tolerance", mode.coupling_tolerance);
    r.say("self_convergence", mode.self_convergence);
    let class = match mode.classification {
        Classification::Interface => "interface",
        Classification::Resonant => "resonant",
    };
    r.say("classification", class);
    r.say("q_plus_re", mode.q_plus.re);
    r.say("q_plus_im", mode.q_plus.im);
    r.say("growth_right", mode.growth_right);
    r.say("growth_left", mode.growth_left);
    r.say("energy_gradient", mode.energy.gradient);
    r.say("energy_mass", mode.energy.mass);
    r.say("energy_residual", mode.energy.residual);
    r.say("energy_truncation_bound", mode.energy.truncation_bound);

    if mode.classification == Classification::Resonant {
        let k = search.window_cells as i64;
        let cells: Vec<i64> = (2 * k..=5 * k).step_by(2).collect();
        let growth = radiating_growth(forms, &d, &cp, &mode, &cells, quad.gl_order)?;
        r.lap("far field");
        let mut t = Table::new("far_field", &[("cell", "1"), ("norm", "arb")]);
        for (c, n) in growth.cells.iter().zip(&growth.norms) {
            t.push(vec![(*c).into(), (*n).into()]);
        }
        r.out.table(&t);
        r.say("far_field_growth", growth.rate);
        r.say("im_q_plus_abs", growth.expected);
    }
    Ok(())
}

fn supercell(r: &mut Run, n_cells: Option<usize>, bc: Option<Bc>) -> Result<(), Error> {
    let (d, cp) = r.model.dirac_and_coupling()?;
    let mut settings = r.config.supercell.clone();
    if let Some(n) = n_cells {
        settings.n_cells_per_side = n;
    }
    if let Some(bc) = bc {
        settings.truncation = match bc {
            Bc::Neumann => Truncation::Neumann,
            Bc::Dirichlet => Truncation::Dirichlet,
        };
    }
    let half = settings.window * cp.t_star.norm() * r.eps.abs();
    let window = (d.lambda_star - half, d.lambda_star + half);
    let problem = build_supercell(&r.model.forms, r.eps, &settings, window)?;
    r.lap("supercell assembly");
    let modes = solve_supercell(&problem, d.lambda_star, settings.n_eigen, settings.tol)?;
    r.lap("supercell eigensolve");
    let mut t = Table::new(
        "supercell",
        &[("mode", "1"), ("eigenvalue", "L^-2"), ("localization_score", "1"), ("decay_right", "L^-1"), ("decay_left", "L^-1")],
    );
    let mut slices = Table::new("supercell_cells", &[("mode", "1"), ("cell", "1"), ("norm", "arb")]);
    for (i, m) in modes.iter().enumerate() {
        t.push(vec![i.into(), m.eigenvalue.into(), m.localization_score.into(), m.decay_right.into(), m.decay_left.into()]);
        for &(k, n) in &m.cell_norms {
            slices.push(vec![i.into(), k.into(), n.into()]);
        }
    }
    r.out.table(&t);
    r.out.table(&slices);
    r.say("unknowns", problem.n_dofs());
    r.say("window_eigenvalues", modes.len());
    if let Some(best) = modes.iter().max_by(|a, b| a.localization_score.total_cmp(&b.localization_score)) {
        r.say("best_eigenvalue", best.eigenvalue);
        r.say("best_localization_score", best.localization_score);
    }
    Ok(())
}

fn configure_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_VAR} must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("cannot configure worker threads: {e}")))?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Assumption => 3,
        ErrorKind::Solver => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| run(cli.command));
    match result {
        Ok(dir) => {
            println!("reports written to {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
