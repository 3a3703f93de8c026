//! Subcommands of the experiment runner. Each writes its files into an output directory
//! and reports whether its checks passed.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    check_multiplier_monotonicity, check_multiplier_symmetry, kato_ponce_check, multiplier_norm, poincare_constant,
    random_smooth_field, triviality_scan, ucp_diagnostic,
};
use crate::config::{ExperimentConfig, RecoverMode, Suite};
use crate::dn::{alessandrini, assemble_dn, assemble_dn_adjoint, duality_deviation, fmt_real, ExteriorDictionary};
use crate::error::{Error, Result};
use crate::geometry::{bump, make_nodeset, BumpSpec, Label, NodeSet, Shape};
use crate::grid::{Grid, GridFunction, MultiIndex};
use crate::operator::{coercivity_estimate, CoercivityNorm, CoercivityOptions, ForwardProblem, PdoCoefficients};
use crate::recover::{recover_coefficients, recover_oracle_mode, runge_approximate, Dynamics, RungeOptions};
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Forward,
    Dn,
    Alessandrini,
    Runge,
    Recover,
    Verify,
}

/// Files written, whether every check passed, and lines for the terminal.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub passed: bool,
    pub messages: Vec<String>,
    pub warnings: Vec<String>,
}

/// 0 on success, 1 on a failed check or runtime error, 2 on a configuration error.
pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(o) if o.passed => 0,
        Ok(_) => 1,
        Err(Error::Config { .. }) => 2,
        Err(_) => 1,
    }
}

/// Runs `command`; `base` resolves relative paths inside the config.
pub fn run(command: Command, config: &ExperimentConfig, base: &Path, out: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(out)?;
    match command {
        Command::Forward => cmd_forward(config, base, out),
        Command::Dn => cmd_dn(config, base, out),
        Command::Alessandrini => cmd_alessandrini(config, base, out),
        Command::Runge => cmd_runge(config, base, out),
        Command::Recover => cmd_recover(config, base, out),
        Command::Verify => cmd_verify(config, base, out),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(File::create(path)?)))
}

fn create(out: &Path, name: &str, files: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let path = out.join(name);
    files.push(path.clone());
    Ok(BufWriter::new(File::create(path)?))
}

fn cfg_err(path: &str, e: impl std::fmt::Display) -> Error {
    Error::Config { path: path.into(), message: e.to_string() }
}

fn study_problem(config: &ExperimentConfig, base: &Path) -> Result<ForwardProblem> {
    config.problem_with(config.coefficients(base)?)
}

pub fn cmd_forward(config: &ExperimentConfig, base: &Path, out: &Path) -> Result<Outcome> {
    let problem = study_problem(config, base)?;
    let grid = *problem.grid();
    let datum = config.forward_datum();
    let f = bump(&grid, &BumpSpec::new(&datum.center, datum.radius), None).map_err(|e| cfg_err("forward.datum", e))?;
    if !problem.omega().avoids(&f) {
        return Err(cfg_err("forward.datum", "datum must vanish on the domain"));
    }
    let source = match &config.forward.source {
        Some(b) => Some(
            bump(&grid, &BumpSpec::new(&b.center, b.radius), Some(problem.omega())).map_err(|e| cfg_err("forward.source", e))?,
        ),
        None => None,
    };
    let rep = problem.solve_forward(&f, source.as_ref())?;
    let mut files = Vec::new();
    rep.u.write_dump(create(out, "solution.fcl", &mut files)?)?;
    let tol = match rep.method {
        crate::operator::SolveMethod::Dense => problem.options().dense_tol,
        crate::operator::SolveMethod::Iterative => problem.options().iterative_tol,
    };
    let passed = rep.residual <= tol;
    let path = out.join("solve_report.csv");
    let mut w = csv_writer(&path)?;
    files.push(path);
    w.write_record(["method", "residual", "iterations", "condition_estimate", "tolerance", "pass"])?;
    w.write_record([
        rep.method.to_string(),
        fmt_real(rep.residual),
        rep.iterations.to_string(),
        fmt_real(rep.condition_estimate),
        fmt_real(tol),
        passed.to_string(),
    ])?;
    w.flush()?;
    Ok(Outcome {
        files,
        passed,
        messages: vec![format!("forward solve ({}) residual {:.3e}", rep.method, rep.residual)],
        warnings: Vec::new(),
    })
}

pub fn cmd_dn(config: &ExperimentConfig, base: &Path, out: &Path) -> Result<Outcome> {
    let problem = study_problem(config, base)?;
    let (d1, d2) = config.dictionaries()?;
    let dn = assemble_dn(&problem, &d1, &d2)?;
    let dn_star = assemble_dn_adjoint(&problem, &d2, &d1)?;
    let deviation = duality_deviation(&dn, &dn_star)?;
    let mut files = Vec::new();
    dn.write_csv(create(out, "dn.csv", &mut files)?)?;
    dn_star.write_csv(create(out, "dn_adjoint.csv", &mut files)?)?;
    d1.write_descriptor("w1", create(out, "dictionary_w1.csv", &mut files)?)?;
    d2.write_descriptor("w2", create(out, "dictionary_w2.csv", &mut files)?)?;
    let passed = deviation <= 1e-8;
    let path = out.join("duality.csv");
    let mut w = csv_writer(&path)?;
    files.push(path);
    w.write_record(["rows", "cols", "deviation", "tolerance", "pass"])?;
    w.write_record([dn.rows().to_string(), dn.cols().to_string(), fmt_real(deviation), fmt_real(1e-8), passed.to_string()])?;
    w.flush()?;
    Ok(Outcome {
        files,
        passed,
        messages: vec![format!("DN matrix {}x{}, duality deviation {deviation:.3e}", dn.rows(), dn.cols())],
        warnings: Vec::new(),
    })
}

fn random_coefficients(grid: &Grid, order: u32, taper: &GridFunction, amplitude: f64, rng: &mut ChaCha8Rng) -> Result<PdoCoefficients> {
    let mut c = PdoCoefficients::new(*grid, order);
    for alpha in MultiIndex::up_to_order(grid.dims(), order) {
        let f = random_smooth_field(grid, rng, 4).scale(amplitude).mul(taper)?;
        c.insert(alpha, f)?;
    }
    Ok(c)
}

fn random_combination(dict: &ExteriorDictionary, rng: &mut ChaCha8Rng) -> Result<GridFunction> {
    let c: Vec<f64> = (0..dict.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    dict.combine(&c)
}

struct IdentityCase {
    identical: bool,
    lhs: f64,
    rhs: f64,
    residual: f64,
    tolerance: f64,
}

fn alessandrini_cases(config: &ExperimentConfig, cases: usize, seed: u64, inject: bool) -> Result<Vec<IdentityCase>> {
    let grid = config.grid()?;
    let (d1, d2) = config.dictionaries()?;
    let taper = config.taper()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cases);
    for case in 0..cases {
        let identical = case % 5 == 4;
        let c1 = random_coefficients(&grid, config.problem.order, &taper, config.alessandrini.amplitude, &mut rng)?;
        let c2 = if identical {
            c1.clone()
        } else {
            random_coefficients(&grid, config.problem.order, &taper, config.alessandrini.amplitude, &mut rng)?
        };
        let mut p1 = config.problem_with(c1)?;
        let mut p2 = config.problem_with(c2)?;
        if inject {
            p1 = p1.with_adjoint_sign_error();
            p2 = p2.with_adjoint_sign_error();
        }
        let f1 = random_combination(&d1, &mut rng)?;
        let f2 = random_combination(&d2, &mut rng)?;
        let rep = alessandrini(&p1, &p2, &f1, &f2)?;
        out.push(IdentityCase {
            identical,
            lhs: rep.lhs,
            rhs: rep.rhs,
            residual: rep.residual(),
            tolerance: if identical { 1e-9 } else { config.alessandrini.tolerance },
        });
    }
    Ok(out)
}

pub fn cmd_alessandrini(config: &ExperimentConfig, _base: &Path, out: &Path) -> Result<Outcome> {
    let cases = alessandrini_cases(config, config.alessandrini.cases, config.seed, config.verify.inject_adjoint_sign_error)?;
    let mut files = Vec::new();
    let path = out.join("alessandrini.csv");
    let mut w = csv_writer(&path)?;
    files.push(path);
    w.write_record(["case", "identical", "lhs", "rhs", "residual", "tolerance", "pass"])?;
    let mut passed = true;
    let mut worst: f64 = 0.0;
    for (i, c) in cases.iter().enumerate() {
        let ok = c.residual <= c.tolerance;
        passed &= ok;
        worst = worst.max(c.residual);
        w.write_record([
            i.to_string(),
            c.identical.to_string(),
            fmt_real(c.lhs),
            fmt_real(c.rhs),
            fmt_real(c.residual),
            fmt_real(c.tolerance),
            ok.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(Outcome {
        files,
        passed,
        messages: vec![format!("{} identity cases, worst residual {worst:.3e}", cases.len())],
        warnings: Vec::new(),
    })
}

fn sized(dict: &ExteriorDictionary, sizes: &[usize], key: &str) -> Result<Vec<ExteriorDictionary>> {
    sizes
        .iter()
        .map(|&k| {
            if k > dict.len() {
                Err(cfg_err(key, format!("size {k} exceeds the {} available dictionary elements", dict.len())))
            } else {
                dict.prefix(k)
            }
        })
        .collect()
}

fn runge_target(config: &ExperimentConfig, omega: &NodeSet) -> Result<GridFunction> {
    let t = config.runge_target();
    bump(omega.grid(), &BumpSpec::new(&t.center, t.radius), Some(omega)).map_err(|e| cfg_err("runge.target", e))
}

pub fn cmd_runge(config: &ExperimentConfig, base: &Path, out: &Path) -> Result<Outcome> {
    let problem = study_problem(config, base)?;
    let (d1, _) = config.dictionaries()?;
    let target = runge_target(config, problem.omega())?;
    let options = config.runge_options();
    let dicts = sized(&d1, &config.runge.dictionary_sizes, "runge.dictionary_sizes")?;
    let mut files = Vec::new();
    let path = out.join("runge.csv");
    let mut w = csv_writer(&path)?;
    files.push(path);
    w.write_record(["size", "lambda_reg", "error", "error_hs", "error_l2", "relative_l2", "normal_residual"])?;
    let mut results = Vec::new();
    for d in &dicts {
        let r = runge_approximate(&problem, &target, d, Dynamics::Forward, &options)?;
        w.write_record([
            r.dictionary_size.to_string(),
            fmt_real(r.lambda_reg),
            fmt_real(r.error),
            fmt_real(r.error_hs),
            fmt_real(r.error_l2),
            fmt_real(r.relative_l2),
            fmt_real(r.normal_residual),
        ])?;
        results.push(r);
    }
    w.flush()?;
    let monotone = results.windows(2).all(|p| p[1].error <= p[0].error + 1e-12);
    let passed = options.lambda_rel > 0.0 || monotone;
    if let Some(last) = results.last() {
        last.datum.write_dump(create(out, "runge_datum.fcl", &mut files)?)?;
    }
    let messages = results
        .iter()
        .map(|r| format!("{} elements: relative L2 error {:.3e}", r.dictionary_size, r.relative_l2))
        .collect();
    Ok(Outcome { files, passed, messages, warnings: Vec::new() })
}

pub fn cmd_recover(config: &ExperimentConfig, base: &Path, out: &Path) -> Result<Outcome> {
    let p1 = study_problem(config, base)?;
    let p2 = config.problem_with(config.reference_coefficients(base)?)?;
    let truth = p1.coefficients().difference(p2.coefficients())?;
    let rc = config.recovery_config()?;
    let tol = config.recover.error_tolerance;
    let mut runs = Vec::new();
    match config.recover.mode {
        RecoverMode::Oracle => runs.push((0, recover_oracle_mode(&p1, &p2, &rc)?)),
        RecoverMode::EndToEnd => {
            let (d1, d2) = config.dictionaries()?;
            let dn = assemble_dn(&p1, &d1, &d2)?;
            let full = d1.len().max(d2.len());
            for &k in &config.recover.dictionary_sizes {
                if k >= full {
                    continue;
                }
                let (e1, e2) = (d1.prefix(k.min(d1.len()))?, d2.prefix(k.min(d2.len()))?);
                let sub = dn.entries.view((0, 0), (e1.len(), e2.len())).into_owned();
                let sub = crate::dn::DnMatrix { entries: sub, adjoint: false };
                runs.push((k, recover_coefficients(&sub, &p2, &e1, &e2, &rc)?));
            }
            runs.push((full, recover_coefficients(&dn, &p2, &d1, &d2, &rc)?));
        }
    }
    let (_, main) = runs.last().expect("at least one run");
    let mut files = Vec::new();
    main.write_csv(create(out, "recovered.csv", &mut files)?)?;
    let path = out.join("recovery_summary.csv");
    let mut w = csv_writer(&path)?;
    files.push(path);
    w.write_record(["alpha", "dictionary_size", "relative_error", "order_residual", "flagged", "tolerance", "pass"])?;
    let mut passed = true;
    let mut messages = Vec::new();
    for (i, (size, rec)) in runs.iter().enumerate() {
        let last = i + 1 == runs.len();
        for (alpha, err) in rec.relative_errors(&truth)? {
            let flagged = rec.entries.iter().filter(|e| e.alpha == alpha && e.flagged).count();
            let ok = err <= tol;
            if last {
                passed &= ok;
                messages.push(format!("alpha {}: relative error {err:.3e}{}", alpha.label(), if ok { "" } else { " (degraded)" }));
            }
            w.write_record([
                alpha.label(),
                size.to_string(),
                fmt_real(err),
                fmt_real(rec.order_residuals[alpha.order() as usize]),
                flagged.to_string(),
                fmt_real(tol),
                ok.to_string(),
            ])?;
        }
    }
    w.flush()?;
    let flagged = main.entries.iter().filter(|e| e.flagged).count();
    let warnings = if flagged > 0 {
        vec![format!("{flagged} recovered values exceed the Runge error threshold {}", rc.runge_error_threshold)]
    } else {
        Vec::new()
    };
    Ok(Outcome { files, passed, messages, warnings })
}

/// One line of the verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub estimate: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn upper(suite: Suite, name: impl Into<String>, estimate: f64, tolerance: f64) -> Self {
        Self { suite, name: name.into(), pass: estimate <= tolerance, estimate, tolerance }
    }

    fn lower(suite: Suite, name: impl Into<String>, estimate: f64, floor: f64) -> Self {
        Self { suite, name: name.into(), pass: estimate >= floor, estimate, tolerance: floor }
    }

    fn flag(suite: Suite, name: impl Into<String>, ok: bool) -> Self {
        Self { suite, name: name.into(), estimate: if ok { 1.0 } else { 0.0 }, tolerance: 1.0, pass: ok }
    }
}

fn rel(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

fn max_rel(a: &GridFunction, b: &GridFunction) -> f64 {
    let scale = b.max_abs().max(a.max_abs());
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale.max(f64::MIN_POSITIVE)
}

fn supported_random(omega: &NodeSet, rng: &mut ChaCha8Rng) -> Result<GridFunction> {
    let values: Vec<f64> = (0..omega.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    crate::geometry::extend_zero(&values, omega)
}

fn suite_symbols(config: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let grid = config.grid()?;
    let s = config.problem.s;
    let sym = Suite::Symbols;
    let mut out = Vec::new();
    let k = 3.0 * std::f64::consts::PI / grid.half_length();
    let wave = GridFunction::from_fn(grid, |x| (k * x[0]).cos())?;
    let lap = spectral::frac_laplacian(&wave, s)?;
    out.push(Check::upper(sym, "plane_wave_eigenfunction", max_rel(&lap, &wave.scale(k.powf(2.0 * s))), 1e-10));
    let bessel = spectral::bessel_potential(&wave, s)?;
    out.push(Check::upper(sym, "plane_wave_bessel", max_rel(&bessel, &wave.scale((1.0 + k * k).powf(s / 2.0))), 1e-10));
    let mut composition: f64 = 0.0;
    let mut adjoint: f64 = 0.0;
    let mut derivative: f64 = 0.0;
    for _ in 0..config.verify.samples {
        let u = random_smooth_field(&grid, rng, 6);
        let v = random_smooth_field(&grid, rng, 6);
        let (a, b) = (rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9));
        let two = spectral::frac_laplacian(&spectral::frac_laplacian(&u, a)?, b)?;
        composition = composition.max(max_rel(&two, &spectral::frac_laplacian(&u, a + b)?));
        let scale = spectral::l2_norm(&u) * spectral::l2_norm(&v) * (1.0 + k).powf(2.0 * s);
        let lhs = spectral::pairing(&spectral::frac_laplacian(&u, s)?, &v)?;
        let rhs = spectral::pairing(&u, &spectral::frac_laplacian(&v, s)?)?;
        adjoint = adjoint.max(rel(lhs, rhs, scale.max(lhs.abs())));
        for axis in 0..grid.dims() {
            let e = MultiIndex::unit(grid.dims(), axis);
            let lhs = spectral::pairing(&spectral::derivative(&u, &e)?, &v)?;
            let rhs = -spectral::pairing(&u, &spectral::derivative(&v, &e)?)?;
            derivative = derivative.max(rel(lhs, rhs, spectral::l2_norm(&u) * spectral::l2_norm(&v) * 4.0 * k));
        }
    }
    out.push(Check::upper(sym, "composition", composition, 1e-10));
    out.push(Check::upper(sym, "fractional_laplacian_symmetry", adjoint, 1e-10));
    out.push(Check::upper(sym, "derivative_antisymmetry", derivative, 1e-10));
    Ok(out)
}

fn suite_adjointness(problem: &ForwardProblem, samples: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let sym = Suite::Adjointness;
    let mut worst: f64 = 0.0;
    let mut swap: f64 = 0.0;
    for _ in 0..samples {
        let v = supported_random(problem.omega(), rng)?;
        let w = supported_random(problem.omega(), rng)?;
        let lhs = spectral::pairing(&problem.apply(&v)?, &w)?;
        let rhs = spectral::pairing(&v, &problem.apply_adjoint(&w)?)?;
        let scale = spectral::l2_norm(&problem.apply(&v)?) * spectral::l2_norm(&w);
        worst = worst.max(rel(lhs, rhs, scale));
        swap = swap.max((problem.bilinear(&v, &w)? - problem.bilinear_adjoint(&w, &v)?).abs());
    }
    let m = problem.restricted_matrix();
    let mt = problem.restricted_adjoint_matrix();
    let transpose = (&mt - m.transpose()).norm() / m.norm();
    Ok(vec![
        Check::upper(sym, "operator_pairing", worst, 1e-10),
        Check::upper(sym, "bilinear_swap", swap, 0.0),
        Check::upper(sym, "restricted_transpose", transpose, 1e-12),
    ])
}

fn suite_coercivity(config: &ExperimentConfig, problem: &ForwardProblem, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let sym = Suite::Coercivity;
    let cert = coercivity_estimate(problem, &CoercivityOptions::default())?;
    let mut slack = f64::INFINITY;
    for _ in 0..config.verify.samples {
        let v = supported_random(problem.omega(), rng)?;
        let scale = spectral::sobolev_norm(&v, problem.s()).powi(2);
        slack = slack.min(cert.slack(problem, &v)? / scale);
    }
    let free = problem.with_coefficients(PdoCoefficients::new(*problem.grid(), problem.coefficients().order()))?;
    let free = free.with_lambda_shift(0.0)?;
    let opts = CoercivityOptions { norm: CoercivityNorm::Homogeneous, ..Default::default() };
    let c = coercivity_estimate(&free, &opts)?;
    Ok(vec![
        Check::lower(sym, "certificate_c0", cert.c0, f64::MIN_POSITIVE),
        Check::lower(sym, "certificate_slack", slack, -1e-10),
        Check::lower(sym, "free_operator_c0", c.c0, 0.99),
        Check::upper(sym, "free_operator_mu", c.mu, 0.0),
    ])
}

fn suite_duality(problem: &ForwardProblem, d1: &ExteriorDictionary, d2: &ExteriorDictionary) -> Result<Vec<Check>> {
    let e1 = d1.prefix(d1.len().min(16))?;
    let e2 = d2.prefix(d2.len().min(16))?;
    let dn = assemble_dn(problem, &e1, &e2)?;
    let star = assemble_dn_adjoint(problem, &e2, &e1)?;
    Ok(vec![Check::upper(Suite::Duality, format!("dn_duality_{}x{}", e1.len(), e2.len()), duality_deviation(&dn, &star)?, 1e-8)])
}

fn suite_multipliers(config: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let sym = Suite::Multipliers;
    let dims = config.grid.dims;
    let l = config.grid.half_length;
    let small = Grid::new(dims, if dims == 1 { 64 } else { 16 }, l)?;
    let gauss = |g: &Grid| GridFunction::from_fn(*g, |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
    let f = gauss(&small)?;
    let symmetry = check_multiplier_symmetry(&f, 0.6, -0.4)?;
    let mut monotone = true;
    for _ in 0..config.verify.samples {
        let f = random_smooth_field(&small, rng, 4);
        let (r, t) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let (lambda, mu) = (rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5));
        monotone &= check_multiplier_monotonicity(&f, r, t, lambda, mu)?.holds;
    }
    // 1-D so that three doublings stay within the dense limit
    let scan = triviality_scan(Grid::new(1, 32, l)?, gauss, 0.0, 0.5, 3)?;
    let constant = multiplier_norm(&GridFunction::constant(small, 2.5)?, 0.3, 0.3)?.norm_value;
    Ok(vec![
        Check::upper(sym, "symmetry", symmetry, 1e-9),
        Check::flag(sym, "monotonicity", monotone),
        Check::flag(sym, "refinement_growth", scan.strictly_increasing()),
        Check::upper(sym, "constant_norm", (constant - 2.5).abs(), 1e-10),
    ])
}

fn suite_poincare(problem: &ForwardProblem, samples: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let sym = Suite::Poincare;
    let c = poincare_constant(problem.omega(), problem.s())?;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let v = supported_random(problem.omega(), rng)?;
        let half = spectral::l2_norm(&spectral::frac_laplacian(&v, problem.s() / 2.0)?);
        worst = worst.max(spectral::l2_norm(&v) / (c * half));
    }
    Ok(vec![
        Check::flag(sym, "constant_finite", c.is_finite() && c > 0.0),
        Check::upper(sym, "inequality_ratio", worst, 1.0 + 1e-10),
    ])
}

fn suite_kato_ponce(config: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let grid = config.grid()?;
    let s = config.problem.s;
    let mut worst: f64 = 0.0;
    for _ in 0..config.verify.samples {
        let f = random_smooth_field(&grid, rng, 4);
        let g = random_smooth_field(&grid, rng, 4);
        worst = worst.max(kato_ponce_check(&f, &g, s)?);
    }
    let c = GridFunction::constant(grid, 1.7)?;
    let g = random_smooth_field(&grid, rng, 4);
    Ok(vec![
        Check::upper(Suite::KatoPonce, "ratio", worst, 10.0),
        Check::upper(Suite::KatoPonce, "constant_factor", kato_ponce_check(&c, &g, s)?, 1.0 + 1e-12),
    ])
}

fn suite_ucp(config: &ExperimentConfig) -> Result<Vec<Check>> {
    let sym = Suite::Ucp;
    let s = config.problem.s;
    let mut sigmas = Vec::new();
    for n in [32, 64, 128] {
        let g = Grid::new(1, n, 2.0)?;
        let v = make_nodeset(g, Shape::ball(&[-0.6], 0.6), Label::Custom("V".into()))?;
        let k = make_nodeset(g, Shape::ball(&[1.0], 0.3), Label::Custom("K".into()))?;
        sigmas.push(ucp_diagnostic(Some(&v), s, Some(&k), &g)?);
    }
    let g = Grid::new(1, 32, 2.0)?;
    Ok(vec![
        Check::flag(sym, "decay_under_refinement", sigmas.windows(2).all(|w| w[1] < w[0]) && sigmas[2] > 0.0),
        Check::upper(sym, "empty_observation", ucp_diagnostic(None, s, None, &g)?, 0.0),
    ])
}

fn suite_runge(config: &ExperimentConfig, problem: &ForwardProblem, d1: &ExteriorDictionary) -> Result<Vec<Check>> {
    let target = runge_target(config, problem.omega())?;
    let sizes: Vec<usize> = config.runge.dictionary_sizes.iter().map(|&k| k.min(d1.len())).collect();
    let options = RungeOptions { lambda_rel: 0.0, ..config.runge_options() };
    let mut errors = Vec::new();
    for &k in &sizes {
        errors.push(runge_approximate(problem, &target, &d1.prefix(k)?, Dynamics::Forward, &options)?.error);
    }
    let increase = errors.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    Ok(vec![Check::upper(Suite::Runge, "nested_monotonicity", increase.max(0.0), 1e-12)])
}

/// Runs the selected suites with deterministic per-suite seeds.
pub fn verify_checks(config: &ExperimentConfig, base: &Path) -> Result<Vec<Check>> {
    let mut problem = study_problem(config, base)?;
    if config.verify.inject_adjoint_sign_error {
        problem = problem.with_adjoint_sign_error();
    }
    let (d1, d2) = config.dictionaries()?;
    let mut suites = config.verify.suites.clone();
    suites.sort();
    suites.dedup();
    let mut out = Vec::new();
    for suite in suites {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(suite as u64 + 1)));
        let samples = config.verify.samples;
        let checks = match suite {
            Suite::Symbols => suite_symbols(config, &mut rng)?,
            Suite::Adjointness => suite_adjointness(&problem, samples, &mut rng)?,
            Suite::Coercivity => suite_coercivity(config, &problem, &mut rng)?,
            Suite::Duality => suite_duality(&problem, &d1, &d2)?,
            Suite::Alessandrini => {
                let seed = rng.gen();
                alessandrini_cases(config, samples, seed, config.verify.inject_adjoint_sign_error)?
                    .into_iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let kind = if c.identical { "identical" } else { "distinct" };
                        Check::upper(Suite::Alessandrini, format!("case_{i}_{kind}"), c.residual, c.tolerance)
                    })
                    .collect()
            }
            Suite::Multipliers => suite_multipliers(config, &mut rng)?,
            Suite::Poincare => suite_poincare(&problem, samples, &mut rng)?,
            Suite::KatoPonce => suite_kato_ponce(config, &mut rng)?,
            Suite::Ucp => suite_ucp(config)?,
            Suite::Runge => suite_runge(config, &problem, &d1)?,
        };
        out.extend(checks);
    }
    Ok(out)
}

pub fn cmd_verify(config: &ExperimentConfig, base: &Path, out: &Path) -> Result<Outcome> {
    let checks = verify_checks(config, base)?;
    let mut files = Vec::new();
    let path = out.join("verify.csv");
    let mut w = csv_writer(&path)?;
    files.push(path);
    w.write_record(["suite", "check", "estimate", "tolerance", "pass"])?;
    if checks.is_empty() {
        w.write_record(["none", "no checks run", &fmt_real(0.0), &fmt_real(0.0), "true"])?;
    }
    for c in &checks {
        w.write_record([c.suite.name(), &c.name, &fmt_real(c.estimate), &fmt_real(c.tolerance), &c.pass.to_string()])?;
    }
    w.flush()?;
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.pass).collect();
    let messages = if checks.is_empty() {
        vec!["no checks run".to_string()]
    } else {
        let mut m = vec![format!("{} checks, {} failed", checks.len(), failed.len())];
        m.extend(failed.iter().map(|c| format!("FAIL {} {}: {:.3e} vs {:.3e}", c.suite.name(), c.name, c.estimate, c.tolerance)));
        m
    };
    Ok(Outcome { files, passed: failed.is_empty(), messages, warnings: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONFIG: &str = r#"
seed = 11

[grid]
dims = 1
points = 64
half_length = 4.0

[problem]
s = 0.7
order = 1

[domains]
omega = { kind = "ball", center = [0.0], radius = 1.5 }
w1 = { kind = "box", lo = [-3.9], hi = [-1.8] }
w2 = { kind = "box", lo = [1.8], hi = [3.8] }

[[coefficients]]
family = "gaussian"
alpha = [0]
center = [0.0]
width = 0.5
amplitude = 0.8

[[coefficients]]
family = "gaussian"
alpha = [1]
center = [0.2]
width = 0.5
amplitude = 0.5

[runge]
dictionary_sizes = [4, 8, 12]

[verify]
samples = 3
"#;

    fn config() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(CONFIG).unwrap()
    }

    #[test]
    fn verify_passes_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config();
        let r1 = run(Command::Verify, &cfg, Path::new("."), &dir.path().join("a")).unwrap();
        assert!(r1.passed, "{:?}", r1.messages);
        run(Command::Verify, &cfg, Path::new("."), &dir.path().join("b")).unwrap();
        let x = std::fs::read(dir.path().join("a/verify.csv")).unwrap();
        let y = std::fs::read(dir.path().join("b/verify.csv")).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn injected_sign_error_fails_alessandrini() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config();
        cfg.verify.inject_adjoint_sign_error = true;
        cfg.verify.suites = vec![Suite::Alessandrini];
        let r = run(Command::Verify, &cfg, Path::new("."), dir.path());
        assert_eq!(exit_code(&r), 1);
        let text = std::fs::read_to_string(dir.path().join("verify.csv")).unwrap();
        assert!(text.lines().skip(1).any(|l| l.starts_with("alessandrini,") && l.ends_with(",false")));
    }

    #[test]
    fn empty_selection_reports_marker() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config();
        cfg.verify.suites.clear();
        let r = run(Command::Verify, &cfg, Path::new("."), dir.path());
        assert_eq!(exit_code(&r), 0);
        assert!(std::fs::read_to_string(dir.path().join("verify.csv")).unwrap().contains("no checks run"));
    }

    #[test]
    fn forward_writes_two_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = run(Command::Forward, &config(), Path::new("."), dir.path()).unwrap();
        assert!(r.passed);
        assert_eq!(r.files.len(), 2);
        let u = GridFunction::read_dump(File::open(dir.path().join("solution.fcl")).unwrap()).unwrap();
        assert_eq!(u.grid().points(), 64);
    }
}
