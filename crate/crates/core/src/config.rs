//! TOML experiment configuration.
//!
//! Every section except `grid`, `problem` and `domains` is optional. Parse errors and
//! semantic errors both carry the dotted key path of the offending entry.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dn::ExteriorDictionary;
use crate::error::{Error, Result};
use crate::geometry::{make_nodeset, monomial_cutoff, Label, Layout, NodeSet, Shape};
use crate::grid::{Grid, GridFunction, MultiIndex};
use crate::operator::{ForwardProblem, PdoCoefficients, SolveMethod, SolverOptions};
use crate::recover::{LocalityPenalty, RecoveryConfig, RungeOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSpec,
    pub problem: ProblemSpec,
    pub domains: DomainSpec,
    /// Coefficients of the operator under study.
    #[serde(default)]
    pub coefficients: Vec<CoefficientSpec>,
    /// Coefficients of the known reference operator (zero when empty).
    #[serde(default)]
    pub reference: Vec<CoefficientSpec>,
    #[serde(default)]
    pub dictionary: DictionarySpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub forward: ForwardSpec,
    #[serde(default)]
    pub runge: RungeSpec,
    #[serde(default)]
    pub alessandrini: AlessandriniSpec,
    #[serde(default)]
    pub recover: RecoverSpec,
    #[serde(default)]
    pub verify: VerifySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dims: usize,
    pub points: usize,
    pub half_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub s: f64,
    pub order: u32,
    #[serde(default)]
    pub lambda_shift: f64,
    /// Analytic coefficient families are multiplied by a cutoff whose plateau is the domain
    /// shrunk by `taper_inset_cells` and whose collar is `taper_collar_cells` wide.
    #[serde(default = "default_taper_inset")]
    pub taper_inset_cells: f64,
    #[serde(default = "default_taper_collar")]
    pub taper_collar_cells: f64,
}

fn default_taper_inset() -> f64 {
    9.0
}

fn default_taper_collar() -> f64 {
    8.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub omega: ShapeSpec,
    pub w1: ShapeSpec,
    pub w2: ShapeSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    /// `amplitude * exp(-|x - center|^2 / (2 width^2))`, tapered.
    Gaussian { alpha: Vec<u32>, center: Vec<f64>, width: f64, amplitude: f64 },
    /// Tapered constant.
    Constant { alpha: Vec<u32>, value: f64 },
    /// Grid dump, used as is.
    File { alpha: Vec<u32>, path: PathBuf },
}

impl CoefficientSpec {
    pub fn alpha(&self) -> &[u32] {
        match self {
            Self::Gaussian { alpha, .. } | Self::Constant { alpha, .. } | Self::File { alpha, .. } => alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpConfig {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictionarySpec {
    pub radius_cells: f64,
    pub stride: usize,
}

impl Default for DictionarySpec {
    fn default() -> Self {
        Self { radius_cells: 3.0, stride: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    Dense,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub method: MethodSpec,
    pub dense_tol: f64,
    pub iterative_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    pub condition_limit: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self {
            method: MethodSpec::Dense,
            dense_tol: d.dense_tol,
            iterative_tol: d.iterative_tol,
            max_iterations: None,
            condition_limit: d.condition_limit,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardSpec {
    /// Exterior datum; defaults to a dictionary-sized bump at the centre of `w1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub datum: Option<BumpConfig>,
    /// Interior source term.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<BumpConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RungeSpec {
    /// Defaults to a bump at the centre of the domain with two thirds of its inradius.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<BumpConfig>,
    pub lambda_rel: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm_order: Option<f64>,
    pub condition_limit: f64,
    /// Nested prefix sizes of the `w1` dictionary.
    pub dictionary_sizes: Vec<usize>,
}

impl Default for RungeSpec {
    fn default() -> Self {
        let d = RungeOptions::default();
        Self {
            target: None,
            lambda_rel: d.lambda_rel,
            norm_order: None,
            condition_limit: d.condition_limit,
            dictionary_sizes: vec![8, 16, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlessandriniSpec {
    pub cases: usize,
    /// Amplitude of the random coefficient fields.
    pub amplitude: f64,
    pub tolerance: f64,
}

impl Default for AlessandriniSpec {
    fn default() -> Self {
        Self { cases: 10, amplitude: 0.5, tolerance: 1e-7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoverMode {
    EndToEnd,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoverSpec {
    pub mode: RecoverMode,
    pub rho_cells: f64,
    pub collar_cells: f64,
    pub sweeps: usize,
    pub peel: bool,
    pub lambda_rel: f64,
    pub norm_order: f64,
    pub locality_weight: f64,
    pub condition_limit: f64,
    pub runge_error_threshold: f64,
    /// Relative error against the mollified truth above which the summary reports a failure.
    pub error_tolerance: f64,
    /// Extra nested prefix sizes to report in the summary; the full dictionaries are always run.
    pub dictionary_sizes: Vec<usize>,
}

impl Default for RecoverSpec {
    fn default() -> Self {
        let grid = Grid::new(1, 16, 1.0).expect("valid grid");
        let d = RecoveryConfig::for_grid(&grid, 1);
        Self {
            mode: RecoverMode::EndToEnd,
            rho_cells: 6.0,
            collar_cells: 8.0,
            sweeps: d.sweeps,
            peel: d.peel,
            lambda_rel: d.runge.lambda_rel,
            norm_order: d.runge.norm_order.unwrap_or(0.0),
            locality_weight: 1.0,
            condition_limit: d.runge.condition_limit,
            runge_error_threshold: d.runge_error_threshold,
            error_tolerance: 0.15,
            dictionary_sizes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Symbols,
    Adjointness,
    Coercivity,
    Duality,
    Alessandrini,
    Multipliers,
    Poincare,
    KatoPonce,
    Ucp,
    Runge,
}

impl Suite {
    pub const ALL: [Suite; 10] = [
        Suite::Symbols,
        Suite::Adjointness,
        Suite::Coercivity,
        Suite::Duality,
        Suite::Alessandrini,
        Suite::Multipliers,
        Suite::Poincare,
        Suite::KatoPonce,
        Suite::Ucp,
        Suite::Runge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Symbols => "symbols",
            Suite::Adjointness => "adjointness",
            Suite::Coercivity => "coercivity",
            Suite::Duality => "duality",
            Suite::Alessandrini => "alessandrini",
            Suite::Multipliers => "multipliers",
            Suite::Poincare => "poincare",
            Suite::KatoPonce => "kato_ponce",
            Suite::Ucp => "ucp",
            Suite::Runge => "runge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub suites: Vec<Suite>,
    /// Random cases per randomized check.
    pub samples: usize,
    /// Test fixture: flips the sign of odd-order terms in every adjoint solve.
    pub inject_adjoint_sign_error: bool,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self { suites: Suite::ALL.to_vec(), samples: 10, inject_adjoint_sign_error: false }
    }
}

fn config_err(path: impl Into<String>, message: impl std::fmt::Display) -> Error {
    Error::Config { path: path.into(), message: message.to_string() }
}

impl ShapeSpec {
    pub fn to_shape(&self) -> Shape {
        match self {
            ShapeSpec::Ball { center, radius } => Shape::ball(center, *radius),
            ShapeSpec::Box { lo, hi } => Shape::cuboid(lo, hi),
        }
    }

    fn validate(&self, path: &str, grid: &Grid) -> Result<()> {
        let dims = grid.dims();
        match self {
            ShapeSpec::Ball { center, radius } => {
                if center.len() != dims {
                    return Err(config_err(format!("{path}.center"), format!("expected {dims} coordinates")));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(config_err(format!("{path}.radius"), "must be positive"));
                }
            }
            ShapeSpec::Box { lo, hi } => {
                if lo.len() != dims || hi.len() != dims {
                    return Err(config_err(path, format!("lo and hi need {dims} coordinates")));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    return Err(config_err(format!("{path}.lo"), "must be below hi on every axis"));
                }
            }
        }
        self.to_shape().validate(grid).map_err(|e| config_err(path, e))
    }

    fn center(&self) -> Vec<f64> {
        match self {
            ShapeSpec::Ball { center, .. } => center.clone(),
            ShapeSpec::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
        }
    }

    fn inradius(&self) -> f64 {
        match self {
            ShapeSpec::Ball { radius, .. } => *radius,
            ShapeSpec::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).fold(f64::INFINITY, f64::min),
        }
    }
}

/// The three node sets of an experiment.
#[derive(Debug, Clone)]
pub struct Domains {
    pub omega: NodeSet,
    pub w1: NodeSet,
    pub w2: NodeSet,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(path, e.into_inner().message().trim_end())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        let p = &self.problem;
        if !(p.s.is_finite() && p.s > 0.0) {
            return Err(config_err("problem.s", "must be positive"));
        }
        if p.s.fract() == 0.0 {
            return Err(config_err("problem.s", format!("s = {} must not be an integer", p.s)));
        }
        if 2.0 * p.s <= p.order as f64 {
            return Err(config_err("problem.order", format!("need 2s > m, got s = {}, m = {}", p.s, p.order)));
        }
        if !p.lambda_shift.is_finite() {
            return Err(config_err("problem.lambda_shift", "must be finite"));
        }
        if !(p.taper_inset_cells >= 0.0 && p.taper_collar_cells > 0.0) {
            return Err(config_err("problem", "taper_inset_cells must be >= 0 and taper_collar_cells > 0"));
        }
        self.domains.omega.validate("domains.omega", &grid)?;
        self.domains.w1.validate("domains.w1", &grid)?;
        self.domains.w2.validate("domains.w2", &grid)?;
        self.domains()?;
        for (name, list) in [("coefficients", &self.coefficients), ("reference", &self.reference)] {
            for (i, c) in list.iter().enumerate() {
                let path = format!("{name}[{i}]");
                if c.alpha().len() != grid.dims() {
                    return Err(config_err(format!("{path}.alpha"), format!("expected {} entries", grid.dims())));
                }
                if c.alpha().iter().sum::<u32>() > p.order {
                    return Err(config_err(format!("{path}.alpha"), format!("order exceeds problem.order = {}", p.order)));
                }
                match c {
                    CoefficientSpec::Gaussian { center, width, amplitude, .. } => {
                        if center.len() != grid.dims() {
                            return Err(config_err(format!("{path}.center"), format!("expected {} coordinates", grid.dims())));
                        }
                        if !(width.is_finite() && *width > 0.0) {
                            return Err(config_err(format!("{path}.width"), "must be positive"));
                        }
                        if !amplitude.is_finite() {
                            return Err(config_err(format!("{path}.amplitude"), "must be finite"));
                        }
                    }
                    CoefficientSpec::Constant { value, .. } => {
                        if !value.is_finite() {
                            return Err(config_err(format!("{path}.value"), "must be finite"));
                        }
                    }
                    CoefficientSpec::File { .. } => {}
                }
            }
        }
        if !(self.dictionary.radius_cells > 0.0) {
            return Err(config_err("dictionary.radius_cells", "must be positive"));
        }
        if self.dictionary.stride == 0 {
            return Err(config_err("dictionary.stride", "must be at least 1"));
        }
        let sv = &self.solver;
        for (key, v) in [("dense_tol", sv.dense_tol), ("iterative_tol", sv.iterative_tol), ("condition_limit", sv.condition_limit)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(format!("solver.{key}"), "must be positive"));
            }
        }
        for (path, b) in [("forward.datum", &self.forward.datum), ("forward.source", &self.forward.source), ("runge.target", &self.runge.target)] {
            if let Some(b) = b {
                if b.center.len() != grid.dims() {
                    return Err(config_err(format!("{path}.center"), format!("expected {} coordinates", grid.dims())));
                }
                if !(b.radius > 0.0) {
                    return Err(config_err(format!("{path}.radius"), "must be positive"));
                }
            }
        }
        let r = &self.runge;
        if !(r.lambda_rel >= 0.0 && r.lambda_rel.is_finite()) {
            return Err(config_err("runge.lambda_rel", "must be >= 0"));
        }
        check_sizes("runge.dictionary_sizes", &r.dictionary_sizes)?;
        if self.alessandrini.cases == 0 {
            return Err(config_err("alessandrini.cases", "must be at least 1"));
        }
        let rc = &self.recover;
        if !(rc.rho_cells > 0.0) {
            return Err(config_err("recover.rho_cells", "must be positive"));
        }
        if !(rc.collar_cells > 0.0) {
            return Err(config_err("recover.collar_cells", "must be positive"));
        }
        if !(rc.lambda_rel >= 0.0 && rc.lambda_rel.is_finite()) {
            return Err(config_err("recover.lambda_rel", "must be >= 0"));
        }
        check_sizes("recover.dictionary_sizes", &rc.dictionary_sizes)?;
        if self.verify.samples == 0 {
            return Err(config_err("verify.samples", "must be at least 1"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.dims, self.grid.points, self.grid.half_length).map_err(|e| config_err("grid", e))
    }

    pub fn domains(&self) -> Result<Domains> {
        let grid = self.grid()?;
        let mut layout = Layout::new(grid);
        for (label, spec, path) in [
            (Label::Omega, &self.domains.omega, "domains.omega"),
            (Label::W1, &self.domains.w1, "domains.w1"),
            (Label::W2, &self.domains.w2, "domains.w2"),
        ] {
            let set = make_nodeset(grid, spec.to_shape(), label).map_err(|e| config_err(path, e))?;
            layout.register(set).map_err(|e| config_err(path, e))?;
        }
        let get = |l: Label| layout.get(&l).expect("registered").clone();
        Ok(Domains { omega: get(Label::Omega), w1: get(Label::W1), w2: get(Label::W2) })
    }

    /// Cutoff applied to analytic coefficient families.
    pub fn taper(&self) -> Result<GridFunction> {
        let grid = self.grid()?;
        let h = grid.spacing();
        let omega = self.domains()?.omega;
        let plateau = self
            .domains
            .omega
            .to_shape()
            .shrunk(&grid, self.problem.taper_inset_cells * h)
            .ok_or_else(|| config_err("problem.taper_inset_cells", "domain too small for the coefficient taper"))?;
        monomial_cutoff(&MultiIndex::zero(grid.dims()), &plateau, self.problem.taper_collar_cells * h, &omega)
            .map_err(|e| config_err("problem.taper_collar_cells", e))
    }

    fn build_coefficients(&self, list: &[CoefficientSpec], key: &str, base: &Path) -> Result<PdoCoefficients> {
        let grid = self.grid()?;
        let taper = self.taper()?;
        let mut out = PdoCoefficients::new(grid, self.problem.order);
        for (i, c) in list.iter().enumerate() {
            let path = format!("{key}[{i}]");
            let alpha = MultiIndex::new(&c.alpha().iter().map(|&a| a as i64).collect::<Vec<_>>())
                .map_err(|e| config_err(format!("{path}.alpha"), e))?;
            let field = match c {
                CoefficientSpec::Gaussian { center, width, amplitude, .. } => GridFunction::from_fn(grid, |x| {
                    let r2: f64 = center.iter().enumerate().map(|(k, c)| (x[k] - c).powi(2)).sum();
                    amplitude * (-r2 / (2.0 * width * width)).exp()
                })?
                .mul(&taper)?,
                CoefficientSpec::Constant { value, .. } => taper.scale(*value),
                CoefficientSpec::File { path: file, .. } => {
                    let full = base.join(file);
                    let f = std::fs::File::open(&full).map_err(|e| config_err(format!("{path}.path"), format!("{}: {e}", full.display())))?;
                    let g = GridFunction::read_dump(std::io::BufReader::new(f)).map_err(|e| config_err(format!("{path}.path"), e))?;
                    if g.grid() != &grid {
                        return Err(config_err(format!("{path}.path"), "dump grid differs from [grid]"));
                    }
                    g
                }
            };
            let field = match out.get(&alpha) {
                Some(prev) => prev.axpy(1.0, &field)?,
                None => field,
            };
            out.insert(alpha, field).map_err(|e| config_err(&path, e))?;
        }
        Ok(out)
    }

    /// Coefficients of the operator under study; `base` resolves relative dump paths.
    pub fn coefficients(&self, base: &Path) -> Result<PdoCoefficients> {
        self.build_coefficients(&self.coefficients, "coefficients", base)
    }

    pub fn reference_coefficients(&self, base: &Path) -> Result<PdoCoefficients> {
        self.build_coefficients(&self.reference, "reference", base)
    }

    pub fn solver_options(&self) -> SolverOptions {
        let s = &self.solver;
        SolverOptions {
            method: match s.method {
                MethodSpec::Dense => SolveMethod::Dense,
                MethodSpec::Iterative => SolveMethod::Iterative,
            },
            dense_tol: s.dense_tol,
            iterative_tol: s.iterative_tol,
            max_iterations: s.max_iterations,
            condition_limit: s.condition_limit,
        }
    }

    pub fn problem_with(&self, coefficients: PdoCoefficients) -> Result<ForwardProblem> {
        Ok(ForwardProblem::new(self.problem.s, coefficients, self.domains()?.omega)?
            .with_lambda_shift(self.problem.lambda_shift)?
            .with_options(self.solver_options()))
    }

    pub fn dictionaries(&self) -> Result<(ExteriorDictionary, ExteriorDictionary)> {
        let d = self.domains()?;
        let radius = self.dictionary.radius_cells * self.grid()?.spacing();
        let build = |set: &NodeSet, key: &str| {
            ExteriorDictionary::lattice(set, radius, self.dictionary.stride).map_err(|e| config_err(format!("dictionary ({key})"), e))
        };
        Ok((build(&d.w1, "w1")?, build(&d.w2, "w2")?))
    }

    pub fn forward_datum(&self) -> BumpConfig {
        self.forward.datum.clone().unwrap_or_else(|| BumpConfig {
            center: self.domains.w1.center(),
            radius: self.dictionary.radius_cells * self.grid.half_length * 2.0 / self.grid.points as f64,
        })
    }

    pub fn runge_target(&self) -> BumpConfig {
        self.runge.target.clone().unwrap_or_else(|| BumpConfig {
            center: self.domains.omega.center(),
            radius: 2.0 / 3.0 * self.domains.omega.inradius(),
        })
    }

    pub fn runge_options(&self) -> RungeOptions {
        RungeOptions {
            norm_order: self.runge.norm_order,
            lambda_rel: self.runge.lambda_rel,
            condition_limit: self.runge.condition_limit,
            locality: None,
        }
    }

    pub fn recovery_config(&self) -> Result<RecoveryConfig> {
        let grid = self.grid()?;
        let h = grid.spacing();
        let rc = &self.recover;
        let order = self.problem.order;
        let runge = RungeOptions {
            norm_order: Some(rc.norm_order),
            lambda_rel: rc.lambda_rel,
            condition_limit: rc.condition_limit,
            locality: (order >= 1 && rc.locality_weight > 0.0)
                .then_some(LocalityPenalty { max_order: order, weight: rc.locality_weight }),
        };
        Ok(RecoveryConfig {
            order,
            rho: rc.rho_cells * h,
            collar: rc.collar_cells * h,
            sweeps: rc.sweeps,
            peel: rc.peel,
            runge,
            runge_adjoint: RungeOptions { locality: None, ..runge },
            runge_error_threshold: rc.runge_error_threshold,
            reverse_ties: false,
        })
    }
}

fn check_sizes(path: &str, sizes: &[usize]) -> Result<()> {
    if sizes.contains(&0) {
        return Err(config_err(path, "sizes must be positive"));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(config_err(path, "sizes must be strictly increasing"));
    }
    Ok(())
}
