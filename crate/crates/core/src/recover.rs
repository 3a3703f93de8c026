//! Runge approximation by least squares over exterior dictionaries, and
//! inductive reconstruction of mollified coefficient differences from DN data.
//!
//! The reconstruction works against a known reference operator `P2`. For each
//! order `N = 0..=m` and each `|alpha| = N` it pairs a Runge datum whose interior
//! response approximates the localized monomial `x^alpha` with one whose adjoint
//! response approximates a mollifier `psi_y`, reads the DN difference, removes
//! the contributions of already recovered lower orders, and divides by `alpha!`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dn::{assemble_dn, fmt_real, DnMatrix, ExteriorDictionary};
use crate::error::{Error, Result};
use crate::geometry::{bump, extend_zero, monomial_cutoff, restrict, BumpSpec, NodeSet, Shape};
use crate::grid::{Grid, GridFunction, MultiIndex, Point};
use crate::operator::{ForwardProblem, PdoCoefficients};
use crate::spectral::{self, multiplier_block, Symbol};

/// Which solution family the dictionary is pushed through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dynamics {
    Forward,
    Adjoint,
}

/// Penalty on `||R_Omega D^alpha f||` for `1 <= |alpha| <= max_order`: spectral derivatives of
/// exterior data leak into the domain, and large Runge coefficients amplify the leak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalityPenalty {
    pub max_order: u32,
    /// Relative to the largest eigenvalue of the data-fit normal matrix.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RungeOptions {
    /// Order `r` of the `H^r(Omega)` fit norm; `None` means `s`.
    pub norm_order: Option<f64>,
    /// Tikhonov weight relative to the largest normal-matrix eigenvalue; 0 takes the
    /// minimum-norm limit through an unregularized QR solve.
    pub lambda_rel: f64,
    pub condition_limit: f64,
    pub locality: Option<LocalityPenalty>,
}

impl Default for RungeOptions {
    fn default() -> Self {
        Self { norm_order: None, lambda_rel: 1e-8, condition_limit: 1e12, locality: None }
    }
}

#[derive(Debug, Clone)]
pub struct RungeResult {
    pub coefficients: Vec<f64>,
    /// `f = sum c_i f_i`.
    pub datum: GridFunction,
    /// `||u_f - f - v||` in the fit norm.
    pub error: f64,
    pub error_hs: f64,
    pub error_l2: f64,
    /// `error_l2 / ||v||_{L^2}`.
    pub relative_l2: f64,
    pub lambda_reg: f64,
    pub dictionary_size: usize,
    /// Relative residual of the normal equations.
    pub normal_residual: f64,
}

/// Factored least-squares system for one problem, dictionary and dynamics; reused
/// across targets.
pub struct RungeSystem {
    grid: Grid,
    s: f64,
    omega: NodeSet,
    dict: ExteriorDictionary,
    phi: DMatrix<f64>,
    chol_h: DMatrix<f64>,
    stacked: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    lambda_reg: f64,
    regularized: bool,
}

impl RungeSystem {
    pub fn new(problem: &ForwardProblem, dict: &ExteriorDictionary, dynamics: Dynamics, options: &RungeOptions) -> Result<Self> {
        let grid = *problem.grid();
        let omega = problem.omega().clone();
        if dict.host().grid() != &grid {
            return Err(Error::GridMismatch);
        }
        if dict.elements().iter().any(|e| !omega.avoids(e)) {
            return Err(Error::Support("Runge dictionary touches the domain".into()));
        }
        if !(options.lambda_rel >= 0.0 && options.lambda_rel.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda_rel must be >= 0, got {}", options.lambda_rel)));
        }
        let columns: Vec<Vec<f64>> = dict
            .elements()
            .par_iter()
            .enumerate()
            .map(|(i, f)| {
                let rep = match dynamics {
                    Dynamics::Forward => problem.solve_forward(f, None),
                    Dynamics::Adjoint => problem.solve_adjoint(f, None),
                };
                rep.and_then(|r| restrict(&r.u, &omega))
                    .map_err(|e| Error::Dictionary { index: i, source: Box::new(e) })
            })
            .collect::<Result<_>>()?;
        let n = omega.len();
        let k = dict.len();
        let phi = DMatrix::from_fn(n, k, |i, j| columns[j][i]);

        let order = options.norm_order.unwrap_or(problem.s());
        let hv = grid.cell_volume();
        let gram = multiplier_block(&grid, &Symbol::Bessel(2.0 * order), omega.indices(), omega.indices())?.scale(hv);
        let gram = (&gram + gram.transpose()).scale(0.5);
        let chol_h = gram
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("fit-norm Gram matrix is not positive definite".into()))?
            .l();
        let fit = chol_h.transpose() * &phi;

        let mut blocks = vec![fit.clone()];
        let mut lambda_reg = 0.0;
        let fit_top = largest_eigenvalue(&(fit.transpose() * &fit));
        if options.lambda_rel > 0.0 {
            lambda_reg = options.lambda_rel * fit_top;
            let lg = dict
                .gram()
                .cholesky()
                .ok_or_else(|| Error::InvalidArgument("dictionary Gram matrix is not positive definite".into()))?
                .l();
            blocks.push(lg.transpose().scale(lambda_reg.sqrt()));
        }
        if let Some(pen) = options.locality.filter(|p| p.max_order >= 1 && p.weight > 0.0) {
            let mut rows = Vec::new();
            for order in 1..=pen.max_order {
                for alpha in MultiIndex::of_order(grid.dims(), order) {
                    let cols: Vec<Vec<f64>> = dict
                        .elements()
                        .iter()
                        .map(|f| restrict(&spectral::derivative(f, &alpha)?, &omega))
                        .collect::<Result<_>>()?;
                    rows.push(DMatrix::from_fn(n, k, |i, j| hv.sqrt() * cols[j][i]));
                }
            }
            let loc = vstack(&rows);
            let loc_top = largest_eigenvalue(&(loc.transpose() * &loc));
            if loc_top > 0.0 {
                blocks.push(loc.scale((pen.weight * fit_top / loc_top).sqrt()));
            }
        }
        let regularized = blocks.len() > 1;
        let stacked = vstack(&blocks);
        if regularized {
            let sv = stacked.singular_values();
            let cond = (sv.max() / sv.min()).powi(2);
            if !(cond <= options.condition_limit) {
                return Err(Error::IllConditioned { condition: cond });
            }
        }
        let qr = stacked.clone().qr();
        Ok(Self {
            grid,
            s: problem.s(),
            omega,
            dict: dict.clone(),
            phi,
            chol_h,
            q: qr.q(),
            r: qr.r(),
            stacked,
            lambda_reg,
            regularized,
        })
    }

    pub fn dictionary(&self) -> &ExteriorDictionary {
        &self.dict
    }

    /// Fits the interior response to `target` (values outside the domain are ignored).
    pub fn solve(&self, target: &GridFunction) -> Result<RungeResult> {
        if target.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let v = DVector::from_vec(restrict(target, &self.omega)?);
        let b = self.chol_h.transpose() * &v;
        let mut rhs = DVector::zeros(self.stacked.nrows());
        rhs.rows_mut(0, b.len()).copy_from(&b);
        let y = self.q.transpose() * &rhs;
        let c = self
            .r
            .solve_upper_triangular(&y)
            .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;

        let hv = self.grid.cell_volume();
        let residual_field = &self.phi * &c - &v;
        let (error, residual_field) = if self.regularized {
            ((self.chol_h.transpose() * &residual_field).norm(), residual_field)
        } else {
            // projection form: exactly monotone under nested dictionaries
            let rw = &rhs - &self.q * &y;
            let field = self
                .chol_h
                .transpose()
                .solve_upper_triangular(&rw)
                .expect("Cholesky factor is nonsingular")
                .scale(-1.0);
            (rw.norm(), field)
        };
        let normal_rhs = self.stacked.transpose() * &rhs;
        let normal_res = self.stacked.transpose() * (&self.stacked * &c) - &normal_rhs;
        let normal_residual = if normal_rhs.norm() == 0.0 { normal_res.norm() } else { normal_res.norm() / normal_rhs.norm() };
        if self.regularized && normal_residual > 1e-10 {
            return Err(Error::NotConverged { iterations: 1, residual: normal_residual });
        }
        let e = extend_zero(residual_field.as_slice(), &self.omega)?;
        let error_l2 = (hv * residual_field.norm_squared()).sqrt();
        let v_l2 = (hv * v.norm_squared()).sqrt();
        Ok(RungeResult {
            datum: self.dict.combine(c.as_slice())?,
            coefficients: c.as_slice().to_vec(),
            error,
            error_hs: spectral::sobolev_norm(&e, self.s),
            error_l2,
            relative_l2: if v_l2 > 0.0 { error_l2 / v_l2 } else { 0.0 },
            lambda_reg: self.lambda_reg,
            dictionary_size: self.dict.len(),
            normal_residual,
        })
    }
}

fn vstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks[0].ncols();
    let rows: usize = blocks.iter().map(DMatrix::nrows).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, 0), (b.nrows(), cols)).copy_from(b);
        at += b.nrows();
    }
    out
}

fn largest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().max()
}

/// Minimizes `||u_f - f - v||^2 + lambda ||f||^2` over the span of the dictionary.
pub fn runge_approximate(
    problem: &ForwardProblem,
    target: &GridFunction,
    dict: &ExteriorDictionary,
    dynamics: Dynamics,
    options: &RungeOptions,
) -> Result<RungeResult> {
    RungeSystem::new(problem, dict, dynamics, options)?.solve(target)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryConfig {
    pub order: u32,
    /// Mollifier radius.
    pub rho: f64,
    /// Width of the cutoff collar around the plateau.
    pub collar: f64,
    /// Fixed-point sweeps after the reference pass.
    pub sweeps: usize,
    pub peel: bool,
    /// For the monomial targets (forward dynamics).
    pub runge: RungeOptions,
    /// For the mollifier targets (adjoint reference dynamics).
    pub runge_adjoint: RungeOptions,
    /// Relative L2 Runge error above which a value is flagged.
    pub runge_error_threshold: f64,
    /// Process equal-order multi-indices in reverse lexicographic order.
    #[doc(hidden)]
    pub reverse_ties: bool,
}

impl RecoveryConfig {
    /// Defaults scaled to the grid spacing: `rho = 6h`, collar `8h`, two sweeps.
    pub fn for_grid(grid: &Grid, order: u32) -> Self {
        let h = grid.spacing();
        let runge = RungeOptions {
            norm_order: Some(0.0),
            lambda_rel: 1e-12,
            condition_limit: 1e15,
            locality: (order >= 1).then_some(LocalityPenalty { max_order: order, weight: 1.0 }),
        };
        Self {
            order,
            rho: 6.0 * h,
            collar: 8.0 * h,
            sweeps: 2,
            peel: true,
            runge,
            runge_adjoint: RungeOptions { locality: None, ..runge },
            runge_error_threshold: 1.0,
            reverse_ties: false,
        }
    }
}

/// Mollifier centres and the plateau they live in.
#[derive(Debug, Clone)]
pub struct CenterLayout {
    pub plateau: Shape,
    pub nodes: Vec<usize>,
    pub points: Vec<Point>,
}

/// Plateau = domain shrunk by `collar + h`; centres are nodes whose `rho`-ball fits in it.
pub fn center_layout(omega: &NodeSet, rho: f64, collar: f64) -> Result<CenterLayout> {
    let grid = *omega.grid();
    let shape = omega
        .shape()
        .ok_or_else(|| Error::Geometry("recovery needs a domain built from a shape".into()))?;
    let plateau = shape
        .shrunk(&grid, collar + grid.spacing())
        .ok_or_else(|| Error::Geometry("domain too small for the cutoff collar".into()))?;
    let nodes: Vec<usize> = (0..grid.len())
        .filter(|&i| plateau.contains_ball(&grid, &grid.coord(i), rho))
        .collect();
    if nodes.is_empty() {
        return Err(Error::Geometry(format!("no mollifier centre of radius {rho} fits in the plateau")));
    }
    let points = nodes.iter().map(|&i| grid.coord(i)).collect();
    Ok(CenterLayout { plateau, nodes, points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredEntry {
    pub alpha: MultiIndex,
    pub center: Point,
    pub value: f64,
    pub runge_error: f64,
    /// Lower-order contribution removed at this centre, divided by `alpha!`.
    pub peel_residual: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub struct RecoveredCoefficients {
    pub grid: Grid,
    pub rho: f64,
    pub centers: Vec<Point>,
    pub entries: Vec<RecoveredEntry>,
    /// Per order: relative change between the last two sweeps (0 without sweeps).
    pub order_residuals: Vec<f64>,
    /// Summary of the reference operator the values are relative to.
    pub reference: String,
}

impl RecoveredCoefficients {
    pub fn alphas(&self) -> Vec<MultiIndex> {
        let mut out: Vec<MultiIndex> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.alpha) {
                out.push(e.alpha.clone());
            }
        }
        out
    }

    pub fn values(&self, alpha: &MultiIndex) -> Vec<f64> {
        self.entries.iter().filter(|e| &e.alpha == alpha).map(|e| e.value).collect()
    }

    /// Relative L2 error over centres against `(a_alpha * psi_rho)(y)`, per multi-index.
    pub fn relative_errors(&self, truth: &PdoCoefficients) -> Result<Vec<(MultiIndex, f64)>> {
        self.alphas()
            .into_iter()
            .map(|alpha| {
                let t = mollified_truth(truth, &alpha, &self.centers, self.rho)?;
                Ok((alpha.clone(), relative_l2(&self.values(&alpha), &t)))
            })
            .collect()
    }

    /// As [`Self::relative_errors`], restricted to the given centres (which must be among ours).
    pub fn relative_errors_at(&self, truth: &PdoCoefficients, centers: &[Point]) -> Result<Vec<(MultiIndex, f64)>> {
        let slots: Vec<usize> = centers
            .iter()
            .map(|c| {
                self.centers
                    .iter()
                    .position(|p| p == c)
                    .ok_or_else(|| Error::InvalidArgument(format!("{c:?} is not a recovery centre")))
            })
            .collect::<Result<_>>()?;
        self.alphas()
            .into_iter()
            .map(|alpha| {
                let all = self.values(&alpha);
                let est: Vec<f64> = slots.iter().map(|&k| all[k]).collect();
                let t = mollified_truth(truth, &alpha, centers, self.rho)?;
                Ok((alpha.clone(), relative_l2(&est, &t)))
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let dims = self.grid.dims();
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header = vec!["alpha".to_string()];
        header.extend((0..dims).map(|k| format!("x{k}")));
        header.extend(["value", "runge_error", "peel_residual"].map(String::from));
        out.write_record(&header)?;
        for e in &self.entries {
            let mut row = vec![e.alpha.label()];
            row.extend((0..dims).map(|k| fmt_real(e.center[k])));
            row.extend([fmt_real(e.value), fmt_real(e.runge_error), fmt_real(e.peel_residual)]);
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `||a - b|| / ||b||` (absolute when `b = 0`).
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// `(a_alpha * psi_rho)(y) = <a_alpha, psi_{rho,y}>` at each centre.
pub fn mollified_truth(coefficients: &PdoCoefficients, alpha: &MultiIndex, centers: &[Point], rho: f64) -> Result<Vec<f64>> {
    let grid = *coefficients.grid();
    let zero = GridFunction::zeros(grid);
    let a = coefficients.get(alpha).unwrap_or(&zero);
    centers
        .iter()
        .map(|c| spectral::pairing(a, &bump(&grid, &BumpSpec { center: *c, radius: rho }, None)?))
        .collect()
}

/// Coefficient field from centre values: first-order extension from the nearest centre,
/// one deconvolution step `2F - F * psi_rho`, then the plateau cutoff.
fn center_field(values: &[f64], layout: &CenterLayout, rho: f64, cutoff: &GridFunction) -> Result<GridFunction> {
    let grid = *cutoff.grid();
    let dims = grid.dims();
    let n = grid.points();
    let mut slot = vec![usize::MAX; grid.len()];
    for (k, &i) in layout.nodes.iter().enumerate() {
        slot[i] = k;
    }
    let h = grid.spacing();
    let gradients: Vec<[f64; 2]> = layout
        .nodes
        .iter()
        .map(|&i| {
            let m = grid.multi(i);
            let mut g = [0.0; 2];
            for (axis, gk) in g.iter_mut().enumerate().take(dims) {
                let neighbor = |step: isize| {
                    let mut mm = m;
                    mm[axis] = (m[axis] as isize + step).rem_euclid(n as isize) as usize;
                    let j = slot[grid.flat(mm)];
                    (j != usize::MAX).then(|| values[j])
                };
                let here = values[slot[i]];
                *gk = match (neighbor(-1), neighbor(1)) {
                    (Some(a), Some(b)) => (b - a) / (2.0 * h),
                    (Some(a), None) => (here - a) / h,
                    (None, Some(b)) => (b - here) / h,
                    (None, None) => 0.0,
                };
            }
            g
        })
        .collect();
    let mut field = vec![0.0; grid.len()];
    for (i, f) in field.iter_mut().enumerate() {
        if slot[i] != usize::MAX {
            *f = values[slot[i]];
            continue;
        }
        let x = grid.coord(i);
        let (k, _) = layout
            .points
            .iter()
            .enumerate()
            .map(|(k, p)| (k, grid.distance(&x, p)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        let y = layout.points[k];
        *f = values[k] + (0..dims).map(|d| gradients[k][d] * (x[d] - y[d])).sum::<f64>();
    }
    let field = GridFunction::new(grid, field)?;
    let smoothed = convolve_bump(&field, rho)?;
    field.scale(2.0).axpy(-1.0, &smoothed)?.mul(cutoff)
}

/// Periodic convolution with the unit-mass bump of radius `rho`.
fn convolve_bump(u: &GridFunction, rho: f64) -> Result<GridFunction> {
    let grid = *u.grid();
    let origin = grid.flat([grid.points() / 2; 2]);
    let kernel = bump(&grid, &BumpSpec { center: grid.coord(origin), radius: rho }, None)?;
    let o = grid.multi(origin);
    let n = grid.points();
    let taps: Vec<([usize; 2], f64)> = (0..grid.len())
        .filter(|&j| kernel.values()[j] != 0.0)
        .map(|j| {
            let m = grid.multi(j);
            let mut d = [0usize; 2];
            for k in 0..grid.dims() {
                d[k] = (m[k] + n - o[k]) % n;
            }
            (d, kernel.values()[j] * grid.cell_volume())
        })
        .collect();
    let values = (0..grid.len())
        .map(|i| {
            let m = grid.multi(i);
            taps.iter()
                .map(|(d, w)| {
                    let mut mm = [0usize; 2];
                    for k in 0..grid.dims() {
                        mm[k] = (m[k] + n - d[k]) % n;
                    }
                    w * u.values()[grid.flat(mm)]
                })
                .sum()
        })
        .collect();
    GridFunction::new(grid, values)
}

enum Source<'a> {
    Oracle { difference: PdoCoefficients },
    Measured { delta_dn: DMatrix<f64>, d1: &'a ExteriorDictionary, d2: &'a ExteriorDictionary },
}

/// Reconstructs `a_{1,alpha} - a_{2,alpha}` (mollified) from the DN matrix `measured` of an
/// unknown operator, given the reference problem `reference` on the same dictionaries.
pub fn recover_coefficients(
    measured: &DnMatrix,
    reference: &ForwardProblem,
    d1: &ExteriorDictionary,
    d2: &ExteriorDictionary,
    config: &RecoveryConfig,
) -> Result<RecoveredCoefficients> {
    let m = reference.coefficients().order();
    if config.order > m.max(config.order) || 2.0 * reference.s() <= config.order as f64 {
        return Err(Error::InvalidProblem(format!("need 2s > m, got s = {}, m = {}", reference.s(), config.order)));
    }
    if measured.rows() != d1.len() || measured.cols() != d2.len() {
        return Err(Error::LengthMismatch { expected: d1.len() * d2.len(), actual: measured.entries.len() });
    }
    let reference_dn = assemble_dn(reference, d1, d2)?;
    let delta_dn = &measured.entries - &reference_dn.entries;
    run(reference, Source::Measured { delta_dn, d1, d2 }, config)
}

/// Same induction with exact interior fields in place of Runge data: the Alessandrini
/// pairing is evaluated directly from the known coefficients of `truth` relative to
/// `reference`.
pub fn recover_oracle_mode(truth: &ForwardProblem, reference: &ForwardProblem, config: &RecoveryConfig) -> Result<RecoveredCoefficients> {
    if truth.grid() != reference.grid() || truth.omega() != reference.omega() {
        return Err(Error::InvalidProblem("truth and reference must share grid and domain".into()));
    }
    let difference = truth.coefficients().difference(reference.coefficients())?;
    run(reference, Source::Oracle { difference }, config)
}

fn run(reference: &ForwardProblem, source: Source<'_>, config: &RecoveryConfig) -> Result<RecoveredCoefficients> {
    let grid = *reference.grid();
    let omega = reference.omega();
    if 2.0 * reference.s() <= config.order as f64 {
        return Err(Error::InvalidProblem("recovery needs 2s > m".into()));
    }
    if !(config.rho > 0.0 && config.collar > 0.0) {
        return Err(Error::InvalidArgument("rho and collar must be positive".into()));
    }
    let layout = center_layout(omega, config.rho, config.collar)?;
    let cutoff = monomial_cutoff(&MultiIndex::zero(grid.dims()), &layout.plateau, config.collar, omega)?;
    let psis: Vec<GridFunction> = layout
        .points
        .iter()
        .map(|c| bump(&grid, &BumpSpec { center: *c, radius: config.rho }, Some(omega)))
        .collect::<Result<_>>()?;
    let orders: Vec<Vec<MultiIndex>> = (0..=config.order)
        .map(|o| {
            let mut v = MultiIndex::of_order(grid.dims(), o);
            if config.reverse_ties {
                v.reverse();
            }
            v
        })
        .collect();
    let targets: Vec<Vec<GridFunction>> = orders
        .iter()
        .map(|alphas| alphas.iter().map(|a| monomial_cutoff(a, &layout.plateau, config.collar, omega)).collect())
        .collect::<Result<_>>()?;

    // adjoint Runge data for every mollifier, against the reference dynamics
    let (psi_coeffs, psi_errors): (Vec<Vec<f64>>, Vec<f64>) = match &source {
        Source::Oracle { .. } => (vec![Vec::new(); psis.len()], vec![0.0; psis.len()]),
        Source::Measured { d2, .. } => {
            let sys = RungeSystem::new(reference, d2, Dynamics::Adjoint, &config.runge_adjoint)?;
            let fits: Vec<RungeResult> = psis.par_iter().map(|p| sys.solve(p)).collect::<Result<_>>()?;
            fits.into_iter().map(|r| (r.coefficients, r.relative_l2)).unzip()
        }
    };

    let passes = match source {
        Source::Oracle { .. } => 1,
        Source::Measured { .. } => config.sweeps + 1,
    };
    let mut estimate: Option<Vec<Vec<Vec<f64>>>> = None;
    let mut previous: Option<Vec<Vec<Vec<f64>>>> = None;
    let mut entries = Vec::new();
    for pass in 0..passes {
        let last = pass + 1 == passes;
        let dynamics = match (&source, &estimate) {
            (Source::Measured { .. }, Some(est)) => {
                let mut delta = PdoCoefficients::new(grid, config.order);
                for (o, alphas) in orders.iter().enumerate() {
                    for (k, alpha) in alphas.iter().enumerate() {
                        delta.insert(alpha.clone(), center_field(&est[o][k], &layout, config.rho, &cutoff)?)?;
                    }
                }
                let combined = reference.coefficients().sum(&delta)?;
                Some(reference.with_coefficients(combined)?)
            }
            _ => None,
        };
        let dyn_problem = dynamics.as_ref().unwrap_or(reference);
        let forward = match &source {
            Source::Measured { d1, .. } => Some(RungeSystem::new(dyn_problem, d1, Dynamics::Forward, &config.runge)?),
            Source::Oracle { .. } => None,
        };

        let mut current: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut pass_entries = Vec::new();
        for (o, alphas) in orders.iter().enumerate() {
            let lower_fields: Vec<(MultiIndex, GridFunction)> = if config.peel {
                let mut v = Vec::new();
                for (lo, lower) in orders.iter().enumerate().take(o) {
                    for (k, beta) in lower.iter().enumerate() {
                        v.push((beta.clone(), center_field(&current[lo][k], &layout, config.rho, &cutoff)?));
                    }
                }
                v
            } else {
                Vec::new()
            };
            let mut per_alpha = Vec::new();
            for (k, alpha) in alphas.iter().enumerate() {
                let v1 = &targets[o][k];
                let (c1, v1_error) = match &forward {
                    Some(sys) => {
                        let fit = sys.solve(v1)?;
                        (fit.coefficients, fit.relative_l2)
                    }
                    None => (Vec::new(), 0.0),
                };
                let lower_terms: Vec<GridFunction> = lower_fields
                    .iter()
                    .map(|(beta, field)| field.mul(&spectral::derivative(v1, beta)?))
                    .collect::<Result<_>>()?;
                let oracle_terms: Vec<GridFunction> = match &source {
                    Source::Oracle { difference } => difference
                        .iter()
                        .map(|(beta, a)| a.mul(&spectral::derivative(v1, beta)?))
                        .collect::<Result<_>>()?,
                    Source::Measured { .. } => Vec::new(),
                };
                let factorial = alpha.factorial();
                let rows: Vec<(f64, f64, f64)> = psis
                    .par_iter()
                    .enumerate()
                    .map(|(j, psi)| {
                        let raw = match &source {
                            Source::Oracle { .. } => {
                                let mut q = 0.0;
                                for t in &oracle_terms {
                                    q += spectral::pairing(t, psi)?;
                                }
                                q
                            }
                            Source::Measured { delta_dn, .. } => {
                                let c = DVector::from_column_slice(&c1);
                                let d = DVector::from_column_slice(&psi_coeffs[j]);
                                (c.transpose() * delta_dn * d)[(0, 0)]
                            }
                        };
                        let mut peeled = 0.0;
                        for t in &lower_terms {
                            peeled += spectral::pairing(t, psi)?;
                        }
                        Ok(((raw - peeled) / factorial, peeled / factorial, v1_error.max(psi_errors[j])))
                    })
                    .collect::<Result<_>>()?;
                per_alpha.push(rows.iter().map(|r| r.0).collect::<Vec<_>>());
                if last {
                    for (j, (value, peeled, err)) in rows.into_iter().enumerate() {
                        pass_entries.push(RecoveredEntry {
                            alpha: alpha.clone(),
                            center: layout.points[j],
                            value,
                            runge_error: err,
                            peel_residual: peeled,
                            flagged: err > config.runge_error_threshold,
                        });
                    }
                }
            }
            current.push(per_alpha);
        }
        previous = estimate.take();
        estimate = Some(current);
        if last {
            entries = pass_entries;
        }
    }
    let estimate = estimate.expect("at least one pass");
    let order_residuals = (0..orders.len())
        .map(|o| match &previous {
            Some(prev) => {
                let a: Vec<f64> = estimate[o].concat();
                let b: Vec<f64> = prev[o].concat();
                relative_l2(&a, &b)
            }
            None => 0.0,
        })
        .collect();
    if config.reverse_ties {
        // report in canonical order regardless of processing order
        entries.sort_by(|a, b| (a.alpha.order(), &a.alpha).cmp(&(b.alpha.order(), &b.alpha)));
    }
    Ok(RecoveredCoefficients {
        grid,
        rho: config.rho,
        centers: layout.points,
        entries,
        order_residuals,
        reference: describe(reference),
    })
}

fn describe(p: &ForwardProblem) -> String {
    let alphas: Vec<String> = p.coefficients().iter().map(|(a, _)| a.label()).collect();
    format!(
        "s={} order={} shift={} omega_nodes={} coefficients=[{}]",
        p.s(),
        p.coefficients().order(),
        p.lambda_shift(),
        p.omega().len(),
        alphas.join(" ")
    )
}
