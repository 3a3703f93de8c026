//! The perturbed fractional operator `(-Delta)^s + P(x, D) - lambda` with
//! exterior data, its adjoint, the associated bilinear forms, and
//! well-posedness diagnostics.
//!
//! Unknowns are the values on the domain nodes; the equations are the
//! restriction of the strong operator to the domain. Because the discrete
//! pairing is diagonal this is the same system as the Galerkin form.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{extend_zero, restrict, zero_on, NodeSet};
use crate::grid::{Grid, GridFunction, MultiIndex};
use crate::spectral::{self, dot, kernel_block, weighted_triple, Symbol};

/// Coefficients `a_alpha` of `P(x, D) = sum a_alpha D^alpha`, `|alpha| <= m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdoCoefficients {
    grid: Grid,
    order: u32,
    entries: BTreeMap<MultiIndex, GridFunction>,
}

impl PdoCoefficients {
    pub fn new(grid: Grid, order: u32) -> Self {
        Self { grid, order, entries: BTreeMap::new() }
    }

    /// Replaces the coefficient of `alpha`.
    pub fn insert(&mut self, alpha: MultiIndex, field: GridFunction) -> Result<()> {
        if alpha.dims() != self.grid.dims() {
            return Err(Error::InvalidMultiIndex(format!(
                "{alpha} does not match dimension {}",
                self.grid.dims()
            )));
        }
        if alpha.order() > self.order {
            return Err(Error::InvalidMultiIndex(format!("|{alpha}| exceeds the order {}", self.order)));
        }
        if field.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        self.entries.insert(alpha, field);
        Ok(())
    }

    pub fn with(mut self, alpha: MultiIndex, field: GridFunction) -> Result<Self> {
        self.insert(alpha, field)?;
        Ok(self)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn get(&self, alpha: &MultiIndex) -> Option<&GridFunction> {
        self.entries.get(alpha)
    }

    /// Entries in order of `|alpha|`, then lexicographically.
    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, &GridFunction)> {
        let mut v: Vec<_> = self.entries.iter().collect();
        v.sort_by(|a, b| (a.0.order(), a.0).cmp(&(b.0.order(), b.0)));
        v.into_iter()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.values().all(GridFunction::is_zero)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            entries: self.entries.iter().map(|(a, f)| (a.clone(), f.scale(c))).collect(),
            ..self.clone()
        }
    }

    /// `self - other`, entry by entry; the order is the larger of the two.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let mut out = Self::new(self.grid, self.order.max(other.order));
        for (alpha, f) in &self.entries {
            out.entries.insert(alpha.clone(), f.clone());
        }
        for (alpha, g) in &other.entries {
            let d = match out.entries.get(alpha) {
                Some(f) => f - g,
                None => g.scale(-1.0),
            };
            out.entries.insert(alpha.clone(), d);
        }
        Ok(out)
    }

    /// `self + other`, entry by entry.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        self.difference(&other.scaled(-1.0))
    }

    /// `P u = sum a_alpha D^alpha u`.
    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        let mut out = GridFunction::zeros(*u.grid());
        for (alpha, a) in self.iter() {
            out = out.axpy(1.0, &a.mul(&spectral::derivative(u, alpha)?)?)?;
        }
        Ok(out)
    }

    /// Formal adjoint `sum (-1)^{|alpha|} D^alpha (a_alpha u)`.
    pub fn apply_adjoint(&self, u: &GridFunction) -> Result<GridFunction> {
        let mut out = GridFunction::zeros(*u.grid());
        for (alpha, a) in self.iter() {
            let sign = if alpha.order() % 2 == 0 { 1.0 } else { -1.0 };
            out = out.axpy(sign, &spectral::derivative(&a.mul(u)?, alpha)?)?;
        }
        Ok(out)
    }
}

/// Regularity index `r_alpha` attached to a coefficient of order `|alpha|`.
pub fn regularity_index(alpha: &MultiIndex, s: f64, delta: f64) -> f64 {
    let d = alpha.order() as f64 - s;
    if d < 0.0 {
        0.0
    } else if ((d - 0.5).fract().abs() < 1e-12) || ((d - 0.5).fract().abs() > 1.0 - 1e-12) {
        d + delta
    } else {
        d
    }
}

/// `P u` for the coefficients of a problem.
pub fn apply_p(p: &PdoCoefficients, u: &GridFunction) -> Result<GridFunction> {
    p.apply(u)
}

/// Formal adjoint of `P` applied to `u`.
pub fn apply_p_adjoint(p: &PdoCoefficients, u: &GridFunction) -> Result<GridFunction> {
    p.apply_adjoint(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Dense,
    Iterative,
}

impl std::fmt::Display for SolveMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveMethod::Dense => "dense",
            SolveMethod::Iterative => "iterative",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub method: SolveMethod,
    pub dense_tol: f64,
    pub iterative_tol: f64,
    /// Defaults to ten times the number of domain nodes.
    pub max_iterations: Option<usize>,
    pub condition_limit: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: SolveMethod::Dense,
            dense_tol: 1e-10,
            iterative_tol: 1e-8,
            max_iterations: None,
            condition_limit: 1e12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub u: GridFunction,
    /// Relative residual of the restricted system.
    pub residual: f64,
    pub method: SolveMethod,
    pub iterations: usize,
    pub condition_estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvertibilityReport {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub condition: f64,
    pub near_singular: bool,
}

struct DenseFactor {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    adjoint_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    matrix: DMatrix<f64>,
    adjoint: DMatrix<f64>,
    report: InvertibilityReport,
}

/// Exterior value problem `((-Delta)^s + P - lambda) u = F` on the domain, `u = f` outside.
pub struct ForwardProblem {
    grid: Grid,
    s: f64,
    coefficients: PdoCoefficients,
    omega: NodeSet,
    lambda_shift: f64,
    options: SolverOptions,
    flip_adjoint_sign: bool,
    frac_kernel: Vec<f64>,
    derivative_kernels: BTreeMap<MultiIndex, Vec<f64>>,
    dense: OnceLock<DenseFactor>,
}

impl std::fmt::Debug for ForwardProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardProblem")
            .field("grid", &self.grid)
            .field("s", &self.s)
            .field("order", &self.coefficients.order)
            .field("omega_nodes", &self.omega.len())
            .field("lambda_shift", &self.lambda_shift)
            .finish()
    }
}

impl Clone for ForwardProblem {
    fn clone(&self) -> Self {
        let mut p = Self::new(self.s, self.coefficients.clone(), self.omega.clone())
            .expect("validated on construction");
        p.lambda_shift = self.lambda_shift;
        p.options = self.options;
        p.flip_adjoint_sign = self.flip_adjoint_sign;
        p
    }
}

impl ForwardProblem {
    /// Requires `s > 0` non-integer, `2s > m`, coefficients supported in `omega`.
    pub fn new(s: f64, coefficients: PdoCoefficients, omega: NodeSet) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidProblem(format!("s must be positive, got {s}")));
        }
        if (s - s.round()).abs() < 1e-12 {
            return Err(Error::InvalidProblem(format!("s must not be an integer, got {s}")));
        }
        let m = coefficients.order;
        if 2.0 * s <= m as f64 {
            return Err(Error::InvalidProblem(format!("need 2s > m, got s = {s}, m = {m}")));
        }
        let grid = *coefficients.grid();
        if omega.grid() != &grid {
            return Err(Error::GridMismatch);
        }
        for (alpha, a) in coefficients.iter() {
            if !omega.supports(a) {
                return Err(Error::Support(format!("coefficient {alpha} is not supported in the domain")));
            }
        }
        let frac_kernel = spectral::convolution_kernel(&grid, &Symbol::FracLaplacian(s))?;
        let mut derivative_kernels = BTreeMap::new();
        for (alpha, _) in coefficients.iter() {
            derivative_kernels.insert(
                alpha.clone(),
                spectral::convolution_kernel(&grid, &Symbol::Derivative(alpha.clone()))?,
            );
        }
        Ok(Self {
            grid,
            s,
            coefficients,
            omega,
            lambda_shift: 0.0,
            options: SolverOptions::default(),
            flip_adjoint_sign: false,
            frac_kernel,
            derivative_kernels,
            dense: OnceLock::new(),
        })
    }

    pub fn with_lambda_shift(mut self, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::InvalidProblem("lambda shift must be finite".into()));
        }
        self.lambda_shift = lambda;
        self.dense = OnceLock::new();
        Ok(self)
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self.dense = OnceLock::new();
        self
    }

    /// Test seam: flips the sign of odd-order terms in the adjoint.
    #[doc(hidden)]
    pub fn with_adjoint_sign_error(mut self) -> Self {
        self.flip_adjoint_sign = true;
        self.dense = OnceLock::new();
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn coefficients(&self) -> &PdoCoefficients {
        &self.coefficients
    }

    pub fn omega(&self) -> &NodeSet {
        &self.omega
    }

    pub fn lambda_shift(&self) -> f64 {
        self.lambda_shift
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    /// Same geometry and order with new coefficients.
    pub fn with_coefficients(&self, coefficients: PdoCoefficients) -> Result<Self> {
        let mut p = Self::new(self.s, coefficients, self.omega.clone())?;
        p.lambda_shift = self.lambda_shift;
        p.options = self.options;
        p.flip_adjoint_sign = self.flip_adjoint_sign;
        Ok(p)
    }

    fn adjoint_sign(&self, alpha: &MultiIndex) -> f64 {
        let odd = alpha.order() % 2 == 1;
        if odd != self.flip_adjoint_sign {
            -1.0
        } else {
            1.0
        }
    }

    fn check_grid(&self, u: &GridFunction) -> Result<()> {
        if u.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// `((-Delta)^s + P - lambda) u` on the whole grid.
    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        self.check_grid(u)?;
        let lu = spectral::frac_laplacian(u, self.s)?;
        let pu = self.coefficients.apply(u)?;
        (&lu + &pu).axpy(-self.lambda_shift, u)
    }

    /// `((-Delta)^s + P^* - lambda) u` on the whole grid.
    pub fn apply_adjoint(&self, u: &GridFunction) -> Result<GridFunction> {
        self.check_grid(u)?;
        let mut out = spectral::frac_laplacian(u, self.s)?.axpy(-self.lambda_shift, u)?;
        for (alpha, a) in self.coefficients.iter() {
            out = out.axpy(self.adjoint_sign(alpha), &spectral::derivative(&a.mul(u)?, alpha)?)?;
        }
        Ok(out)
    }

    /// `B_P(v, w) = <(-Delta)^{s/2} v, (-Delta)^{s/2} w> + sum <a_alpha, (D^alpha v) w> - lambda <v, w>`.
    pub fn bilinear(&self, v: &GridFunction, w: &GridFunction) -> Result<f64> {
        self.form(v, w, false)
    }

    /// `B_P^*(v, w) = <(-Delta)^{s/2} v, (-Delta)^{s/2} w> + sum <a_alpha, v D^alpha w> - lambda <v, w>`.
    pub fn bilinear_adjoint(&self, v: &GridFunction, w: &GridFunction) -> Result<f64> {
        self.form(v, w, true)
    }

    fn form(&self, v: &GridFunction, w: &GridFunction, adjoint: bool) -> Result<f64> {
        self.check_grid(v)?;
        self.check_grid(w)?;
        // the adjoint form is evaluated with its arguments swapped, so that
        // B(v, w) and B*(w, v) go through identical arithmetic
        let (first, second) = if adjoint { (w, v) } else { (v, w) };
        let hv = spectral::frac_laplacian(first, 0.5 * self.s)?;
        let hw = spectral::frac_laplacian(second, 0.5 * self.s)?;
        let mut total = dot(hv.values(), hw.values());
        for (alpha, a) in self.coefficients.iter() {
            let d = spectral::derivative(first, alpha)?;
            total += weighted_triple(a.values(), d.values(), second.values());
        }
        total -= self.lambda_shift * dot(first.values(), second.values());
        Ok(self.grid.cell_volume() * total)
    }

    fn restricted(&self, adjoint: bool) -> DMatrix<f64> {
        let idx = self.omega.indices();
        let mut m = kernel_block(&self.grid, &self.frac_kernel, idx, idx);
        for (alpha, a) in self.coefficients.iter() {
            let d = kernel_block(&self.grid, &self.derivative_kernels[alpha], idx, idx);
            let av: Vec<f64> = idx.iter().map(|&i| a.values()[i]).collect();
            if adjoint {
                let sign = self.adjoint_sign(alpha);
                for c in 0..idx.len() {
                    for r in 0..idx.len() {
                        m[(r, c)] += sign * d[(r, c)] * av[c];
                    }
                }
            } else {
                for c in 0..idx.len() {
                    for r in 0..idx.len() {
                        m[(r, c)] += av[r] * d[(r, c)];
                    }
                }
            }
        }
        for k in 0..idx.len() {
            m[(k, k)] -= self.lambda_shift;
        }
        m
    }

    /// Dense restricted matrix `R_Omega A E_Omega`.
    pub fn restricted_matrix(&self) -> DMatrix<f64> {
        self.restricted(false)
    }

    /// Dense restricted adjoint matrix (the transpose of [`Self::restricted_matrix`]).
    pub fn restricted_adjoint_matrix(&self) -> DMatrix<f64> {
        self.restricted(true)
    }

    fn factor(&self) -> &DenseFactor {
        self.dense.get_or_init(|| {
            let matrix = self.restricted_matrix();
            let adjoint = self.restricted_adjoint_matrix();
            let report = invertibility_of(&matrix, self.options.condition_limit);
            DenseFactor { lu: matrix.clone().lu(), adjoint_lu: adjoint.clone().lu(), matrix, adjoint, report }
        })
    }

    /// Singular values of the restricted system.
    pub fn check_invertibility(&self) -> Result<InvertibilityReport> {
        Ok(self.factor().report)
    }

    /// Solves the exterior value problem with datum `f` (values on the domain ignored)
    /// and source `source` (values outside the domain ignored).
    pub fn solve_forward(&self, f: &GridFunction, source: Option<&GridFunction>) -> Result<SolveReport> {
        self.solve(f, source, false)
    }

    /// Same for the adjoint operator.
    pub fn solve_adjoint(&self, f: &GridFunction, source: Option<&GridFunction>) -> Result<SolveReport> {
        self.solve(f, source, true)
    }

    fn solve(&self, f: &GridFunction, source: Option<&GridFunction>, adjoint: bool) -> Result<SolveReport> {
        self.check_grid(f)?;
        let exterior = zero_on(f, &self.omega);
        let applied = if adjoint { self.apply_adjoint(&exterior)? } else { self.apply(&exterior)? };
        let mut rhs = DVector::from_vec(restrict(&applied, &self.omega)?).scale(-1.0);
        if let Some(src) = source {
            self.check_grid(src)?;
            rhs += DVector::from_vec(restrict(src, &self.omega)?);
        }
        let (w, residual, iterations, condition, method) = match self.options.method {
            SolveMethod::Dense => {
                let factor = self.factor();
                if factor.report.near_singular {
                    return Err(Error::NearSingular { condition: factor.report.condition });
                }
                let (lu, m) = if adjoint { (&factor.adjoint_lu, &factor.adjoint) } else { (&factor.lu, &factor.matrix) };
                let w = lu.solve(&rhs).ok_or(Error::NearSingular { condition: f64::INFINITY })?;
                let residual = relative_residual(&(m * &w), &rhs);
                if residual > self.options.dense_tol {
                    return Err(Error::NotConverged { iterations: 1, residual });
                }
                (w, residual, 1, factor.report.condition, SolveMethod::Dense)
            }
            SolveMethod::Iterative => {
                let (w, residual, iterations) = self.cgnr(&rhs, adjoint)?;
                let condition = self.dense.get().map_or(f64::NAN, |d| d.report.condition);
                (w, residual, iterations, condition, SolveMethod::Iterative)
            }
        };
        let mut values = exterior.into_values();
        for (&i, wi) in self.omega.indices().iter().zip(w.iter()) {
            values[i] = *wi;
        }
        Ok(SolveReport {
            u: GridFunction::new(self.grid, values)?,
            residual,
            method,
            iterations,
            condition_estimate: condition,
        })
    }

    fn apply_restricted(&self, x: &DVector<f64>, adjoint: bool) -> Result<DVector<f64>> {
        let u = extend_zero(x.as_slice(), &self.omega)?;
        let y = if adjoint { self.apply_adjoint(&u)? } else { self.apply(&u)? };
        Ok(DVector::from_vec(restrict(&y, &self.omega)?))
    }

    /// Conjugate gradients on the normal equations, matrix-free.
    fn cgnr(&self, b: &DVector<f64>, adjoint: bool) -> Result<(DVector<f64>, f64, usize)> {
        let n = b.len();
        let max_it = self.options.max_iterations.unwrap_or(10 * n);
        let tol = self.options.iterative_tol;
        let bnorm = b.norm();
        let mut x = DVector::zeros(n);
        if bnorm == 0.0 {
            return Ok((x, 0.0, 0));
        }
        let mut r = b.clone();
        let mut z = self.apply_restricted(&r, !adjoint)?;
        let mut p = z.clone();
        let mut zz = z.norm_squared();
        for it in 1..=max_it {
            let w = self.apply_restricted(&p, adjoint)?;
            let ww = w.norm_squared();
            if ww == 0.0 {
                break;
            }
            let alpha = zz / ww;
            x.axpy(alpha, &p, 1.0);
            r.axpy(-alpha, &w, 1.0);
            let res = r.norm() / bnorm;
            if res <= tol {
                // recompute from scratch to avoid drift in the recursive residual
                let true_res = relative_residual(&self.apply_restricted(&x, adjoint)?, b);
                if true_res <= tol {
                    return Ok((x, true_res, it));
                }
                r = b - self.apply_restricted(&x, adjoint)?;
            }
            z = self.apply_restricted(&r, !adjoint)?;
            let zz_new = z.norm_squared();
            p = &z + (zz_new / zz) * &p;
            zz = zz_new;
        }
        let residual = relative_residual(&self.apply_restricted(&x, adjoint)?, b);
        if residual <= tol {
            return Ok((x, residual, max_it));
        }
        Err(Error::NotConverged { iterations: max_it, residual })
    }

    /// `sigma_max` of `J^{-s} ((-Delta)^s + P - lambda) J^{-s}` on the full grid, which bounds
    /// `|B_P(v, w)| <= C ||v||_{H^s} ||w||_{H^s}`.
    pub fn boundedness_constant(&self) -> Result<f64> {
        let n = self.grid.len();
        if n > 4096 {
            return Err(Error::TooLarge(format!("{n} nodes; dense boundedness estimate needs <= 4096")));
        }
        let all: Vec<usize> = (0..n).collect();
        let jm = spectral::multiplier_block(&self.grid, &Symbol::Bessel(-self.s), &all, &all)?;
        let mut a = kernel_block(&self.grid, &self.frac_kernel, &all, &all);
        for (alpha, coef) in self.coefficients.iter() {
            let d = kernel_block(&self.grid, &self.derivative_kernels[alpha], &all, &all);
            for c in 0..n {
                for r in 0..n {
                    a[(r, c)] += coef.values()[r] * d[(r, c)];
                }
            }
        }
        for k in 0..n {
            a[(k, k)] -= self.lambda_shift;
        }
        let m = &jm * a * &jm;
        Ok(m.singular_values().max())
    }
}

fn relative_residual(ax: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let bn = b.norm();
    let rn = (ax - b).norm();
    if bn == 0.0 {
        rn
    } else {
        rn / bn
    }
}

fn invertibility_of(m: &DMatrix<f64>, limit: f64) -> InvertibilityReport {
    let sv = m.singular_values();
    let sigma_max = sv.max();
    let sigma_min = sv.min();
    let condition = if sigma_min > 0.0 { sigma_max / sigma_min } else { f64::INFINITY };
    InvertibilityReport { sigma_min, sigma_max, condition, near_singular: !(condition <= limit) }
}

/// Singular values and condition number of the restricted system.
pub fn check_invertibility(problem: &ForwardProblem) -> Result<InvertibilityReport> {
    problem.check_invertibility()
}

/// Norm used on the right-hand side of the coercivity estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoercivityNorm {
    /// `||J^s v||^2`
    Bessel,
    /// `||(-Delta)^{s/2} v||^2`, equivalent to the Bessel norm on the domain by Poincare.
    Homogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoercivityOptions {
    pub norm: CoercivityNorm,
    /// Smallest accepted `c0`.
    pub c0_floor: f64,
    pub mu_max: f64,
    /// Number of geometric steps in `(0, mu_max]`.
    pub mu_steps: usize,
}

impl Default for CoercivityOptions {
    fn default() -> Self {
        Self { norm: CoercivityNorm::Bessel, c0_floor: 0.5, mu_max: 1e4, mu_steps: 64 }
    }
}

/// Certified pair with `B_P(v, v) >= c0 ||v||^2 - mu ||v||_{L^2}^2` on domain-supported fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoercivityCertificate {
    pub c0: f64,
    pub mu: f64,
    pub norm: CoercivityNorm,
}

impl CoercivityCertificate {
    /// `B_P(v, v) - (c0 ||v||^2 - mu ||v||_{L^2}^2)`; nonnegative when the certificate holds.
    pub fn slack(&self, problem: &ForwardProblem, v: &GridFunction) -> Result<f64> {
        let b = problem.bilinear(v, v)?;
        let norm2 = match self.norm {
            CoercivityNorm::Bessel => spectral::sobolev_norm(v, problem.s).powi(2),
            CoercivityNorm::Homogeneous => spectral::l2_norm(&spectral::frac_laplacian(v, 0.5 * problem.s)?).powi(2),
        };
        Ok(b - (self.c0 * norm2 - self.mu * spectral::l2_norm(v).powi(2)))
    }
}

/// Scans `mu` over `{0}` and a geometric grid up to `mu_max`; returns the first `mu`
/// whose generalized eigenvalue `c0` reaches the floor.
pub fn coercivity_estimate(problem: &ForwardProblem, options: &CoercivityOptions) -> Result<CoercivityCertificate> {
    let idx = problem.omega.indices();
    let h = problem.grid.cell_volume();
    let a = problem.restricted_matrix();
    let sym = (&a + a.transpose()).scale(0.5 * h);
    let gram_symbol = match options.norm {
        CoercivityNorm::Bessel => Symbol::Bessel(2.0 * problem.s),
        CoercivityNorm::Homogeneous => Symbol::FracLaplacian(problem.s),
    };
    let gram = spectral::multiplier_block(&problem.grid, &gram_symbol, idx, idx)?.scale(h);
    let gram = (&gram + gram.transpose()).scale(0.5);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Coercivity("norm Gram matrix is not positive definite".into()))?;
    let linv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(idx.len(), idx.len()))
        .ok_or_else(|| Error::Coercivity("singular Gram factor".into()))?;
    let base = &linv * &sym * linv.transpose();
    let mass = &linv * linv.transpose().scale(h);
    let mut grid_mu = vec![0.0];
    let steps = options.mu_steps.max(1);
    let lo = (options.mu_max * 1e-8).max(f64::MIN_POSITIVE);
    for k in 0..steps {
        grid_mu.push(lo * (options.mu_max / lo).powf((k + 1) as f64 / steps as f64));
    }
    for mu in grid_mu {
        let mut c = &base + mass.scale(mu);
        c = (&c + c.transpose()).scale(0.5);
        let c0 = c.symmetric_eigenvalues().min();
        if c0 >= options.c0_floor {
            return Ok(CoercivityCertificate { c0, mu, norm: options.norm });
        }
    }
    Err(Error::Coercivity(format!(
        "no mu <= {} gives c0 >= {}; the perturbation is too strong for s = {}",
        options.mu_max, options.c0_floor, problem.s
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{bump, make_nodeset, BumpSpec, Label, Shape};
    use crate::spectral::pairing;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Grid, NodeSet) {
        let g = Grid::new(1, 128, 4.0).unwrap();
        let omega = make_nodeset(g, Shape::ball(&[0.0], 1.5), Label::Omega).unwrap();
        (g, omega)
    }

    fn gaussian(g: Grid, omega: &NodeSet, c: f64, amp: f64) -> GridFunction {
        let plateau = Shape::ball(&[0.0], 1.5 - 9.0 * g.spacing());
        let cut = crate::geometry::monomial_cutoff(&MultiIndex::zero(1), &plateau, 8.0 * g.spacing(), omega).unwrap();
        GridFunction::from_fn(g, |x| amp * (-(x[0] - c).powi(2) / 0.5).exp()).unwrap().mul(&cut).unwrap()
    }

    fn random_on(rng: &mut ChaCha8Rng, omega: &NodeSet) -> GridFunction {
        let w: Vec<f64> = (0..omega.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        extend_zero(&w, omega).unwrap()
    }

    fn m1_problem() -> ForwardProblem {
        let (g, omega) = setup();
        let p = PdoCoefficients::new(g, 1)
            .with(MultiIndex::zero(1), gaussian(g, &omega, 0.0, 0.8))
            .unwrap()
            .with(MultiIndex::unit(1, 0), gaussian(g, &omega, 0.2, 0.5))
            .unwrap();
        ForwardProblem::new(0.7, p, omega).unwrap()
    }

    #[test]
    fn construction_invariants() {
        let (g, omega) = setup();
        assert!(ForwardProblem::new(1.0, PdoCoefficients::new(g, 0), omega.clone()).is_err());
        assert!(ForwardProblem::new(0.4, PdoCoefficients::new(g, 1), omega.clone()).is_err());
        let outside = GridFunction::constant(g, 1.0).unwrap();
        let p = PdoCoefficients::new(g, 0).with(MultiIndex::zero(1), outside).unwrap();
        assert!(matches!(ForwardProblem::new(0.7, p, omega), Err(Error::Support(_))));
        assert_eq!(regularity_index(&MultiIndex::zero(1), 0.7, 0.1), 0.0);
        assert!((regularity_index(&MultiIndex::unit(1, 0), 0.5, 0.1) - 0.6).abs() < 1e-12);
        assert!((regularity_index(&MultiIndex::unit(1, 0), 0.7, 0.1) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn apply_p_matches_dense_assembly() {
        let prob = m1_problem();
        let g = *prob.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = GridFunction::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let pu = apply_p(prob.coefficients(), &u).unwrap();
        let all: Vec<usize> = (0..g.len()).collect();
        let mut dense = DMatrix::zeros(g.len(), g.len());
        for (alpha, a) in prob.coefficients().iter() {
            let d = spectral::multiplier_block(&g, &Symbol::Derivative(alpha.clone()), &all, &all).unwrap();
            dense += DMatrix::from_diagonal(&DVector::from_column_slice(a.values())) * d;
        }
        let direct = dense * DVector::from_column_slice(u.values());
        let err = (direct - DVector::from_column_slice(pu.values())).norm() / DVector::from_column_slice(pu.values()).norm();
        assert!(err < 1e-10);
        assert!(apply_p(&PdoCoefficients::new(g, 1), &u).unwrap().is_zero());
    }

    #[test]
    fn adjoint_duality_and_symbols() {
        let prob = m1_problem();
        let g = *prob.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let v = random_on(&mut rng, prob.omega());
            let w = GridFunction::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let lhs = pairing(&apply_p(prob.coefficients(), &v).unwrap(), &w).unwrap();
            let rhs = pairing(&v, &apply_p_adjoint(prob.coefficients(), &w).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-300));
            assert_eq!(prob.bilinear(&v, &w).unwrap(), prob.bilinear_adjoint(&w, &v).unwrap());
        }
        // constant coefficients: P^* u = -a1 D u + a0 u
        let (a0, a1) = (0.3, -1.7);
        let p = PdoCoefficients::new(g, 1)
            .with(MultiIndex::zero(1), GridFunction::constant(g, a0).unwrap())
            .unwrap()
            .with(MultiIndex::unit(1, 0), GridFunction::constant(g, a1).unwrap())
            .unwrap();
        let u = GridFunction::from_fn(g, |x| (x[0] * 1.5).sin() + (x[0] * 0.25).cos()).unwrap();
        let du = spectral::derivative(&u, &MultiIndex::unit(1, 0)).unwrap();
        let expect = du.scale(-a1).axpy(a0, &u).unwrap();
        let got = p.apply_adjoint(&u).unwrap();
        assert!((&got - &expect).max_abs() < 1e-12 * expect.max_abs().max(1.0));
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let prob = m1_problem();
        let rep = prob.solve_forward(&GridFunction::zeros(*prob.grid()), None).unwrap();
        assert!(rep.u.is_zero());
    }

    #[test]
    fn manufactured_solution_both_paths() {
        let prob = m1_problem();
        let g = *prob.grid();
        let ustar = GridFunction::from_fn(g, |x| (-(x[0] - 0.3).powi(2)).exp() * (2.0 * x[0]).cos()).unwrap();
        let source = prob.apply(&ustar).unwrap();
        let dense = prob.solve_forward(&ustar, Some(&source)).unwrap();
        let err = spectral::l2_norm(&(&dense.u - &ustar)) / spectral::l2_norm(&ustar);
        assert!(err < 1e-8, "dense error {err}");
        for k in 0..g.len() {
            if !prob.omega().contains(k) {
                assert_eq!(dense.u.values()[k], ustar.values()[k]);
            }
        }
        let opts = SolverOptions { method: SolveMethod::Iterative, iterative_tol: 1e-13, ..Default::default() };
        let it = prob.clone().with_options(opts).solve_forward(&ustar, Some(&source)).unwrap();
        let agree = spectral::l2_norm(&(&it.u - &dense.u)) / spectral::l2_norm(&dense.u);
        assert!(agree < 1e-8, "paths disagree by {agree}");
        let adj_source = prob.apply_adjoint(&ustar).unwrap();
        let adj = prob.solve_adjoint(&ustar, Some(&adj_source)).unwrap();
        assert!(spectral::l2_norm(&(&adj.u - &ustar)) / spectral::l2_norm(&ustar) < 1e-8);
    }

    #[test]
    fn galerkin_consistency() {
        let prob = m1_problem();
        let g = *prob.grid();
        let f = bump(&g, &BumpSpec::new(&[-2.5], 0.3), None).unwrap();
        let u = prob.solve_forward(&f, None).unwrap().u;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let phi = random_on(&mut rng, prob.omega());
            assert!(prob.bilinear(&u, &phi).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn coercivity_for_free_operator_is_exact() {
        let (g, omega) = setup();
        let prob = ForwardProblem::new(0.7, PdoCoefficients::new(g, 1), omega).unwrap();
        let opts = CoercivityOptions { norm: CoercivityNorm::Homogeneous, c0_floor: 0.99, ..Default::default() };
        let cert = coercivity_estimate(&prob, &opts).unwrap();
        assert_eq!(cert.mu, 0.0);
        assert!((cert.c0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn coercivity_certificate_holds() {
        let prob = m1_problem();
        let cert = coercivity_estimate(&prob, &CoercivityOptions::default()).unwrap();
        assert!(cert.c0 > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let v = random_on(&mut rng, prob.omega());
            let scale = spectral::sobolev_norm(&v, prob.s()).powi(2);
            assert!(cert.slack(&prob, &v).unwrap() >= -1e-10 * scale);
        }
    }

    #[test]
    fn invertibility_diagnostics() {
        let (g, omega) = setup();
        let free = ForwardProblem::new(0.7, PdoCoefficients::new(g, 0), omega.clone()).unwrap();
        let rep = free.check_invertibility().unwrap();
        let k = free.restricted_matrix();
        let eig = k.clone().symmetric_eigen().eigenvalues;
        assert!((rep.sigma_min - eig.min()).abs() < 1e-10 * eig.max());
        assert!(!rep.near_singular);
        let shifted = ForwardProblem::new(0.7, PdoCoefficients::new(g, 0), omega.clone())
            .unwrap()
            .with_lambda_shift(eig.min())
            .unwrap();
        assert!(shifted.check_invertibility().unwrap().near_singular);
        let datum = bump(&g, &BumpSpec::new(&[-2.5], 0.3), None).unwrap();
        assert!(matches!(shifted.solve_forward(&datum, None), Err(Error::NearSingular { .. })));
        let tiny = PdoCoefficients::new(g, 0)
            .with(MultiIndex::zero(1), gaussian(g, &omega, 0.0, 1e-9))
            .unwrap();
        let near = ForwardProblem::new(0.7, tiny, omega).unwrap().check_invertibility().unwrap();
        assert!((near.condition - rep.condition).abs() < 1e-6 * rep.condition);
    }

    #[test]
    fn bilinear_is_bounded() {
        let prob = m1_problem();
        let c = prob.boundedness_constant().unwrap();
        let g = *prob.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let v = GridFunction::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let w = GridFunction::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let b = prob.bilinear(&v, &w).unwrap().abs();
            let bound = c * spectral::sobolev_norm(&v, prob.s()) * spectral::sobolev_norm(&w, prob.s());
            assert!(b <= bound * (1.0 + 1e-10));
        }
    }
}
