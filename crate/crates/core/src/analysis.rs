//! Numerical estimates of multiplier norms, the Poincare and Kato-Ponce
//! constants, and a unique-continuation diagnostic.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::NodeSet;
use crate::grid::{Grid, GridFunction};
use crate::spectral::{self, multiplier_block, Symbol};

/// Largest grid handled by the dense estimators.
pub const DENSE_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMethod {
    DenseSvd,
}

#[derive(Debug, Clone)]
pub struct MultiplierEstimate {
    pub r: f64,
    pub t: f64,
    pub norm_value: f64,
    pub method: EstimateMethod,
}

fn check_dense(grid: &Grid) -> Result<()> {
    if grid.len() > DENSE_LIMIT {
        return Err(Error::TooLarge(format!(
            "{} nodes exceeds {DENSE_LIMIT}; use a power-iteration estimate instead",
            grid.len()
        )));
    }
    Ok(())
}

/// Dense matrix of `J^t M_f J^{-r}` on the full grid.
fn multiplier_operator(f: &GridFunction, r: f64, t: f64) -> Result<DMatrix<f64>> {
    let grid = f.grid();
    check_dense(grid)?;
    let all: Vec<usize> = (0..grid.len()).collect();
    let left = multiplier_block(grid, &Symbol::Bessel(t), &all, &all)?;
    let mut right = multiplier_block(grid, &Symbol::Bessel(-r), &all, &all)?;
    for (row, &fv) in f.values().iter().enumerate() {
        for c in 0..grid.len() {
            right[(row, c)] *= fv;
        }
    }
    Ok(left * right)
}

/// `||f||_{r,t} = sup |<f, u v>| / (||u||_{H^r} ||v||_{H^{-t}})`, the largest singular
/// value of `J^t M_f J^{-r}`.
pub fn multiplier_norm(f: &GridFunction, r: f64, t: f64) -> Result<MultiplierEstimate> {
    if !(r.is_finite() && t.is_finite()) {
        return Err(Error::InvalidArgument("Sobolev orders must be finite".into()));
    }
    let norm_value = if f.is_zero() {
        check_dense(f.grid())?;
        0.0
    } else {
        multiplier_operator(f, r, t)?.singular_values().max()
    };
    Ok(MultiplierEstimate { r, t, norm_value, method: EstimateMethod::DenseSvd })
}

/// Relative gap between `||f||_{r,t}` and `||f||_{-t,-r}`.
pub fn check_multiplier_symmetry(f: &GridFunction, r: f64, t: f64) -> Result<f64> {
    let a = multiplier_norm(f, r, t)?.norm_value;
    let b = multiplier_norm(f, -t, -r)?.norm_value;
    let scale = a.max(b);
    Ok(if scale == 0.0 { 0.0 } else { (a - b).abs() / scale })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityReport {
    /// `||f||_{r,t}`
    pub base: f64,
    /// `||f||_{r-lambda, t+mu}`
    pub stronger: f64,
    pub holds: bool,
}

/// Checks `||f||_{r,t} <= ||f||_{r-lambda, t+mu}` for `lambda, mu >= 0`.
pub fn check_multiplier_monotonicity(f: &GridFunction, r: f64, t: f64, lambda: f64, mu: f64) -> Result<MonotonicityReport> {
    if !(lambda >= 0.0 && mu >= 0.0) {
        return Err(Error::InvalidArgument("lambda and mu must be >= 0".into()));
    }
    let base = multiplier_norm(f, r, t)?.norm_value;
    let stronger = multiplier_norm(f, r - lambda, t + mu)?.norm_value;
    Ok(MonotonicityReport { base, stronger, holds: base <= stronger * (1.0 + 1e-12) })
}

#[derive(Debug, Clone)]
pub struct TrivialityScan {
    pub points: Vec<usize>,
    pub norms: Vec<f64>,
}

impl TrivialityScan {
    pub fn strictly_increasing(&self) -> bool {
        self.norms.windows(2).all(|w| w[1] > w[0])
    }
}

/// `||f||_{r,t}` for `r < t` on a grid and `refinements` successive doublings. On the whole
/// space such multipliers vanish, so for `f != 0` the discrete norms grow without bound.
pub fn triviality_scan(
    grid: Grid,
    f: impl Fn(&Grid) -> Result<GridFunction>,
    r: f64,
    t: f64,
    refinements: usize,
) -> Result<TrivialityScan> {
    if !(r < t) {
        return Err(Error::InvalidArgument(format!("triviality scan needs r < t, got r = {r}, t = {t}")));
    }
    let mut g = grid;
    let mut points = Vec::new();
    let mut norms = Vec::new();
    for _ in 0..=refinements {
        norms.push(multiplier_norm(&f(&g)?, r, t)?.norm_value);
        points.push(g.points());
        g = g.refined();
    }
    Ok(TrivialityScan { points, norms })
}

/// Best `c` in `||u||_{L^2} <= c ||(-Delta)^{s/2} u||_{L^2}` for `u` supported in `k`.
pub fn poincare_constant(k: &NodeSet, s: f64) -> Result<f64> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::InvalidArgument(format!("s must be positive, got {s}")));
    }
    let m = multiplier_block(k.grid(), &Symbol::FracLaplacian(s), k.indices(), k.indices())?;
    let m = (&m + m.transpose()).scale(0.5);
    let lmin = m.symmetric_eigenvalues().min();
    if lmin <= 0.0 {
        return Err(Error::InvalidArgument("restricted fractional Laplacian is not positive on this set".into()));
    }
    Ok(1.0 / lmin.sqrt())
}

/// `||J^s(fg)|| / (||J^s f||_inf ||g|| + ||f||_inf ||J^s g||)`; zero when `g = 0`.
pub fn kato_ponce_check(f: &GridFunction, g: &GridFunction, s: f64) -> Result<f64> {
    if f.grid() != g.grid() {
        return Err(Error::GridMismatch);
    }
    if g.is_zero() {
        return Ok(0.0);
    }
    let lhs = spectral::l2_norm(&spectral::bessel_potential(&f.mul(g)?, s)?);
    let rhs = spectral::bessel_potential(f, s)?.max_abs() * spectral::l2_norm(g)
        + f.max_abs() * spectral::sobolev_norm(g, s);
    if rhs == 0.0 {
        return Ok(0.0);
    }
    Ok(lhs / rhs)
}

/// Random trigonometric field with Gaussian-decaying mode amplitudes.
pub fn random_smooth_field<R: Rng>(grid: &Grid, rng: &mut R, modes: usize) -> GridFunction {
    let l = grid.half_length();
    let dims = grid.dims();
    let mut terms = Vec::new();
    for _ in 0..modes.max(1) {
        let mut k = [0.0; 2];
        for slot in k.iter_mut().take(dims) {
            *slot = std::f64::consts::PI / l * rng.gen_range(-4i32..=4) as f64;
        }
        let amp = rng.gen_range(-1.0..1.0) * (-(k[0] * k[0] + k[1] * k[1]) / 8.0).exp();
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        terms.push((k, amp, phase));
    }
    let values = (0..grid.len())
        .map(|i| {
            let x = grid.coord(i);
            terms.iter().map(|(k, a, p)| a * (k[0] * x[0] + k[1] * x[1] + p).cos()).sum()
        })
        .collect();
    GridFunction::new(*grid, values).expect("finite by construction")
}

/// Smallest singular value of `[R_V E_K; R_V (-Delta)^s E_K]` for trial support `K`
/// (the whole grid when `None`). Zero when the stack has fewer rows than columns.
pub fn ucp_diagnostic(v: Option<&NodeSet>, s: f64, trial: Option<&NodeSet>, grid: &Grid) -> Result<f64> {
    let Some(v) = v else { return Ok(0.0) };
    if v.grid() != grid || trial.is_some_and(|k| k.grid() != grid) {
        return Err(Error::GridMismatch);
    }
    let all: Vec<usize> = (0..grid.len()).collect();
    let cols: &[usize] = trial.map_or(&all[..], |k| k.indices());
    let rows = v.indices();
    if 2 * rows.len() < cols.len() {
        return Ok(0.0);
    }
    if rows.len() * cols.len() > DENSE_LIMIT * DENSE_LIMIT {
        return Err(Error::TooLarge("UCP stack too large for a dense SVD".into()));
    }
    let lap = multiplier_block(grid, &Symbol::FracLaplacian(s), rows, cols)?;
    let mut stack = DMatrix::zeros(2 * rows.len(), cols.len());
    for (r, &i) in rows.iter().enumerate() {
        for (c, &j) in cols.iter().enumerate() {
            if i == j {
                stack[(r, c)] = 1.0;
            }
            stack[(rows.len() + r, c)] = lap[(r, c)];
        }
    }
    Ok(stack.singular_values().min())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{bump, extend_zero, make_nodeset, BumpSpec, Label, Shape};
    use crate::spectral::pairing;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_field(g: &Grid, rng: &mut ChaCha8Rng) -> GridFunction {
        GridFunction::new(*g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn constant_and_zero_multipliers() {
        let g = Grid::new(1, 32, 2.0).unwrap();
        assert_eq!(multiplier_norm(&GridFunction::zeros(g), 0.3, 0.1).unwrap().norm_value, 0.0);
        let c = GridFunction::constant(g, -2.5).unwrap();
        assert!((multiplier_norm(&c, 0.0, 0.0).unwrap().norm_value - 2.5).abs() < 1e-12);
        let a = multiplier_norm(&c, 0.4, 0.4).unwrap().norm_value;
        assert!((a - 2.5).abs() < 1e-12);
        assert!(check_multiplier_symmetry(&c, 0.4, 0.4).unwrap() < 1e-12);
    }

    #[test]
    fn multiplier_inequality_on_sampled_pairs() {
        let g = Grid::new(1, 64, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_field(&g, &mut rng);
        let (r, t) = (0.4, -0.6);
        let norm = multiplier_norm(&f, r, t).unwrap().norm_value;
        for _ in 0..50 {
            let u = random_field(&g, &mut rng);
            let v = random_field(&g, &mut rng);
            let lhs = pairing(&f, &u.mul(&v).unwrap()).unwrap().abs();
            let rhs = norm * spectral::sobolev_norm(&u, r) * spectral::sobolev_norm(&v, -t);
            assert!(rhs - lhs >= -1e-10 * rhs);
        }
    }

    #[test]
    fn symmetry_and_monotonicity() {
        let g = Grid::new(1, 64, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_field(&g, &mut rng);
        assert!(check_multiplier_symmetry(&f, 0.7, -0.7).unwrap() <= 1e-9);
        let same = check_multiplier_monotonicity(&f, 0.2, -0.1, 0.0, 0.0).unwrap();
        assert_eq!(same.base, same.stronger);
        assert!(check_multiplier_monotonicity(&f, 0.2, -0.1, 0.5, 0.5).unwrap().holds);
        let c = GridFunction::constant(g, 1.0).unwrap();
        let rep = check_multiplier_monotonicity(&c, 0.0, 0.0, 0.25, 0.0).unwrap();
        assert!(rep.stronger > rep.base);
    }

    #[test]
    fn refinement_growth_for_r_below_t() {
        let g = Grid::new(1, 32, 2.0).unwrap();
        let zero = triviality_scan(g, |g| Ok(GridFunction::zeros(*g)), -0.3, 0.3, 3).unwrap();
        assert!(zero.norms.iter().all(|&n| n == 0.0));
        let one = triviality_scan(g, |g| GridFunction::constant(*g, 1.0), -0.3, 0.3, 3).unwrap();
        assert!(one.strictly_increasing(), "{:?}", one.norms);
        let b = triviality_scan(g, |g| bump(g, &BumpSpec::new(&[0.0], 0.8), None), -0.3, 0.3, 3).unwrap();
        assert!(b.strictly_increasing(), "{:?}", b.norms);
        assert!(triviality_scan(g, |g| GridFunction::constant(*g, 1.0), 0.3, 0.3, 1).is_err());
    }

    #[test]
    fn poincare_constant_behaviour() {
        let g = Grid::new(1, 128, 4.0).unwrap();
        let big = make_nodeset(g, Shape::ball(&[0.0], 1.5), Label::Omega).unwrap();
        let small = make_nodeset(g, Shape::ball(&[0.0], 0.5), Label::Omega).unwrap();
        let single = make_nodeset(g, Shape::ball(&[0.0], 0.01), Label::Omega).unwrap();
        let (cb, cs, c1) = (
            poincare_constant(&big, 0.7).unwrap(),
            poincare_constant(&small, 0.7).unwrap(),
            poincare_constant(&single, 0.7).unwrap(),
        );
        assert!(cb > cs && cs > c1 && c1.is_finite());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let w: Vec<f64> = (0..big.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u = extend_zero(&w, &big).unwrap();
            let rhs = cb * spectral::l2_norm(&spectral::frac_laplacian(&u, 0.35).unwrap());
            assert!(rhs - spectral::l2_norm(&u) >= -1e-10);
        }
    }

    #[test]
    fn kato_ponce_ratios() {
        let g = Grid::new(1, 64, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gfield = random_smooth_field(&g, &mut rng, 5);
        let c = GridFunction::constant(g, 0.7).unwrap();
        assert!(kato_ponce_check(&c, &gfield, 1.3).unwrap() <= 1.0 + 1e-12);
        assert_eq!(kato_ponce_check(&gfield, &GridFunction::zeros(g), 1.3).unwrap(), 0.0);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let f = random_smooth_field(&g, &mut rng, 4);
            let h = random_smooth_field(&g, &mut rng, 4);
            worst = worst.max(kato_ponce_check(&f, &h, 0.8).unwrap());
        }
        assert!(worst <= 10.0, "max ratio {worst}");
    }

    #[test]
    fn ucp_limits() {
        let g = Grid::new(1, 32, 2.0).unwrap();
        let whole = NodeSet::from_mask(g, vec![true; g.len()], Label::Custom("all".into())).unwrap();
        let full = ucp_diagnostic(Some(&whole), 0.7, None, &g).unwrap();
        assert!(full > 0.99 && full <= 1.0 + 1e-12);
        assert_eq!(ucp_diagnostic(None, 0.7, None, &g).unwrap(), 0.0);
        let mut prev = f64::INFINITY;
        for n in [32, 64, 128] {
            let g = Grid::new(1, n, 2.0).unwrap();
            let v = make_nodeset(g, Shape::ball(&[-0.6], 0.6), Label::Custom("V".into())).unwrap();
            let k = make_nodeset(g, Shape::ball(&[1.0], 0.3), Label::Custom("K".into())).unwrap();
            let sigma = ucp_diagnostic(Some(&v), 0.7, Some(&k), &g).unwrap();
            assert!(sigma > 0.0 && sigma < prev, "N = {n}: {sigma}");
            prev = sigma;
        }
    }
}
