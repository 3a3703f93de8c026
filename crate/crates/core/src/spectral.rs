//! Fourier symbol calculus on the periodic grid.
//!
//! Every operator here is a Fourier multiplier `F^{-1} m(xi) F` with a symbol
//! that is Hermitian in `xi`, so real fields map to real fields. The derivative
//! symbol `(i xi)^alpha` is zeroed on the Nyquist bin of every differentiated
//! axis; that keeps derivatives real and exactly skew-adjoint on the grid.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, MultiIndex};

type PlanKey = (usize, bool);

fn plan(len: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut cache = cache.lock().expect("fft plan cache poisoned");
    cache
        .entry((len, forward))
        .or_insert_with(|| {
            let dir = if forward { FftDirection::Forward } else { FftDirection::Inverse };
            FftPlanner::new().plan_fft(len, dir)
        })
        .clone()
}

fn transform_in_place(grid: &Grid, data: &mut [Complex64], forward: bool) {
    let n = grid.points();
    let fft = plan(n, forward);
    match grid.dims() {
        1 => fft.process(data),
        _ => {
            // rows are contiguous
            fft.process(data);
            let mut column = vec![Complex64::new(0.0, 0.0); n];
            for j in 0..n {
                for i in 0..n {
                    column[i] = data[i * n + j];
                }
                fft.process(&mut column);
                for i in 0..n {
                    data[i * n + j] = column[i];
                }
            }
        }
    }
}

/// Unnormalized forward DFT of a real field.
pub fn forward_transform(u: &GridFunction) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = u.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_in_place(u.grid(), &mut data, true);
    data
}

/// Inverse DFT (normalized by `1/N^n`), keeping the real part.
pub fn inverse_transform_real(grid: &Grid, mut spectrum: Vec<Complex64>) -> GridFunction {
    transform_in_place(grid, &mut spectrum, false);
    let scale = 1.0 / grid.len() as f64;
    GridFunction::from_raw(*grid, spectrum.into_iter().map(|c| c.re * scale).collect())
}

/// A Fourier multiplier on the periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Symbol {
    /// `|xi|^{2s}`
    FracLaplacian(f64),
    /// `<xi>^r = (1 + |xi|^2)^{r/2}`
    Bessel(f64),
    /// `(i xi)^alpha`, Nyquist-zeroed on differentiated axes.
    Derivative(MultiIndex),
}

impl Symbol {
    /// Value at the FFT bin with per-axis indices `bins`.
    pub fn eval(&self, grid: &Grid, bins: [usize; 2]) -> Complex64 {
        let dims = grid.dims();
        let xi2 = || (0..dims).map(|k| grid.frequency(bins[k]).powi(2)).sum::<f64>();
        match self {
            Symbol::FracLaplacian(s) => Complex64::new(xi2().powf(*s), 0.0),
            Symbol::Bessel(r) => Complex64::new((1.0 + xi2()).powf(0.5 * r), 0.0),
            Symbol::Derivative(alpha) => {
                let mut value = Complex64::new(1.0, 0.0);
                for (axis, &a) in alpha.entries().iter().enumerate() {
                    if a == 0 {
                        continue;
                    }
                    if grid.is_nyquist(bins[axis]) {
                        return Complex64::new(0.0, 0.0);
                    }
                    value *= Complex64::new(0.0, grid.frequency(bins[axis])).powu(a);
                }
                value
            }
        }
    }

    fn values(&self, grid: &Grid) -> Vec<Complex64> {
        (0..grid.len()).map(|i| self.eval(grid, grid.multi(i))).collect()
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        match self {
            Symbol::FracLaplacian(s) if !(s.is_finite() && *s >= 0.0) => {
                Err(Error::InvalidArgument(format!("fractional order must be finite and >= 0, got {s}")))
            }
            Symbol::Bessel(r) if !r.is_finite() => {
                Err(Error::InvalidArgument(format!("Bessel order must be finite, got {r}")))
            }
            Symbol::Derivative(alpha) if alpha.dims() != grid.dims() => Err(Error::InvalidMultiIndex(
                format!("multi-index {alpha} does not match grid dimension {}", grid.dims()),
            )),
            _ => Ok(()),
        }
    }
}

/// Applies a Fourier multiplier to a real field.
pub fn apply_symbol(u: &GridFunction, symbol: &Symbol) -> Result<GridFunction> {
    symbol.check(u.grid())?;
    let grid = *u.grid();
    let mut spec = forward_transform(u);
    for (i, c) in spec.iter_mut().enumerate() {
        *c *= symbol.eval(&grid, grid.multi(i));
    }
    Ok(inverse_transform_real(&grid, spec))
}

/// `(-Delta)^s u`
pub fn frac_laplacian(u: &GridFunction, s: f64) -> Result<GridFunction> {
    apply_symbol(u, &Symbol::FracLaplacian(s))
}

/// Bessel potential `J^r u`.
pub fn bessel_potential(u: &GridFunction, r: f64) -> Result<GridFunction> {
    apply_symbol(u, &Symbol::Bessel(r))
}

/// Spectral partial derivative `d^alpha u` (real derivative, symbol `(i xi)^alpha`).
pub fn derivative(u: &GridFunction, alpha: &MultiIndex) -> Result<GridFunction> {
    if alpha.order() == 0 {
        Symbol::Derivative(alpha.clone()).check(u.grid())?;
        return Ok(u.clone());
    }
    apply_symbol(u, &Symbol::Derivative(alpha.clone()))
}

/// Bilinear pairing `h^n sum u v`.
pub fn pairing(u: &GridFunction, v: &GridFunction) -> Result<f64> {
    if u.grid() != v.grid() {
        return Err(Error::GridMismatch);
    }
    Ok(u.grid().cell_volume() * dot(u.values(), v.values()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `h^n sum a (x y)`; the product `x y` is formed first, so swapping `x` and
/// `y` gives a bit-identical result.
pub(crate) fn weighted_triple(a: &[f64], x: &[f64], y: &[f64]) -> f64 {
    a.iter().zip(x.iter().zip(y)).map(|(w, (p, q))| w * (p * q)).sum()
}

pub fn l2_norm(u: &GridFunction) -> f64 {
    (u.grid().cell_volume() * dot(u.values(), u.values())).sqrt()
}

/// `||u||_{H^r} = ||J^r u||_{L^2}`, evaluated on the spectral side.
pub fn sobolev_norm(u: &GridFunction, r: f64) -> f64 {
    let grid = *u.grid();
    let spec = forward_transform(u);
    let symbol = Symbol::Bessel(2.0 * r);
    let sum: f64 = spec
        .iter()
        .enumerate()
        .map(|(i, c)| symbol.eval(&grid, grid.multi(i)).re * c.norm_sqr())
        .sum();
    (grid.cell_volume() / grid.len() as f64 * sum).sqrt()
}

/// Column of the circulant matrix of `symbol` at node 0: `(M u)_i = sum_j k[i - j] u_j`.
pub fn convolution_kernel(grid: &Grid, symbol: &Symbol) -> Result<Vec<f64>> {
    symbol.check(grid)?;
    Ok(inverse_transform_real(grid, symbol.values(grid)).into_values())
}

/// Flat index of the periodic offset `node_i - node_j`.
pub(crate) fn offset_index(grid: &Grid, i: usize, j: usize) -> usize {
    let n = grid.points();
    let a = grid.multi(i);
    let b = grid.multi(j);
    let mut d = [0usize; 2];
    for k in 0..grid.dims() {
        d[k] = (a[k] + n - b[k]) % n;
    }
    grid.flat(d)
}

/// Dense block `M[rows, cols]` of the multiplier matrix.
pub fn multiplier_block(grid: &Grid, symbol: &Symbol, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
    let kernel = convolution_kernel(grid, symbol)?;
    Ok(kernel_block(grid, &kernel, rows, cols))
}

pub(crate) fn kernel_block(grid: &Grid, kernel: &[f64], rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| kernel[offset_index(grid, rows[r], cols[c])])
}
