//! Fourier symbols on a periodic grid: eigenfunctions, composition and adjointness.

use fraccal::spectral::{bessel_potential, derivative, frac_laplacian, pairing};
use fraccal::{Grid, GridFunction, MultiIndex};

fn main() -> fraccal::Result<()> {
    let grid = Grid::new(1, 256, 4.0)?;
    let s = 0.7;
    let k = 5.0 * std::f64::consts::PI / grid.half_length();
    let wave = GridFunction::from_fn(grid, |x| (k * x[0]).sin())?;

    let lap = frac_laplacian(&wave, s)?;
    let err = lap.axpy(-k.powf(2.0 * s), &wave)?.max_abs();
    println!("(-Delta)^s sin(kx) = |k|^(2s) sin(kx): max deviation {err:.2e}");

    let twice = frac_laplacian(&frac_laplacian(&wave, 0.3)?, 0.4)?;
    println!("composition 0.3 + 0.4 vs 0.7: {:.2e}", twice.axpy(-1.0, &lap)?.max_abs());

    let u = GridFunction::from_fn(grid, |x| (-x[0] * x[0]).exp())?;
    let dx = MultiIndex::unit(1, 0);
    let lhs = pairing(&derivative(&u, &dx)?, &wave)?;
    let rhs = -pairing(&u, &derivative(&wave, &dx)?)?;
    println!("<Du, v> = {lhs:.12}, -<u, Dv> = {rhs:.12}");

    let j = bessel_potential(&u, 1.0)?;
    let back = bessel_potential(&j, -1.0)?;
    println!("J^-1 J^1 u - u: {:.2e}", back.axpy(-1.0, &u)?.max_abs());
    Ok(())
}
