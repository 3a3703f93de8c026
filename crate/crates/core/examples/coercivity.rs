//! Coercivity certificates: B(v, v) >= c0 ||v||^2 - mu ||v||_{L2}^2 on the domain.

use fraccal::operator::{CoercivityNorm, CoercivityOptions};
use fraccal::{bump, coercivity_estimate, make_nodeset, BumpSpec, ForwardProblem, Grid, Label, MultiIndex, PdoCoefficients, Shape};

fn main() -> fraccal::Result<()> {
    let grid = Grid::new(1, 128, 4.0)?;
    let omega = make_nodeset(grid, Shape::ball(&[0.0], 1.5), Label::Omega)?;
    let free = ForwardProblem::new(0.7, PdoCoefficients::new(grid, 1), omega.clone())?;
    let homogeneous = CoercivityOptions { norm: CoercivityNorm::Homogeneous, ..Default::default() };
    let c = coercivity_estimate(&free, &homogeneous)?;
    println!("P = 0, homogeneous norm: c0 = {:.6}, mu = {}", c.c0, c.mu);

    let a = bump(&grid, &BumpSpec::new(&[0.0], 1.2), Some(&omega))?;
    let coeffs = PdoCoefficients::new(grid, 1)
        .with(MultiIndex::zero(1), a.scale(-20.0))?
        .with(MultiIndex::unit(1, 0), a.scale(3.0))?;
    let p = ForwardProblem::new(0.7, coeffs, omega.clone())?;
    let cert = coercivity_estimate(&p, &CoercivityOptions::default())?;
    println!("perturbed, Bessel norm: c0 = {:.4}, mu = {:.4}", cert.c0, cert.mu);
    let v = bump(&grid, &BumpSpec::new(&[0.3], 0.8), Some(&omega))?;
    println!("slack on a bump: {:.4e}", cert.slack(&p, &v)?);
    Ok(())
}
