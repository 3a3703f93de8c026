//! Manufactured solution: pick u supported in the domain, set F = A u there, and solve
//! with both the dense and the iterative path.

use fraccal::operator::{SolveMethod, SolverOptions};
use fraccal::{bump, make_nodeset, BumpSpec, ForwardProblem, Grid, GridFunction, Label, MultiIndex, PdoCoefficients, Shape};

fn main() -> fraccal::Result<()> {
    let grid = Grid::new(1, 128, 4.0)?;
    let omega = make_nodeset(grid, Shape::ball(&[0.0], 1.5), Label::Omega)?;
    let a0 = bump(&grid, &BumpSpec::new(&[0.0], 1.2), Some(&omega))?.scale(0.5);
    let a1 = bump(&grid, &BumpSpec::new(&[0.2], 1.0), Some(&omega))?.scale(0.3);
    let coeffs = PdoCoefficients::new(grid, 1).with(MultiIndex::zero(1), a0)?.with(MultiIndex::unit(1, 0), a1)?;
    let dense = ForwardProblem::new(0.7, coeffs, omega.clone())?;

    let exact = bump(&grid, &BumpSpec::new(&[0.1], 1.0), Some(&omega))?;
    let source = dense.apply(&exact)?.mul(&GridFunction::from_fn(grid, |x| if x[0].abs() < 1.5 { 1.0 } else { 0.0 })?)?;
    let zero = GridFunction::zeros(grid);

    let d = dense.solve_forward(&zero, Some(&source))?;
    let iterative = dense.clone().with_options(SolverOptions {
        method: SolveMethod::Iterative,
        iterative_tol: 1e-13,
        ..Default::default()
    });
    let it = iterative.solve_forward(&zero, Some(&source))?;

    let err = |u: &GridFunction| u.axpy(-1.0, &exact).map(|e| e.max_abs() / exact.max_abs());
    println!("dense:     residual {:.2e}, relative error {:.2e}, cond {:.2e}", d.residual, err(&d.u)?, d.condition_estimate);
    println!("iterative: residual {:.2e}, relative error {:.2e}, {} iterations", it.residual, err(&it.u)?, it.iterations);
    Ok(())
}
