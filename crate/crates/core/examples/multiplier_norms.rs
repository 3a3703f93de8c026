//! Sobolev multiplier norms ||f||_{r,t}: symmetry, monotonicity and growth under refinement.

use fraccal::analysis::{check_multiplier_monotonicity, check_multiplier_symmetry, multiplier_norm, triviality_scan};
use fraccal::{Grid, GridFunction};

fn main() -> fraccal::Result<()> {
    let grid = Grid::new(1, 64, 4.0)?;
    let f = GridFunction::from_fn(grid, |x| (-x[0] * x[0]).exp())?;
    println!("||f||_(0.5,0.5) = {:.6}", multiplier_norm(&f, 0.5, 0.5)?.norm_value);
    println!("symmetry deviation (0.6, -0.4): {:.2e}", check_multiplier_symmetry(&f, 0.6, -0.4)?);
    let m = check_multiplier_monotonicity(&f, 0.2, -0.1, 0.4, 0.3)?;
    println!("monotonicity: {:.6} <= {:.6}: {}", m.base, m.stronger, m.holds);
    let scan = triviality_scan(Grid::new(1, 32, 4.0)?, |g| GridFunction::from_fn(*g, |x| (-x[0] * x[0]).exp()), 0.0, 0.5, 3)?;
    for (n, v) in scan.points.iter().zip(&scan.norms) {
        println!("N = {n:>4}: ||f||_(0,0.5) = {v:.6}");
    }
    Ok(())
}
