//! Runge approximation of an interior bump by exterior data over nested dictionaries.

use fraccal::recover::Dynamics;
use fraccal::{bump, make_nodeset, runge_approximate, BumpSpec, ExteriorDictionary, ForwardProblem, Grid, Label, PdoCoefficients, RungeOptions, Shape};

fn main() -> fraccal::Result<()> {
    let grid = Grid::new(1, 128, 4.0)?;
    let h = grid.spacing();
    let omega = make_nodeset(grid, Shape::ball(&[0.0], 1.5), Label::Omega)?;
    let w1 = make_nodeset(grid, Shape::cuboid(&[-3.9], &[-1.5 - 2.0 * h]), Label::W1)?;
    let p = ForwardProblem::new(0.7, PdoCoefficients::new(grid, 0), omega.clone())?;
    let target = bump(&grid, &BumpSpec::new(&[0.0], 1.0), Some(&omega))?;
    let dict = ExteriorDictionary::lattice(&w1, 3.0 * h, 1)?;
    let options = RungeOptions { lambda_rel: 0.0, ..Default::default() };
    println!("size  error(H^s)  relative L2");
    for k in [4, 8, 16, dict.len()] {
        let r = runge_approximate(&p, &target, &dict.prefix(k)?, Dynamics::Forward, &options)?;
        println!("{k:>4}  {:.4e}  {:.4e}", r.error, r.relative_l2);
    }
    Ok(())
}
