//! DN matrix over two exterior windows and its adjoint: <Lambda f, g> = <f, Lambda* g>.

use fraccal::dn::duality_deviation;
use fraccal::{
    assemble_dn, assemble_dn_adjoint, bump, make_nodeset, BumpSpec, ExteriorDictionary, ForwardProblem, Grid, Label, MultiIndex,
    PdoCoefficients, Shape,
};

fn main() -> fraccal::Result<()> {
    let grid = Grid::new(1, 128, 4.0)?;
    let h = grid.spacing();
    let omega = make_nodeset(grid, Shape::ball(&[0.0], 1.5), Label::Omega)?;
    let w1 = make_nodeset(grid, Shape::cuboid(&[-3.9], &[-1.5 - 2.0 * h]), Label::W1)?;
    let w2 = make_nodeset(grid, Shape::cuboid(&[1.5 + 2.0 * h], &[3.8]), Label::W2)?;
    let a = bump(&grid, &BumpSpec::new(&[0.0], 1.2), Some(&omega))?;
    let coeffs = PdoCoefficients::new(grid, 1).with(MultiIndex::unit(1, 0), a.scale(0.4))?;
    let p = ForwardProblem::new(0.7, coeffs, omega)?;

    let d1 = ExteriorDictionary::lattice(&w1, 3.0 * h, 1)?.prefix(16)?;
    let d2 = ExteriorDictionary::lattice(&w2, 3.0 * h, 1)?.prefix(16)?;
    let dn = assemble_dn(&p, &d1, &d2)?;
    let star = assemble_dn_adjoint(&p, &d2, &d1)?;
    println!("{}x{} DN matrix, duality deviation {:.2e}", dn.rows(), dn.cols(), duality_deviation(&dn, &star)?);
    dn.write_csv(std::io::stdout().lock())?;
    Ok(())
}
