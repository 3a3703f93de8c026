//! Synthesize DN data from an unknown operator and recover its mollified coefficients.

use std::time::Instant;

use fraccal::{
    assemble_dn, make_nodeset, monomial_cutoff, recover_coefficients, ExteriorDictionary, ForwardProblem, Grid, GridFunction, Label,
    MultiIndex, PdoCoefficients, RecoveryConfig, Shape,
};

fn main() -> fraccal::Result<()> {
    let grid = Grid::new(1, 128, 4.0)?;
    let h = grid.spacing();
    let omega = make_nodeset(grid, Shape::ball(&[0.0], 1.5), Label::Omega)?;
    let w1 = make_nodeset(grid, Shape::cuboid(&[-3.9], &[-1.5 - 2.0 * h]), Label::W1)?;
    let w2 = make_nodeset(grid, Shape::cuboid(&[1.5 + 2.0 * h], &[3.8]), Label::W2)?;
    let taper = monomial_cutoff(&MultiIndex::zero(1), &Shape::ball(&[0.0], 1.5 - 9.0 * h), 8.0 * h, &omega)?;
    let gauss = |c: f64, amp: f64| GridFunction::from_fn(grid, |x| amp * (-(x[0] - c).powi(2) / 0.5).exp())?.mul(&taper);
    let coeffs = PdoCoefficients::new(grid, 1)
        .with(MultiIndex::zero(1), gauss(0.0, 0.8)?)?
        .with(MultiIndex::unit(1, 0), gauss(0.2, 0.5)?)?;
    let unknown = ForwardProblem::new(0.7, coeffs.clone(), omega.clone())?;
    let reference = ForwardProblem::new(0.7, PdoCoefficients::new(grid, 1), omega)?;
    let d1 = ExteriorDictionary::lattice(&w1, 3.0 * h, 1)?;
    let d2 = ExteriorDictionary::lattice(&w2, 3.0 * h, 1)?;

    let start = Instant::now();
    let measured = assemble_dn(&unknown, &d1, &d2)?;
    let rec = recover_coefficients(&measured, &reference, &d1, &d2, &RecoveryConfig::for_grid(&grid, 1))?;
    println!("{}x{} DN data, {} centres, {:.2?}", d1.len(), d2.len(), rec.centers.len(), start.elapsed());
    for (alpha, err) in rec.relative_errors(&coeffs)? {
        let r = rec.order_residuals[alpha.order() as usize];
        println!("alpha {}: relative error {err:.3e}, sweep residual {r:.2e}", alpha.label());
    }
    rec.write_csv(std::fs::File::create(std::env::temp_dir().join("recovered.csv"))?)?;
    Ok(())
}
