//! Inductive recovery with exact interior fields: isolates mollification and peeling.

use fraccal::recover::relative_l2;
use fraccal::{make_nodeset, monomial_cutoff, recover_oracle_mode, ForwardProblem, Grid, GridFunction, Label, MultiIndex, PdoCoefficients, RecoveryConfig, Shape};

fn main() -> fraccal::Result<()> {
    let grid = Grid::new(1, 128, 4.0)?;
    let h = grid.spacing();
    let omega = make_nodeset(grid, Shape::ball(&[0.0], 1.5), Label::Omega)?;
    let taper = monomial_cutoff(&MultiIndex::zero(1), &Shape::ball(&[0.0], 1.5 - 9.0 * h), 8.0 * h, &omega)?;
    let gauss = |c: f64, amp: f64| GridFunction::from_fn(grid, |x| amp * (-(x[0] - c).powi(2) / 0.5).exp())?.mul(&taper);
    let coeffs = PdoCoefficients::new(grid, 1)
        .with(MultiIndex::zero(1), gauss(0.0, 0.8)?)?
        .with(MultiIndex::unit(1, 0), gauss(0.2, 0.5)?)?;
    let truth = ForwardProblem::new(0.7, coeffs.clone(), omega.clone())?;
    let reference = ForwardProblem::new(0.7, PdoCoefficients::new(grid, 1), omega)?;

    let config = RecoveryConfig::for_grid(&grid, 1);
    let rec = recover_oracle_mode(&truth, &reference, &config)?;
    for (alpha, err) in rec.relative_errors(&coeffs)? {
        println!("alpha {}: relative error {err:.3e} over {} centres", alpha.label(), rec.centers.len());
    }
    let fine = recover_oracle_mode(&truth, &reference, &RecoveryConfig { rho: 3.0 * h, ..config.clone() })?;
    let alpha = MultiIndex::unit(1, 0);
    let coarse_err = rec.relative_errors(&coeffs)?[1].1;
    let fine_err = fine.relative_errors_at(&coeffs, &rec.centers)?[1].1;
    println!("rho 6h -> 3h on common centres: {coarse_err:.3e} -> {fine_err:.3e}");

    let unpeeled = recover_oracle_mode(&truth, &reference, &RecoveryConfig { peel: false, ..config })?;
    let truth1 = fraccal::recover::mollified_truth(&coeffs, &alpha, &rec.centers, rec.rho)?;
    println!("without peeling: {:.3e}", relative_l2(&unpeeled.values(&alpha), &truth1));
    Ok(())
}
