//! The integral identity relating DN differences to interior pairings.

use fraccal::analysis::random_smooth_field;
use fraccal::{alessandrini, bump, make_nodeset, BumpSpec, ExteriorDictionary, ForwardProblem, Grid, Label, MultiIndex, PdoCoefficients, Shape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fraccal::Result<()> {
    let grid = Grid::new(1, 128, 4.0)?;
    let h = grid.spacing();
    let omega = make_nodeset(grid, Shape::ball(&[0.0], 1.5), Label::Omega)?;
    let w1 = make_nodeset(grid, Shape::cuboid(&[-3.9], &[-1.5 - 2.0 * h]), Label::W1)?;
    let w2 = make_nodeset(grid, Shape::cuboid(&[1.5 + 2.0 * h], &[3.8]), Label::W2)?;
    let taper = bump(&grid, &BumpSpec::new(&[0.0], 1.3), Some(&omega))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut random = || -> fraccal::Result<PdoCoefficients> {
        let mut c = PdoCoefficients::new(grid, 1);
        for alpha in MultiIndex::up_to_order(1, 1) {
            c.insert(alpha, random_smooth_field(&grid, &mut rng, 4).mul(&taper)?)?;
        }
        Ok(c)
    };
    let p1 = ForwardProblem::new(0.7, random()?, omega.clone())?;
    let p2 = ForwardProblem::new(0.7, random()?, omega)?;
    let f1 = ExteriorDictionary::lattice(&w1, 3.0 * h, 4)?.combine(&[1.0, -0.5, 0.25, 0.3, 0.1, -0.2, 0.7, 0.4])?;
    let f2 = bump(&grid, &BumpSpec::new(&[2.5], 0.5), Some(&w2))?;
    let rep = alessandrini(&p1, &p2, &f1, &f2)?;
    println!("lhs {:.15e}\nrhs {:.15e}\nresidual {:.2e}", rep.lhs, rep.rhs, rep.residual());
    Ok(())
}
