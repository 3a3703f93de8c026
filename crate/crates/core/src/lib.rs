//! Exterior value problems and coefficient recovery for operators
//! `(-Delta)^s + sum_{|alpha| <= m} a_alpha D^alpha` on a periodic grid.
//!
//! - [`spectral`]: FFT symbols, pairings, Sobolev norms and dense multiplier blocks.
//! - [`geometry`]: node sets for the domain and the exterior windows, bumps and cutoffs.
//! - [`operator`]: coefficients, forward and adjoint solves, invertibility and coercivity.
//! - [`dn`]: exterior dictionaries, DN matrices, duality and the integral identity.
//! - [`analysis`]: multiplier norms, Poincare constants, Kato-Ponce ratios, UCP diagnostics.
//! - [`recover`]: Runge least squares and inductive reconstruction from DN data.
//! - [`config`], [`commands`]: TOML experiments and the `fraccal` subcommands.
//!
//! ```
//! use fraccal::{make_nodeset, ForwardProblem, Grid, GridFunction, Label, PdoCoefficients, Shape};
//!
//! let grid = Grid::new(1, 64, 4.0).unwrap();
//! let omega = make_nodeset(grid, Shape::ball(&[0.0], 1.5), Label::Omega).unwrap();
//! let p = ForwardProblem::new(0.7, PdoCoefficients::new(grid, 0), omega).unwrap();
//! let f = GridFunction::from_fn(grid, |x| if x[0].abs() > 2.0 { 1.0 } else { 0.0 }).unwrap();
//! let u = p.solve_forward(&f, None).unwrap();
//! assert!(u.residual < 1e-10);
//! ```

pub mod analysis;
pub mod commands;
pub mod config;
pub mod dn;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod operator;
pub mod recover;
pub mod spectral;

pub use config::ExperimentConfig;
pub use dn::{alessandrini, assemble_dn, assemble_dn_adjoint, DnMatrix, ExteriorDictionary};
pub use error::{Error, Result};
pub use geometry::{bump, make_nodeset, monomial_cutoff, BumpSpec, Label, Layout, NodeSet, Shape};
pub use grid::{Grid, GridFunction, MultiIndex, Point};
pub use operator::{coercivity_estimate, ForwardProblem, PdoCoefficients, SolveMethod, SolverOptions};
pub use recover::{recover_coefficients, recover_oracle_mode, runge_approximate, RecoveryConfig, RungeOptions};
pub use spectral::Symbol;
