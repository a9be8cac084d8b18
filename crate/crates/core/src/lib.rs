//! Bootstrap percolation on Z^d and the torus: exact dynamics, exhaustive
//! extremal certificates for protected sets, closed-form quantities, and
//! seeded Monte Carlo experiments.

pub mod dynamics;
pub mod extremal;
pub mod formulas;
pub mod lattice;
pub mod montecarlo;
pub mod verify;
