//! Finite-element solvers for elliptic interface problems on hierarchical
//! interface networks in the unit square.
//!
//! The crate builds Cantor-type and randomized layered interface networks,
//! nested triangulations resolving them, broken P1 spaces with interface
//! jump penalties weighted by `(1+c)^k C_k`, and a multilevel patch
//! preconditioner for conjugate gradients. [`analysis`] holds norms, the
//! homogenization-error study and property checks, [`cli`] the experiment
//! driver behind the `fractal-homog` binary.

pub mod analysis;
pub mod assembly;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod mesh;
pub mod problem;
pub mod solve;
pub mod sparse;

pub use error::{Error, Result};
