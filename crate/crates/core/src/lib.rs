//! Numerical laboratory for Q-valued Dirichlet minimizers.
//!
//! The crate discretizes multi-valued maps on cubic lattices, relaxes them
//! toward energy minimizers, and measures mollified frequency-type
//! quantities, quantitative strata and beta-number sums on the results.

pub mod betareif;
pub mod error;
pub mod jacobi;
pub mod lattice;
pub mod monotone;
pub mod qspace;
pub mod solver;
pub mod strata;
pub mod sum;
pub mod targets;

pub use error::{Error, Result};
pub use lattice::{LatticeDomain, NodeKind, QField};
pub use qspace::QPoint;
pub use targets::TargetManifold;
