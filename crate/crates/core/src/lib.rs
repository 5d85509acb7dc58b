//! Minimizing-movement solver and certification toolkit for doubly nonlinear
//! parabolic systems on nondecreasing noncylindrical domains.

pub mod algebra;
pub mod check;
pub mod geometry;
pub mod grid;
pub mod integrand;
pub mod minimizer;
pub mod scheme;
pub mod mollify;
pub mod exact;
pub mod verify;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
