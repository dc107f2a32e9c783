//! Positive-invariance certificates for cascades with an unstable scalar
//! subsystem: bound functions, certificate margins, domain estimates,
//! envelope-based tuning-law synthesis and simulation checks.

pub mod bounds;
pub mod catalog;
pub mod certificates;
pub mod domain;
pub mod envelope;
pub mod exprlang;
pub mod grid;
pub mod ode;

pub use bounds::{BoundSet, FnError, ScalarFn, StableBoundSet, UnstableBoundSet};
pub use exprlang::{parse, Env, Expr};
pub use certificates::{BoundaryCandidate, CertificateProblem, CertificateVerdict, CheckOptions, MarginKind};
pub use grid::GridFunction;

/// Sample count for the class and ordering checks on bound functions.
pub const DEFAULT_VALIDATION_GRID: usize = 1024;
