//! Fixtures shared by the `kernels` benchmarks.

use invarlab_core::catalog::{example3_a, example3_bounds};
use invarlab_core::ode::{prototype, SystemModel};
use invarlab_core::{BoundaryCandidate, CertificateProblem, ScalarFn};

/// Prototype cone problem at `p = 1`, level just inside the feasible one.
pub fn cone_problem() -> CertificateProblem {
    let a = 0.99 * example3_a(1.0, 1.0, 0.1);
    CertificateProblem::new(
        example3_bounds(1.0, 0.1, 10.0),
        BoundaryCandidate::linear(1.0).expect("positive slope"),
        a,
        0.0,
    )
}

pub fn oscillating() -> ScalarFn {
    ScalarFn::parse("y*(2 + sin(12*y))", "y").expect("fixture parses")
}

pub fn prototype_system() -> SystemModel {
    prototype(1.0, 0.1).expect("prototype builds")
}

pub const EXPRESSION: &str = "sqrt(2*V)*piecewise(sqrt(2*V)>1: 1, else: sqrt(2*V)^3) + 0.5*tanh(V)*exp(-V)";
