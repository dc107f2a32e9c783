//! Bound sets and closed forms of the worked examples: the prototype
//! `ẋ₁ = -k x₁ + x₁² λ, λ̇ = -γ x₁²`, its escape variant, the `|x₁|` cascade
//! and the saturated-cubic regulation plant.

use crate::bounds::{BoundSet, ScalarFn, StableBoundSet, UnstableBoundSet};
use crate::certificates::SmallGainData;
use crate::exprlang::Env;

fn f(text: &str, var: &str, params: &Env) -> ScalarFn {
    ScalarFn::parse_with(text, var, params).expect("catalog expression")
}

/// Prototype bounds with `V = x₁²`: `α = -2kV`, `β = 2V^(3/2)`, `φ(s) = s`,
/// `δ(s) = γs²`, `ξ = 0`, `α̲ = ᾱ = s²`.
pub fn example3_bounds(k: f64, gamma: f64, v_max: f64) -> BoundSet {
    let params = Env::new().with("k", k).with("gamma", gamma);
    BoundSet::new(
        StableBoundSet {
            alpha_lower: f("s^2", "s", &params),
            alpha_upper: f("s^2", "s", &params),
            alpha: f("-2*k*V", "V", &params),
            beta: f("2*V^(3/2)", "V", &params),
            phi: f("s", "s", &params),
        },
        UnstableBoundSet {
            delta: f("gamma*s^2", "s", &params),
            xi: f("0", "s", &params),
        },
        v_max,
    )
}

/// Bounds with every drift and coupling term identically zero.
pub fn zero_bounds(v_max: f64) -> BoundSet {
    let e = Env::new();
    BoundSet::new(
        StableBoundSet {
            alpha_lower: f("s", "s", &e),
            alpha_upper: f("s", "s", &e),
            alpha: f("0", "V", &e),
            beta: f("0", "V", &e),
            phi: f("s", "s", &e),
        },
        UnstableBoundSet {
            delta: f("0", "s", &e),
            xi: f("0", "s", &e),
        },
        v_max,
    )
}

/// Largest boundedness level of the cone `λ >= pV` for the prototype.
pub fn example3_a(p: f64, k: f64, gamma: f64) -> f64 {
    let inner = (k - gamma / (2.0 * p)) / p;
    if inner <= 0.0 {
        0.0
    } else {
        inner.powf(2.0 / 3.0)
    }
}

/// Upper end of the slopes `p` whose escape certificate holds for the
/// prototype: the positive root in `√p` of `2k p + m √p - γ = 0` after
/// bounding `2√V(pV - ε)` below by its minimum, `m = √(16ε³/27)`.
pub fn escape_p_max(k: f64, gamma: f64, eps: f64) -> f64 {
    let m = (16.0 * eps.powi(3) / 27.0).sqrt();
    let root = ((m * m + 8.0 * gamma * k).sqrt() - m) / (4.0 * k);
    if root > 0.0 {
        root * root
    } else {
        0.0
    }
}

/// Small-gain data of the `|x₁|` cascade `ẋ₁ = -τ₁x₁ + c₁λ, λ̇ = -c₂|x₁|`
/// with `V = x₁²`.
pub fn cascade_smallgain(tau1: f64, c1: f64, c2: f64) -> SmallGainData {
    SmallGainData {
        k: 2.0 * tau1,
        sigma: 1.0,
        b: c1,
        p_lower: 1.0,
        p_upper: 1.0,
        gamma: c2,
    }
}

/// The saturated cubic `κ` of the regulation plant, as an expression in `x`.
pub const KAPPA: &str = "piecewise(x>1: 1, x<-1: -1, else: x^3)";

/// Bound data of the regulation plant `ẋ = -κ(x) + (x²+1)(f(θ) - f(θ̂))`
/// with `V = x²/2` and `|f(θ) - f(θ')| <= D|θ - θ'|`:
/// `α₀(V) = √(2V) κ(√(2V))`, `β(V) = D√(2V)(2V+1)`, `φ(s) = s`.
pub struct RegulationBounds {
    pub alpha0: ScalarFn,
    pub beta: ScalarFn,
    pub phi: ScalarFn,
    pub phi_lipschitz: f64,
}

pub fn regulation_bounds(d: f64) -> RegulationBounds {
    let params = Env::new().with("D", d);
    let kappa_of_r = KAPPA.replace('x', "sqrt(2*V)");
    RegulationBounds {
        alpha0: f(&format!("sqrt(2*V)*{kappa_of_r}"), "V", &params),
        beta: f("D*sqrt(2*V)*(2*V+1)", "V", &params),
        phi: f("s", "s", &params),
        phi_lipschitz: 1.0,
    }
}
