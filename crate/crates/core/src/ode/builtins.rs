use serde::Serialize;

use super::{OdeError, Rhs, SystemModel};
use crate::catalog::KAPPA;
use crate::domain::SynthesisResult;
use crate::exprlang::{parse, Env};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinName {
    Prototype,
    CascadeAbs,
    Regulation,
}

impl BuiltinName {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "prototype" => Some(Self::Prototype),
            "cascade_abs" => Some(Self::CascadeAbs),
            "regulation" => Some(Self::Regulation),
            _ => None,
        }
    }
}

fn need(params: &Env, name: &str) -> Result<f64, OdeError> {
    params.get(name).ok_or_else(|| OdeError::MissingParam(name.to_string()))
}

/// `ẋ₁ = -k x₁ + x₁² λ`, `λ̇ = -γ x₁²`, `V = x₁²`.
pub fn prototype(k: f64, gamma: f64) -> Result<SystemModel, OdeError> {
    let p = Env::new().with("k", k).with("gamma", gamma);
    SystemModel::from_strings("prototype", &["-k*x1 + x1^2*lambda"], "-gamma*x1^2", "x1^2", &p)
}

/// `ẋ₁ = -τ₁ x₁ + c₁ λ`, `λ̇ = -c₂ |x₁|`, `V = x₁²`.
pub fn cascade_abs(tau1: f64, c1: f64, c2: f64) -> Result<SystemModel, OdeError> {
    let p = Env::new().with("tau1", tau1).with("c1", c1).with("c2", c2);
    SystemModel::from_strings("cascade_abs", &["-tau1*x1 + c1*lambda"], "-c2*abs(x1)", "x1^2", &p)
}

/// Regulation plant `ẋ = -κ(x) + (x²+1)(f(θ) - f(θ̂))` with `f(θ) = D sin θ`,
/// written in the estimation error `λ = θ - θ̂`, and the synthesized law
/// `λ̇ = -γ(x²/2)`.
pub fn regulation(theta: f64, d: f64, synthesis: &SynthesisResult) -> Result<SystemModel, OdeError> {
    let p = Env::new().with("theta", theta).with("D", d);
    let kappa = KAPPA.replace('x', "x1");
    let x_rhs = parse(&format!("-{kappa} + (x1^2+1)*D*(sin(theta) - sin(theta - lambda))"))?.substitute(&|n| p.get(n));
    let v = parse("x1^2/2")?;
    SystemModel::new(
        "regulation",
        vec![
            Rhs::Expr(x_rhs),
            Rhs::Law {
                law: synthesis.gamma_fn.clone(),
                v: v.clone(),
                scale: -1.0,
            },
        ],
        v,
    )
}

/// Builtin by name with parameters taken from `params`.
pub fn builtin(name: BuiltinName, params: &Env, synthesis: Option<&SynthesisResult>) -> Result<SystemModel, OdeError> {
    match name {
        BuiltinName::Prototype => prototype(need(params, "k")?, need(params, "gamma")?),
        BuiltinName::CascadeAbs => cascade_abs(need(params, "tau1")?, need(params, "c1")?, need(params, "c2")?),
        BuiltinName::Regulation => {
            let s = synthesis.ok_or_else(|| OdeError::MissingParam("synthesis".to_string()))?;
            regulation(need(params, "theta")?, need(params, "D")?, s)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{integrate, StepConfig, StopReason};

    #[test]
    fn prototype_shape() {
        let sys = prototype(1.0, 0.1).unwrap();
        assert_eq!(sys.dim(), 2);
        let mut out = [0.0; 2];
        sys.eval_rhs(0.0, &[2.0, 0.5], &mut out).unwrap();
        assert_eq!(out, [-2.0 + 2.0, -0.4]);
        assert_eq!(sys.v_of(&[3.0]).unwrap(), 9.0);
    }

    #[test]
    fn prototype_escapes_in_finite_time() {
        // frozen λ = c: ẋ = -k x + c x² blows up at t = ln(c x0 / (c x0 - k)) / k
        let (k, c, x0) = (1.0, 2.0, 1.0);
        let sys = prototype(k, 0.0).unwrap();
        let tr = integrate(&sys, &[x0, c], &StepConfig::adaptive(5.0)).unwrap();
        assert!(matches!(tr.stop, StopReason::Blowup | StopReason::StepCollapse));
        let expect = (c * x0 / (c * x0 - k)).ln() / k;
        assert!((tr.events.blowup_time.unwrap() - expect).abs() < 1e-3);
    }

    #[test]
    fn prototype_lambda_never_increases() {
        let sys = prototype(1.0, 0.1).unwrap();
        for init in [[0.5, 0.3], [-0.8, 0.1], [0.2, -0.4]] {
            let tr = integrate(&sys, &init, &StepConfig::adaptive(20.0)).unwrap();
            let lam: Vec<f64> = tr.lambda().collect();
            assert!(lam.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn cascade_shape() {
        let sys = cascade_abs(1.0, 1.0, 0.2).unwrap();
        let mut out = [0.0; 2];
        sys.eval_rhs(0.0, &[-0.5, 0.3], &mut out).unwrap();
        assert_eq!(out, [0.5 + 0.3, -0.1]);
    }

    #[test]
    fn missing_parameters() {
        let p = Env::new().with("k", 1.0);
        assert_eq!(
            builtin(BuiltinName::Prototype, &p, None).unwrap_err(),
            OdeError::MissingParam("gamma".to_string())
        );
        assert!(matches!(
            builtin(BuiltinName::Regulation, &Env::new().with("theta", 0.3).with("D", 1.0), None),
            Err(OdeError::MissingParam(_))
        ));
    }
}
