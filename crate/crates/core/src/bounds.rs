//! Comparison functions and the bound package that defines a certificate
//! problem: upper bounds on the stable part's Lyapunov derivative and the
//! sign/size bounds on the scalar unstable part.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::exprlang::{self, differentiate, fd_derivative, DiffError, EvalError, Expr, ParseError, ScalarEval};
use crate::grid::{uniform_nodes, GridError, GridFunction};
use crate::{Env, DEFAULT_VALIDATION_GRID};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FnError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("expression `{expr}` has free variables {vars:?} besides `{var}`")]
    FreeVariables {
        expr: String,
        var: String,
        vars: Vec<String>,
    },
}

#[derive(Debug, Clone)]
enum Repr {
    Expr {
        expr: Expr,
        var: String,
        deriv: Option<Expr>,
    },
    Table {
        grid: GridFunction,
        clamp: bool,
    },
    Product(Arc<ScalarFn>, Arc<ScalarFn>),
    Scaled(f64, Arc<ScalarFn>),
    Compose {
        outer: Arc<ScalarFn>,
        inner: Arc<ScalarFn>,
    },
}

/// A real function of one variable.
///
/// Usually an expression in a single named variable, with its symbolic
/// derivative cached when the tree is smooth. Sampled envelopes and the
/// products/compositions built during synthesis use the other forms.
#[derive(Debug, Clone)]
pub struct ScalarFn {
    repr: Repr,
}

impl ScalarFn {
    /// Parses `text` as a function of `var`. Every other identifier must be
    /// bound in `params`; parameters are substituted as constants.
    pub fn parse_with(text: &str, var: &str, params: &Env) -> Result<Self, FnError> {
        let expr = exprlang::parse(text)?;
        Self::from_expr(expr.substitute(&|n| if n == var { None } else { params.get(n) }), var)
    }

    pub fn parse(text: &str, var: &str) -> Result<Self, FnError> {
        Self::parse_with(text, var, &Env::new())
    }

    pub fn from_expr(expr: Expr, var: &str) -> Result<Self, FnError> {
        let extra: Vec<String> = expr.free_vars().into_iter().filter(|v| v != var).collect();
        if !extra.is_empty() {
            return Err(FnError::FreeVariables {
                expr: expr.to_string(),
                var: var.to_string(),
                vars: extra,
            });
        }
        let deriv = differentiate(&expr, var).ok();
        Ok(ScalarFn {
            repr: Repr::Expr {
                expr,
                var: var.to_string(),
                deriv,
            },
        })
    }

    pub fn constant(c: f64) -> Self {
        Self::from_expr(Expr::Num(c), "s").expect("constant has no free variables")
    }

    /// Piecewise-linear function through grid samples. With `clamp`, the
    /// argument is clamped into the grid interval instead of erroring.
    pub fn tabulated(grid: GridFunction, clamp: bool) -> Self {
        ScalarFn {
            repr: Repr::Table { grid, clamp },
        }
    }

    pub fn product(a: ScalarFn, b: ScalarFn) -> Self {
        ScalarFn {
            repr: Repr::Product(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn scaled(c: f64, f: ScalarFn) -> Self {
        ScalarFn {
            repr: Repr::Scaled(c, Arc::new(f)),
        }
    }

    /// `outer(inner(x))`.
    pub fn compose(outer: ScalarFn, inner: ScalarFn) -> Self {
        ScalarFn {
            repr: Repr::Compose {
                outer: Arc::new(outer),
                inner: Arc::new(inner),
            },
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64, FnError> {
        match &self.repr {
            Repr::Expr { expr, var, .. } => Ok(expr.eval(&(var.as_str(), x))?),
            Repr::Table { grid, clamp: true } => Ok(grid.eval_clamped(x)),
            Repr::Table { grid, clamp: false } => Ok(grid.eval(x)?),
            Repr::Product(a, b) => Ok(a.eval(x)? * b.eval(x)?),
            Repr::Scaled(c, f) => Ok(c * f.eval(x)?),
            Repr::Compose { outer, inner } => outer.eval(inner.eval(x)?),
        }
    }

    pub fn expr(&self) -> Option<&Expr> {
        match &self.repr {
            Repr::Expr { expr, .. } => Some(expr),
            _ => None,
        }
    }

    pub fn var(&self) -> Option<&str> {
        match &self.repr {
            Repr::Expr { var, .. } => Some(var),
            _ => None,
        }
    }

    pub fn symbolic_derivative(&self) -> Option<&Expr> {
        match &self.repr {
            Repr::Expr { deriv, .. } => deriv.as_ref(),
            _ => None,
        }
    }

    /// Why no symbolic derivative is available, if it is not.
    pub fn derivative_failure(&self) -> Option<DiffError> {
        match &self.repr {
            Repr::Expr { expr, var, deriv: None } => differentiate(expr, var).err(),
            Repr::Expr { .. } => None,
            _ => Some(DiffError::NonSmooth {
                node: self.to_string(),
            }),
        }
    }

    /// Symbolic derivative when cached, central differences otherwise.
    pub fn derivative(&self, x: f64) -> Result<f64, FnError> {
        match &self.repr {
            Repr::Expr {
                var,
                deriv: Some(d), ..
            } => Ok(d.eval(&(var.as_str(), x))?),
            _ => fd_derivative(self, x),
        }
    }

    pub fn is_tabulated(&self) -> bool {
        matches!(self.repr, Repr::Table { .. })
    }
}

impl ScalarEval for ScalarFn {
    type Error = FnError;

    fn eval_at(&self, x: f64) -> Result<f64, FnError> {
        self.eval(x)
    }
}

impl fmt::Display for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            Repr::Expr { expr, var, .. } => write!(f, "{var} -> {expr}"),
            Repr::Table { grid, .. } => write!(
                f,
                "table[{} nodes on [{}, {}]]",
                grid.values().len(),
                grid.lo(),
                grid.hi()
            ),
            Repr::Product(a, b) => write!(f, "({a}) * ({b})"),
            Repr::Scaled(c, g) => write!(f, "{c} * ({g})"),
            Repr::Compose { outer, inner } => write!(f, "({outer}) o ({inner})"),
        }
    }
}

/// The stable-part bounds:
/// `alpha_lower(|x|) <= V(x) <= alpha_upper(|x|)` and
/// `dV/dx f <= alpha(V) + beta(V) phi(|lambda|)`.
#[derive(Debug, Clone)]
pub struct StableBoundSet {
    pub alpha_lower: ScalarFn,
    pub alpha_upper: ScalarFn,
    pub alpha: ScalarFn,
    pub beta: ScalarFn,
    pub phi: ScalarFn,
}

/// The unstable-part bounds: `-xi(|lambda|) - delta(|x|) <= g <= 0`.
#[derive(Debug, Clone)]
pub struct UnstableBoundSet {
    pub delta: ScalarFn,
    pub xi: ScalarFn,
}

#[derive(Debug, Clone)]
pub struct BoundSet {
    pub stable: StableBoundSet,
    pub unstable: UnstableBoundSet,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InverseError {
    #[error("target {y} exceeds f(hi) = {f_hi} with hi = {hi}")]
    Range { y: f64, hi: f64, f_hi: f64 },
    #[error("function is not increasing near {x}")]
    NotMonotone { x: f64 },
    #[error(transparent)]
    Fn(#[from] FnError),
}

pub const DEFAULT_INVERSE_TOL: f64 = 1e-12;

/// Inverse of an increasing function by bisection on `[0, hi]`.
///
/// Stops when the bracket is no wider than `tol` or can no longer be split
/// in floating point, so `tol = 0` gives a full-precision answer.
pub fn monotone_inverse(f: &ScalarFn, y: f64, hi: f64, tol: f64) -> Result<f64, InverseError> {
    let f_lo = f.eval(0.0)?;
    if y <= f_lo {
        return Ok(0.0);
    }
    let f_hi = f.eval(hi)?;
    if y > f_hi {
        return Err(InverseError::Range { y, hi, f_hi });
    }
    let (mut lo, mut hi_x) = (0.0_f64, hi);
    let (mut flo, mut fhi) = (f_lo, f_hi);
    for _ in 0..2200 {
        if hi_x - lo <= tol {
            break;
        }
        let mid = lo + 0.5 * (hi_x - lo);
        if mid <= lo || mid >= hi_x {
            break;
        }
        let fm = f.eval(mid)?;
        if fm < flo || fm > fhi {
            return Err(InverseError::NotMonotone { x: mid });
        }
        if fm < y {
            lo = mid;
            flo = fm;
        } else {
            hi_x = mid;
            fhi = fm;
        }
    }
    // closest end of the final bracket
    Ok(if (y - flo).abs() <= (fhi - y).abs() { lo } else { hi_x })
}

/// `alpha_lower^{-1}(v)` with the bracket grown from `hint` until it
/// contains the target.
pub(crate) fn inverse_growing(f: &ScalarFn, y: f64, hint: f64) -> Result<f64, InverseError> {
    let mut hi = hint.max(1.0);
    for _ in 0..64 {
        match monotone_inverse(f, y, hi, 0.0) {
            Err(InverseError::Range { .. }) => hi *= 2.0,
            other => return other,
        }
    }
    monotone_inverse(f, y, hi, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ComparisonClass {
    /// Zero at zero and strictly increasing on the samples.
    ClassK,
    /// Zero at zero and positive on the samples in `(0, hi]`.
    ClassP,
    Neither,
}

const ZERO_TOL: f64 = 1e-12;

/// Sample-based class membership on `[0, hi]` with `grid_n` intervals.
pub fn classify_comparison(f: &ScalarFn, grid_n: usize, hi: f64) -> Result<ComparisonClass, FnError> {
    let vals = uniform_nodes(0.0, hi, grid_n.max(2))
        .map(|s| f.eval(s))
        .collect::<Result<Vec<_>, _>>()?;
    if vals[0].abs() > ZERO_TOL {
        return Ok(ComparisonClass::Neither);
    }
    if vals.windows(2).all(|w| w[1] > w[0]) {
        return Ok(ComparisonClass::ClassK);
    }
    if vals[1..].iter().all(|v| *v > 0.0) {
        return Ok(ComparisonClass::ClassP);
    }
    Ok(ComparisonClass::Neither)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ViolationKind {
    NotZeroAtZero,
    NotStrictlyIncreasing,
    NotNondecreasing,
    LowerAboveUpper,
    NotEvaluable,
    BadWorkingInterval,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub kind: ViolationKind,
    /// Sample point where the violation was seen.
    pub at: Option<f64>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.at {
            Some(x) => write!(f, "{} (at {x})", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

struct Samples {
    nodes: Vec<f64>,
}

impl Samples {
    fn of(&self, field: &'static str, f: &ScalarFn, out: &mut Vec<Violation>) -> Option<Vec<f64>> {
        let mut vals = Vec::with_capacity(self.nodes.len());
        for &s in &self.nodes {
            match f.eval(s) {
                Ok(v) if v.is_finite() => vals.push(v),
                Ok(v) => {
                    out.push(violation(field, ViolationKind::NotEvaluable, Some(s), format!("{field} is {v}")));
                    return None;
                }
                Err(e) => {
                    out.push(violation(field, ViolationKind::NotEvaluable, Some(s), format!("{field} not evaluable: {e}")));
                    return None;
                }
            }
        }
        Some(vals)
    }
}

fn violation(field: &'static str, kind: ViolationKind, at: Option<f64>, message: String) -> Violation {
    Violation { field, kind, at, message }
}

fn check_zero(field: &'static str, vals: &[f64], out: &mut Vec<Violation>) {
    if vals[0].abs() > ZERO_TOL {
        out.push(violation(field, ViolationKind::NotZeroAtZero, Some(0.0), format!("{field}(0) = {} != 0", vals[0])));
    }
}

fn check_increasing(field: &'static str, nodes: &[f64], vals: &[f64], strict: bool, out: &mut Vec<Violation>) {
    let bad = vals
        .windows(2)
        .position(|w| if strict { w[1] <= w[0] } else { w[1] < w[0] });
    if let Some(i) = bad {
        let (kind, what) = if strict {
            (ViolationKind::NotStrictlyIncreasing, "not strictly increasing")
        } else {
            (ViolationKind::NotNondecreasing, "not nondecreasing")
        };
        out.push(violation(field, kind, Some(nodes[i + 1]), format!("{field} {what}")));
    }
}

impl BoundSet {
    pub fn new(stable: StableBoundSet, unstable: UnstableBoundSet, v_max: f64) -> Self {
        BoundSet { stable, unstable, v_max }
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_bounds(self)
    }
}

/// Checks every bound-set invariant on a 1024-interval grid over `[0, v_max]`.
pub fn validate_bounds(b: &BoundSet) -> Vec<Violation> {
    validate_bounds_on(b, DEFAULT_VALIDATION_GRID)
}

pub fn validate_bounds_on(b: &BoundSet, grid_n: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(b.v_max > 0.0 && b.v_max.is_finite()) {
        out.push(violation("v_max", ViolationKind::BadWorkingInterval, None, format!("v_max = {} is not positive", b.v_max)));
        return out;
    }
    let samples = Samples {
        nodes: uniform_nodes(0.0, b.v_max, grid_n.max(2)).collect(),
    };
    let nodes = &samples.nodes;
    let s = &b.stable;
    let u = &b.unstable;

    let lower = samples.of("α̲", &s.alpha_lower, &mut out);
    let upper = samples.of("ᾱ", &s.alpha_upper, &mut out);
    samples.of("α", &s.alpha, &mut out);
    samples.of("β", &s.beta, &mut out);
    let phi = samples.of("φ", &s.phi, &mut out);
    let delta = samples.of("δ", &u.delta, &mut out);
    let xi = samples.of("ξ", &u.xi, &mut out);

    for (field, vals) in [("α̲", &lower), ("ᾱ", &upper), ("φ", &phi)] {
        if let Some(vals) = vals {
            check_zero(field, vals, &mut out);
            check_increasing(field, nodes, vals, true, &mut out);
        }
    }
    for (field, vals) in [("δ", &delta), ("ξ", &xi)] {
        if let Some(vals) = vals {
            check_zero(field, vals, &mut out);
            check_increasing(field, nodes, vals, false, &mut out);
        }
    }
    if let (Some(lo), Some(hi)) = (&lower, &upper) {
        if let Some(i) = lo.iter().zip(hi).position(|(l, h)| l > h) {
            out.push(violation("α̲", ViolationKind::LowerAboveUpper, Some(nodes[i]), "α̲ > ᾱ".to_string()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(text: &str) -> ScalarFn {
        ScalarFn::parse(text, "s").unwrap()
    }

    pub(crate) fn example3(k: f64, gamma: f64, v_max: f64) -> BoundSet {
        let params = Env::new().with("k", k).with("gamma", gamma);
        let pf = |t: &str, var: &str| ScalarFn::parse_with(t, var, &params).unwrap();
        BoundSet::new(
            StableBoundSet {
                alpha_lower: pf("s^2", "s"),
                alpha_upper: pf("s^2", "s"),
                alpha: pf("-2*k*V", "V"),
                beta: pf("2*V^(3/2)", "V"),
                phi: pf("s", "s"),
            },
            UnstableBoundSet {
                delta: pf("gamma*s^2", "s"),
                xi: pf("0", "s"),
            },
            v_max,
        )
    }

    #[test]
    fn inverse_examples() {
        let sq = f("s^2");
        assert!((monotone_inverse(&sq, 4.0, 10.0, 1e-12).unwrap() - 2.0).abs() <= 1e-12);
        assert_eq!(monotone_inverse(&sq, 0.0, 10.0, 1e-12).unwrap(), 0.0);
        let scaled = ScalarFn::parse_with("p*s^2", "s", &Env::new().with("p", 2.0)).unwrap();
        let x = monotone_inverse(&scaled, 8.0, 10.0, 1e-12).unwrap();
        assert!((x - (8.0f64 / 2.0).sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn full_precision_inverse() {
        let sq = f("s^2");
        for y in [1e-10, 1e-3, 0.5, 7.0] {
            let x = monotone_inverse(&sq, y, 10.0, 0.0).unwrap();
            assert!((x - y.sqrt()).abs() <= 2.0 * f64::EPSILON * y.sqrt(), "{y}");
        }
    }

    #[test]
    fn inverse_errors() {
        let sq = f("s^2");
        assert!(matches!(monotone_inverse(&sq, 200.0, 10.0, 1e-12), Err(InverseError::Range { .. })));
        let hump = f("s*(4-s)");
        assert!(matches!(monotone_inverse(&hump, 0.5, 4.5, 1e-12), Err(InverseError::Range { .. })));
        // midpoint value escapes the bracket
        let spike = f("piecewise(s<3: 10*s, else: s)");
        assert!(matches!(monotone_inverse(&spike, 3.5, 4.0, 1e-12), Err(InverseError::NotMonotone { .. })));
    }

    #[test]
    fn inverse_round_trip_on_catalog() {
        use rand::{Rng, SeedableRng};
        let catalog = ["s", "s^2", "2*s^3+s", "exp(s)-1", "s/(1+s)*10+s", "tanh(s)+s"];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for text in catalog {
            let g = f(text);
            let top = g.eval(5.0).unwrap();
            for _ in 0..100 {
                let y = rng.random_range(0.0..top);
                let x = monotone_inverse(&g, y, 5.0, DEFAULT_INVERSE_TOL).unwrap();
                let back = g.eval(x).unwrap();
                let slope = g.derivative(x).unwrap().max(1.0);
                assert!((back - y).abs() <= 2.0 * DEFAULT_INVERSE_TOL * slope, "{text} {y}");
            }
        }
    }

    #[test]
    fn classification() {
        assert_eq!(classify_comparison(&f("s"), 1024, 1.0).unwrap(), ComparisonClass::ClassK);
        let wiggle = f("s*(2+sin(1/max(s, 1e-9)))");
        assert_eq!(classify_comparison(&wiggle, 1024, 1.0).unwrap(), ComparisonClass::ClassP);
        assert_eq!(classify_comparison(&f("s-1"), 1024, 1.0).unwrap(), ComparisonClass::Neither);
        assert_eq!(classify_comparison(&f("s*(s-0.5)^2"), 1024, 1.0).unwrap(), ComparisonClass::Neither);
    }

    #[test]
    fn example3_bounds_are_admissible() {
        let b = example3(1.0, 0.1, 10.0);
        assert!(b.validate().is_empty(), "{:?}", b.validate());
    }

    #[test]
    fn single_field_corruptions_are_rejected() {
        let corrupt = |edit: &dyn Fn(&mut BoundSet)| {
            let mut b = example3(1.0, 0.1, 10.0);
            edit(&mut b);
            b.validate()
        };
        let cases: Vec<(&str, Box<dyn Fn(&mut BoundSet)>)> = vec![
            ("α̲", Box::new(|b| b.stable.alpha_lower = f("s^2+1"))),
            ("ᾱ", Box::new(|b| b.stable.alpha_upper = f("s^2/2"))),
            ("α", Box::new(|b| b.stable.alpha = f("sqrt(s-1)"))),
            ("β", Box::new(|b| b.stable.beta = f("ln(s)"))),
            ("φ", Box::new(|b| b.stable.phi = f("-s"))),
            ("δ", Box::new(|b| b.unstable.delta = f("-s"))),
            ("ξ", Box::new(|b| b.unstable.xi = f("-s"))),
            ("v_max", Box::new(|b| b.v_max = 0.0)),
        ];
        for (field, edit) in cases {
            let v = corrupt(edit.as_ref());
            assert!(!v.is_empty(), "corruption of {field} accepted");
        }
        let v = corrupt(&|b| b.unstable.xi = f("-s"));
        assert!(v.iter().any(|v| v.message == "ξ not nondecreasing"));
        let v = corrupt(&|b| b.stable.alpha_upper = f("s^2/2"));
        assert!(v.iter().any(|v| v.message == "α̲ > ᾱ"));
    }

    #[test]
    fn composite_functions() {
        let grid = GridFunction::new(0.0, 1.0, vec![0.0, 0.5, 1.0]).unwrap();
        let t = ScalarFn::tabulated(grid.clone(), false);
        assert!(t.eval(1.5).is_err());
        let tc = ScalarFn::tabulated(grid, true);
        assert_eq!(tc.eval(1.5).unwrap(), 1.0);
        let prod = ScalarFn::product(tc.clone(), f("s^2"));
        assert_eq!(prod.eval(0.5).unwrap(), 0.125);
        let comp = ScalarFn::compose(f("3*s"), f("s^2"));
        assert_eq!(comp.eval(2.0).unwrap(), 12.0);
        assert_eq!(ScalarFn::scaled(-2.0, f("s")).eval(1.5).unwrap(), -3.0);
        // derivative falls back to differences for composites
        assert!((comp.derivative(1.0).unwrap() - 6.0).abs() < 1e-7);
    }

    #[test]
    fn parameters_must_be_bound() {
        assert!(matches!(ScalarFn::parse("k*V", "V"), Err(FnError::FreeVariables { .. })));
    }
}
