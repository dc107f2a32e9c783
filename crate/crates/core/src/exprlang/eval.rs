use std::collections::BTreeMap;

use super::ast::{BinaryOp, Expr, UnaryOp};
use super::EvalError;

/// Variable lookup used during evaluation.
pub trait Scope {
    fn lookup(&self, name: &str) -> Option<f64>;
}

/// Named real values. Unbound names are errors at evaluation time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Env {
    vars: BTreeMap<String, f64>,
}

impl Env {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, value: f64) -> Self {
        self.vars.insert(name.into(), value);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        self.vars.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

impl<K: Into<String>> FromIterator<(K, f64)> for Env {
    fn from_iter<I: IntoIterator<Item = (K, f64)>>(iter: I) -> Self {
        Env {
            vars: iter.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }
}

impl Scope for Env {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name)
    }
}

/// A single binding, the common case for one-variable functions.
impl Scope for (&str, f64) {
    fn lookup(&self, name: &str) -> Option<f64> {
        (name == self.0).then_some(self.1)
    }
}

impl Scope for [(&str, f64)] {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

/// Scope with no bindings.
pub struct Empty;

impl Scope for Empty {
    fn lookup(&self, _name: &str) -> Option<f64> {
        None
    }
}

fn domain(node: &str, args: &[f64]) -> EvalError {
    EvalError::Domain {
        node: node.to_string(),
        args: args.to_vec(),
    }
}

impl Expr {
    /// Evaluates in IEEE double precision. Any non-finite intermediate
    /// produced from finite arguments is a domain error.
    pub fn eval<S: Scope + ?Sized>(&self, scope: &S) -> Result<f64, EvalError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(name) => scope
                .lookup(name)
                .ok_or_else(|| EvalError::Unbound(name.clone())),
            Expr::Unary(op, e) => {
                let x = e.eval(scope)?;
                let y = match op {
                    UnaryOp::Neg => -x,
                    UnaryOp::Abs => x.abs(),
                    UnaryOp::Sqrt if x < 0.0 => return Err(domain("sqrt", &[x])),
                    UnaryOp::Sqrt => x.sqrt(),
                    UnaryOp::Sin => x.sin(),
                    UnaryOp::Cos => x.cos(),
                    UnaryOp::Tanh => x.tanh(),
                    UnaryOp::Exp => x.exp(),
                    UnaryOp::Ln if x <= 0.0 => return Err(domain("ln", &[x])),
                    UnaryOp::Ln => x.ln(),
                };
                if y.is_finite() || !x.is_finite() {
                    Ok(y)
                } else {
                    Err(domain(op.name(), &[x]))
                }
            }
            Expr::Binary(op, l, r) => {
                let a = l.eval(scope)?;
                let b = r.eval(scope)?;
                let y = match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div if b == 0.0 => return Err(domain("/", &[a, b])),
                    BinaryOp::Div => a / b,
                    BinaryOp::Pow => pow(a, b),
                };
                if y.is_finite() || !(a.is_finite() && b.is_finite()) {
                    Ok(y)
                } else {
                    Err(domain(&op.symbol().to_string(), &[a, b]))
                }
            }
            Expr::Min(args) => fold_args(args, scope, f64::min),
            Expr::Max(args) => fold_args(args, scope, f64::max),
            Expr::Piecewise { branches, otherwise } => {
                for b in branches {
                    let lhs = b.cond.lhs.eval(scope)?;
                    let rhs = b.cond.rhs.eval(scope)?;
                    if b.cond.op.holds(lhs, rhs) {
                        return b.value.eval(scope);
                    }
                }
                otherwise.eval(scope)
            }
        }
    }

    /// Evaluates with no bindings; `None` if the tree has free variables
    /// or hits a domain error.
    pub fn eval_const(&self) -> Option<f64> {
        self.eval(&Empty).ok()
    }
}

// Integer exponents go through powi so that negative bases work.
fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

fn fold_args<S: Scope + ?Sized>(
    args: &[Expr],
    scope: &S,
    pick: fn(f64, f64) -> f64,
) -> Result<f64, EvalError> {
    let mut it = args.iter();
    let first = it.next().ok_or(EvalError::EmptyArgs)?.eval(scope)?;
    it.try_fold(first, |acc, e| Ok(pick(acc, e.eval(scope)?)))
}
