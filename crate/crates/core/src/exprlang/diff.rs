use super::ast::{BinaryOp, Expr, UnaryOp};
use super::{DiffError, ScalarEval};

fn is_num(e: &Expr, v: f64) -> bool {
    e.as_num() == Some(v)
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_num(), b.as_num()) {
        (Some(x), Some(y)) => Expr::Num(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => Expr::binary(BinaryOp::Add, a, b),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_num(), b.as_num()) {
        (Some(x), Some(y)) => Expr::Num(x - y),
        (_, Some(y)) if y == 0.0 => a,
        (Some(x), _) if x == 0.0 => neg(b),
        _ => Expr::binary(BinaryOp::Sub, a, b),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a.as_num(), b.as_num()) {
        (Some(x), Some(y)) => Expr::Num(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::Num(0.0),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::binary(BinaryOp::Mul, a, b),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a.as_num(), b.as_num()) {
        (Some(x), Some(y)) if y != 0.0 => Expr::Num(x / y),
        (Some(x), _) if x == 0.0 => Expr::Num(0.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::binary(BinaryOp::Div, a, b),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match b.as_num() {
        Some(y) if y == 1.0 => a,
        Some(y) if y == 0.0 => Expr::Num(1.0),
        _ => Expr::binary(BinaryOp::Pow, a, b),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(x) => Expr::Num(-x),
        Expr::Unary(UnaryOp::Neg, inner) => *inner,
        other => Expr::unary(UnaryOp::Neg, other),
    }
}

fn un(op: UnaryOp, a: Expr) -> Expr {
    Expr::unary(op, a)
}

/// Folds every variable-free subtree that evaluates to a finite number.
pub fn fold_constants(e: &Expr) -> Expr {
    if !matches!(e, Expr::Num(_)) && e.free_vars().is_empty() {
        if let Some(v) = e.eval_const() {
            return Expr::Num(v);
        }
    }
    match e {
        Expr::Unary(op, a) => un(*op, fold_constants(a)),
        Expr::Binary(op, l, r) => Expr::binary(*op, fold_constants(l), fold_constants(r)),
        Expr::Min(args) => Expr::Min(args.iter().map(fold_constants).collect()),
        Expr::Max(args) => Expr::Max(args.iter().map(fold_constants).collect()),
        other => other.clone(),
    }
}

/// Symbolic derivative with respect to `var`.
///
/// Subtrees that do not mention `var` differentiate to zero whatever their
/// shape; `abs`, `min`, `max` and `piecewise` on a path through `var` are
/// rejected instead of picking a subgradient.
pub fn differentiate(e: &Expr, var: &str) -> Result<Expr, DiffError> {
    let d = derive(e, var)?;
    Ok(fold_constants(&d))
}

fn derive(e: &Expr, var: &str) -> Result<Expr, DiffError> {
    if !e.contains_var(var) {
        return Ok(Expr::Num(0.0));
    }
    let nonsmooth = |e: &Expr| DiffError::NonSmooth {
        node: e.to_string(),
    };
    Ok(match e {
        Expr::Num(_) => Expr::Num(0.0),
        Expr::Var(_) => Expr::Num(1.0),
        Expr::Unary(op, u) => {
            let du = derive(u, var)?;
            let u = (**u).clone();
            match op {
                UnaryOp::Neg => neg(du),
                UnaryOp::Sqrt => div(du, mul(Expr::Num(2.0), un(UnaryOp::Sqrt, u))),
                UnaryOp::Sin => mul(un(UnaryOp::Cos, u), du),
                UnaryOp::Cos => neg(mul(un(UnaryOp::Sin, u), du)),
                UnaryOp::Tanh => mul(
                    sub(Expr::Num(1.0), pow(un(UnaryOp::Tanh, u), Expr::Num(2.0))),
                    du,
                ),
                UnaryOp::Exp => mul(un(UnaryOp::Exp, u), du),
                UnaryOp::Ln => div(du, u),
                UnaryOp::Abs => return Err(nonsmooth(e)),
            }
        }
        Expr::Binary(op, l, r) => {
            let (u, v) = ((**l).clone(), (**r).clone());
            match op {
                BinaryOp::Add => add(derive(l, var)?, derive(r, var)?),
                BinaryOp::Sub => sub(derive(l, var)?, derive(r, var)?),
                BinaryOp::Mul => add(mul(derive(l, var)?, v), mul(u, derive(r, var)?)),
                BinaryOp::Div => {
                    let du = derive(l, var)?;
                    let dv = derive(r, var)?;
                    if is_num(&dv, 0.0) {
                        div(du, v)
                    } else {
                        div(
                            sub(mul(du, v.clone()), mul(u, dv)),
                            pow(v, Expr::Num(2.0)),
                        )
                    }
                }
                BinaryOp::Pow if !v.contains_var(var) => {
                    // c * u^(c-1) * u'
                    let du = derive(l, var)?;
                    let c_minus_one = fold_constants(&sub(v.clone(), Expr::Num(1.0)));
                    mul(mul(v, pow(u, c_minus_one)), du)
                }
                BinaryOp::Pow => {
                    // u^v * (v' ln u + v u'/u)
                    let du = derive(l, var)?;
                    let dv = derive(r, var)?;
                    let whole = Expr::binary(BinaryOp::Pow, u.clone(), v.clone());
                    mul(
                        whole,
                        add(
                            mul(dv, un(UnaryOp::Ln, u.clone())),
                            div(mul(v, du), u),
                        ),
                    )
                }
            }
        }
        Expr::Min(_) | Expr::Max(_) | Expr::Piecewise { .. } => return Err(nonsmooth(e)),
    })
}

/// Central-difference derivative with step `cbrt(eps) * max(1, |v|)`.
pub fn fd_derivative<F: ScalarEval + ?Sized>(f: &F, v: f64) -> Result<f64, F::Error> {
    let h = fd_step(v);
    let hi = f.eval_at(v + h)?;
    let lo = f.eval_at(v - h)?;
    Ok((hi - lo) / (2.0 * h))
}

pub fn fd_step(v: f64) -> f64 {
    f64::EPSILON.cbrt() * v.abs().max(1.0)
}
