use std::collections::BTreeSet;
use std::fmt;

/// Expression tree for scalar bound functions.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Min(Vec<Expr>),
    Max(Vec<Expr>),
    /// Branches are tried in order; `otherwise` fires when none matches.
    Piecewise {
        branches: Vec<Branch>,
        otherwise: Box<Expr>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Abs,
    Sqrt,
    Sin,
    Cos,
    Tanh,
    Exp,
    Ln,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Abs => "abs",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Exp => "exp",
            UnaryOp::Ln => "ln",
        }
    }

    /// Function-call spelling; `Neg` has none.
    pub fn from_function_name(name: &str) -> Option<Self> {
        Some(match name {
            "abs" => UnaryOp::Abs,
            "sqrt" => UnaryOp::Sqrt,
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "tanh" => UnaryOp::Tanh,
            "exp" => UnaryOp::Exp,
            "ln" => UnaryOp::Ln,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    pub fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub lhs: Expr,
    pub op: CmpOp,
    pub rhs: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub cond: Condition,
    pub value: Expr,
}

impl Expr {
    pub fn num(v: f64) -> Self {
        Expr::Num(v)
    }

    pub fn var(name: impl Into<String>) -> Self {
        Expr::Var(name.into())
    }

    pub fn unary(op: UnaryOp, e: Expr) -> Self {
        Expr::Unary(op, Box::new(e))
    }

    pub fn binary(op: BinaryOp, l: Expr, r: Expr) -> Self {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    /// All variable names referenced anywhere in the tree.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Unary(_, e) => e.collect_vars(out),
            Expr::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Expr::Min(args) | Expr::Max(args) => args.iter().for_each(|a| a.collect_vars(out)),
            Expr::Piecewise { branches, otherwise } => {
                for b in branches {
                    b.cond.lhs.collect_vars(out);
                    b.cond.rhs.collect_vars(out);
                    b.value.collect_vars(out);
                }
                otherwise.collect_vars(out);
            }
        }
    }

    pub fn contains_var(&self, var: &str) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(name) => name == var,
            Expr::Unary(_, e) => e.contains_var(var),
            Expr::Binary(_, l, r) => l.contains_var(var) || r.contains_var(var),
            Expr::Min(args) | Expr::Max(args) => args.iter().any(|a| a.contains_var(var)),
            Expr::Piecewise { branches, otherwise } => {
                otherwise.contains_var(var)
                    || branches.iter().any(|b| {
                        b.cond.lhs.contains_var(var)
                            || b.cond.rhs.contains_var(var)
                            || b.value.contains_var(var)
                    })
            }
        }
    }

    /// Replaces every variable found in `lookup` by its value.
    pub fn substitute(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Expr {
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(name) => match lookup(name) {
                Some(v) => Expr::Num(v),
                None => Expr::Var(name.clone()),
            },
            Expr::Unary(op, e) => Expr::unary(*op, e.substitute(lookup)),
            Expr::Binary(op, l, r) => Expr::binary(*op, l.substitute(lookup), r.substitute(lookup)),
            Expr::Min(args) => Expr::Min(args.iter().map(|a| a.substitute(lookup)).collect()),
            Expr::Max(args) => Expr::Max(args.iter().map(|a| a.substitute(lookup)).collect()),
            Expr::Piecewise { branches, otherwise } => Expr::Piecewise {
                branches: branches
                    .iter()
                    .map(|b| Branch {
                        cond: Condition {
                            lhs: b.cond.lhs.substitute(lookup),
                            op: b.cond.op,
                            rhs: b.cond.rhs.substitute(lookup),
                        },
                        value: b.value.substitute(lookup),
                    })
                    .collect(),
                otherwise: Box::new(otherwise.substitute(lookup)),
            },
        }
    }

    /// Replaces variable `var` by the expression `with`.
    pub fn replace_var(&self, var: &str, with: &Expr) -> Expr {
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(name) if name == var => with.clone(),
            Expr::Var(name) => Expr::Var(name.clone()),
            Expr::Unary(op, e) => Expr::unary(*op, e.replace_var(var, with)),
            Expr::Binary(op, l, r) => {
                Expr::binary(*op, l.replace_var(var, with), r.replace_var(var, with))
            }
            Expr::Min(args) => Expr::Min(args.iter().map(|a| a.replace_var(var, with)).collect()),
            Expr::Max(args) => Expr::Max(args.iter().map(|a| a.replace_var(var, with)).collect()),
            Expr::Piecewise { branches, otherwise } => Expr::Piecewise {
                branches: branches
                    .iter()
                    .map(|b| Branch {
                        cond: Condition {
                            lhs: b.cond.lhs.replace_var(var, with),
                            op: b.cond.op,
                            rhs: b.cond.rhs.replace_var(var, with),
                        },
                        value: b.value.replace_var(var, with),
                    })
                    .collect(),
                otherwise: Box::new(otherwise.replace_var(var, with)),
            },
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
            Expr::Unary(UnaryOp::Neg, _) => 3,
            Expr::Binary(BinaryOp::Pow, ..) => 4,
            Expr::Num(v) if *v < 0.0 || v.is_sign_negative() => 3,
            _ => 5,
        }
    }
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, name: &str, args: &[Expr]) -> fmt::Result {
    write!(f, "{name}(")?;
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{a}")?;
    }
    write!(f, ")")
}

/// Prints in the same grammar `parse` accepts; parenthesizes only where
/// needed to preserve the tree shape.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if v.is_sign_negative() {
                    write!(f, "-{}", -v)
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Var(name) => write!(f, "{name}"),
            Expr::Unary(UnaryOp::Neg, e) => {
                write!(f, "-")?;
                write_wrapped(f, e, e.precedence() < 3)
            }
            Expr::Unary(op, e) => write!(f, "{}({e})", op.name()),
            Expr::Binary(op, l, r) => {
                let (lp, rp) = match op {
                    BinaryOp::Pow => (l.precedence() <= 4, r.precedence() < 3),
                    _ => {
                        let own = self.precedence();
                        (l.precedence() < own, r.precedence() <= own)
                    }
                };
                write_wrapped(f, l, lp)?;
                write!(f, "{}", op.symbol())?;
                write_wrapped(f, r, rp)
            }
            Expr::Min(args) => write_list(f, "min", args),
            Expr::Max(args) => write_list(f, "max", args),
            Expr::Piecewise { branches, otherwise } => {
                write!(f, "piecewise(")?;
                for b in branches {
                    write!(f, "{} {} {}: {}, ", b.cond.lhs, b.cond.op.symbol(), b.cond.rhs, b.value)?;
                }
                write!(f, "else: {otherwise})")
            }
        }
    }
}
