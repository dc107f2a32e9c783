//! The expression language in which every scalar bound function is written.
//!
//! Grammar, loosest to tightest binding:
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := unary (("*" | "/") unary)*
//! unary  := "-" unary | power
//! power  := atom ("^" unary)?            right-associative
//! atom   := number | ident | "(" expr ")"
//!         | fname "(" expr ")"           abs sqrt sin cos tanh exp ln
//!         | ("min" | "max") "(" expr ("," expr)* ")"
//!         | "piecewise" "(" (expr cmp expr ":" expr ",")* "else" ":" expr ")"
//! cmp    := "<" | "<=" | ">" | ">=" | "==" | "!="
//! ```

mod ast;
mod diff;
mod eval;
mod parse;

use thiserror::Error;

pub use ast::{BinaryOp, Branch, CmpOp, Condition, Expr, UnaryOp};
pub use diff::{differentiate, fd_derivative, fd_step, fold_constants};
pub use eval::{Empty, Env, Scope};
pub use parse::parse;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at byte {offset}: expected {}, found {found}", .expected.join(" | "))]
pub struct ParseError {
    pub offset: usize,
    pub expected: Vec<String>,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error in `{node}` at arguments {args:?}")]
    Domain { node: String, args: Vec<f64> },
    #[error("min/max needs at least one argument")]
    EmptyArgs,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("cannot differentiate non-smooth node `{node}`")]
    NonSmooth { node: String },
}

/// Anything that can be evaluated at a real point.
pub trait ScalarEval {
    type Error;
    fn eval_at(&self, x: f64) -> Result<f64, Self::Error>;
}

/// An expression in one named variable, borrowed.
pub struct Bound<'a> {
    pub expr: &'a Expr,
    pub var: &'a str,
}

impl ScalarEval for Bound<'_> {
    type Error = EvalError;

    fn eval_at(&self, x: f64) -> Result<f64, EvalError> {
        self.expr.eval(&(self.var, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> Expr {
        parse(s).unwrap()
    }

    fn v(name: &str) -> Expr {
        Expr::var(name)
    }

    #[test]
    fn parses_product() {
        assert_eq!(p("p*V"), Expr::binary(BinaryOp::Mul, v("p"), v("V")));
    }

    #[test]
    fn power_binds_tighter_than_product() {
        let expected = Expr::binary(
            BinaryOp::Mul,
            Expr::num(2.0),
            Expr::binary(
                BinaryOp::Pow,
                v("V"),
                Expr::binary(BinaryOp::Div, Expr::num(3.0), Expr::num(2.0)),
            ),
        );
        assert_eq!(p("2*V^(3/2)"), expected);
    }

    #[test]
    fn power_is_right_assoc_and_above_negation() {
        assert_eq!(
            p("-x^2"),
            Expr::unary(UnaryOp::Neg, Expr::binary(BinaryOp::Pow, v("x"), Expr::num(2.0)))
        );
        assert_eq!(
            p("a^b^c"),
            Expr::binary(BinaryOp::Pow, v("a"), Expr::binary(BinaryOp::Pow, v("b"), v("c")))
        );
        assert_eq!(
            p("2^-x"),
            Expr::binary(BinaryOp::Pow, Expr::num(2.0), Expr::unary(UnaryOp::Neg, v("x")))
        );
    }

    #[test]
    fn subtraction_is_left_assoc() {
        assert_eq!(
            p("a-b-c"),
            Expr::binary(BinaryOp::Sub, Expr::binary(BinaryOp::Sub, v("a"), v("b")), v("c"))
        );
    }

    #[test]
    fn saturated_cubic_piecewise() {
        let k = p("piecewise(x>1: 1, x<-1: -1, else: x^3)");
        match &k {
            Expr::Piecewise { branches, .. } => assert_eq!(branches.len(), 2),
            other => panic!("not piecewise: {other:?}"),
        }
        assert_eq!(k.eval(&("x", 2.0)).unwrap(), 1.0);
        assert_eq!(k.eval(&("x", -3.0)).unwrap(), -1.0);
        assert_eq!(k.eval(&("x", 0.5)).unwrap(), 0.125);
        // boundary goes to the else-branch: x>1 is strict
        assert_eq!(k.eval(&("x", 1.0)).unwrap(), 1.0);
    }

    #[test]
    fn piecewise_ties_follow_branch_order() {
        let e = p("piecewise(x>=0: 1, x<=0: 2, else: 3)");
        assert_eq!(e.eval(&("x", 0.0)).unwrap(), 1.0);
    }

    #[test]
    fn piecewise_requires_else() {
        assert!(parse("piecewise(x>1: 1)").is_err());
        assert!(parse("piecewise(else: 1, x>1: 2)").is_err());
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        let err = parse("2*(V+").unwrap_err();
        assert_eq!(err.offset, 5);
        assert!(!err.expected.is_empty());
        let err = parse("V $ 2").unwrap_err();
        assert_eq!(err.offset, 2);
        let err = parse("foo(1)").unwrap_err();
        assert_eq!(err.offset, 0);
        let err = parse("1 2").unwrap_err();
        assert_eq!(err.offset, 2);
    }

    #[test]
    fn evaluates_with_env() {
        let env = Env::new().with("p", 1.0).with("V", 0.5);
        assert_eq!(p("p*V").eval(&env).unwrap(), 0.5);
        assert_eq!(p("min(3, V, 2)").eval(&env).unwrap(), 0.5);
        assert_eq!(p("max(3, V, 2)").eval(&env).unwrap(), 3.0);
        assert_eq!(p("1.5e1 + .5").eval(&Empty).unwrap(), 15.5);
    }

    #[test]
    fn eval_errors() {
        assert!(matches!(
            p("sqrt(V)").eval(&("V", -1.0)),
            Err(EvalError::Domain { ref node, .. }) if node == "sqrt"
        ));
        assert!(matches!(p("ln(V)").eval(&("V", 0.0)), Err(EvalError::Domain { .. })));
        assert!(matches!(p("1/V").eval(&("V", 0.0)), Err(EvalError::Domain { .. })));
        assert!(matches!(p("V^(-1)").eval(&("V", 0.0)), Err(EvalError::Domain { .. })));
        assert_eq!(p("p*V").eval(&("V", 1.0)), Err(EvalError::Unbound("p".into())));
    }

    #[test]
    fn negative_base_integer_power() {
        assert_eq!(p("x^3").eval(&("x", -2.0)).unwrap(), -8.0);
        assert!(p("x^0.5").eval(&("x", -2.0)).is_err());
    }

    #[test]
    fn derivative_of_linear() {
        assert_eq!(differentiate(&p("p*V"), "V").unwrap(), v("p"));
    }

    #[test]
    fn power_rule_folds_exponent() {
        let d = differentiate(&p("V^(3/2)"), "V").unwrap();
        let expected = p("(3/2)*V^(1/2)");
        for x in [0.25, 1.0, 4.0] {
            let got = d.eval(&("V", x)).unwrap();
            let want = expected.eval(&("V", x)).unwrap();
            assert!((got - want).abs() < 1e-15, "{d} at {x}");
        }
        assert_eq!(d.to_string(), "1.5*V^0.5");
    }

    #[test]
    fn non_smooth_nodes_are_rejected() {
        let err = differentiate(&p("abs(V)"), "V").unwrap_err();
        assert_eq!(err, DiffError::NonSmooth { node: "abs(V)".into() });
        assert!(differentiate(&p("min(V, 1)"), "V").is_err());
        assert!(differentiate(&p("piecewise(V>1: V, else: 1)"), "V").is_err());
        // constant with respect to V
        assert_eq!(differentiate(&p("abs(p)*V"), "V").unwrap(), p("abs(p)"));
    }

    #[test]
    fn fd_examples() {
        let sq = p("V^2");
        assert!((fd_derivative(&Bound { expr: &sq, var: "V" }, 1.0).unwrap() - 2.0).abs() < 1e-7);
        let lin = p("3*V");
        assert!((fd_derivative(&Bound { expr: &lin, var: "V" }, 10.0).unwrap() - 3.0).abs() < 1e-7);
        let f = p("V^(3/2)");
        let d = differentiate(&f, "V").unwrap();
        let sym = d.eval(&("V", 0.25)).unwrap();
        let fd = fd_derivative(&Bound { expr: &f, var: "V" }, 0.25).unwrap();
        assert!((sym - 0.75).abs() < 1e-15);
        assert!((fd - sym).abs() < 1e-6);
    }

    #[test]
    fn substitution_and_free_vars() {
        let e = p("k*V + gamma");
        assert_eq!(e.free_vars().into_iter().collect::<Vec<_>>(), ["V", "gamma", "k"]);
        let env = Env::new().with("k", 2.0).with("gamma", 0.5);
        let s = e.substitute(&|n| env.get(n));
        assert_eq!(s.free_vars().len(), 1);
        assert_eq!(s.eval(&("V", 1.0)).unwrap(), 2.5);
    }

    #[test]
    fn printer_examples() {
        for s in [
            "a-(b-c)",
            "-(a*b)",
            "(-a)^2",
            "a/(b*c)",
            "(a^b)^c",
            "a*-b",
            "piecewise(x > 1: 1, x < -1: -1, else: x^3)",
            "min(a, b+c)",
            "--x",
        ] {
            let e = p(s);
            assert_eq!(p(&e.to_string()), e, "{s} printed as {e}");
        }
    }

    // Parser-normal trees: literals are non-negative, as the parser never
    // produces a negative literal.
    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0u32..1000).prop_map(|n| Expr::Num(n as f64 / 8.0)),
            prop_oneof![Just("V"), Just("s"), Just("p_2")].prop_map(Expr::var),
        ];
        leaf.prop_recursive(5, 48, 4, |inner| {
            let unary = prop_oneof![
                Just(UnaryOp::Neg),
                Just(UnaryOp::Abs),
                Just(UnaryOp::Sqrt),
                Just(UnaryOp::Sin),
                Just(UnaryOp::Cos),
                Just(UnaryOp::Tanh),
                Just(UnaryOp::Exp),
                Just(UnaryOp::Ln),
            ];
            let binary = prop_oneof![
                Just(BinaryOp::Add),
                Just(BinaryOp::Sub),
                Just(BinaryOp::Mul),
                Just(BinaryOp::Div),
                Just(BinaryOp::Pow),
            ];
            let cmp = prop_oneof![
                Just(CmpOp::Lt),
                Just(CmpOp::Le),
                Just(CmpOp::Gt),
                Just(CmpOp::Ge),
                Just(CmpOp::Eq),
                Just(CmpOp::Ne),
            ];
            prop_oneof![
                (unary, inner.clone()).prop_map(|(op, e)| Expr::unary(op, e)),
                (binary, inner.clone(), inner.clone()).prop_map(|(op, l, r)| Expr::binary(op, l, r)),
                prop::collection::vec(inner.clone(), 1..4).prop_map(Expr::Min),
                prop::collection::vec(inner.clone(), 1..4).prop_map(Expr::Max),
                (
                    prop::collection::vec((inner.clone(), cmp, inner.clone(), inner.clone()), 0..3),
                    inner.clone()
                )
                    .prop_map(|(bs, otherwise)| Expr::Piecewise {
                        branches: bs
                            .into_iter()
                            .map(|(lhs, op, rhs, value)| Branch {
                                cond: Condition { lhs, op, rhs },
                                value,
                            })
                            .collect(),
                        otherwise: Box::new(otherwise),
                    }),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr()) {
            let printed = e.to_string();
            let reparsed = parse(&printed).unwrap();
            prop_assert_eq!(&reparsed, &e);
            // and once more from the parsed form
            prop_assert_eq!(parse(&reparsed.to_string()).unwrap(), reparsed);
        }

        #[test]
        fn eval_is_pure(e in arb_expr(), x in -3.0f64..3.0) {
            let env = Env::new().with("V", x).with("s", x * 0.5).with("p_2", 1.25);
            let a = e.eval(&env).map(f64::to_bits);
            let b = e.eval(&env).map(f64::to_bits);
            prop_assert_eq!(a, b);
        }
    }
}
