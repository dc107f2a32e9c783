use super::ast::{BinaryOp, Branch, CmpOp, Condition, Expr, UnaryOp};
use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(&'static str),
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::End => "end of input".to_string(),
        }
    }
}

const SYMBOLS: [&str; 16] = [
    "<=", ">=", "==", "!=", "<", ">", "+", "-", "*", "/", "^", "(", ")", ",", ":", "=",
];

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            // exponent only when digits follow, so `2e` stays a number times `e`
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let lit = &text[start..i];
            let v: f64 = lit.parse().map_err(|_| ParseError {
                offset: start,
                expected: vec!["number".into()],
                found: format!("`{lit}`"),
            })?;
            out.push((start, Tok::Num(v)));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
            continue;
        }
        match SYMBOLS.iter().find(|s| text[i..].starts_with(**s)) {
            Some(s) if *s != "=" => {
                out.push((start, Tok::Sym(s)));
                i += s.len();
            }
            _ => {
                let found = text[i..].chars().next().map(|ch| format!("`{ch}`")).unwrap_or_default();
                return Err(ParseError {
                    offset: start,
                    expected: vec!["expression".into()],
                    found,
                });
            }
        }
    }
    out.push((text.len(), Tok::End));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        ParseError {
            offset: self.offset(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
        }
    }

    fn eat(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Tok::Sym(s) if *s == sym) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, sym: &'static str) -> Result<(), ParseError> {
        if self.eat(sym) {
            Ok(())
        } else {
            Err(self.error(&[sym]))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Sym("+") => BinaryOp::Add,
                Tok::Sym("-") => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Sym("*") => BinaryOp::Mul,
                Tok::Sym("/") => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat("-") {
            return Ok(Expr::unary(UnaryOp::Neg, self.unary()?));
        }
        self.power()
    }

    // `^` binds tighter than unary minus and is right-associative.
    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat("^") {
            let exponent = self.unary()?;
            return Ok(Expr::binary(BinaryOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if name == "else" {
                    return Err(self.error(&["expression"]));
                }
                self.bump();
                if !matches!(self.peek(), Tok::Sym("(")) {
                    return Ok(Expr::Var(name));
                }
                self.bump();
                self.call(&name)
            }
            _ => Err(self.error(&["number", "identifier", "`(`", "`-`"])),
        }
    }

    fn call(&mut self, name: &str) -> Result<Expr, ParseError> {
        if name == "piecewise" {
            return self.piecewise();
        }
        let fn_offset = self.toks[self.pos - 2].0;
        let mut args = vec![self.expr()?];
        while self.eat(",") {
            args.push(self.expr()?);
        }
        self.expect(")")?;
        if let Some(op) = UnaryOp::from_function_name(name) {
            if args.len() != 1 {
                return Err(ParseError {
                    offset: fn_offset,
                    expected: vec![format!("exactly one argument to `{name}`")],
                    found: format!("{} arguments", args.len()),
                });
            }
            return Ok(Expr::unary(op, args.pop().expect("one argument")));
        }
        match name {
            "min" => Ok(Expr::Min(args)),
            "max" => Ok(Expr::Max(args)),
            _ => Err(ParseError {
                offset: fn_offset,
                expected: vec![
                    "abs", "sqrt", "sin", "cos", "tanh", "exp", "ln", "min", "max", "piecewise",
                ]
                .into_iter()
                .map(String::from)
                .collect(),
                found: format!("function `{name}`"),
            }),
        }
    }

    fn piecewise(&mut self) -> Result<Expr, ParseError> {
        let mut branches = Vec::new();
        loop {
            if matches!(self.peek(), Tok::Ident(s) if s == "else") {
                self.bump();
                self.expect(":")?;
                let otherwise = self.expr()?;
                self.expect(")")?;
                return Ok(Expr::Piecewise {
                    branches,
                    otherwise: Box::new(otherwise),
                });
            }
            let lhs = self.expr()?;
            let op = match self.peek() {
                Tok::Sym("<") => CmpOp::Lt,
                Tok::Sym("<=") => CmpOp::Le,
                Tok::Sym(">") => CmpOp::Gt,
                Tok::Sym(">=") => CmpOp::Ge,
                Tok::Sym("==") => CmpOp::Eq,
                Tok::Sym("!=") => CmpOp::Ne,
                _ => return Err(self.error(&["<", "<=", ">", ">=", "==", "!="])),
            };
            self.bump();
            let rhs = self.expr()?;
            self.expect(":")?;
            let value = self.expr()?;
            branches.push(Branch {
                cond: Condition { lhs, op, rhs },
                value,
            });
            if !self.eat(",") {
                return Err(self.error(&["`,` followed by a branch or `else`"]));
            }
        }
    }
}

/// Parses an expression string.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.error(&["operator", "end of input"]));
    }
    Ok(e)
}
