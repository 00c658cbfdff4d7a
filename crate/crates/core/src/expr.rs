//! Payoff expressions over `x1`, `x2` with exact first derivatives.
//!
//! Grammar:
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | atom
//! atom  := number | 'x1' | 'x2' | 'max' '(' expr ',' expr ')' | '(' expr ')'
//! ```

use crate::error::{Error, Result};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    X1,
    X2,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
}

/// Value with partial derivatives in `x1` and `x2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Dual {
    fn constant(v: f64) -> Self {
        Self { v, d1: 0.0, d2: 0.0 }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser { src, pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    /// `max(x2 - x1, 0)`.
    pub fn forward_start() -> Expr {
        Expr::max(Expr::X2 - Expr::X1, Expr::Const(0.0))
    }

    pub fn max(a: Expr, b: Expr) -> Expr {
        Expr::Max(Box::new(a), Box::new(b))
    }

    pub fn scaled(self, lambda: f64) -> Expr {
        Expr::Const(lambda) * self
    }

    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::X1 => x1,
            Expr::X2 => x2,
            Expr::Neg(a) => -a.eval(x1, x2),
            Expr::Add(a, b) => a.eval(x1, x2) + b.eval(x1, x2),
            Expr::Sub(a, b) => a.eval(x1, x2) - b.eval(x1, x2),
            Expr::Mul(a, b) => a.eval(x1, x2) * b.eval(x1, x2),
            Expr::Div(a, b) => a.eval(x1, x2) / b.eval(x1, x2),
            Expr::Max(a, b) => a.eval(x1, x2).max(b.eval(x1, x2)),
        }
    }

    /// Value and gradient. At a `max` tie the common derivative is used when
    /// both branches agree and zero otherwise.
    pub fn eval_grad(&self, x1: f64, x2: f64) -> Dual {
        match self {
            Expr::Const(c) => Dual::constant(*c),
            Expr::X1 => Dual { v: x1, d1: 1.0, d2: 0.0 },
            Expr::X2 => Dual { v: x2, d1: 0.0, d2: 1.0 },
            Expr::Neg(a) => {
                let a = a.eval_grad(x1, x2);
                Dual { v: -a.v, d1: -a.d1, d2: -a.d2 }
            }
            Expr::Add(a, b) => {
                let (a, b) = (a.eval_grad(x1, x2), b.eval_grad(x1, x2));
                Dual { v: a.v + b.v, d1: a.d1 + b.d1, d2: a.d2 + b.d2 }
            }
            Expr::Sub(a, b) => {
                let (a, b) = (a.eval_grad(x1, x2), b.eval_grad(x1, x2));
                Dual { v: a.v - b.v, d1: a.d1 - b.d1, d2: a.d2 - b.d2 }
            }
            Expr::Mul(a, b) => {
                let (a, b) = (a.eval_grad(x1, x2), b.eval_grad(x1, x2));
                Dual { v: a.v * b.v, d1: a.d1 * b.v + a.v * b.d1, d2: a.d2 * b.v + a.v * b.d2 }
            }
            Expr::Div(a, b) => {
                let (a, b) = (a.eval_grad(x1, x2), b.eval_grad(x1, x2));
                let inv = 1.0 / b.v;
                Dual {
                    v: a.v * inv,
                    d1: (a.d1 * b.v - a.v * b.d1) * inv * inv,
                    d2: (a.d2 * b.v - a.v * b.d2) * inv * inv,
                }
            }
            Expr::Max(a, b) => {
                let (a, b) = (a.eval_grad(x1, x2), b.eval_grad(x1, x2));
                if a.v > b.v {
                    a
                } else if b.v > a.v {
                    b
                } else if a.d1 == b.d1 && a.d2 == b.d2 {
                    a
                } else {
                    Dual::constant(a.v)
                }
            }
        }
    }

    pub fn depends_on_x2(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::X1 => false,
            Expr::X2 => true,
            Expr::Neg(a) => a.depends_on_x2(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Max(a, b) => {
                a.depends_on_x2() || b.depends_on_x2()
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Const(_) => true,
            Expr::X1 | Expr::X2 => false,
            Expr::Neg(a) => a.is_constant(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Max(a, b) => {
                a.is_constant() && b.is_constant()
            }
        }
    }

    /// Pushes `a − b` for every `max(a, b)` node, in a fixed traversal order.
    pub fn switch_values(&self, x1: f64, x2: f64, out: &mut Vec<f64>) {
        self.switches(x1, x2, out, None);
    }

    /// As [`Expr::switch_values`], restricted to switches that do not involve `x2`.
    pub fn x1_switch_values(&self, x1: f64, out: &mut Vec<f64>) {
        self.switches(x1, 0.0, out, Some(false));
    }

    fn switches(&self, x1: f64, x2: f64, out: &mut Vec<f64>, want_x2: Option<bool>) {
        match self {
            Expr::Const(_) | Expr::X1 | Expr::X2 => {}
            Expr::Neg(a) => a.switches(x1, x2, out, want_x2),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.switches(x1, x2, out, want_x2);
                b.switches(x1, x2, out, want_x2);
            }
            Expr::Max(a, b) => {
                let uses_x2 = a.depends_on_x2() || b.depends_on_x2();
                if want_x2.is_none_or(|w| w == uses_x2) {
                    out.push(a.eval(x1, x2) - b.eval(x1, x2));
                }
                a.switches(x1, x2, out, want_x2);
                b.switches(x1, x2, out, want_x2);
            }
        }
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident, $variant:ident) => {
        impl std::ops::$tr for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$variant(Box::new(self), Box::new(rhs))
            }
        }
    };
}

binop!(Add, add, Add);
binop!(Sub, sub, Sub);
binop!(Mul, mul, Mul);
binop!(Div, div, Div);

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::X1 => f.write_str("x1"),
            Expr::X2 => f.write_str("x2"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::Expression { pos: self.pos, msg: msg.to_string() }
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected '{c}'")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = lhs + self.term()?;
            } else if self.eat('-') {
                lhs = lhs - self.term()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = lhs * self.unary()?;
            } else if self.eat('/') {
                lhs = lhs / self.unary()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            Ok(-self.unary()?)
        } else {
            self.atom()
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        self.skip_ws();
        if self.eat('(') {
            let e = self.expr()?;
            self.expect(')')?;
            return Ok(e);
        }
        let rest = self.rest();
        let ident: String = rest.chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '_').collect();
        if ident.is_empty() {
            return Err(self.error("expected a number, variable or '('"));
        }
        let start = self.pos;
        if ident.chars().next().is_some_and(|c| c.is_ascii_digit()) || rest.starts_with('.') {
            return self.number();
        }
        self.pos += ident.len();
        match ident.as_str() {
            "x1" => Ok(Expr::X1),
            "x2" => Ok(Expr::X2),
            "max" => {
                self.expect('(')?;
                let a = self.expr()?;
                self.expect(',')?;
                let b = self.expr()?;
                self.expect(')')?;
                Ok(Expr::max(a, b))
            }
            other => {
                self.pos = start;
                Err(self.error(&format!("unknown identifier '{other}'")))
            }
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let rest = self.rest();
        let mut end = 0;
        let bytes = rest.as_bytes();
        while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
            end += 1;
        }
        if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
            let mut k = end + 1;
            if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                k += 1;
            }
            if k < bytes.len() && bytes[k].is_ascii_digit() {
                while k < bytes.len() && bytes[k].is_ascii_digit() {
                    k += 1;
                }
                end = k;
            }
        }
        let value: f64 = rest[..end].parse().map_err(|_| self.error("malformed number"))?;
        self.pos += end;
        Ok(Expr::Const(value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_evaluates() {
        let e = Expr::parse("max(x2 - x1, 0)").unwrap();
        assert_eq!(e.eval(1.0, 2.5), 1.5);
        assert_eq!(e.eval(2.0, 1.0), 0.0);
        let e = Expr::parse("-2 * x1 / (1 + x2) - 3.5e-1").unwrap();
        assert!((e.eval(1.0, 1.0) - (-1.0 - 0.35)).abs() < 1e-15);
    }

    #[test]
    fn precedence_and_unary_minus() {
        assert_eq!(Expr::parse("1 + 2 * 3").unwrap().eval(0.0, 0.0), 7.0);
        assert_eq!(Expr::parse("-(1 - 2) - -1").unwrap().eval(0.0, 0.0), 2.0);
        assert_eq!(Expr::parse("8 / 4 / 2").unwrap().eval(0.0, 0.0), 1.0);
    }

    #[test]
    fn forward_start_gradient() {
        let f = Expr::forward_start();
        let g = f.eval_grad(1.0, 2.0);
        assert_eq!((g.d1, g.d2), (-1.0, 1.0));
        let g = f.eval_grad(2.0, 1.0);
        assert_eq!((g.d1, g.d2), (0.0, 0.0));
        let g = f.eval_grad(1.0, 1.0);
        assert_eq!((g.d1, g.d2), (0.0, 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let e = Expr::parse("x1 * x2 / (2 + x1) - max(x1 * x1, 3 * x2)").unwrap();
        let (x1, x2, eps) = (0.7, 1.3, 1e-6);
        let g = e.eval_grad(x1, x2);
        let fd1 = (e.eval(x1 + eps, x2) - e.eval(x1 - eps, x2)) / (2.0 * eps);
        let fd2 = (e.eval(x1, x2 + eps) - e.eval(x1, x2 - eps)) / (2.0 * eps);
        assert!((g.d1 - fd1).abs() < 1e-7 && (g.d2 - fd2).abs() < 1e-7);
    }

    #[test]
    fn reports_error_position() {
        match Expr::parse("x1 + foo") {
            Err(Error::Expression { pos, .. }) => assert_eq!(pos, 5),
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("max(x1 x2)").is_err());
        assert!(Expr::parse("x1 +").is_err());
        assert!(Expr::parse("(x1").is_err());
    }

    #[test]
    fn display_round_trips() {
        let e = Expr::parse("max(0.8 - x1, 0) * 2 - x2 / 3").unwrap();
        let again = Expr::parse(&e.to_string()).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn switches_split_by_dependency() {
        let e = Expr::parse("max(1 - x1, 0) + max(x2 - x1, 0)").unwrap();
        let mut all = Vec::new();
        e.switch_values(0.25, 2.0, &mut all);
        assert_eq!(all, vec![0.75, 1.75]);
        let mut outer = Vec::new();
        e.x1_switch_values(0.25, &mut outer);
        assert_eq!(outer, vec![0.75]);
    }
}
