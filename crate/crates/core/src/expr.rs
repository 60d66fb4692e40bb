//! Small arithmetic expressions in `x, y, z` used for parameter and layer fields.
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, numbers, `pi`, and the functions
//! `sin cos exp ln log sqrt tanh`. Evaluation runs on [`Taylor3`] jets, so derivatives
//! up to third order are exact.

use crate::real::Real;
use crate::taylor::Taylor3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExprError {
    #[error("unexpected character '{0}' at offset {1}")]
    BadChar(char, usize),
    #[error("unexpected end of expression")]
    Eof,
    #[error("unexpected token at offset {0}")]
    Unexpected(usize),
    #[error("unknown identifier '{0}'")]
    UnknownIdent(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Bin(Op, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Tanh,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let b = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_digit() || b[i] == b'.') {
                i += 1;
            }
            if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                let save = i;
                i += 1;
                if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
                    i += 1;
                }
                if i < b.len() && (b[i] as char).is_ascii_digit() {
                    while i < b.len() && (b[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let v: f64 = src[start..i].parse().map_err(|_| ExprError::BadChar(c, start))?;
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
        } else if "+-*/^()".contains(c) {
            out.push((Tok::Sym(c), i));
            i += 1;
        } else {
            return Err(ExprError::BadChar(c, i));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }
    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.1).unwrap_or(usize::MAX)
    }
    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }
    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.product()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Bin(Op::Add, Box::new(lhs), Box::new(self.product()?));
            } else if self.eat('-') {
                lhs = Expr::Bin(Op::Sub, Box::new(lhs), Box::new(self.product()?));
            } else {
                return Ok(lhs);
            }
        }
    }
    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Expr::Bin(Op::Mul, Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Expr::Bin(Op::Div, Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }
    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat('-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else if self.eat('+') {
            self.unary()
        } else {
            self.power()
        }
    }
    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.eat('^') {
            // right associative; exponent may carry its own sign
            let exp = self.unary()?;
            Ok(Expr::Bin(Op::Pow, Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }
    fn atom(&mut self) -> Result<Expr, ExprError> {
        let off = self.offset();
        match self.peek().cloned() {
            None => Err(ExprError::Eof),
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.sum()?;
                if !self.eat(')') {
                    return Err(if self.peek().is_none() { ExprError::Eof } else { ExprError::Unexpected(self.offset()) });
                }
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "x" => Ok(Expr::Var(0)),
                    "y" => Ok(Expr::Var(1)),
                    "z" => Ok(Expr::Var(2)),
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    _ => {
                        let f = match name.as_str() {
                            "sin" => Func::Sin,
                            "cos" => Func::Cos,
                            "exp" => Func::Exp,
                            "ln" | "log" => Func::Ln,
                            "sqrt" => Func::Sqrt,
                            "tanh" => Func::Tanh,
                            _ => return Err(ExprError::UnknownIdent(name)),
                        };
                        if !self.eat('(') {
                            return Err(ExprError::Unexpected(self.offset()));
                        }
                        let arg = self.sum()?;
                        if !self.eat(')') {
                            return Err(ExprError::Unexpected(self.offset()));
                        }
                        Ok(Expr::Call(f, Box::new(arg)))
                    }
                }
            }
            Some(Tok::Sym(_)) => Err(ExprError::Unexpected(off)),
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let toks = lex(src)?;
        let mut p = Parser { toks, pos: 0 };
        let e = p.sum()?;
        if p.pos != p.toks.len() {
            return Err(ExprError::Unexpected(p.offset()));
        }
        Ok(e)
    }

    /// True when the expression does not reference x, y or z.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::Var(_) => false,
            Expr::Neg(a) | Expr::Call(_, a) => a.is_constant(),
            Expr::Bin(_, a, b) => a.is_constant() && b.is_constant(),
        }
    }

    fn const_value(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            Expr::Neg(a) => a.const_value().map(|v| -v),
            _ => None,
        }
    }

    pub fn eval_jet<T: Real>(&self, p: &[Taylor3<T>; 3]) -> Taylor3<T> {
        match self {
            Expr::Num(v) => Taylor3::cst(T::lit(*v)),
            Expr::Var(i) => p[*i],
            Expr::Neg(a) => -a.eval_jet(p),
            Expr::Call(f, a) => {
                let u = a.eval_jet(p);
                match f {
                    Func::Sin => u.sin(),
                    Func::Cos => u.cos(),
                    Func::Exp => u.exp(),
                    Func::Ln => u.ln(),
                    Func::Sqrt => u.sqrt(),
                    Func::Tanh => u.tanh(),
                }
            }
            Expr::Bin(op, a, b) => {
                let u = a.eval_jet(p);
                match op {
                    Op::Add => u + b.eval_jet(p),
                    Op::Sub => u - b.eval_jet(p),
                    Op::Mul => u * b.eval_jet(p),
                    Op::Div => u / b.eval_jet(p),
                    Op::Pow => match b.const_value() {
                        Some(e) if e.fract() == 0.0 && e.abs() < 64.0 => u.powi(e as i32),
                        Some(e) => u.powf(T::lit(e)),
                        None => (b.eval_jet(p) * u.ln()).exp(),
                    },
                }
            }
        }
    }

    pub fn eval<T: Real>(&self, x: [T; 3]) -> T {
        match self {
            Expr::Num(v) => T::lit(*v),
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x),
            Expr::Call(f, a) => {
                let u = a.eval(x);
                match f {
                    Func::Sin => u.sin(),
                    Func::Cos => u.cos(),
                    Func::Exp => u.exp(),
                    Func::Ln => u.ln(),
                    Func::Sqrt => u.sqrt(),
                    Func::Tanh => u.tanh(),
                }
            }
            Expr::Bin(op, a, b) => {
                let u = a.eval(x);
                let v = b.eval(x);
                match op {
                    Op::Add => u + v,
                    Op::Sub => u - v,
                    Op::Mul => u * v,
                    Op::Div => u / v,
                    Op::Pow => match b.const_value() {
                        Some(e) if e.fract() == 0.0 && e.abs() < 64.0 => u.powi(e as i32),
                        _ => u.powf(v),
                    },
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_power() {
        let e = Expr::parse("1 + 2*x^2 - -y/4").unwrap();
        assert!((e.eval([3.0_f64, 2.0, 0.0]) - (1.0 + 18.0 + 0.5)).abs() < 1e-14);
        let e = Expr::parse("2^3^2").unwrap();
        assert_eq!(e.eval([0.0_f64; 3]), 512.0);
        let e = Expr::parse("-x^2").unwrap();
        assert_eq!(e.eval([3.0_f64, 0.0, 0.0]), -9.0);
    }

    #[test]
    fn functions_and_jets_agree() {
        let e = Expr::parse("sqrt(x*x + y*y + z*z) + 0.1*sin(pi*z) * exp(-x)").unwrap();
        let p = [0.3_f64, 0.4, 1.2];
        let j = e.eval_jet(&Taylor3::point(p));
        assert!((j.v - e.eval(p)).abs() < 1e-14);
        let h = 1e-6;
        let fd = (e.eval([p[0], p[1], p[2] + h]) - e.eval([p[0], p[1], p[2] - h])) / (2.0 * h);
        assert!((j.g[2] - fd).abs() < 1e-8);
    }

    #[test]
    fn errors() {
        assert!(matches!(Expr::parse("x +"), Err(ExprError::Eof)));
        assert!(matches!(Expr::parse("foo(x)"), Err(ExprError::UnknownIdent(_))));
        assert!(matches!(Expr::parse("x $ y"), Err(ExprError::BadChar('$', 2))));
        assert!(Expr::parse("(x").is_err());
        assert!(Expr::parse("3.5e-2*x").unwrap().eval([2.0_f64, 0.0, 0.0]) - 0.07 < 1e-15);
    }
}
