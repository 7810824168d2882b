//! Scalar expressions in one variable `x`.
//!
//! The grammar accepts numbers, `x`, `pi`, the binary operators `+ - * /`,
//! unary minus, parentheses and the functions `sin`, `cos`, `exp`, `tanh`,
//! `abs`, `min(·,·)` and `max(·,·)`. Parsed expressions are compiled to a small
//! stack program so that evaluation does not allocate.

use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message} at offset {offset} in `{input}`")]
pub struct ExprError {
    pub message: String,
    pub offset: usize,
    pub input: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    X,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sin,
    Cos,
    Exp,
    Tanh,
    Abs,
    Min,
    Max,
}

/// A compiled expression.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    code: Vec<Op>,
    depth: usize,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

const STACK: usize = 64;

impl Expr {
    pub fn parse(source: &str) -> Result<Expr, ExprError> {
        let tokens = tokenize(source)?;
        let mut p = Parser { tokens, pos: 0, code: Vec::new(), source };
        p.expr()?;
        if p.pos < p.tokens.len() {
            return Err(p.error("unexpected token"));
        }
        let code = p.code;
        let depth = max_depth(&code);
        if depth > STACK {
            return Err(ExprError { message: "expression nests too deeply".into(), offset: 0, input: source.into() });
        }
        Ok(Expr { source: source.trim().to_string(), code, depth })
    }

    /// The constant expression `c`.
    pub fn constant(c: f64) -> Expr {
        Expr { source: format!("{c}"), code: vec![Op::Const(c)], depth: 1 }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Whether the expression does not depend on `x`.
    pub fn is_constant(&self) -> bool {
        !self.code.contains(&Op::X)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let mut stack = [0.0f64; STACK];
        let mut sp = 0usize;
        debug_assert!(self.depth <= STACK);
        for op in &self.code {
            match *op {
                Op::Const(c) => {
                    stack[sp] = c;
                    sp += 1;
                }
                Op::X => {
                    stack[sp] = x;
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Sin => stack[sp - 1] = stack[sp - 1].sin(),
                Op::Cos => stack[sp - 1] = stack[sp - 1].cos(),
                Op::Exp => stack[sp - 1] = stack[sp - 1].exp(),
                Op::Tanh => stack[sp - 1] = stack[sp - 1].tanh(),
                Op::Abs => stack[sp - 1] = stack[sp - 1].abs(),
                binary => {
                    sp -= 1;
                    let r = stack[sp];
                    let l = &mut stack[sp - 1];
                    *l = match binary {
                        Op::Add => *l + r,
                        Op::Sub => *l - r,
                        Op::Mul => *l * r,
                        Op::Div => *l / r,
                        Op::Min => l.min(r),
                        Op::Max => l.max(r),
                        _ => unreachable!(),
                    };
                }
            }
        }
        stack[0]
    }
}

fn max_depth(code: &[Op]) -> usize {
    let mut d: usize = 0;
    let mut m = 0;
    for op in code {
        match op {
            Op::Const(_) | Op::X => d += 1,
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Min | Op::Max => d -= 1,
            _ => {}
        }
        m = m.max(d);
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v = text.parse::<f64>().map_err(|_| ExprError {
                message: format!("malformed number `{text}`"),
                offset: start,
                input: src.into(),
            })?;
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
        } else if "+-*/(),".contains(c) {
            out.push((Tok::Sym(c), i));
            i += 1;
        } else {
            return Err(ExprError { message: format!("unexpected character `{c}`"), offset: i, input: src.into() });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    code: Vec<Op>,
    source: &'a str,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ExprError {
        let offset = self.tokens.get(self.pos).map_or(self.source.len(), |t| t.1);
        ExprError { message: message.into(), offset, input: self.source.into() }
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.0)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ExprError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{c}`")))
        }
    }

    fn expr(&mut self) -> Result<(), ExprError> {
        self.term()?;
        loop {
            if self.eat('+') {
                self.term()?;
                self.code.push(Op::Add);
            } else if self.eat('-') {
                self.term()?;
                self.code.push(Op::Sub);
            } else {
                return Ok(());
            }
        }
    }

    fn term(&mut self) -> Result<(), ExprError> {
        self.unary()?;
        loop {
            if self.eat('*') {
                self.unary()?;
                self.code.push(Op::Mul);
            } else if self.eat('/') {
                self.unary()?;
                self.code.push(Op::Div);
            } else {
                return Ok(());
            }
        }
    }

    fn unary(&mut self) -> Result<(), ExprError> {
        if self.eat('-') {
            self.unary()?;
            self.code.push(Op::Neg);
            Ok(())
        } else if self.eat('+') {
            self.unary()
        } else {
            self.atom()
        }
    }

    fn atom(&mut self) -> Result<(), ExprError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                self.code.push(Op::Const(v));
                Ok(())
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                self.expr()?;
                self.expect(')')
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "x" => {
                        self.code.push(Op::X);
                        Ok(())
                    }
                    "pi" => {
                        self.code.push(Op::Const(std::f64::consts::PI));
                        Ok(())
                    }
                    "sin" | "cos" | "exp" | "tanh" | "abs" => {
                        self.expect('(')?;
                        self.expr()?;
                        self.expect(')')?;
                        self.code.push(match name.as_str() {
                            "sin" => Op::Sin,
                            "cos" => Op::Cos,
                            "exp" => Op::Exp,
                            "tanh" => Op::Tanh,
                            _ => Op::Abs,
                        });
                        Ok(())
                    }
                    "min" | "max" => {
                        self.expect('(')?;
                        self.expr()?;
                        self.expect(',')?;
                        self.expr()?;
                        self.expect(')')?;
                        self.code.push(if name == "min" { Op::Min } else { Op::Max });
                        Ok(())
                    }
                    _ => {
                        self.pos -= 1;
                        Err(self.error(&format!("unknown identifier `{name}`")))
                    }
                }
            }
            _ => Err(self.error("expected a number, `x`, a function or `(`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_benchmark_coefficients() {
        let a = Expr::parse("1 + 0.3*sin(x)").unwrap();
        let b = Expr::parse("0.5 * cos(x)").unwrap();
        for x in [-3.0, 0.0, 0.7, 12.0] {
            assert_eq!(a.eval(x), 1.0 + 0.3 * f64::sin(x));
            assert_eq!(b.eval(x), 0.5 * f64::cos(x));
        }
    }

    #[test]
    fn precedence_and_unary_minus() {
        let e = Expr::parse("-x*2 + 3/(1+x) - -1").unwrap();
        let x = 0.5;
        assert_eq!(e.eval(x), -x * 2.0 + 3.0 / (1.0 + x) + 1.0);
        let e = Expr::parse("max(min(x, 1), -1) + abs(x)*exp(-x)*tanh(x)").unwrap();
        assert_eq!(e.eval(2.0), 1.0 + 2.0 * (-2f64).exp() * 2f64.tanh());
        assert!(Expr::parse("2.5e-1 + pi").unwrap().is_constant());
    }

    #[test]
    fn reports_errors() {
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("sqrt(x)").unwrap_err().message.contains("sqrt"));
        assert!(Expr::parse("(x").is_err());
        assert!(Expr::parse("x x").is_err());
        assert_eq!(Expr::parse("x $ 1").unwrap_err().offset, 2);
    }
}
