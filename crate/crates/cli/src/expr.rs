//! Arithmetic expressions over `t, x, y, z, u, v` for custom coefficients.
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := unary (("*" | "/") unary)*
//! unary  := "-" unary | power
//! power  := atom ("^" integer)?
//! atom   := number | variable | func "(" expr ("," expr)* ")" | "(" expr ")"
//! func   := min | max | abs | exp
//! ```

use std::fmt;

use isaacs_core::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    X,
    Y,
    Z,
    U,
    V,
}

impl Var {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "t" => Self::T,
            "x" => Self::X,
            "y" => Self::Y,
            "z" => Self::Z,
            "u" => Self::U,
            "v" => Self::V,
            _ => return None,
        })
    }

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["t", "x", "y", "z", "u", "v"][self.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
    Min(Box<Node>, Box<Node>),
    Max(Box<Node>, Box<Node>),
    Abs(Box<Node>),
    Exp(Box<Node>),
}

/// Parsed expression together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at column {}: {}", self.position + 1, self.message)
    }
}

impl std::error::Error for ParseError {}

/// Values of `t, x, y, z, u, v` in that order.
pub type Bindings<T> = [T; 6];

impl Expr {
    pub fn parse(source: &str) -> Result<Self, ParseError> {
        let mut p = Parser {
            src: source.as_bytes(),
            pos: 0,
        };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.error(format!("unexpected '{}'", p.src[p.pos] as char)));
        }
        Ok(Self {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Variables referenced anywhere in the expression.
    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        collect_vars(&self.root, &mut out);
        out.sort_by_key(|v| v.index());
        out.dedup();
        out
    }

    /// Fails naming the first variable outside `allowed`.
    pub fn require_only(&self, allowed: &[Var]) -> Result<(), Var> {
        match self.variables().into_iter().find(|v| !allowed.contains(v)) {
            Some(v) => Err(v),
            None => Ok(()),
        }
    }

    pub fn eval<T: Scalar>(&self, vars: &Bindings<T>) -> T {
        eval(&self.root, vars)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn collect_vars(node: &Node, out: &mut Vec<Var>) {
    match node {
        Node::Num(_) => {}
        Node::Var(v) => out.push(*v),
        Node::Neg(a) | Node::Pow(a, _) | Node::Abs(a) | Node::Exp(a) => collect_vars(a, out),
        Node::Add(a, b)
        | Node::Sub(a, b)
        | Node::Mul(a, b)
        | Node::Div(a, b)
        | Node::Min(a, b)
        | Node::Max(a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
    }
}

fn eval<T: Scalar>(node: &Node, vars: &Bindings<T>) -> T {
    match node {
        Node::Num(c) => T::lit(*c),
        Node::Var(v) => vars[v.index()],
        Node::Neg(a) => -eval(a, vars),
        Node::Add(a, b) => eval(a, vars) + eval(b, vars),
        Node::Sub(a, b) => eval(a, vars) - eval(b, vars),
        Node::Mul(a, b) => eval(a, vars) * eval(b, vars),
        Node::Div(a, b) => eval(a, vars) / eval(b, vars),
        Node::Pow(a, n) => eval(a, vars).powi(*n),
        Node::Min(a, b) => eval(a, vars).min(eval(b, vars)),
        Node::Max(a, b) => eval(a, vars).max(eval(b, vars)),
        Node::Abs(a) => eval(a, vars).abs(),
        Node::Exp(a) => eval(a, vars).exp(),
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            position: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
            let n: i32 = digits.parse().map_err(|_| ParseError {
                position: start,
                message: "exponent must be a nonnegative integer literal".into(),
            })?;
            return Ok(Node::Pow(Box::new(base), n));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
                if let Some(v) = Var::parse(name) {
                    return Ok(Node::Var(v));
                }
                let arity = match name {
                    "min" | "max" => 2,
                    "abs" | "exp" => 1,
                    _ => {
                        return Err(ParseError {
                            position: start,
                            message: format!("unknown identifier '{name}'"),
                        })
                    }
                };
                self.expect(b'(')?;
                let mut args = vec![self.expr()?];
                while self.eat(b',') {
                    args.push(self.expr()?);
                }
                self.expect(b')')?;
                if args.len() != arity {
                    return Err(ParseError {
                        position: start,
                        message: format!("{name} takes {arity} argument(s), got {}", args.len()),
                    });
                }
                let mut it = args.into_iter().map(Box::new);
                let a = it.next().expect("arity checked");
                Ok(match name {
                    "min" => Node::Min(a, it.next().expect("arity checked")),
                    "max" => Node::Max(a, it.next().expect("arity checked")),
                    "abs" => Node::Abs(a),
                    _ => Node::Exp(a),
                })
            }
            Some(c) => Err(self.error(format!("unexpected '{}'", c as char))),
            None => Err(self.error("unexpected end of expression")),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        let s = self.src;
        let digits = |p: &mut usize| {
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
        };
        digits(&mut self.pos);
        if self.pos < s.len() && s[self.pos] == b'.' {
            self.pos += 1;
            digits(&mut self.pos);
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < s.len() && (s[self.pos] == b'+' || s[self.pos] == b'-') {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(&mut self.pos);
            if self.pos == exp_start {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).unwrap_or("");
        text.parse::<f64>().map(Node::Num).map_err(|_| ParseError {
            position: start,
            message: format!("malformed number '{text}'"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, vars: [f64; 6]) -> f64 {
        Expr::parse(src).unwrap().eval(&vars)
    }

    #[test]
    fn precedence_and_functions() {
        let z = [0.0; 6];
        assert_eq!(ev("1 + 2 * 3", z), 7.0);
        assert_eq!(ev("(1 + 2) * 3", z), 9.0);
        assert_eq!(ev("-2^2", z), -4.0);
        assert_eq!(ev("2 - 3 - 4", z), -5.0);
        assert_eq!(ev("8 / 4 / 2", z), 1.0);
        assert_eq!(ev("max(1, min(5, 3))", z), 3.0);
        assert_eq!(ev("abs(-1.5e1)", z), 15.0);
        assert_eq!(ev("exp(0)", z), 1.0);
    }

    #[test]
    fn variables() {
        let vars = [0.5, 2.0, -1.0, 3.0, 1.0, -1.0];
        assert_eq!(ev("u * v + x^2 - y * z + t", vars), -1.0 + 4.0 + 3.0 + 0.5);
        let e = Expr::parse("x + u * v").unwrap();
        assert_eq!(e.variables(), vec![Var::X, Var::U, Var::V]);
        assert_eq!(e.require_only(&[Var::X]), Err(Var::U));
        assert!(e.require_only(&[Var::X, Var::U, Var::V]).is_ok());
    }

    #[test]
    fn errors_carry_positions() {
        let e = Expr::parse("1 + foo(x)").unwrap_err();
        assert_eq!(e.position, 4);
        assert!(e.message.contains("foo"));
        assert!(Expr::parse("min(1)").is_err());
        assert!(Expr::parse("(1 + 2").is_err());
        assert!(Expr::parse("1 2").is_err());
        assert!(Expr::parse("x ^ y").is_err());
        assert!(Expr::parse("").is_err());
    }

    #[test]
    fn generic_evaluation() {
        let e = Expr::parse("0.5 * x").unwrap();
        assert_eq!(e.eval::<f32>(&[0.0, 3.0, 0.0, 0.0, 0.0, 0.0]), 1.5f32);
    }
}
