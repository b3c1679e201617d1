//! A small arithmetic language for coefficient formulas.
//!
//! Formulas are written over the spatial variables `x` and `y`, e.g.
//! `3 + 2*sin(pi*x)*sin(pi*y)`. The grammar, from loosest to tightest binding:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?            right-associative
//! atom    := number | 'x' | 'y' | 'pi' | '(' sum ')'
//!          | func '(' sum (',' sum)* ')'
//!          | 'piecewise' '(' var (';' threshold ':' sum)* ';' 'else' ':' sum ')'
//! ```
//!
//! A piecewise branch `t: e` applies when the variable is `<= t`; branches are
//! tested in order and the `else` branch catches the rest.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { offset: usize, name: String },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownIdentifier { offset, .. } => {
                *offset
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero in `{expr}`")]
    DivisionByZero { expr: String },
    #[error("domain error in `{expr}`: {reason}")]
    Domain { expr: String, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
    Min,
    Max,
    /// Positive part, `max(t, 0)`.
    Pos,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "pos" => Func::Pos,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Pos => "pos",
        }
    }

    /// `None` means variadic with at least two arguments.
    fn arity(self) -> Option<usize> {
        match self {
            Func::Min | Func::Max => None,
            _ => Some(1),
        }
    }

    /// Whether the function is twice continuously differentiable on its domain.
    fn is_smooth(self) -> bool {
        !matches!(self, Func::Abs | Func::Min | Func::Max | Func::Pos)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// The branch applies when the variable is `<= threshold`.
    pub threshold: f64,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Pi,
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
    Piecewise {
        var: Var,
        branches: Vec<Branch>,
        otherwise: Box<Expr>,
    },
}

impl Expr {
    pub fn eval(&self, x: f64, y: f64) -> Result<f64, EvalError> {
        let value = match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::Y) => y,
            Expr::Pi => std::f64::consts::PI,
            Expr::Neg(inner) => -inner.eval(x, y)?,
            Expr::Binary(op, lhs, rhs) => {
                let a = lhs.eval(x, y)?;
                let b = rhs.eval(x, y)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::DivisionByZero {
                                expr: self.to_string(),
                            });
                        }
                        a / b
                    }
                    BinOp::Pow => {
                        if a < 0.0 && b.fract() != 0.0 {
                            return Err(EvalError::Domain {
                                expr: self.to_string(),
                                reason: "fractional power of a negative base",
                            });
                        }
                        if a == 0.0 && b < 0.0 {
                            return Err(EvalError::DivisionByZero {
                                expr: self.to_string(),
                            });
                        }
                        a.powf(b)
                    }
                }
            }
            Expr::Call(func, args) => {
                let first = args[0].eval(x, y)?;
                match func {
                    Func::Sin => first.sin(),
                    Func::Cos => first.cos(),
                    Func::Exp => first.exp(),
                    Func::Sqrt => {
                        if first < 0.0 {
                            return Err(EvalError::Domain {
                                expr: self.to_string(),
                                reason: "square root of a negative number",
                            });
                        }
                        first.sqrt()
                    }
                    Func::Abs => first.abs(),
                    Func::Pos => first.max(0.0),
                    Func::Min | Func::Max => {
                        let mut acc = first;
                        for arg in &args[1..] {
                            let v = arg.eval(x, y)?;
                            acc = if *func == Func::Min { acc.min(v) } else { acc.max(v) };
                        }
                        acc
                    }
                }
            }
            Expr::Piecewise {
                var,
                branches,
                otherwise,
            } => {
                let t = match var {
                    Var::X => x,
                    Var::Y => y,
                };
                match branches.iter().find(|b| t <= b.threshold) {
                    Some(branch) => branch.expr.eval(x, y)?,
                    None => otherwise.eval(x, y)?,
                }
            }
        };
        if !value.is_finite() {
            return Err(EvalError::Domain {
                expr: self.to_string(),
                reason: "non-finite result",
            });
        }
        Ok(value)
    }

    /// True when the formula contains no kinks or jumps (`abs`, `min`, `max`,
    /// `pos`, `piecewise`), so second derivatives may be approximated by
    /// finite differences.
    pub fn is_twice_differentiable(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Pi => true,
            Expr::Neg(e) => e.is_twice_differentiable(),
            Expr::Binary(_, a, b) => a.is_twice_differentiable() && b.is_twice_differentiable(),
            Expr::Call(f, args) => f.is_smooth() && args.iter().all(Expr::is_twice_differentiable),
            Expr::Piecewise { .. } => false,
        }
    }

    /// Whether the formula references no spatial variable.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Pi => true,
            Expr::Var(_) | Expr::Piecewise { .. } => false,
            Expr::Neg(e) => e.is_constant(),
            Expr::Binary(_, a, b) => a.is_constant() && b.is_constant(),
            Expr::Call(_, args) => args.iter().all(Expr::is_constant),
        }
    }
}

/// Fully parenthesized output that parses back to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Pi => f.write_str("pi"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Expr::Piecewise {
                var,
                branches,
                otherwise,
            } => {
                write!(f, "piecewise({}", var.name())?;
                for b in branches {
                    write!(f, "; {}: {}", b.threshold, b.expr)?;
                }
                write!(f, "; else: {otherwise})")
            }
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let tokens = lex(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    if parser.tokens.is_empty() {
        return Err(parser.error("empty formula"));
    }
    let expr = parser.sum()?;
    if parser.pos < parser.tokens.len() {
        return Err(parser.error("unexpected trailing input"));
    }
    Ok(expr)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == b'.' {
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
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let lit = &text[start..i];
            let value = lit.parse::<f64>().map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number `{lit}`"),
            })?;
            out.push((start, Tok::Num(value)));
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
        } else if b"+-*/^(),;:".contains(&c) {
            out.push((i, Tok::Sym(c as char)));
            i += 1;
        } else {
            let ch = text[i..].chars().next().unwrap_or('?');
            return Err(ParseError::Syntax {
                offset: i,
                message: format!("unexpected character `{ch}`"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn error(&self, message: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.offset(),
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat_sym(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{c}`")))
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = if self.eat_sym('+') {
                BinOp::Add
            } else if self.eat_sym('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.product()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat_sym('*') {
                BinOp::Mul
            } else if self.eat_sym('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_sym('-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat_sym('^') {
            let exponent = self.unary()?;
            Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        let Some(tok) = self.peek().cloned() else {
            return Err(self.error("unexpected end of input"));
        };
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Sym('(') => {
                let inner = self.sum()?;
                self.expect_sym(')')?;
                Ok(inner)
            }
            Tok::Sym(c) => {
                self.pos -= 1;
                Err(self.error(&format!("unexpected `{c}`")))
            }
            Tok::Ident(name) => match name.as_str() {
                "x" => Ok(Expr::Var(Var::X)),
                "y" => Ok(Expr::Var(Var::Y)),
                "pi" => Ok(Expr::Pi),
                "piecewise" => self.piecewise(),
                other => match Func::from_name(other) {
                    Some(func) => self.call(func, offset),
                    None => Err(ParseError::UnknownIdentifier {
                        offset,
                        name: name.clone(),
                    }),
                },
            },
        }
    }

    fn call(&mut self, func: Func, offset: usize) -> Result<Expr, ParseError> {
        self.expect_sym('(')?;
        let mut args = vec![self.sum()?];
        while self.eat_sym(',') {
            args.push(self.sum()?);
        }
        self.expect_sym(')')?;
        let ok = match func.arity() {
            Some(n) => args.len() == n,
            None => args.len() >= 2,
        };
        if !ok {
            return Err(ParseError::Syntax {
                offset,
                message: format!("wrong number of arguments to `{}`", func.name()),
            });
        }
        Ok(Expr::Call(func, args))
    }

    fn piecewise(&mut self) -> Result<Expr, ParseError> {
        self.expect_sym('(')?;
        let var = match self.peek() {
            Some(Tok::Ident(n)) if n == "x" => Var::X,
            Some(Tok::Ident(n)) if n == "y" => Var::Y,
            _ => return Err(self.error("piecewise expects `x` or `y` as its variable")),
        };
        self.pos += 1;
        let mut branches = Vec::new();
        loop {
            self.expect_sym(';')?;
            if matches!(self.peek(), Some(Tok::Ident(n)) if n == "else") {
                self.pos += 1;
                self.expect_sym(':')?;
                let otherwise = self.sum()?;
                self.expect_sym(')')?;
                return Ok(Expr::Piecewise {
                    var,
                    branches,
                    otherwise: Box::new(otherwise),
                });
            }
            let negative = self.eat_sym('-');
            let threshold = match self.peek() {
                Some(Tok::Num(v)) => {
                    let v = *v;
                    self.pos += 1;
                    if negative {
                        -v
                    } else {
                        v
                    }
                }
                _ => return Err(self.error("expected a numeric threshold or `else`")),
            };
            self.expect_sym(':')?;
            let expr = self.sum()?;
            branches.push(Branch { threshold, expr });
        }
    }
}
