//! Scalar functions of a vector variable, parsed from text.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' exponent)?
//! exponent:= ['-'] number | '(' ['-'] number ')'
//! atom    := number | 'x' index | ('exp' | 'ln') '(' expr ')' | '(' expr ')'
//! ```
//!
//! Variables are 1-based (`x1 .. xn`). Exponents must be numeric literals,
//! which keeps every expression differentiable wherever it is defined.
//! `-x1^2` parses as `-(x1^2)`.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("variable x{index} out of range for dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize },
    #[error("point has dimension {got}, expression expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    /// 0-based coordinate index.
    Var(usize),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Neg(Box<Node>),
    Pow(Box<Node>, f64),
    Exp(Box<Node>),
    Ln(Box<Node>),
}

/// A parsed expression over `x ∈ R^dim`. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    dim: usize,
}

impl Expr {
    pub fn parse(text: &str, dim: usize) -> Result<Self, ExprError> {
        let tokens = tokenize(text)?;
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            dim,
            len: text.len(),
        };
        let root = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(ExprError::Syntax {
                pos: tok.pos,
                msg: format!("unexpected {}", tok.kind),
            });
        }
        Ok(Self { root, dim })
    }

    /// The zero function on `R^dim`.
    pub fn zero(dim: usize) -> Self {
        Self {
            root: Node::Const(0.0),
            dim,
        }
    }

    pub fn from_node(root: Node, dim: usize) -> Result<Self, ExprError> {
        check_vars(&root, dim)?;
        Ok(Self { root, dim })
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.check_point(x)?;
        let v = eval_node(&self.root, &|k| x[k])?;
        finite(v)
    }

    /// Exact gradient by forward-mode dual numbers, one pass per coordinate.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.value_and_grad(x).map(|(_, g)| g)
    }

    pub fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>), ExprError> {
        self.check_point(x)?;
        let mut grad = Vec::with_capacity(self.dim);
        let mut value = None;
        for k in 0..self.dim {
            let d = eval_node(&self.root, &|j| Dual::new(x[j], if j == k { 1.0 } else { 0.0 }))?;
            value.get_or_insert(d.re);
            grad.push(finite(d.eps)?);
        }
        let value = match value {
            Some(v) => v,
            None => eval_node(&self.root, &|j| x[j])?,
        };
        Ok((finite(value)?, grad))
    }

    /// Linear combination `a*self + b*other` as a new tree (no simplification).
    pub fn combine(&self, a: f64, other: &Expr, b: f64) -> Expr {
        let scaled = |c: f64, e: &Expr| {
            Node::Mul(Box::new(Node::Const(c)), Box::new(e.root.clone()))
        };
        Expr {
            root: Node::Add(Box::new(scaled(a, self)), Box::new(scaled(b, other))),
            dim: self.dim.max(other.dim),
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<(), ExprError> {
        if x.len() != self.dim {
            return Err(ExprError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

fn finite(v: f64) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::Domain(format!("non-finite result {v}")))
    }
}

fn check_vars(node: &Node, dim: usize) -> Result<(), ExprError> {
    match node {
        Node::Const(_) => Ok(()),
        Node::Var(k) => {
            if *k < dim {
                Ok(())
            } else {
                Err(ExprError::VariableOutOfRange { index: k + 1, dim })
            }
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            check_vars(a, dim)?;
            check_vars(b, dim)
        }
        Node::Neg(a) | Node::Pow(a, _) | Node::Exp(a) | Node::Ln(a) => check_vars(a, dim),
    }
}

/// Arithmetic needed by the evaluator; implemented for `f64` and [`Dual`].
trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn constant(c: f64) -> Self;
    fn value(self) -> f64;
    fn powf(self, p: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
}

impl Scalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn value(self) -> f64 {
        self
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
}

/// First-order dual number `re + eps·ε`, `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual::new(self.re / o.re, (self.eps * o.re - self.re * o.eps) / (o.re * o.re))
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl Scalar for Dual {
    fn constant(c: f64) -> Self {
        Dual::new(c, 0.0)
    }
    fn value(self) -> f64 {
        self.re
    }
    fn powf(self, p: f64) -> Self {
        let d = if p == 0.0 {
            0.0
        } else {
            p * self.re.powf(p - 1.0)
        };
        Dual::new(self.re.powf(p), d * self.eps)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, e * self.eps)
    }
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.eps / self.re)
    }
}

fn eval_node<T: Scalar>(node: &Node, var: &dyn Fn(usize) -> T) -> Result<T, ExprError> {
    Ok(match node {
        Node::Const(c) => T::constant(*c),
        Node::Var(k) => var(*k),
        Node::Add(a, b) => eval_node(a, var)? + eval_node(b, var)?,
        Node::Sub(a, b) => eval_node(a, var)? - eval_node(b, var)?,
        Node::Mul(a, b) => eval_node(a, var)? * eval_node(b, var)?,
        Node::Div(a, b) => {
            let num = eval_node(a, var)?;
            let den = eval_node(b, var)?;
            if den.value() == 0.0 {
                return Err(ExprError::Domain("division by zero".into()));
            }
            num / den
        }
        Node::Neg(a) => -eval_node(a, var)?,
        Node::Pow(a, p) => {
            let base = eval_node(a, var)?;
            let b = base.value();
            if b < 0.0 && p.fract() != 0.0 {
                return Err(ExprError::Domain(format!(
                    "negative base {b} raised to non-integer power {p}"
                )));
            }
            if b == 0.0 && *p < 0.0 {
                return Err(ExprError::Domain("zero raised to negative power".into()));
            }
            base.powf(*p)
        }
        Node::Exp(a) => eval_node(a, var)?.exp(),
        Node::Ln(a) => {
            let arg = eval_node(a, var)?;
            if arg.value() <= 0.0 {
                return Err(ExprError::Domain(format!(
                    "ln of nonpositive value {}",
                    arg.value()
                )));
            }
            arg.ln()
        }
    })
}

// Printing is fully parenthesized so that parse(print(e)) rebuilds the same tree.
impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) => write!(f, "{c:?}"),
            Node::Var(k) => write!(f, "x{}", k + 1),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Sub(a, b) => write!(f, "({a} - {b})"),
            Node::Mul(a, b) => write!(f, "({a} * {b})"),
            Node::Div(a, b) => write!(f, "({a} / {b})"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Pow(a, p) => write!(f, "({a}^({p:?}))"),
            Node::Exp(a) => write!(f, "exp({a})"),
            Node::Ln(a) => write!(f, "ln({a})"),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Var(usize),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl fmt::Display for TokKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokKind::Num(v) => write!(f, "number {v}"),
            TokKind::Var(k) => write!(f, "variable x{k}"),
            TokKind::Ident(s) => write!(f, "identifier '{s}'"),
            TokKind::Op(c) => write!(f, "'{c}'"),
            TokKind::LParen => write!(f, "'('"),
            TokKind::RParen => write!(f, "')'"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    pos: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            // scientific notation: 1e-3, 2.5E+4
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
            let v: f64 = lit.parse().map_err(|_| ExprError::Syntax {
                pos: start,
                msg: format!("malformed number '{lit}'"),
            })?;
            out.push(Token {
                kind: TokKind::Num(v),
                pos: start,
            });
            continue;
        }
        if c.is_ascii_alphabetic() {
            while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                i += 1;
            }
            let word = &text[start..i];
            let kind = match word.strip_prefix('x') {
                Some(digits) if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) => {
                    let k: usize = digits.parse().map_err(|_| ExprError::Syntax {
                        pos: start,
                        msg: format!("bad variable '{word}'"),
                    })?;
                    TokKind::Var(k)
                }
                _ => TokKind::Ident(word.to_string()),
            };
            out.push(Token { kind, pos: start });
            continue;
        }
        let kind = match c {
            '+' | '-' | '*' | '/' | '^' => TokKind::Op(c),
            '(' => TokKind::LParen,
            ')' => TokKind::RParen,
            _ => {
                return Err(ExprError::Syntax {
                    pos: start,
                    msg: format!("unexpected character '{c}'"),
                })
            }
        };
        out.push(Token { kind, pos: start });
        i += c.len_utf8();
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    dim: usize,
    len: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.pos);
        self.pos += 1;
        t
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.len, |t| t.pos)
    }

    fn eat_op(&mut self, op: char) -> bool {
        if matches!(self.peek(), Some(Token { kind: TokKind::Op(c), .. }) if *c == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: TokKind) -> Result<(), ExprError> {
        let pos = self.here();
        match self.next() {
            Some(t) if t.kind == kind => Ok(()),
            Some(t) => Err(ExprError::Syntax {
                pos,
                msg: format!("expected {kind}, found {}", t.kind),
            }),
            None => Err(ExprError::Syntax {
                pos,
                msg: format!("expected {kind}, found end of input"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_op('+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat_op('-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_op('*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat_op('/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat_op('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat_op('^') {
            let p = self.exponent()?;
            return Ok(Node::Pow(Box::new(base), p));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<f64, ExprError> {
        let paren = matches!(self.peek(), Some(Token { kind: TokKind::LParen, .. }));
        if paren {
            self.pos += 1;
        }
        let sign = if self.eat_op('-') { -1.0 } else { 1.0 };
        let pos = self.here();
        let v = match self.next() {
            Some(Token {
                kind: TokKind::Num(v),
                ..
            }) => *v,
            _ => {
                return Err(ExprError::Syntax {
                    pos,
                    msg: "exponent must be a numeric literal".into(),
                })
            }
        };
        if paren {
            self.expect(TokKind::RParen)?;
        }
        Ok(sign * v)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let pos = self.here();
        let tok = match self.next() {
            Some(t) => t.clone(),
            None => {
                return Err(ExprError::Syntax {
                    pos,
                    msg: "unexpected end of input".into(),
                })
            }
        };
        match tok.kind {
            TokKind::Num(v) => Ok(Node::Const(v)),
            TokKind::Var(k) => {
                if k == 0 || k > self.dim {
                    return Err(ExprError::VariableOutOfRange {
                        index: k,
                        dim: self.dim,
                    });
                }
                Ok(Node::Var(k - 1))
            }
            TokKind::Ident(name) => {
                let wrap: fn(Box<Node>) -> Node = match name.as_str() {
                    "exp" => Node::Exp,
                    "ln" => Node::Ln,
                    _ => {
                        return Err(ExprError::Syntax {
                            pos,
                            msg: format!("unknown function '{name}'"),
                        })
                    }
                };
                self.expect(TokKind::LParen)?;
                let inner = self.expr()?;
                self.expect(TokKind::RParen)?;
                Ok(wrap(Box::new(inner)))
            }
            TokKind::LParen => {
                let inner = self.expr()?;
                self.expect(TokKind::RParen)?;
                Ok(inner)
            }
            other => Err(ExprError::Syntax {
                pos,
                msg: format!("unexpected {other}"),
            }),
        }
    }
}
