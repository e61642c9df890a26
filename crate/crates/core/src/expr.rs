//! A small expression language for coordinate maps.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          exponent must fold to an integer
//! atom   := number | 't' | 'x'<digits> | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | exp | tanh | log
//! ```
//!
//! `^` binds tighter than unary minus, so `-x1^2` is `-(x1^2)`; binary
//! operators associate left. Parse errors carry the byte offset of the
//! offending token, evaluation errors the path to the failing node.
//!
//! [`differentiate`] produces the symbolic partial derivative with constant
//! folding (`0` and `1` absorption), and the [`std::fmt::Display`]
//! implementation prints a canonical form that reparses to the identical
//! tree.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::calculus::{DomainSpec, McMap};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::operators::{LinearMapRep, MultilinearMapRep};
use crate::space::{FrechetSpace, GradedVector};

/// A variable: the time symbol or a 1-indexed coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    T,
    X(usize),
}

impl std::fmt::Display for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Var::T => f.write_str("t"),
            Var::X(i) => write!(f, "x{i}"),
        }
    }
}

/// Built-in scalar functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
    Log,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
            Func::Log => "log",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Tanh => x.tanh(),
            Func::Log => x.ln(),
        }
    }
}

/// Binary arithmetic operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Expression syntax tree.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    /// Integer power; the exponent is fixed at parse time.
    Pow(Box<Expr>, i64),
    Call(Func, Box<Expr>),
}

// ---------------------------------------------------------------------------
// Smart constructors with constant folding.
// ---------------------------------------------------------------------------

pub fn num(v: f64) -> Expr {
    Expr::Num(v)
}

fn is_zero(v: f64) -> bool {
    v == 0.0
}

fn is_one(v: f64) -> bool {
    v == 1.0
}

pub fn var(v: Var) -> Expr {
    Expr::Var(v)
}

pub fn neg(e: Expr) -> Expr {
    match e {
        Expr::Num(v) => Expr::Num(-v),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

pub fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        (Expr::Num(z), b) if is_zero(z) => b,
        (a, Expr::Num(z)) if is_zero(z) => a,
        (a, b) => Expr::Bin(BinOp::Add, Box::new(a), Box::new(b)),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        (a, Expr::Num(z)) if is_zero(z) => a,
        (Expr::Num(z), b) if is_zero(z) => neg(b),
        (a, b) => Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b)),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        (Expr::Num(z), _) | (_, Expr::Num(z)) if is_zero(z) => Expr::Num(0.0),
        (Expr::Num(o), b) if is_one(o) => b,
        (a, Expr::Num(o)) if is_one(o) => a,
        (a, b) => Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b)),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) if y != 0.0 => Expr::Num(x / y),
        (Expr::Num(z), _) if is_zero(z) => Expr::Num(0.0),
        (a, Expr::Num(o)) if is_one(o) => a,
        (a, b) => Expr::Bin(BinOp::Div, Box::new(a), Box::new(b)),
    }
}

pub fn pow(base: Expr, k: i64) -> Expr {
    match (base, k) {
        (_, 0) => Expr::Num(1.0),
        (b, 1) => b,
        (Expr::Num(v), k) => Expr::Num(v.powi(k as i32)),
        (b, k) => Expr::Pow(Box::new(b), k),
    }
}

pub fn call(f: Func, arg: Expr) -> Expr {
    Expr::Call(f, Box::new(arg))
}

// ---------------------------------------------------------------------------
// Parsing.
// ---------------------------------------------------------------------------

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse { offset, message: message.into() })
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

    fn eat(&mut self, byte: u8) -> bool {
        if self.peek() == Some(byte) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Bin(BinOp::Add, Box::new(lhs), Box::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Bin(BinOp::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs));
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Expr::Bin(BinOp::Div, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            let inner = self.unary()?;
            // Fold a negated literal into the literal itself, so `-2` and
            // the number -2 are one tree.
            return Ok(match inner {
                Expr::Num(v) => Expr::Num(-v),
                other => Expr::Neg(Box::new(other)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exp_offset = self.pos;
            let exp_tree = self.unary()?;
            let Some(v) = const_fold(&exp_tree) else {
                return self.err(exp_offset, "exponent must be an integer constant");
            };
            if v.fract() != 0.0 || v.abs() > 2_147_483_647.0 {
                return self.err(
                    exp_offset,
                    format!("exponent must be an integer constant, got {v}"),
                );
            }
            return Ok(Expr::Pow(Box::new(base), v as i64));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return self.err(self.pos, "expected `)`");
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_lowercase() => self.identifier(),
            _ => self.err(
                self.pos,
                "expected a number, variable, function call, or `(`",
            ),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if self.pos < self.src.len() && (self.src[self.pos] | 0x20) == b'e' {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-')
            {
                self.pos += 1;
            }
            if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                // Not an exponent suffix after all (e.g. `2elephants`).
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Num(v)),
            _ => self.err(start, format!("malformed number `{text}`")),
        }
    }

    fn identifier(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_lowercase() || self.src[self.pos].is_ascii_digit())
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii identifier");
        match name {
            "t" => Ok(Expr::Var(Var::T)),
            "sin" | "cos" | "exp" | "tanh" | "log" => {
                let f = match name {
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    "tanh" => Func::Tanh,
                    _ => Func::Log,
                };
                if !self.eat(b'(') {
                    return self.err(self.pos, format!("expected `(` after `{name}`"));
                }
                let arg = self.expr()?;
                if !self.eat(b')') {
                    return self.err(self.pos, "expected `)`");
                }
                Ok(Expr::Call(f, Box::new(arg)))
            }
            _ => {
                if let Some(rest) = name.strip_prefix('x') {
                    if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                        let idx: usize = rest.parse().map_err(|_| Error::Parse {
                            offset: start,
                            message: format!("coordinate index `{rest}` is out of range"),
                        })?;
                        if idx == 0 {
                            return self.err(start, "coordinate variables start at x1");
                        }
                        return Ok(Expr::Var(Var::X(idx)));
                    }
                }
                self.err(start, format!("unknown identifier `{name}`"))
            }
        }
    }
}

/// Parses an expression; errors carry the byte offset of the failure.
pub fn parse(src: &str) -> Result<Expr> {
    let mut p = Parser { src: src.as_bytes(), pos: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(Error::Parse {
            offset: p.pos,
            message: "unexpected trailing input".into(),
        });
    }
    Ok(e)
}

/// Evaluates a subtree to a constant if it contains no variables.
pub fn const_fold(e: &Expr) -> Option<f64> {
    match e {
        Expr::Num(v) => Some(*v),
        Expr::Var(_) => None,
        Expr::Neg(u) => const_fold(u).map(|v| -v),
        Expr::Bin(op, a, b) => {
            let (x, y) = (const_fold(a)?, const_fold(b)?);
            Some(match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
            })
        }
        Expr::Pow(b, k) => const_fold(b).map(|v| v.powi(*k as i32)),
        Expr::Call(f, u) => const_fold(u).map(|v| f.apply(v)),
    }
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

/// Variable bindings for evaluation.
#[derive(Clone, Copy, Debug)]
pub struct EvalEnv<'a> {
    pub t: Option<f64>,
    pub xs: &'a [f64],
}

impl<'a> EvalEnv<'a> {
    pub fn coords(xs: &'a [f64]) -> Self {
        EvalEnv { t: None, xs }
    }

    pub fn with_time(t: f64, xs: &'a [f64]) -> Self {
        EvalEnv { t: Some(t), xs }
    }
}

fn eval_at(e: &Expr, env: &EvalEnv, path: &mut Vec<&'static str>) -> Result<f64> {
    let fail = |path: &[&'static str], message: String| -> Error {
        let p = if path.is_empty() { "root".to_owned() } else { path.join(".") };
        Error::Eval { path: p, message }
    };
    match e {
        Expr::Num(v) => Ok(*v),
        Expr::Var(Var::T) => env
            .t
            .ok_or_else(|| fail(path, "the time variable t is not bound here".into())),
        Expr::Var(Var::X(i)) => {
            if *i >= 1 && *i <= env.xs.len() {
                Ok(env.xs[*i - 1])
            } else {
                Err(fail(path, format!("coordinate x{i} is not bound (dimension {})", env.xs.len())))
            }
        }
        Expr::Neg(u) => {
            path.push("arg");
            let v = eval_at(u, env, path)?;
            path.pop();
            Ok(-v)
        }
        Expr::Bin(op, a, b) => {
            path.push("lhs");
            let x = eval_at(a, env, path)?;
            path.pop();
            path.push("rhs");
            let y = eval_at(b, env, path)?;
            path.pop();
            match op {
                BinOp::Add => Ok(x + y),
                BinOp::Sub => Ok(x - y),
                BinOp::Mul => Ok(x * y),
                BinOp::Div => {
                    if y == 0.0 {
                        Err(fail(path, "division by zero".into()))
                    } else {
                        Ok(x / y)
                    }
                }
            }
        }
        Expr::Pow(b, k) => {
            path.push("base");
            let v = eval_at(b, env, path)?;
            path.pop();
            if *k < 0 && v == 0.0 {
                return Err(fail(path, "zero raised to a negative power".into()));
            }
            Ok(v.powi(*k as i32))
        }
        Expr::Call(f, u) => {
            path.push("arg");
            let v = eval_at(u, env, path)?;
            path.pop();
            if *f == Func::Log && v <= 0.0 {
                return Err(fail(path, format!("logarithm of a non-positive value {v}")));
            }
            Ok(f.apply(v))
        }
    }
}

/// Evaluates an expression under the given bindings.
pub fn eval(e: &Expr, env: &EvalEnv) -> Result<f64> {
    eval_at(e, env, &mut Vec::new())
}

// ---------------------------------------------------------------------------
// Differentiation.
// ---------------------------------------------------------------------------

/// Symbolic partial derivative with constant folding.
pub fn differentiate(e: &Expr, v: Var) -> Expr {
    match e {
        Expr::Num(_) => num(0.0),
        Expr::Var(w) => num(if *w == v { 1.0 } else { 0.0 }),
        Expr::Neg(u) => neg(differentiate(u, v)),
        Expr::Bin(BinOp::Add, a, b) => add(differentiate(a, v), differentiate(b, v)),
        Expr::Bin(BinOp::Sub, a, b) => sub(differentiate(a, v), differentiate(b, v)),
        Expr::Bin(BinOp::Mul, a, b) => add(
            mul(differentiate(a, v), (**b).clone()),
            mul((**a).clone(), differentiate(b, v)),
        ),
        Expr::Bin(BinOp::Div, a, b) => div(
            sub(
                mul(differentiate(a, v), (**b).clone()),
                mul((**a).clone(), differentiate(b, v)),
            ),
            pow((**b).clone(), 2),
        ),
        Expr::Pow(b, k) => mul(
            mul(num(*k as f64), pow((**b).clone(), k - 1)),
            differentiate(b, v),
        ),
        Expr::Call(f, u) => {
            let du = differentiate(u, v);
            let outer = match f {
                Func::Sin => call(Func::Cos, (**u).clone()),
                Func::Cos => neg(call(Func::Sin, (**u).clone())),
                Func::Exp => call(Func::Exp, (**u).clone()),
                Func::Tanh => sub(num(1.0), pow(call(Func::Tanh, (**u).clone()), 2)),
                Func::Log => return div(du, (**u).clone()),
            };
            mul(outer, du)
        }
    }
}

// ---------------------------------------------------------------------------
// Printing.
// ---------------------------------------------------------------------------

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Expr::Neg(_) => 3,
        Expr::Pow(..) => 4,
        Expr::Num(_) | Expr::Var(_) | Expr::Call(..) => 5,
    }
}

fn fmt_wrapped(e: &Expr, wrap: bool, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
    if wrap {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl std::fmt::Display for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(u) => {
                f.write_str("-")?;
                // Anything binding looser than unary minus needs parens.
                fmt_wrapped(u, precedence(u) < 3, f)
            }
            Expr::Bin(op, a, b) => {
                let q = precedence(self);
                let sym = match op {
                    BinOp::Add => " + ",
                    BinOp::Sub => " - ",
                    BinOp::Mul => " * ",
                    BinOp::Div => " / ",
                };
                // Left-associative grammar: equal precedence is fine on the
                // left but must be parenthesized on the right.
                fmt_wrapped(a, precedence(a) < q, f)?;
                f.write_str(sym)?;
                fmt_wrapped(b, precedence(b) <= q, f)
            }
            Expr::Pow(b, k) => {
                let base_needs_parens = precedence(b) < 4
                    || matches!(**b, Expr::Pow(..))
                    || matches!(**b, Expr::Num(v) if v < 0.0);
                fmt_wrapped(b, base_needs_parens, f)?;
                if *k < 0 {
                    write!(f, "^({k})")
                } else {
                    write!(f, "^{k}")
                }
            }
            Expr::Call(func, u) => write!(f, "{}({u})", func.name()),
        }
    }
}

// ---------------------------------------------------------------------------
// Introspection helpers.
// ---------------------------------------------------------------------------

/// Largest coordinate index used (0 if none).
pub fn max_var_index(e: &Expr) -> usize {
    match e {
        Expr::Num(_) | Expr::Var(Var::T) => 0,
        Expr::Var(Var::X(i)) => *i,
        Expr::Neg(u) | Expr::Pow(u, _) | Expr::Call(_, u) => max_var_index(u),
        Expr::Bin(_, a, b) => max_var_index(a).max(max_var_index(b)),
    }
}

/// Whether the time variable appears.
pub fn uses_time(e: &Expr) -> bool {
    match e {
        Expr::Var(Var::T) => true,
        Expr::Num(_) | Expr::Var(_) => false,
        Expr::Neg(u) | Expr::Pow(u, _) | Expr::Call(_, u) => uses_time(u),
        Expr::Bin(_, a, b) => uses_time(a) || uses_time(b),
    }
}

// ---------------------------------------------------------------------------
// Building differentiable maps from coordinate expressions.
// ---------------------------------------------------------------------------

/// How a finitely specified coordinate map acts on coordinates beyond the
/// listed components.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extension {
    /// Untouched coordinates pass through; requires matching spaces. This is
    /// the chart convention: only leading coordinates are reshaped.
    Identity,
    /// Untouched coordinates map to zero, as for a finitely supported field.
    Zero,
}

fn component_err(i: usize, err: Error) -> Error {
    match err {
        Error::Eval { path, message } => Error::Eval {
            path: format!("component{}.{path}", i + 1),
            message,
        },
        other => other,
    }
}

fn eval_component(e: &Expr, i: usize, xs: &[f64]) -> Result<f64> {
    let v = eval(e, &EvalEnv::coords(xs)).map_err(|err| component_err(i, err))?;
    if !v.is_finite() {
        return Err(Error::Eval {
            path: format!("component{}", i + 1),
            message: format!("produced a non-finite value {v}"),
        });
    }
    Ok(v)
}

/// Builds a differentiable map whose leading components are the given
/// expressions in `x1..=x{input_dim}`, with symbolic Jacobian and second
/// derivative closures.
pub fn mc_map_from_exprs(
    space_in: &FrechetSpace,
    space_out: &FrechetSpace,
    exprs: &[Expr],
    input_dim: usize,
    extension: Extension,
    domain: DomainSpec,
    smoothness: u32,
) -> Result<McMap> {
    if exprs.is_empty() || input_dim == 0 {
        return Err(Error::InvalidInput(
            "expression maps need at least one component and one input coordinate".into(),
        ));
    }
    for (i, e) in exprs.iter().enumerate() {
        if uses_time(e) {
            return Err(Error::InvalidInput(format!(
                "component {} uses the time variable t, which coordinate maps do not bind",
                i + 1
            )));
        }
        let used = max_var_index(e);
        if used > input_dim {
            return Err(Error::InvalidInput(format!(
                "component {} uses x{used} but the input dimension is {input_dim}",
                i + 1
            )));
        }
    }
    if extension == Extension::Identity && space_in.id() != space_out.id() {
        return Err(Error::SpaceMismatch {
            expected: space_in.id().clone(),
            got: space_out.id().clone(),
        });
    }

    let n_out = exprs.len();
    let block_dim = n_out.max(input_dim);
    let exprs: Arc<[Expr]> = exprs.to_vec().into();
    let partials: Arc<Vec<Vec<Expr>>> = Arc::new(
        exprs
            .iter()
            .map(|e| (1..=input_dim).map(|j| differentiate(e, Var::X(j))).collect())
            .collect(),
    );
    let hessians: Arc<Vec<Vec<Vec<Expr>>>> = Arc::new(
        partials
            .iter()
            .map(|row| {
                row.iter()
                    .map(|d| (1..=input_dim).map(|k| differentiate(d, Var::X(k))).collect())
                    .collect()
            })
            .collect(),
    );

    let out_id = space_out.id().clone();
    let eval_fn = {
        let exprs = exprs.clone();
        let out_id = out_id.clone();
        Arc::new(move |p: &GradedVector| {
            let xs = p.coords_padded(input_dim);
            let mut out = Vec::with_capacity(block_dim);
            for (i, e) in exprs.iter().enumerate() {
                out.push(eval_component(e, i, &xs)?);
            }
            if extension == Extension::Identity && p.deg() > n_out {
                out.extend_from_slice(&p.coords()[n_out..]);
            }
            Ok(GradedVector::new(out_id.clone(), out))
        })
    };

    let jac_fn = {
        let partials = partials.clone();
        let in_id = space_in.id().clone();
        let out_id = out_id.clone();
        Arc::new(move |p: &GradedVector| {
            let xs = p.coords_padded(input_dim);
            let mut m = DenseMatrix::zero(block_dim);
            for (i, row) in partials.iter().enumerate() {
                for (j, d) in row.iter().enumerate() {
                    m.set(i, j, eval_component(d, i, &xs)?);
                }
            }
            match extension {
                Extension::Identity => {
                    // J = Id + (block - Id), with the identity subtracted
                    // only on the rows the expressions replace; every other
                    // coordinate passes through untouched.
                    for k in 0..n_out.min(block_dim) {
                        m.set(k, k, m.get(k, k) - 1.0);
                    }
                    LinearMapRep::sum(vec![
                        LinearMapRep::identity(in_id.clone()),
                        LinearMapRep::finite_matrix(in_id.clone(), in_id.clone(), m),
                    ])
                }
                Extension::Zero => {
                    Ok(LinearMapRep::finite_matrix(in_id.clone(), out_id.clone(), m))
                }
            }
        })
    };

    let second_fn = {
        let hessians = hessians.clone();
        let in_id = space_in.id().clone();
        let out_id = out_id.clone();
        Arc::new(move |p: &GradedVector| {
            let xs = p.coords_padded(input_dim);
            let mut vals = vec![0.0; n_out * input_dim * input_dim];
            for (i, rows) in hessians.iter().enumerate() {
                for (j, row) in rows.iter().enumerate() {
                    for (k, h) in row.iter().enumerate() {
                        vals[(i * input_dim + j) * input_dim + k] = eval_component(h, i, &xs)?;
                    }
                }
            }
            let out_id = out_id.clone();
            MultilinearMapRep::from_fn(
                vec![in_id.clone(), in_id.clone()],
                out_id.clone(),
                Arc::new(move |args: &[GradedVector]| {
                    let u = args[0].coords_padded(input_dim);
                    let v = args[1].coords_padded(input_dim);
                    let mut out = vec![0.0; n_out];
                    for (i, o) in out.iter_mut().enumerate() {
                        for (j, uj) in u.iter().enumerate() {
                            if *uj == 0.0 {
                                continue;
                            }
                            for (k, vk) in v.iter().enumerate() {
                                *o += vals[(i * input_dim + j) * input_dim + k] * uj * vk;
                            }
                        }
                    }
                    Ok(GradedVector::new(out_id.clone(), out))
                }),
            )
        })
    };

    Ok(McMap::from_parts(
        space_in.clone(),
        space_out.clone(),
        input_dim,
        block_dim,
        domain,
        smoothness,
        eval_fn,
        Some(jac_fn),
        Some(second_fn),
    ))
}

// ---------------------------------------------------------------------------
// Random syntax trees (for roundtrip and differentiation testing).
// ---------------------------------------------------------------------------

/// Samples a normalized random syntax tree of bounded depth. Trees are built
/// through the folding constructors, so printing and reparsing reproduces
/// them node for node.
pub fn sample_ast(rng: &mut ChaCha8Rng, dim: usize, allow_t: bool, depth: u32) -> Expr {
    if depth == 0 || rng.random_range(0..10) == 0 {
        return match rng.random_range(0..3) {
            0 => num((rng.random_range(-32i32..=32) as f64) / 16.0),
            1 if allow_t => var(Var::T),
            _ => var(Var::X(rng.random_range(1..=dim.max(1)))),
        };
    }
    let a = sample_ast(rng, dim, allow_t, depth - 1);
    match rng.random_range(0..12) {
        0 | 1 => add(a, sample_ast(rng, dim, allow_t, depth - 1)),
        2 | 3 => sub(a, sample_ast(rng, dim, allow_t, depth - 1)),
        4 | 5 => mul(a, sample_ast(rng, dim, allow_t, depth - 1)),
        6 => div(a, sample_ast(rng, dim, allow_t, depth - 1)),
        7 => neg(a),
        8 => pow(a, *[-2, 2, 3, 4].get(rng.random_range(0..4)).unwrap()),
        9 => call(Func::Sin, a),
        10 => call(Func::Cos, a),
        _ => match rng.random_range(0..3) {
            0 => call(Func::Exp, a),
            1 => call(Func::Tanh, a),
            _ => call(Func::Log, a),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling;

    #[test]
    fn parse_basic_tree() {
        let e = parse("x1 + 2*x2").unwrap();
        assert_eq!(
            e,
            Expr::Bin(
                BinOp::Add,
                Box::new(Expr::Var(Var::X(1))),
                Box::new(Expr::Bin(
                    BinOp::Mul,
                    Box::new(Expr::Num(2.0)),
                    Box::new(Expr::Var(Var::X(2))),
                )),
            )
        );
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        assert_eq!(parse("-x1^2").unwrap(), parse("-(x1^2)").unwrap());
    }

    #[test]
    fn power_is_right_associative_and_integer_only() {
        // 2^3^2 folds the exponent tree 3^2 first.
        let e = parse("x1^3^2").unwrap();
        assert_eq!(e, Expr::Pow(Box::new(Expr::Var(Var::X(1))), 9));
        assert!(matches!(parse("x1^x2"), Err(Error::Parse { .. })));
        assert!(matches!(parse("x1^0.5"), Err(Error::Parse { .. })));
        // Negative exponents are integers too.
        assert_eq!(parse("x1^(-2)").unwrap(), Expr::Pow(Box::new(Expr::Var(Var::X(1))), -2));
    }

    #[test]
    fn parse_errors_carry_byte_offsets() {
        match parse("sin(") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse("x1 + $") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse("foo + 1") {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, 0);
                assert!(message.contains("foo"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse("x0"), Err(Error::Parse { .. })));
        assert!(matches!(parse("1 2"), Err(Error::Parse { offset: 2, .. })));
    }

    #[test]
    fn eval_values_and_errors() {
        let e = parse("x1 + 2*x2^2").unwrap();
        let v = eval(&e, &EvalEnv::coords(&[6.0, 2.0])).unwrap();
        assert_eq!(v, 14.0);

        let t = parse("exp(t)").unwrap();
        assert_eq!(eval(&t, &EvalEnv::with_time(0.0, &[])).unwrap(), 1.0);
        assert!(matches!(eval(&t, &EvalEnv::coords(&[])), Err(Error::Eval { .. })));

        let d = parse("1 / x1").unwrap();
        match eval(&d, &EvalEnv::coords(&[0.0])) {
            Err(Error::Eval { path, message }) => {
                assert_eq!(path, "root");
                assert!(message.contains("division by zero"));
            }
            other => panic!("expected eval error, got {other:?}"),
        }

        let nested = parse("2 + sin(log(x1))").unwrap();
        match eval(&nested, &EvalEnv::coords(&[-1.0])) {
            Err(Error::Eval { path, .. }) => assert_eq!(path, "rhs.arg"),
            other => panic!("expected eval error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_dimension_variables_error() {
        let e = parse("x3").unwrap();
        assert!(matches!(eval(&e, &EvalEnv::coords(&[1.0, 2.0])), Err(Error::Eval { .. })));
        assert_eq!(max_var_index(&e), 3);
    }

    #[test]
    fn derivative_of_cubic_folds_cleanly() {
        let e = parse("x1^3 + x1").unwrap();
        let d = differentiate(&e, Var::X(1));
        assert_eq!(d.to_string(), "3 * x1^2 + 1");
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = sampling::rng_for(101, 0);
        let mut checked = 0;
        while checked < 60 {
            let ast = sample_ast(&mut rng, 3, false, 3);
            let d1 = differentiate(&ast, Var::X(1));
            let xs: Vec<f64> = (0..3).map(|_| 0.25 + 0.5 * sampling::dyadic_unit(&mut rng).abs()).collect();
            let h = 1e-5;
            let mut lo = xs.clone();
            let mut hi = xs.clone();
            lo[0] -= h;
            hi[0] += h;
            let (Ok(flo), Ok(fhi), Ok(sym)) = (
                eval(&ast, &EvalEnv::coords(&lo)),
                eval(&ast, &EvalEnv::coords(&hi)),
                eval(&d1, &EvalEnv::coords(&xs)),
            ) else {
                continue; // singular sample (log of negative etc.); skip
            };
            let fd = (fhi - flo) / (2.0 * h);
            if !fd.is_finite() || fd.abs() > 1e6 {
                continue;
            }
            assert!(
                (fd - sym).abs() <= 1e-6 * (1.0 + fd.abs().max(sym.abs())),
                "ast `{ast}` d `{d1}` fd {fd} sym {sym} at {xs:?}"
            );
            checked += 1;
        }
    }

    #[test]
    fn differentiation_is_linear() {
        let mut rng = sampling::rng_for(102, 0);
        for _ in 0..50 {
            let a = sample_ast(&mut rng, 2, true, 3);
            let b = sample_ast(&mut rng, 2, true, 3);
            let combined = add(a.clone(), b.clone());
            let d_comb = differentiate(&combined, Var::X(2));
            let d_parts = add(differentiate(&a, Var::X(2)), differentiate(&b, Var::X(2)));
            // Structural equality need not hold after folding, but values do.
            let xs = [0.3, 0.7];
            let env = EvalEnv::with_time(0.2, &xs);
            // Both sides may be singular at the sample; compare when defined.
            if let (Ok(u), Ok(v)) = (eval(&d_comb, &env), eval(&d_parts, &env)) {
                assert!((u - v).abs() < 1e-12 * (1.0 + u.abs()));
            }
        }
    }

    #[test]
    fn print_parse_roundtrip_on_random_trees() {
        let mut rng = sampling::rng_for(103, 0);
        for i in 0..1000 {
            let ast = sample_ast(&mut rng, 4, true, 4);
            let text = ast.to_string();
            let back = parse(&text).unwrap_or_else(|e| panic!("tree {i} `{text}`: {e}"));
            assert_eq!(back, ast, "tree {i} `{text}`");
        }
    }

    #[test]
    fn canonical_printing_examples() {
        assert_eq!(parse("x1+x2*x3").unwrap().to_string(), "x1 + x2 * x3");
        assert_eq!(parse("(x1+x2)*x3").unwrap().to_string(), "(x1 + x2) * x3");
        assert_eq!(parse("-(x1*x2)").unwrap().to_string(), "-(x1 * x2)");
        assert_eq!(parse("(x1^2)^3").unwrap().to_string(), "(x1^2)^3");
        assert_eq!(parse("x1 - (x2 - x3)").unwrap().to_string(), "x1 - (x2 - x3)");
        assert_eq!(parse("x1 - x2 - x3").unwrap().to_string(), "x1 - x2 - x3");
    }

    #[test]
    fn time_detection() {
        assert!(uses_time(&parse("sin(t) + x1").unwrap()));
        assert!(!uses_time(&parse("sin(x1)").unwrap()));
    }

    #[test]
    fn expr_map_identity_extension_passes_tail_through() {
        let space = FrechetSpace::standard("E");
        let exprs = vec![parse("x1 + x2^2").unwrap()];
        let map = mc_map_from_exprs(
            &space,
            &space,
            &exprs,
            2,
            Extension::Identity,
            DomainSpec::All,
            u32::MAX,
        )
        .unwrap();

        let p = space.vector(vec![1.0, 2.0, 5.0]);
        let q = map.eval(&p).unwrap();
        assert_eq!(q.coords(), &[5.0, 2.0, 5.0]);

        let j = map.jacobian(&p).unwrap();
        // d(x1 + x2^2)/dx2 = 4 at x2 = 2; coordinate 2 itself passes through.
        assert_eq!(j.apply(&space.basis(2, 1.0)).unwrap().coords(), &[4.0, 1.0]);
        assert_eq!(j.apply(&space.basis(3, 1.0)).unwrap().coords(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn expr_map_zero_extension_matches_finite_differences() {
        let space = FrechetSpace::standard("E");
        let out = FrechetSpace::standard("F");
        let exprs = vec![parse("sin(x1) * x2").unwrap(), parse("x1^3 - x2").unwrap()];
        let map = mc_map_from_exprs(
            &space,
            &out,
            &exprs,
            2,
            Extension::Zero,
            DomainSpec::All,
            u32::MAX,
        )
        .unwrap();

        let mut rng = sampling::rng_for(104, 0);
        for _ in 0..20 {
            let p = sampling::dyadic_vector(&space, 3, &mut rng);
            let h = sampling::dyadic_vector(&space, 3, &mut rng);
            if h.is_zero() {
                continue;
            }
            let analytic = map.jacobian(&p).unwrap().apply(&h).unwrap();
            let fd = map.directional_derivative(&p, &h).unwrap().value;
            assert!(
                analytic.sub(&fd).sup_coord() <= 1e-7,
                "jacobian mismatch at {:?}",
                p.coords()
            );
        }
    }

    #[test]
    fn expr_map_second_derivative_is_symbolic_hessian() {
        let space = FrechetSpace::standard("E");
        let exprs = vec![parse("x1^2 * x2").unwrap()];
        let map = mc_map_from_exprs(
            &space,
            &space,
            &exprs,
            2,
            Extension::Identity,
            DomainSpec::All,
            u32::MAX,
        )
        .unwrap();

        let p = space.vector(vec![3.0, 5.0]);
        let d2 = map.second_at(&p).unwrap();
        let u = space.basis(1, 1.0);
        let v = space.basis(2, 1.0);
        // Mixed partial d2/(dx1 dx2) of x1^2 x2 is 2 x1 = 6.
        assert_eq!(d2.eval(&[u.clone(), v.clone()]).unwrap().coords(), &[6.0]);
        // Pure x1 direction: d2/dx1^2 = 2 x2 = 10.
        assert_eq!(d2.eval(&[u.clone(), u]).unwrap().coords(), &[10.0]);
        assert!(d2.eval(&[v.clone(), v]).unwrap().is_zero());
    }

    #[test]
    fn expr_map_rejects_bad_inputs() {
        let space = FrechetSpace::standard("E");
        let other = FrechetSpace::standard("F");
        let t_expr = vec![parse("t + x1").unwrap()];
        assert!(matches!(
            mc_map_from_exprs(&space, &space, &t_expr, 1, Extension::Identity, DomainSpec::All, 2),
            Err(Error::InvalidInput(_))
        ));
        let wide = vec![parse("x3").unwrap()];
        assert!(matches!(
            mc_map_from_exprs(&space, &space, &wide, 2, Extension::Identity, DomainSpec::All, 2),
            Err(Error::InvalidInput(_))
        ));
        let ok = vec![parse("x1").unwrap()];
        assert!(matches!(
            mc_map_from_exprs(&space, &other, &ok, 1, Extension::Identity, DomainSpec::All, 2),
            Err(Error::SpaceMismatch { .. })
        ));
        assert!(
            mc_map_from_exprs(&space, &other, &ok, 1, Extension::Zero, DomainSpec::All, 2).is_ok()
        );
    }

    #[test]
    fn expr_map_eval_error_names_component() {
        let space = FrechetSpace::standard("E");
        let exprs = vec![parse("x1").unwrap(), parse("log(x2)").unwrap()];
        let map = mc_map_from_exprs(
            &space,
            &space,
            &exprs,
            2,
            Extension::Identity,
            DomainSpec::All,
            u32::MAX,
        )
        .unwrap();
        match map.eval(&space.vector(vec![1.0, -1.0])) {
            Err(Error::Eval { path, .. }) => assert!(path.starts_with("component2"), "{path}"),
            other => panic!("expected eval error, got {other:?}"),
        }
    }
}
