//! Symbolic scalar expressions over an ordered list of state variables.
//!
//! Expressions are immutable trees with shared subtrees. Every constructor
//! folds constant subtrees and the identities `x + 0`, `x * 1`, `x * 0`,
//! `x ^ 0`, `x ^ 1`; no other algebra is performed, so the shape of an
//! expression (and hence the quality of its interval enclosure) is predictable.

mod parser;
mod tape;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use parser::parse;
pub use tape::Tape;

use crate::interval::{Interval, IntervalBox};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("`{0}` is not differentiable")]
    Domain(&'static str),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("square root of a negative number")]
    SqrtOfNegative,
    #[error("non-finite result")]
    NonFinite,
    #[error("point has the wrong dimension")]
    Dimension,
}

/// One node of an expression tree. Variables are indices into the owning
/// system's variable list.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Neg(Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, u32),
    Sin(Expr),
    Cos(Expr),
    Tanh(Expr),
    Exp(Expr),
    Sqrt(Expr),
    Abs(Expr),
    Min(Expr, Expr),
    Max(Expr, Expr),
}

#[derive(Clone, PartialEq)]
pub struct Expr(Arc<Node>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.display(&[]))
    }
}

fn finite(v: f64) -> Option<Expr> {
    v.is_finite().then(|| Expr::constant(v))
}

impl Expr {
    fn wrap(node: Node) -> Expr {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(v: f64) -> Expr {
        Expr::wrap(Node::Const(v))
    }

    pub fn zero() -> Expr {
        Expr::constant(0.0)
    }

    pub fn one() -> Expr {
        Expr::constant(1.0)
    }

    pub fn var(index: usize) -> Expr {
        Expr::wrap(Node::Var(index))
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    pub fn neg(&self) -> Expr {
        match self.node() {
            Node::Const(v) => Expr::constant(-v),
            Node::Neg(inner) => inner.clone(),
            _ => Expr::wrap(Node::Neg(self.clone())),
        }
    }

    pub fn add(&self, rhs: &Expr) -> Expr {
        if let (Some(a), Some(b)) = (self.as_const(), rhs.as_const()) {
            if let Some(e) = finite(a + b) {
                return e;
            }
        }
        if self.is_zero() {
            return rhs.clone();
        }
        if rhs.is_zero() {
            return self.clone();
        }
        Expr::wrap(Node::Add(self.clone(), rhs.clone()))
    }

    pub fn sub(&self, rhs: &Expr) -> Expr {
        if let (Some(a), Some(b)) = (self.as_const(), rhs.as_const()) {
            if let Some(e) = finite(a - b) {
                return e;
            }
        }
        if rhs.is_zero() {
            return self.clone();
        }
        if self.is_zero() {
            return rhs.neg();
        }
        Expr::wrap(Node::Sub(self.clone(), rhs.clone()))
    }

    pub fn mul(&self, rhs: &Expr) -> Expr {
        if let (Some(a), Some(b)) = (self.as_const(), rhs.as_const()) {
            if let Some(e) = finite(a * b) {
                return e;
            }
        }
        if self.is_zero() || rhs.is_zero() {
            return Expr::zero();
        }
        if self.is_one() {
            return rhs.clone();
        }
        if rhs.is_one() {
            return self.clone();
        }
        Expr::wrap(Node::Mul(self.clone(), rhs.clone()))
    }

    pub fn div(&self, rhs: &Expr) -> Expr {
        if let (Some(a), Some(b)) = (self.as_const(), rhs.as_const()) {
            if let Some(e) = finite(a / b) {
                return e;
            }
        }
        if rhs.is_one() {
            return self.clone();
        }
        Expr::wrap(Node::Div(self.clone(), rhs.clone()))
    }

    pub fn powi(&self, n: u32) -> Expr {
        match n {
            0 => return Expr::one(),
            1 => return self.clone(),
            _ => {}
        }
        if let Some(a) = self.as_const() {
            if let Some(e) = finite(a.powi(n as i32)) {
                return e;
            }
        }
        Expr::wrap(Node::Pow(self.clone(), n))
    }

    fn unary(&self, f: fn(f64) -> f64, make: fn(Expr) -> Node) -> Expr {
        if let Some(a) = self.as_const() {
            if let Some(e) = finite(f(a)) {
                return e;
            }
        }
        Expr::wrap(make(self.clone()))
    }

    pub fn sin(&self) -> Expr {
        self.unary(f64::sin, Node::Sin)
    }

    pub fn cos(&self) -> Expr {
        self.unary(f64::cos, Node::Cos)
    }

    pub fn tanh(&self) -> Expr {
        self.unary(f64::tanh, Node::Tanh)
    }

    pub fn exp(&self) -> Expr {
        self.unary(f64::exp, Node::Exp)
    }

    pub fn sqrt(&self) -> Expr {
        self.unary(f64::sqrt, Node::Sqrt)
    }

    pub fn abs(&self) -> Expr {
        self.unary(f64::abs, Node::Abs)
    }

    pub fn min(&self, rhs: &Expr) -> Expr {
        if let (Some(a), Some(b)) = (self.as_const(), rhs.as_const()) {
            return Expr::constant(a.min(b));
        }
        Expr::wrap(Node::Min(self.clone(), rhs.clone()))
    }

    pub fn max(&self, rhs: &Expr) -> Expr {
        if let (Some(a), Some(b)) = (self.as_const(), rhs.as_const()) {
            return Expr::constant(a.max(b));
        }
        Expr::wrap(Node::Max(self.clone(), rhs.clone()))
    }

    /// Sum of a sequence of expressions (zero for an empty sequence).
    pub fn sum<'a>(terms: impl IntoIterator<Item = &'a Expr>) -> Expr {
        terms.into_iter().fold(Expr::zero(), |acc, t| acc.add(t))
    }

    /// Rebuilds the tree bottom-up through the folding constructors.
    pub fn canonical(&self) -> Expr {
        self.map_children(&|e| e.canonical())
    }

    fn map_children(&self, f: &dyn Fn(&Expr) -> Expr) -> Expr {
        match self.node() {
            Node::Const(_) | Node::Var(_) => self.clone(),
            Node::Neg(a) => f(a).neg(),
            Node::Add(a, b) => f(a).add(&f(b)),
            Node::Sub(a, b) => f(a).sub(&f(b)),
            Node::Mul(a, b) => f(a).mul(&f(b)),
            Node::Div(a, b) => f(a).div(&f(b)),
            Node::Pow(a, n) => f(a).powi(*n),
            Node::Sin(a) => f(a).sin(),
            Node::Cos(a) => f(a).cos(),
            Node::Tanh(a) => f(a).tanh(),
            Node::Exp(a) => f(a).exp(),
            Node::Sqrt(a) => f(a).sqrt(),
            Node::Abs(a) => f(a).abs(),
            Node::Min(a, b) => f(a).min(&f(b)),
            Node::Max(a, b) => f(a).max(&f(b)),
        }
    }

    /// Replaces every variable `i` by `subst[i]`.
    pub fn substitute(&self, subst: &[Expr]) -> Expr {
        match self.node() {
            Node::Var(i) => subst[*i].clone(),
            _ => self.map_children(&|e| e.substitute(subst)),
        }
    }

    /// Renumbers variables; `map[i]` is the new index of variable `i`.
    /// Panics if a variable that occurs in the tree has no image.
    pub fn remap_vars(&self, map: &[Option<usize>]) -> Expr {
        match self.node() {
            Node::Var(i) => Expr::var(map[*i].expect("variable dropped by remap")),
            _ => self.map_children(&|e| e.remap_vars(map)),
        }
    }

    /// Sorted, deduplicated indices of the variables that occur in the tree.
    pub fn vars(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<usize>) {
        match self.node() {
            Node::Const(_) => {}
            Node::Var(i) => out.push(*i),
            Node::Neg(a)
            | Node::Pow(a, _)
            | Node::Sin(a)
            | Node::Cos(a)
            | Node::Tanh(a)
            | Node::Exp(a)
            | Node::Sqrt(a)
            | Node::Abs(a) => a.collect_vars(out),
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Min(a, b)
            | Node::Max(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// True if the expression is bounded over all of `R^n`, judged from its
    /// structure alone (constants, and anything passed through sin, cos or
    /// tanh, combined by operations that preserve boundedness).
    pub fn is_structurally_bounded(&self) -> bool {
        match self.node() {
            Node::Const(_) => true,
            Node::Var(_) | Node::Div(_, _) => false,
            Node::Sin(_) | Node::Cos(_) | Node::Tanh(_) => true,
            Node::Neg(a) | Node::Pow(a, _) | Node::Exp(a) | Node::Sqrt(a) | Node::Abs(a) => {
                a.is_structurally_bounded()
            }
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Min(a, b)
            | Node::Max(a, b) => a.is_structurally_bounded() && b.is_structurally_bounded(),
        }
    }

    /// Exact partial derivative with respect to variable `v`.
    pub fn differentiate(&self, v: usize) -> Result<Expr, ExprError> {
        let d = |e: &Expr| e.differentiate(v);
        Ok(match self.node() {
            Node::Const(_) => Expr::zero(),
            Node::Var(i) => Expr::constant(if *i == v { 1.0 } else { 0.0 }),
            Node::Neg(a) => d(a)?.neg(),
            Node::Add(a, b) => d(a)?.add(&d(b)?),
            Node::Sub(a, b) => d(a)?.sub(&d(b)?),
            Node::Mul(a, b) => d(a)?.mul(b).add(&a.mul(&d(b)?)),
            Node::Div(a, b) => d(a)?
                .mul(b)
                .sub(&a.mul(&d(b)?))
                .div(&b.powi(2)),
            Node::Pow(a, n) => Expr::constant(*n as f64)
                .mul(&a.powi(n - 1))
                .mul(&d(a)?),
            Node::Sin(a) => a.cos().mul(&d(a)?),
            Node::Cos(a) => a.sin().neg().mul(&d(a)?),
            Node::Tanh(a) => Expr::one().sub(&a.tanh().powi(2)).mul(&d(a)?),
            Node::Exp(a) => a.exp().mul(&d(a)?),
            Node::Sqrt(a) => d(a)?.div(&Expr::constant(2.0).mul(&a.sqrt())),
            Node::Abs(_) => return Err(ExprError::Domain("abs")),
            Node::Min(_, _) => return Err(ExprError::Domain("min")),
            Node::Max(_, _) => return Err(ExprError::Domain("max")),
        })
    }

    /// Gradient with respect to variables `0..n`.
    pub fn gradient(&self, n: usize) -> Result<Vec<Expr>, ExprError> {
        (0..n).map(|v| self.differentiate(v)).collect()
    }

    /// Point evaluation in IEEE double precision.
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let r = match self.node() {
            Node::Const(v) => *v,
            Node::Var(i) => *x.get(*i).ok_or(EvalError::Dimension)?,
            Node::Neg(a) => -a.eval(x)?,
            Node::Add(a, b) => a.eval(x)? + b.eval(x)?,
            Node::Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Node::Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Node::Div(a, b) => {
                let den = b.eval(x)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                a.eval(x)? / den
            }
            Node::Pow(a, n) => a.eval(x)?.powi(*n as i32),
            Node::Sin(a) => a.eval(x)?.sin(),
            Node::Cos(a) => a.eval(x)?.cos(),
            Node::Tanh(a) => a.eval(x)?.tanh(),
            Node::Exp(a) => a.eval(x)?.exp(),
            Node::Sqrt(a) => {
                let v = a.eval(x)?;
                if v < 0.0 {
                    return Err(EvalError::SqrtOfNegative);
                }
                v.sqrt()
            }
            Node::Abs(a) => a.eval(x)?.abs(),
            Node::Min(a, b) => a.eval(x)?.min(b.eval(x)?),
            Node::Max(a, b) => a.eval(x)?.max(b.eval(x)?),
        };
        if r.is_finite() {
            Ok(r)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    /// Natural interval extension over `b` with outward rounding.
    pub fn eval_interval(&self, b: &IntervalBox) -> Result<Interval, EvalError> {
        Ok(match self.node() {
            Node::Const(v) => Interval::point(*v),
            Node::Var(i) => *b.0.get(*i).ok_or(EvalError::Dimension)?,
            Node::Neg(a) => -a.eval_interval(b)?,
            Node::Add(x, y) => x.eval_interval(b)?.try_add(y.eval_interval(b)?)?,
            Node::Sub(x, y) => x.eval_interval(b)?.try_sub(y.eval_interval(b)?)?,
            Node::Mul(x, y) => x.eval_interval(b)?.try_mul(y.eval_interval(b)?)?,
            Node::Div(x, y) => x.eval_interval(b)?.try_div(y.eval_interval(b)?)?,
            Node::Pow(a, n) => a.eval_interval(b)?.powi(*n)?,
            Node::Sin(a) => a.eval_interval(b)?.sin(),
            Node::Cos(a) => a.eval_interval(b)?.cos(),
            Node::Tanh(a) => a.eval_interval(b)?.tanh(),
            Node::Exp(a) => a.eval_interval(b)?.exp()?,
            Node::Sqrt(a) => a.eval_interval(b)?.sqrt()?,
            Node::Abs(a) => a.eval_interval(b)?.abs(),
            Node::Min(x, y) => x.eval_interval(b)?.min(y.eval_interval(b)?),
            Node::Max(x, y) => x.eval_interval(b)?.max(y.eval_interval(b)?),
        })
    }

    /// Printable form using `names` for variables (falls back to `x{i+1}`).
    pub fn display<'a>(&'a self, names: &'a [String]) -> Display<'a> {
        Display { expr: self, names }
    }

    fn precedence(&self) -> u8 {
        match self.node() {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Neg(_) => 3,
            Node::Const(v) if *v < 0.0 => 3,
            Node::Pow(..) => 4,
            _ => 5,
        }
    }
}

pub struct Display<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

impl Display<'_> {
    fn write(&self, e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let child = |c: &Expr, min_prec: u8, f: &mut fmt::Formatter<'_>| {
            if c.precedence() < min_prec {
                write!(f, "(")?;
                self.write(c, f)?;
                write!(f, ")")
            } else {
                self.write(c, f)
            }
        };
        match e.node() {
            Node::Const(v) => write!(f, "{v}"),
            Node::Var(i) => match self.names.get(*i) {
                Some(n) => write!(f, "{n}"),
                None => write!(f, "x{}", i + 1),
            },
            Node::Neg(a) => {
                write!(f, "-")?;
                child(a, 3, f)
            }
            Node::Add(a, b) => {
                child(a, 1, f)?;
                write!(f, " + ")?;
                child(b, 2, f)
            }
            Node::Sub(a, b) => {
                child(a, 1, f)?;
                write!(f, " - ")?;
                child(b, 2, f)
            }
            Node::Mul(a, b) => {
                child(a, 2, f)?;
                write!(f, "*")?;
                child(b, 3, f)
            }
            Node::Div(a, b) => {
                child(a, 2, f)?;
                write!(f, "/")?;
                child(b, 3, f)
            }
            Node::Pow(a, n) => {
                child(a, 5, f)?;
                write!(f, "^{n}")
            }
            Node::Sin(a) => self.call("sin", &[a], f),
            Node::Cos(a) => self.call("cos", &[a], f),
            Node::Tanh(a) => self.call("tanh", &[a], f),
            Node::Exp(a) => self.call("exp", &[a], f),
            Node::Sqrt(a) => self.call("sqrt", &[a], f),
            Node::Abs(a) => self.call("abs", &[a], f),
            Node::Min(a, b) => self.call("min", &[a, b], f),
            Node::Max(a, b) => self.call("max", &[a, b], f),
        }
    }

    fn call(&self, name: &str, args: &[&Expr], f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{name}(")?;
        for (k, a) in args.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            self.write(a, f)?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for Display<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.expr, f)
    }
}

/// A vector of expressions over a shared, ordered variable list.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorExpr {
    pub vars: Vec<String>,
    pub exprs: Vec<Expr>,
}

impl VectorExpr {
    /// Parses one expression per variable.
    pub fn parse(texts: &[impl AsRef<str>], vars: &[String]) -> Result<Self, ExprError> {
        if texts.len() != vars.len() {
            return Err(ExprError::Syntax {
                position: 0,
                message: format!(
                    "expected {} component expressions, got {}",
                    vars.len(),
                    texts.len()
                ),
            });
        }
        let exprs = texts
            .iter()
            .map(|t| parse(t.as_ref(), vars))
            .collect::<Result<_, _>>()?;
        Ok(VectorExpr {
            vars: vars.to_vec(),
            exprs,
        })
    }

    pub fn dim(&self) -> usize {
        self.exprs.len()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.exprs.iter().map(|e| e.eval(x)).collect()
    }

    /// Symbolic Jacobian, `jac[i][j] = d f_i / d x_j`.
    pub fn jacobian(&self) -> Result<Vec<Vec<Expr>>, ExprError> {
        self.exprs.iter().map(|e| e.gradient(self.dim())).collect()
    }
}

/// Default variable names `x1..xn`.
pub fn default_var_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}
