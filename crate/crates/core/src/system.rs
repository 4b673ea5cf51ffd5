//! Autonomous systems `ẋ = f(x)` with their linearization at the
//! equilibrium and a quadratic Lyapunov certificate.
//!
//! Internally every system is shifted so the equilibrium sits at the origin.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse, EvalError, Expr, ExprError, Node, Tape, VectorExpr};
use crate::interval::{Interval, IntervalBox};
use crate::linalg::{lyapunov_solve, LinalgError, Matrix};

/// Tolerance on `‖f(x*)‖` when accepting an equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error(transparent)]
    Parse(#[from] ExprError),
    #[error("f does not vanish at the equilibrium (|f| = {residual:e})")]
    NotEquilibrium { residual: f64 },
    #[error("domain does not contain the equilibrium in its interior")]
    EquilibriumOutsideDomain,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("could not evaluate f: {0}")]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Optional settings for [`DynamicalSystem::build`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SystemOptions {
    /// Equilibrium in the original coordinates (default: origin).
    pub equilibrium: Option<Vec<f64>>,
    /// Lyapunov-equation right-hand side (default: identity).
    pub q: Option<Matrix>,
    /// `ε` in `r = λmin(Q) - ε`, as a fraction of `λmin(Q)` (default 1e-4).
    pub epsilon_fraction: Option<f64>,
}

/// Default fraction of `λmin(Q)` held back from the exponential-decay rate.
pub const DEFAULT_EPSILON_FRACTION: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct DynamicalSystem {
    pub name: String,
    /// Vector field in shifted coordinates (equilibrium at the origin).
    pub f: VectorExpr,
    /// Domain in shifted coordinates.
    pub domain: IntervalBox,
    /// Equilibrium in the original coordinates.
    pub equilibrium: Vec<f64>,
    pub q: Matrix,
    /// Jacobian of `f` at the origin.
    pub a: Matrix,
    /// Nonlinear remainder `g = f - A x`.
    pub g: Vec<Expr>,
    /// `Dg = Df - A`, obtained by differentiating `g` (`dg[i][j] = ∂g_i/∂x_j`).
    pub dg: Vec<Vec<Expr>>,
    /// Solution of `P A + Aᵀ P = -Q`; `None` when `A` is not Hurwitz.
    pub p: Option<Matrix>,
    pub epsilon_fraction: f64,
}

impl DynamicalSystem {
    /// Parses `f_texts` over `vars` and derives `A`, `g`, `Dg` and `P`.
    pub fn build(
        name: &str,
        vars: &[String],
        f_texts: &[impl AsRef<str>],
        domain: &[[f64; 2]],
        options: SystemOptions,
    ) -> Result<Self, SystemError> {
        let n = vars.len();
        if f_texts.len() != n || domain.len() != n {
            return Err(SystemError::Dimension(format!(
                "{} variables, {} components, {} domain intervals",
                n,
                f_texts.len(),
                domain.len()
            )));
        }
        if domain.iter().any(|[lo, hi]| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
            return Err(SystemError::Dimension("malformed domain interval".into()));
        }
        let raw = f_texts
            .iter()
            .map(|t| parse(t.as_ref(), vars))
            .collect::<Result<Vec<_>, _>>()?;
        let eq = options.equilibrium.clone().unwrap_or_else(|| vec![0.0; n]);
        if eq.len() != n {
            return Err(SystemError::Dimension("equilibrium length".into()));
        }
        let shifted: Vec<Expr> = if eq.iter().all(|v| *v == 0.0) {
            raw
        } else {
            let subst: Vec<Expr> = (0..n)
                .map(|i| Expr::var(i).add(&Expr::constant(eq[i])))
                .collect();
            raw.iter().map(|e| e.substitute(&subst)).collect()
        };
        let domain = IntervalBox::new(
            domain
                .iter()
                .zip(&eq)
                .map(|([lo, hi], e)| Interval::new(lo - e, hi - e))
                .collect(),
        );
        if !domain.0.iter().all(|iv| iv.lo < 0.0 && 0.0 < iv.hi) {
            return Err(SystemError::EquilibriumOutsideDomain);
        }
        let origin = vec![0.0; n];
        let residual = shifted
            .iter()
            .map(|e| e.eval(&origin).map(|v| v * v))
            .sum::<Result<f64, _>>()?
            .sqrt();
        if residual > EQUILIBRIUM_TOL {
            return Err(SystemError::NotEquilibrium { residual });
        }

        let f = VectorExpr {
            vars: vars.to_vec(),
            exprs: shifted,
        };
        let jac = f.jacobian()?;
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = jac[i][j].eval(&origin)?;
            }
        }
        let g: Vec<Expr> = (0..n)
            .map(|i| remove_linear_part(&f.exprs[i], a.row(i)))
            .collect();
        let dg = g
            .iter()
            .map(|gi| gi.gradient(n))
            .collect::<Result<Vec<_>, _>>()?;
        let q = options.q.clone().unwrap_or_else(|| Matrix::identity(n));
        if q.rows() != n || !q.is_symmetric(1e-12) || !q.is_positive_definite() {
            return Err(SystemError::Dimension(
                "Q must be a symmetric positive definite n x n matrix".into(),
            ));
        }
        let p = match lyapunov_solve(&a, &q) {
            Ok(p) => Some(p),
            Err(LinalgError::SingularSystem) => {
                log::warn!("{name}: linearization is not Hurwitz; quadratic stages disabled");
                None
            }
            Err(e) => return Err(e.into()),
        };
        Ok(DynamicalSystem {
            name: name.to_string(),
            f,
            domain,
            equilibrium: eq,
            q,
            a,
            g,
            dg,
            p,
            epsilon_fraction: options
                .epsilon_fraction
                .unwrap_or(DEFAULT_EPSILON_FRACTION),
        })
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    pub fn vars(&self) -> &[String] {
        &self.f.vars
    }

    pub fn is_hurwitz(&self) -> bool {
        self.p.is_some()
    }

    /// Evaluates `f` in shifted coordinates.
    pub fn eval_f(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.f.eval(x)
    }

    /// Vector field compiled for repeated point evaluation.
    pub fn compiled_field(&self) -> CompiledField {
        CompiledField {
            tapes: self.f.exprs.iter().map(Tape::compile).collect(),
        }
    }

    /// `r = λmin(Q) - ε`, the decay margin used by the local condition.
    pub fn decay_margin(&self) -> f64 {
        let lam = self.q.min_eigenvalue_sym();
        lam - self.epsilon_fraction * lam
    }

    /// `V_P(x) = xᵀ P x`, or `None` without a certificate.
    pub fn quadratic_form(&self) -> Option<Expr> {
        self.p
            .as_ref()
            .map(|p| quadratic_form(p, &(0..self.dim()).collect::<Vec<_>>()))
    }

    /// `Σ ∂V/∂x_i · f_i`.
    pub fn lie_derivative(&self, v: &Expr) -> Result<Expr, ExprError> {
        let mut terms = Vec::with_capacity(self.dim());
        for (i, fi) in self.f.exprs.iter().enumerate() {
            terms.push(v.differentiate(i)?.mul(fi));
        }
        Ok(Expr::sum(&terms))
    }
}

/// Point evaluator for `f` that reuses one scratch stack.
#[derive(Debug, Clone)]
pub struct CompiledField {
    tapes: Vec<Tape>,
}

impl CompiledField {
    pub fn dim(&self) -> usize {
        self.tapes.len()
    }

    pub fn eval_into(
        &self,
        x: &[f64],
        out: &mut [f64],
        stack: &mut Vec<f64>,
    ) -> Result<(), EvalError> {
        for (o, t) in out.iter_mut().zip(&self.tapes) {
            *o = t.eval_with(x, stack)?;
        }
        Ok(())
    }
}

/// `e - Σ_j a_j x_j`, built termwise so that linear monomials of `e`
/// cancel structurally instead of leaving `x - x` pairs behind.
fn remove_linear_part(e: &Expr, a: &[f64]) -> Expr {
    let mut terms = Vec::new();
    collect_terms(e, 1.0, &mut terms);
    let mut residual: Vec<f64> = a.iter().map(|v| -v).collect();
    let mut kept = Vec::new();
    for (sign, t) in terms {
        match linear_monomial(&t) {
            Some((j, c)) if j < residual.len() => residual[j] += sign * c,
            _ => kept.push(if sign < 0.0 { t.neg() } else { t }),
        }
    }
    for (j, c) in residual.iter().enumerate() {
        if *c != 0.0 {
            kept.push(Expr::constant(*c).mul(&Expr::var(j)));
        }
    }
    Expr::sum(&kept)
}

fn collect_terms(e: &Expr, sign: f64, out: &mut Vec<(f64, Expr)>) {
    match e.node() {
        Node::Add(a, b) => {
            collect_terms(a, sign, out);
            collect_terms(b, sign, out);
        }
        Node::Sub(a, b) => {
            collect_terms(a, sign, out);
            collect_terms(b, -sign, out);
        }
        Node::Neg(a) => collect_terms(a, -sign, out),
        _ => out.push((sign, e.clone())),
    }
}

/// `(j, c)` if `e` is `c * x_j` in one of its simple spellings.
fn linear_monomial(e: &Expr) -> Option<(usize, f64)> {
    match e.node() {
        Node::Var(j) => Some((*j, 1.0)),
        Node::Mul(a, b) => match (a.node(), b.node()) {
            (Node::Const(c), Node::Var(j)) | (Node::Var(j), Node::Const(c)) => Some((*j, *c)),
            _ => None,
        },
        Node::Div(a, b) => match (a.node(), b.node()) {
            (Node::Var(j), Node::Const(c)) if *c != 0.0 => Some((*j, 1.0 / c)),
            _ => None,
        },
        _ => None,
    }
}

/// `zᵀ M z` where `z` is the vector of variables `vars`, written as
/// `Σ M_ii z_i² + Σ_{i<j} 2 M_ij z_i z_j`.
pub fn quadratic_form(m: &Matrix, vars: &[usize]) -> Expr {
    let mut terms = Vec::new();
    for (a, &i) in vars.iter().enumerate() {
        terms.push(Expr::constant(m[(a, a)]).mul(&Expr::var(i).powi(2)));
        for (b, &j) in vars.iter().enumerate().skip(a + 1) {
            let c = m[(a, b)] + m[(b, a)];
            terms.push(Expr::constant(c).mul(&Expr::var(i)).mul(&Expr::var(j)));
        }
    }
    Expr::sum(&terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    Quadratic,
    Neural,
}

/// A verified sublevel set `{x ∈ X : V(x) <= level}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCertificate {
    pub kind: CertificateKind,
    pub level: f64,
    /// Which stage produced the level (`local`, `reach`, `neural_target`, ...).
    pub verified_by: String,
}
