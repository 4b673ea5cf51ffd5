//! Splitting a coupled system into low-dimensional blocks, and the
//! max-form certificate `V(x) = max_b x_bᵀ P_b x_b` built from them.
//!
//! The sublevel set `{V <= c}` of a max-form certificate is the product of
//! the block ellipsoids, so every check below is a per-block query over the
//! box that encloses that product.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::interval::{Interval, IntervalBox};
use crate::linalg::{lyapunov_solve, LinalgError, Matrix};
use crate::prover::{
    bisect_level, Constraint, ExprConstraint, LevelError, LevelSearch, Prover, ProverError,
    Query, Settings, Status, Verdict,
};
use crate::reach::ReachSettings;
use crate::system::{quadratic_form, DynamicalSystem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompError {
    #[error("block specification is not a partition of 0..{n}: {reason}")]
    NotPartition { n: usize, reason: String },
    #[error("block {block} has a non-Hurwitz linearization")]
    NotHurwitz { block: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// One block of a decomposition, with its own quadratic certificate.
#[derive(Debug, Clone)]
pub struct Block {
    /// State indices owned by the block, in increasing order.
    pub indices: Vec<usize>,
    /// Diagonal block of the Jacobian.
    pub a: Matrix,
    /// Solution of `P A + Aᵀ P = -I` for this block.
    pub p: Matrix,
    pub p_inv: Matrix,
    /// `V_b(x) = x_bᵀ P x_b` over global variable indices.
    pub v: Expr,
    /// Interconnection `g_b = f_b - A x_b`, one entry per owned index. May
    /// reference variables of other blocks.
    pub g: Vec<Expr>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Block {
    fn new(indices: Vec<usize>, a: Matrix, p: Matrix, g: Vec<Expr>) -> Result<Self, LinalgError> {
        let p_inv = p.inverse()?;
        Ok(Block {
            v: quadratic_form(&p, &indices),
            lambda_min: p.min_eigenvalue_sym(),
            lambda_max: p.max_eigenvalue_sym(),
            indices,
            a,
            p,
            p_inv,
            g,
        })
    }

    /// Largest `|x_k|` over `{V_b <= c}` for each owned index.
    pub fn extent(&self, c: f64) -> Vec<f64> {
        (0..self.indices.len())
            .map(|a| (c * self.p_inv[(a, a)]).sqrt())
            .collect()
    }

    fn owns(&self, var: usize) -> bool {
        self.indices.binary_search(&var).is_ok()
    }
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub n: usize,
    pub blocks: Vec<Block>,
    /// `block_of[k]` is the block owning state `k`.
    pub block_of: Vec<usize>,
}

/// Splits `sys` into the blocks of `spec` (0-based state indices).
pub fn decompose(sys: &DynamicalSystem, spec: &[Vec<usize>]) -> Result<Decomposition, DecompError> {
    let n = sys.dim();
    let mut block_of = vec![usize::MAX; n];
    for (b, idx) in spec.iter().enumerate() {
        if idx.is_empty() {
            return Err(DecompError::NotPartition {
                n,
                reason: format!("block {b} is empty"),
            });
        }
        for &k in idx {
            if k >= n {
                return Err(DecompError::NotPartition {
                    n,
                    reason: format!("index {k} out of range"),
                });
            }
            if block_of[k] != usize::MAX {
                return Err(DecompError::NotPartition {
                    n,
                    reason: format!("index {k} appears twice"),
                });
            }
            block_of[k] = b;
        }
    }
    if let Some(k) = block_of.iter().position(|b| *b == usize::MAX) {
        return Err(DecompError::NotPartition {
            n,
            reason: format!("index {k} is not covered"),
        });
    }
    let mut blocks = Vec::with_capacity(spec.len());
    for (b, idx) in spec.iter().enumerate() {
        let mut indices = idx.clone();
        indices.sort_unstable();
        let a = sys.a.select(&indices, &indices);
        let p = match lyapunov_solve(&a, &Matrix::identity(indices.len())) {
            Ok(p) => p,
            Err(LinalgError::SingularSystem) => return Err(DecompError::NotHurwitz { block: b }),
            Err(e) => return Err(e.into()),
        };
        let g = indices
            .iter()
            .enumerate()
            .map(|(r, &i)| {
                let own: Vec<Expr> = indices
                    .iter()
                    .enumerate()
                    .map(|(c, &j)| Expr::constant(a[(r, c)]).mul(&Expr::var(j)))
                    .collect();
                sys.f.exprs[i].sub(&Expr::sum(&own))
            })
            .collect();
        blocks.push(Block::new(indices, a, p, g)?);
    }
    Ok(Decomposition {
        n,
        blocks,
        block_of,
    })
}

impl Decomposition {
    /// A single block holding every state, certified by the system's own `P`.
    pub fn monolithic(sys: &DynamicalSystem) -> Result<Self, DecompError> {
        let p = sys.p.clone().ok_or(DecompError::NotHurwitz { block: 0 })?;
        let indices: Vec<usize> = (0..sys.dim()).collect();
        let block = Block::new(indices, sys.a.clone(), p, sys.g.clone())?;
        Ok(Decomposition {
            n: sys.dim(),
            blocks: vec![block],
            block_of: vec![0; sys.dim()],
        })
    }

    /// Value of the max-form certificate at `x`.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let xb: Vec<f64> = b.indices.iter().map(|&k| x[k]).collect();
                b.p.quad_form(&xb)
            })
            .fold(0.0, f64::max)
    }

    /// Smallest box containing `{V <= c}`.
    pub fn enclosing_box(&self, c: f64) -> IntervalBox {
        let mut dims = vec![Interval::point(0.0); self.n];
        for b in &self.blocks {
            for (k, e) in b.indices.iter().zip(b.extent(c)) {
                dims[*k] = Interval::new(-e, e);
            }
        }
        IntervalBox::new(dims)
    }

    /// Largest `c` for which `{V <= c}` fits in `domain` (closed form).
    pub fn containment_limit(&self, domain: &IntervalBox) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| {
                b.indices.iter().enumerate().map(move |(a, &k)| {
                    let reach = domain[k].lo.abs().min(domain[k].hi);
                    reach * reach / b.p_inv[(a, a)]
                })
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Queries proving `{V <= c}` lies in the interior of `domain`: on every
    /// face of each block's projected domain, shrunk by `margin`, `V_b >= c`.
    pub fn containment_queries(
        &self,
        domain: &IntervalBox,
        c: f64,
        margin: f64,
        settings: Settings,
    ) -> Vec<Query> {
        let mut out = Vec::new();
        for b in &self.blocks {
            let goal = ExprConstraint::labeled(
                Expr::constant(c).sub(&b.v),
                format!("{c} - V_block{:?}", b.indices),
            )
            .shared();
            let mut region = vec![Interval::point(0.0); self.n];
            for &k in &b.indices {
                region[k] = domain[k];
            }
            let shrunk = IntervalBox::new(region).shrunk(margin);
            for (i, face) in shrunk.faces().into_iter().enumerate() {
                if b.owns(i / 2) {
                    out.push(Query::new(face, goal.clone(), settings));
                }
            }
        }
        out
    }

    /// Premises `V_j - c <= 0` for every multi-variable block `j` that owns
    /// one of `vars`. Singleton blocks are already exact in the enclosing box.
    pub fn level_premises(&self, vars: &[usize], c: f64) -> Vec<Arc<dyn Constraint>> {
        self.touched_blocks(vars)
            .filter(|b| self.blocks[*b].indices.len() > 1)
            .map(|b| {
                ExprConstraint::labeled(
                    self.blocks[b].v.sub(&Expr::constant(c)),
                    format!("V_block{:?} - {c}", self.blocks[b].indices),
                )
                .shared()
            })
            .collect()
    }

    fn touched_blocks<'a>(&'a self, vars: &'a [usize]) -> impl Iterator<Item = usize> + 'a {
        let mut seen = vec![false; self.blocks.len()];
        vars.iter().filter_map(move |&k| {
            let b = self.block_of[k];
            (!std::mem::replace(&mut seen[b], true)).then_some(b)
        })
    }
}

/// Absolute box-width margin corresponding to `settings.min_width`.
pub fn margin(domain: &IntervalBox, settings: &Settings) -> f64 {
    settings.min_width * domain.max_width()
}

/// Initial lower bracket for a level search: the first of `hi·1e-6`,
/// `hi·1e-7`, ... that `verify` accepts, down to `hi·1e-12`.
pub(crate) fn bisect_from_small<F>(mut verify: F, hi: f64, tol: f64) -> Result<LevelSearch, LevelError>
where
    F: FnMut(f64) -> Result<Verdict, ProverError>,
{
    let mut lo = hi * 1e-6;
    let mut boxes = 0;
    loop {
        let v = verify(lo)?;
        boxes += v.boxes_processed;
        if v.is_verified() {
            break;
        }
        lo /= 10.0;
        if lo < hi * 1e-12 {
            return Err(LevelError::NoLevel {
                lo,
                failure: Some(v.status),
            });
        }
    }
    let mut r = bisect_level(verify, lo, hi, tol)?;
    r.boxes_processed += boxes;
    Ok(r)
}

/// Per-block decrease queries for the annulus `c1 <= V <= c` of a max-form
/// certificate: for each block `i`, on points where `V_i` is the maximum and
/// lies in `[c1, c]`, `V̇_i + ε·c <= 0` under the full dynamics.
pub fn max_form_decrease_queries(
    sys: &DynamicalSystem,
    d: &Decomposition,
    c1: f64,
    c: f64,
    settings: &ReachSettings,
) -> Result<Vec<Query>, DecompError> {
    let bx = d.enclosing_box(c);
    let mut out = Vec::with_capacity(d.blocks.len());
    for block in &d.blocks {
        let mut vdot = Vec::new();
        for &k in &block.indices {
            vdot.push(block.v.differentiate(k)?.mul(&sys.f.exprs[k]));
        }
        let goal = Expr::sum(&vdot).add(&Expr::constant(settings.epsilon * c));
        let vars = goal.vars();
        let mut premises: Vec<Arc<dyn Constraint>> = vec![
            ExprConstraint::labeled(Expr::constant(c1).sub(&block.v), format!("{c1} - V_i")).shared(),
            ExprConstraint::labeled(block.v.sub(&Expr::constant(c)), format!("V_i - {c}")).shared(),
        ];
        let own = d.block_of[block.indices[0]];
        for j in d.touched_blocks(&vars) {
            if j != own {
                let other = &d.blocks[j];
                premises.push(
                    ExprConstraint::labeled(
                        other.v.sub(&block.v),
                        format!("V_block{:?} - V_i", other.indices),
                    )
                    .shared(),
                );
            }
        }
        let goal = ExprConstraint::labeled(goal, format!("dV_block{:?}/dt + eps", block.indices));
        out.push(Query::new(bx.clone(), goal.shared(), settings.prover).with_premises(premises));
    }
    Ok(out)
}

/// Outcome of the max-form reach search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionalLevel {
    pub level: f64,
    pub boxes_processed: u64,
    pub wall_time: f64,
    pub last_failure: Option<Status>,
}

/// Largest verified `c >= c1` for the max-form certificate of `d`.
///
/// `c1` must be a verified local level of the same certificate (see
/// `local::compositional_local_stability_verifier`). When no larger level
/// verifies the result is `c1` itself.
pub fn compositional_quadratic_verifier(
    sys: &DynamicalSystem,
    d: &Decomposition,
    domain: &IntervalBox,
    c1: f64,
    prover: &Prover,
    settings: &ReachSettings,
) -> Result<CompositionalLevel, DecompError> {
    let start = std::time::Instant::now();
    let hi = d.containment_limit(domain);
    let m = margin(domain, &settings.prover);
    let mut build_error = None;
    let verify = |c: f64| {
        let mut queries = d.containment_queries(domain, c, m, settings.prover);
        match max_form_decrease_queries(sys, d, c1, c, settings) {
            Ok(q) => queries.extend(q),
            Err(e) => build_error = Some(e),
        }
        prover.check_all(&queries)
    };
    let result = bisect_level(verify, c1, hi, settings.tol);
    if let Some(e) = build_error {
        return Err(e);
    }
    let r = match result {
        Ok(r) => r,
        Err(e) => {
            log::info!("max-form reach found no level above {c1}: {e}");
            return Ok(CompositionalLevel {
                level: c1,
                boxes_processed: 0,
                wall_time: start.elapsed().as_secs_f64(),
                last_failure: match e {
                    LevelError::NoLevel { failure, .. } => failure,
                    LevelError::Prover(_) => None,
                },
            });
        }
    };
    Ok(CompositionalLevel {
        level: r.level,
        boxes_processed: r.boxes_processed,
        wall_time: start.elapsed().as_secs_f64(),
        last_failure: r.last_failure,
    })
}
