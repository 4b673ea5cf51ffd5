//! Enlarging a verified quadratic region of attraction `{V_P <= c1}` by
//! showing `V_P` strictly decreases on the annulus `c1 <= V_P <= c2`.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomp::{margin, Decomposition, DecompError};
use crate::expr::{Expr, ExprError};
use crate::prover::{bisect_level, ExprConstraint, LevelError, Prover, Query, Settings, Status};
use crate::system::DynamicalSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReachError {
    #[error("linearization is not Hurwitz; no quadratic certificate")]
    NotHurwitz,
    #[error("inner level must be positive, got {0}")]
    BadInnerLevel(f64),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Decomp(#[from] DecompError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachSettings {
    pub prover: Settings,
    /// Absolute tolerance of the level bisection.
    pub tol: f64,
    /// Decrease margin as a fraction of the candidate outer level.
    pub epsilon: f64,
}

impl Default for ReachSettings {
    fn default() -> Self {
        ReachSettings {
            prover: Settings::default(),
            tol: 1e-5,
            epsilon: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachResult {
    /// Verified outer level `c2_P >= c1_P`.
    pub level: f64,
    /// True when no level above `c1_P` verified and `c2_P = c1_P`.
    pub degenerate: bool,
    pub boxes_processed: u64,
    pub wall_time: f64,
    pub last_failure: Option<Status>,
}

/// Largest verified `c2` with `V̇_P + ε·c2 <= 0` on `{c1 <= V_P <= c2} ∩ X`
/// and `{V_P <= c2}` inside the interior of `X`.
pub fn quadratic_reach_verifier(
    sys: &DynamicalSystem,
    c1: f64,
    prover: &Prover,
    settings: &ReachSettings,
) -> Result<ReachResult, ReachError> {
    if !(c1 > 0.0) {
        return Err(ReachError::BadInnerLevel(c1));
    }
    let start = Instant::now();
    let v = sys.quadratic_form().ok_or(ReachError::NotHurwitz)?;
    let vdot = sys.lie_derivative(&v)?;
    let d = Decomposition::monolithic(sys)?;
    let domain = &sys.domain;
    let gap = margin(domain, &settings.prover);
    let hi = d.containment_limit(domain);
    if hi <= c1 {
        return Ok(ReachResult {
            level: c1,
            degenerate: true,
            boxes_processed: 0,
            wall_time: start.elapsed().as_secs_f64(),
            last_failure: None,
        });
    }
    let inner = ExprConstraint::labeled(Expr::constant(c1).sub(&v), format!("{c1} - V_P")).shared();
    let verify = |c2: f64| {
        let mut queries = d.containment_queries(domain, c2, gap, settings.prover);
        let goal = ExprConstraint::labeled(
            vdot.add(&Expr::constant(settings.epsilon * c2)),
            "dV_P/dt + eps",
        );
        let outer = ExprConstraint::labeled(v.sub(&Expr::constant(c2)), format!("V_P - {c2}"));
        queries.push(
            Query::new(domain.clone(), goal.shared(), settings.prover)
                .with_premise(inner.clone())
                .with_premise(outer.shared()),
        );
        prover.check_all(&queries)
    };
    match bisect_level(verify, c1, hi, settings.tol) {
        Ok(r) => Ok(ReachResult {
            degenerate: r.level == c1,
            level: r.level,
            boxes_processed: r.boxes_processed,
            wall_time: start.elapsed().as_secs_f64(),
            last_failure: r.last_failure,
        }),
        Err(e) => {
            log::info!("{}: reach stage kept c2 = c1 ({e})", sys.name);
            Ok(ReachResult {
                level: c1,
                degenerate: true,
                boxes_processed: 0,
                wall_time: start.elapsed().as_secs_f64(),
                last_failure: match e {
                    LevelError::NoLevel { failure, .. } => failure,
                    LevelError::Prover(_) => None,
                },
            })
        }
    }
}
