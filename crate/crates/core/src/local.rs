//! Local exponential stability from the linearization.
//!
//! With `ẋ = Ax + g(x)` and `PA + AᵀP = -Q`, the sublevel set
//! `{xᵀPx <= c}` is a region of attraction whenever
//! `2‖P Dg(x)‖ <= r = λmin(Q) - ε` on it. The 2-norm is over-approximated by
//! the Frobenius norm, which the prover checks in squared form.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomp::{bisect_from_small, margin, Decomposition, DecompError};
use crate::expr::Expr;
use crate::interval::IntervalBox;
use crate::linalg::Matrix;
use crate::prover::{
    ExprConstraint, LevelError, Prover, ProverError, Query, Settings, Status,
};
use crate::system::DynamicalSystem;

/// Half-width of the box standing in for the whole state space.
pub const WHOLE_SPACE: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalError {
    #[error("linearization is not Hurwitz; no quadratic certificate")]
    NotHurwitz,
    #[error("no positive level verifies")]
    NoLevel { failure: Option<Status> },
    #[error(transparent)]
    Prover(#[from] ProverError),
    #[error(transparent)]
    Decomp(#[from] DecompError),
}

impl From<LevelError> for LocalError {
    fn from(e: LevelError) -> Self {
        match e {
            LevelError::NoLevel { failure, .. } => LocalError::NoLevel { failure },
            LevelError::Prover(p) => LocalError::Prover(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalSettings {
    pub prover: Settings,
    /// Absolute tolerance of the level bisection.
    pub tol: f64,
    /// Try the whole-space check first when the remainder is bounded.
    pub try_global: bool,
}

impl Default for LocalSettings {
    fn default() -> Self {
        LocalSettings {
            prover: Settings::default(),
            tol: 1e-5,
            try_global: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalResult {
    /// Verified level `c1_P`. For a globally stable system this is the
    /// largest sublevel set contained in the domain.
    pub level: f64,
    pub globally_stable: bool,
    pub boxes_processed: u64,
    pub wall_time: f64,
    pub last_failure: Option<Status>,
}

/// `4 Σ_ij (M_ij)² - r²` for a matrix of expressions `M`.
fn squared_frobenius_goal(m: &[Vec<Expr>], r: f64) -> Expr {
    let squares: Vec<Expr> = m.iter().flatten().map(|e| e.powi(2)).collect();
    Expr::constant(4.0)
        .mul(&Expr::sum(&squares))
        .sub(&Expr::constant(r * r))
}

/// `P · Dg` with `Dg` restricted to the given rows and columns.
fn p_times_dg(p: &Matrix, dg: &[Vec<Expr>], rows: &[usize], cols: &[usize]) -> Vec<Vec<Expr>> {
    (0..rows.len())
        .map(|a| {
            cols.iter()
                .map(|&j| {
                    let terms: Vec<Expr> = rows
                        .iter()
                        .enumerate()
                        .map(|(b, &k)| Expr::constant(p[(a, b)]).mul(&dg[k][j]))
                        .collect();
                    Expr::sum(&terms)
                })
                .collect()
        })
        .collect()
}

/// Largest `c` (or global stability) for which the Frobenius condition holds
/// on `{xᵀPx <= c}` and the set lies inside the domain.
pub fn local_stability_verifier(
    sys: &DynamicalSystem,
    prover: &Prover,
    settings: &LocalSettings,
) -> Result<LocalResult, LocalError> {
    let start = Instant::now();
    let p = sys.p.as_ref().ok_or(LocalError::NotHurwitz)?;
    let n = sys.dim();
    let all: Vec<usize> = (0..n).collect();
    let m = p_times_dg(p, &sys.dg, &all, &all);
    let goal = ExprConstraint::labeled(
        squared_frobenius_goal(&m, sys.decay_margin()),
        "4|P Dg|_F^2 - r^2",
    )
    .shared();
    let d = Decomposition::monolithic(sys)?;
    let v = d.blocks[0].v.clone();
    let domain = &sys.domain;
    let gap = margin(domain, &settings.prover);
    let mut boxes = 0;

    let bounded = sys.dg.iter().flatten().all(Expr::is_structurally_bounded);
    let mut globally_stable = false;
    if settings.try_global && bounded {
        let q = Query::new(IntervalBox::cube(n, WHOLE_SPACE), goal.clone(), settings.prover);
        match prover.check(&q) {
            Ok(verdict) => {
                boxes += verdict.boxes_processed;
                globally_stable = verdict.is_verified();
            }
            Err(e) => log::info!("{}: whole-space check abandoned: {e}", sys.name),
        }
    }

    let hi = d.containment_limit(domain);
    let verify = |c: f64| {
        let mut queries = d.containment_queries(domain, c, gap, settings.prover);
        if !globally_stable {
            let premise = ExprConstraint::labeled(v.sub(&Expr::constant(c)), format!("V_P - {c}"));
            queries.push(
                Query::new(domain.clone(), goal.clone(), settings.prover)
                    .with_premise(premise.shared()),
            );
        }
        prover.check_all(&queries)
    };
    let r = bisect_from_small(verify, hi, settings.tol)?;
    Ok(LocalResult {
        level: r.level,
        globally_stable,
        boxes_processed: boxes + r.boxes_processed,
        wall_time: start.elapsed().as_secs_f64(),
        last_failure: r.last_failure,
    })
}

/// Local level of the max-form certificate `max_b x_bᵀ P_b x_b`.
///
/// On points where block `b` attains the maximum, every other block obeys
/// `‖x_j‖ <= κ_bj ‖x_b‖` with `κ_bj = sqrt(λmax(P_b)/λmin(P_j))`, so
/// `V̇_b <= -(r_b - 2 Σ_j κ_bj ‖P_b D_j g_b(x)‖_F) ‖x_b‖²`. Each block is
/// checked separately over the box enclosing `{V <= c}`.
pub fn compositional_local_stability_verifier(
    sys: &DynamicalSystem,
    d: &Decomposition,
    prover: &Prover,
    settings: &LocalSettings,
) -> Result<LocalResult, LocalError> {
    let start = Instant::now();
    let domain = &sys.domain;
    let gap = margin(domain, &settings.prover);
    let r = 1.0 - sys.epsilon_fraction;

    // Per block: the list of (κ_bj, P_b D_j g_b) terms that are not zero.
    let mut terms_per_block = Vec::with_capacity(d.blocks.len());
    for block in &d.blocks {
        let rows: Vec<Vec<Expr>> = block
            .g
            .iter()
            .map(|gi| gi.gradient(d.n))
            .collect::<Result<_, _>>()
            .map_err(DecompError::from)?;
        let local_rows: Vec<usize> = (0..block.indices.len()).collect();
        let mut terms = Vec::new();
        for other in &d.blocks {
            let mpart = p_times_dg(&block.p, &rows, &local_rows, &other.indices);
            if mpart.iter().flatten().all(Expr::is_zero) {
                continue;
            }
            let kappa = if std::ptr::eq(block, other) {
                1.0
            } else {
                (block.lambda_max / other.lambda_min).sqrt()
            };
            let squares: Vec<Expr> = mpart.iter().flatten().map(|e| e.powi(2)).collect();
            terms.push(Expr::constant(2.0 * kappa).mul(&Expr::sum(&squares).sqrt()));
        }
        terms_per_block.push(Expr::sum(&terms).sub(&Expr::constant(r)));
    }

    let hi = d.containment_limit(domain);
    let verify = |c: f64| {
        let mut queries = d.containment_queries(domain, c, gap, settings.prover);
        let bx = d.enclosing_box(c);
        for (block, goal) in d.blocks.iter().zip(&terms_per_block) {
            if goal.as_const().is_some_and(|v| v <= 0.0) {
                continue;
            }
            let vars = goal.vars();
            let q = Query::new(
                bx.clone(),
                ExprConstraint::labeled(goal.clone(), format!("local condition, block {:?}", block.indices))
                    .shared(),
                settings.prover,
            )
            .with_premises(d.level_premises(&vars, c));
            queries.push(q);
        }
        prover.check_all(&queries)
    };
    let res = bisect_from_small(verify, hi, settings.tol)?;
    Ok(LocalResult {
        level: res.level,
        globally_stable: false,
        boxes_processed: res.boxes_processed,
        wall_time: start.elapsed().as_secs_f64(),
        last_failure: res.last_failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::decompose;
    use crate::expr::default_var_names;
    use crate::system::SystemOptions;

    fn build(f: &[&str], domain: &[[f64; 2]]) -> DynamicalSystem {
        DynamicalSystem::build(
            "t",
            &default_var_names(f.len()),
            f,
            domain,
            SystemOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn linear_system_is_globally_stable() {
        let sys = build(&["-x1"], &[[-1.0, 1.0]]);
        let r = local_stability_verifier(&sys, &Prover::sequential(), &LocalSettings::default())
            .unwrap();
        assert!(r.globally_stable);
        assert!((r.level - 0.5).abs() < 1e-4);
    }

    #[test]
    fn pendulum_is_globally_stable() {
        let sys = build(
            &["x2", "sin(x1) - x2 - (4.4142*x1 + 2.3163*x2)"],
            &[[-2.0, 2.0], [-2.0, 2.0]],
        );
        let r = local_stability_verifier(&sys, &Prover::sequential(), &LocalSettings::default())
            .unwrap();
        assert!(r.globally_stable);
    }

    #[test]
    fn van_der_pol_local_level_is_sound_by_sampling() {
        let sys = build(&["-x2", "x1 - (1 - x1^2)*x2"], &[[-2.5, 2.5], [-3.5, 3.5]]);
        let r = local_stability_verifier(&sys, &Prover::sequential(), &LocalSettings::default())
            .unwrap();
        assert!(!r.globally_stable);
        assert!(r.level > 0.1 && r.level < 3.0, "{}", r.level);
        let v = sys.quadratic_form().unwrap();
        let vdot = sys.lie_derivative(&v).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut hits = 0;
        while hits < 20_000 {
            let x = [rng.gen_range(-2.5..2.5), rng.gen_range(-3.5..3.5)];
            if v.eval(&x).unwrap() <= r.level {
                hits += 1;
                if x[0].abs() + x[1].abs() > 1e-9 {
                    assert!(vdot.eval(&x).unwrap() < 0.0, "{x:?}");
                }
            }
        }
    }

    #[test]
    fn compositional_level_for_singleton_blocks() {
        let f = [
            "-x1 + 0.5*x2 - 0.1*x9^2",
            "-0.5*x1 - x2",
            "-x3 + 0.5*x4 - 0.1*x1^2",
            "-0.5*x3 - x4",
            "-x5 + 0.5*x6 + 0.1*x7^2",
            "-0.5*x5 - x6",
            "-x7 + 0.5*x8",
            "-0.5*x7 - x8",
            "-x9 + 0.5*x10",
            "-0.5*x9 - x10 + 0.1*x2^2",
        ];
        let sys = build(&f, &[[-4.0, 4.0]; 10]);
        let d = decompose(&sys, &(0..10).map(|k| vec![k]).collect::<Vec<_>>()).unwrap();
        let r = compositional_local_stability_verifier(
            &sys,
            &d,
            &Prover::sequential(),
            &LocalSettings::default(),
        )
        .unwrap();
        // 0.5 + 0.2|x| <= r with c = x²/2.
        let expected = 0.5 * ((1.0 - 1e-4 - 0.5) / 0.2f64).powi(2);
        assert!((r.level - expected).abs() < 1e-3, "{}", r.level);
    }
}
