//! Interval branch-and-prune prover for claims of the form
//! "for all x in a box with every premise(x) <= 0, goal(x) <= 0".
//!
//! A box is discarded when some premise is provably above `delta` on it or
//! when the goal is provably non-positive on it. Otherwise it is bisected
//! until its relevant widths fall below `min_width`, at which point the
//! midpoint is tested as a counterexample. `Verified` means every box was
//! discarded.
//!
//! Search runs in two phases so results do not depend on the worker count:
//! a sequential breadth-first split until enough boxes are pending, then an
//! independent depth-first search per pending box. Outcomes are aggregated
//! by box index with `Refuted` taking precedence over `DeltaUnknown`.

use std::cell::RefCell;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Expr, Tape};
use crate::interval::{Interval, IntervalBox};

/// Number of boxes produced by the sequential phase before parallel search.
const FAN_OUT: usize = 32;

/// Lineage depth from which the centered form supplements the natural
/// interval extension.
const MEAN_VALUE_DEPTH: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProverError {
    #[error("box budget of {budget} exhausted")]
    ResourceExhausted { budget: u64 },
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

/// A scalar function with sound interval enclosures, read as `value <= 0`.
pub trait Constraint: Send + Sync {
    /// Enclosure of the value over a box.
    fn eval_box(&self, b: &IntervalBox) -> Result<Interval, EvalError>;

    /// Value at a point.
    fn eval_point(&self, x: &[f64]) -> Result<f64, EvalError>;

    /// Enclosure of the gradient over a box, if available. Used for the
    /// centered (mean-value) form.
    fn gradient_box(&self, _b: &IntervalBox) -> Option<Result<Vec<Interval>, EvalError>> {
        None
    }

    /// Whether the value can depend on coordinate `var`.
    fn depends_on(&self, _var: usize) -> bool {
        true
    }

    /// Human-readable description for reports.
    fn describe(&self) -> String;
}

thread_local! {
    static SCRATCH: RefCell<Vec<Interval>> = const { RefCell::new(Vec::new()) };
    static POINT_SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

/// Constraint backed by a symbolic expression.
pub struct ExprConstraint {
    expr: Expr,
    tape: Tape,
    gradient: Option<Vec<(usize, Tape)>>,
    vars: Vec<usize>,
    label: String,
}

impl ExprConstraint {
    pub fn new(expr: Expr) -> Self {
        let vars = expr.vars();
        let gradient = vars
            .iter()
            .map(|&v| expr.differentiate(v).map(|d| (v, Tape::compile(&d))))
            .collect::<Result<Vec<_>, _>>()
            .ok();
        let label = format!("{}", expr.display(&[]));
        ExprConstraint {
            tape: Tape::compile(&expr),
            expr,
            gradient,
            vars,
            label,
        }
    }

    /// Same as `new` but with a descriptive label for reports.
    pub fn labeled(expr: Expr, label: impl Into<String>) -> Self {
        ExprConstraint {
            label: label.into(),
            ..ExprConstraint::new(expr)
        }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn shared(self) -> Arc<dyn Constraint> {
        Arc::new(self)
    }
}

impl Constraint for ExprConstraint {
    fn eval_box(&self, b: &IntervalBox) -> Result<Interval, EvalError> {
        SCRATCH.with(|s| self.tape.eval_interval_with(b, &mut s.borrow_mut()))
    }

    fn eval_point(&self, x: &[f64]) -> Result<f64, EvalError> {
        POINT_SCRATCH.with(|s| self.tape.eval_with(x, &mut s.borrow_mut()))
    }

    fn gradient_box(&self, b: &IntervalBox) -> Option<Result<Vec<Interval>, EvalError>> {
        let grad = self.gradient.as_ref()?;
        Some((|| {
            let mut out = vec![Interval::point(0.0); b.dim()];
            for (v, tape) in grad {
                out[*v] = SCRATCH.with(|s| tape.eval_interval_with(b, &mut s.borrow_mut()))?;
            }
            Ok(out)
        })())
    }

    fn depends_on(&self, var: usize) -> bool {
        self.vars.binary_search(&var).is_ok()
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

/// Search tolerances and limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Slack allowed on premises.
    pub delta: f64,
    /// Box width floor, relative to the widest domain dimension.
    pub min_width: f64,
    /// Maximum number of boxes processed by one query.
    pub budget: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            delta: 1e-4,
            min_width: 1e-6,
            budget: 50_000_000,
        }
    }
}

#[derive(Clone)]
pub struct Query {
    pub domain: IntervalBox,
    pub premises: Vec<Arc<dyn Constraint>>,
    pub goal: Arc<dyn Constraint>,
    pub settings: Settings,
}

impl Query {
    pub fn new(domain: IntervalBox, goal: Arc<dyn Constraint>, settings: Settings) -> Self {
        Query {
            domain,
            premises: Vec::new(),
            goal,
            settings,
        }
    }

    pub fn with_premise(mut self, p: Arc<dyn Constraint>) -> Self {
        self.premises.push(p);
        self
    }

    pub fn with_premises(mut self, ps: impl IntoIterator<Item = Arc<dyn Constraint>>) -> Self {
        self.premises.extend(ps);
        self
    }

    /// Serializable summary for reports.
    pub fn summary(&self) -> QuerySummary {
        QuerySummary {
            domain: self.domain.clone(),
            premises: self.premises.iter().map(|p| p.describe()).collect(),
            goal: self.goal.describe(),
            settings: self.settings,
        }
    }

    fn min_width_abs(&self) -> f64 {
        let w = self.domain.max_width();
        if w > 0.0 {
            self.settings.min_width * w
        } else {
            self.settings.min_width
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySummary {
    pub domain: IntervalBox,
    pub premises: Vec<String>,
    pub goal: String,
    pub settings: Settings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Verified,
    Refuted { witness: Vec<f64>, goal_value: f64 },
    DeltaUnknown { region: IntervalBox },
}

impl Status {
    pub fn is_verified(&self) -> bool {
        matches!(self, Status::Verified)
    }

    fn rank(&self) -> u8 {
        match self {
            Status::Verified => 0,
            Status::DeltaUnknown { .. } => 1,
            Status::Refuted { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    pub boxes_processed: u64,
    pub wall_time: f64,
}

impl Verdict {
    pub fn is_verified(&self) -> bool {
        self.status.is_verified()
    }
}

struct Item {
    bx: IntervalBox,
    /// Premises not yet known to hold on the whole box.
    open: Vec<usize>,
    depth: u32,
}

enum Step {
    Done,
    Split(Item, Item),
    Terminal(Status),
}

/// Branch-and-prune engine with an optional worker pool.
#[derive(Clone)]
pub struct Prover {
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl Default for Prover {
    fn default() -> Self {
        Prover::sequential()
    }
}

impl Prover {
    pub fn sequential() -> Self {
        Prover { pool: None }
    }

    /// Prover using `jobs` worker threads (1 means no pool).
    pub fn with_jobs(jobs: usize) -> Result<Self, ProverError> {
        if jobs <= 1 {
            return Ok(Prover::sequential());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| ProverError::Pool(e.to_string()))?;
        Ok(Prover {
            pool: Some(Arc::new(pool)),
        })
    }

    pub fn jobs(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    pub fn check(&self, q: &Query) -> Result<Verdict, ProverError> {
        self.run(q, false)
    }

    /// As `check`, but the centered form is applied from the first box.
    pub fn check_with_mean_value(&self, q: &Query) -> Result<Verdict, ProverError> {
        self.run(q, true)
    }

    /// Checks queries in order and stops at the first that is not verified.
    /// The returned verdict carries the summed box count and time.
    pub fn check_all(&self, queries: &[Query]) -> Result<Verdict, ProverError> {
        let mut boxes = 0;
        let mut time = 0.0;
        for q in queries {
            let v = self.check(q)?;
            boxes += v.boxes_processed;
            time += v.wall_time;
            if !v.is_verified() {
                return Ok(Verdict {
                    status: v.status,
                    boxes_processed: boxes,
                    wall_time: time,
                });
            }
        }
        Ok(Verdict {
            status: Status::Verified,
            boxes_processed: boxes,
            wall_time: time,
        })
    }

    fn run(&self, q: &Query, force_mv: bool) -> Result<Verdict, ProverError> {
        let start = Instant::now();
        let search = Search {
            q,
            min_width: q.min_width_abs(),
            force_mv,
        };
        let budget = q.settings.budget;
        let finish = |status, boxes| Verdict {
            status,
            boxes_processed: boxes,
            wall_time: start.elapsed().as_secs_f64(),
        };

        let mut pending = std::collections::VecDeque::new();
        pending.push_back(Item {
            bx: q.domain.clone(),
            open: (0..q.premises.len()).collect(),
            depth: 0,
        });
        let mut boxes = 0u64;
        while !pending.is_empty() && pending.len() < FAN_OUT {
            let item = pending.pop_front().unwrap();
            boxes += 1;
            if boxes > budget {
                return Err(ProverError::ResourceExhausted { budget });
            }
            match search.step(item) {
                Step::Done => {}
                Step::Split(a, b) => {
                    pending.push_back(a);
                    pending.push_back(b);
                }
                Step::Terminal(s) => return Ok(finish(s, boxes)),
            }
        }

        let cap = budget - boxes;
        let items: Vec<Item> = pending.into_iter().collect();
        let results: Vec<(Status, u64, bool)> = match &self.pool {
            Some(pool) => pool.install(|| {
                items
                    .into_par_iter()
                    .map(|it| search.depth_first(it, cap))
                    .collect()
            }),
            None => items
                .into_iter()
                .map(|it| search.depth_first(it, cap))
                .collect(),
        };
        let mut status = Status::Verified;
        let mut exhausted = false;
        for (s, n, over) in results {
            boxes += n;
            exhausted |= over;
            if s.rank() > status.rank() {
                status = s;
            }
        }
        if exhausted || boxes > budget {
            if status.rank() == 2 {
                // A concrete counterexample stands regardless of budget.
                return Ok(finish(status, boxes));
            }
            return Err(ProverError::ResourceExhausted { budget });
        }
        log::trace!("query finished after {boxes} boxes");
        Ok(finish(status, boxes))
    }
}

/// Checks a query with the sequential prover.
pub fn check(q: &Query) -> Result<Verdict, ProverError> {
    Prover::sequential().check(q)
}

/// Sequential centered-form check.
pub fn check_with_mean_value(q: &Query) -> Result<Verdict, ProverError> {
    Prover::sequential().check_with_mean_value(q)
}

struct Search<'a> {
    q: &'a Query,
    min_width: f64,
    force_mv: bool,
}

impl Search<'_> {
    fn depth_first(&self, root: Item, cap: u64) -> (Status, u64, bool) {
        let mut stack = vec![root];
        let mut n = 0u64;
        while let Some(item) = stack.pop() {
            n += 1;
            if n > cap {
                return (Status::Verified, n, true);
            }
            match self.step(item) {
                Step::Done => {}
                Step::Split(a, b) => {
                    // Lower half is explored first.
                    stack.push(b);
                    stack.push(a);
                }
                Step::Terminal(s) => return (s, n, false),
            }
        }
        (Status::Verified, n, false)
    }

    fn enclose(&self, c: &dyn Constraint, bx: &IntervalBox, mv: bool) -> Option<Interval> {
        let natural = c.eval_box(bx).ok();
        if !mv {
            return natural;
        }
        match (natural, centered_form(c, bx)) {
            (Some(a), Some(b)) => Some(a.intersect(&b).unwrap_or(a)),
            (a, b) => a.or(b),
        }
    }

    fn step(&self, item: Item) -> Step {
        let q = self.q;
        let delta = q.settings.delta;
        let mv = self.force_mv || item.depth >= MEAN_VALUE_DEPTH;
        let mut open = Vec::with_capacity(item.open.len());
        for &k in &item.open {
            let p = q.premises[k].as_ref();
            let mut range = p.eval_box(&item.bx).ok();
            if mv && range.is_some_and(|r| r.lo <= delta && r.hi > 0.0) {
                range = self.enclose(p, &item.bx, true);
            }
            match range {
                Some(r) if r.lo > delta => return Step::Done,
                Some(r) if r.hi <= 0.0 => {}
                _ => open.push(k),
            }
        }
        let goal = q.goal.as_ref();
        let mut range = goal.eval_box(&item.bx).ok();
        if mv && !range.is_some_and(|r| r.hi <= 0.0) {
            range = self.enclose(goal, &item.bx, true);
        }
        if range.is_some_and(|r| r.hi <= 0.0) {
            return Step::Done;
        }

        let relevant = |d: usize| goal.depends_on(d) || open.iter().any(|&k| q.premises[k].depends_on(d));
        let mut split: Option<(usize, f64)> = None;
        for d in 0..item.bx.dim() {
            let w = item.bx[d].width();
            if w > 0.0 && relevant(d) && split.is_none_or(|(_, best)| w > best) {
                split = Some((d, w));
            }
        }
        match split {
            Some((d, w)) if w >= self.min_width => {
                let (a, b) = item.bx.bisect(d);
                Step::Split(
                    Item {
                        bx: a,
                        open: open.clone(),
                        depth: item.depth + 1,
                    },
                    Item {
                        bx: b,
                        open,
                        depth: item.depth + 1,
                    },
                )
            }
            _ => Step::Terminal(self.classify(&item.bx)),
        }
    }

    fn classify(&self, bx: &IntervalBox) -> Status {
        let q = self.q;
        let mid = bx.midpoint();
        let premises_hold = q.premises.iter().all(|p| {
            p.eval_point(&mid)
                .is_ok_and(|v| v <= q.settings.delta)
        });
        match q.goal.eval_point(&mid) {
            Ok(g) if premises_hold && g > 0.0 => Status::Refuted {
                witness: mid,
                goal_value: g,
            },
            _ => Status::DeltaUnknown { region: bx.clone() },
        }
    }
}

/// `g(c) + ∇g(B)·(B - c)` with `c` the box midpoint.
fn centered_form(c: &dyn Constraint, bx: &IntervalBox) -> Option<Interval> {
    let grad = c.gradient_box(bx)?.ok()?;
    let mid = bx.midpoint();
    let at_mid = c
        .eval_box(&IntervalBox::new(mid.iter().map(|&m| Interval::point(m)).collect()))
        .ok()?;
    let mut acc = at_mid;
    for (d, g) in grad.iter().enumerate() {
        if bx[d].width() == 0.0 || (g.lo == 0.0 && g.hi == 0.0) {
            continue;
        }
        let offset = bx[d].try_sub(Interval::point(mid[d])).ok()?;
        acc = acc.try_add(g.try_mul(offset).ok()?).ok()?;
    }
    Some(acc)
}

/// Outcome of a level search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSearch {
    pub level: f64,
    pub boxes_processed: u64,
    pub wall_time: f64,
    /// Verdict of the last rejected candidate, if any.
    pub last_failure: Option<Status>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LevelError {
    #[error("no level verifies, even the lower bracket {lo}")]
    NoLevel { lo: f64, failure: Option<Status> },
    #[error(transparent)]
    Prover(#[from] ProverError),
}

/// Largest level in `[lo, hi]` (to within `tol`) for which `verify` holds,
/// assuming verified levels are downward closed. `hi` itself is never
/// tested, so the result lies strictly below it. Running out of budget
/// counts as a failure except at `lo`.
pub fn bisect_level<F>(mut verify: F, lo: f64, hi: f64, tol: f64) -> Result<LevelSearch, LevelError>
where
    F: FnMut(f64) -> Result<Verdict, ProverError>,
{
    let start = Instant::now();
    let first = verify(lo)?;
    let mut boxes = first.boxes_processed;
    if !first.is_verified() {
        return Err(LevelError::NoLevel {
            lo,
            failure: Some(first.status),
        });
    }
    let (mut good, mut bad) = (lo, hi);
    let mut last_failure = None;
    while bad - good > tol {
        let mid = 0.5 * (good + bad);
        match verify(mid) {
            Ok(v) => {
                boxes += v.boxes_processed;
                if v.is_verified() {
                    good = mid;
                } else {
                    last_failure = Some(v.status);
                    bad = mid;
                }
            }
            Err(e) => {
                log::debug!("level {mid} abandoned: {e}");
                bad = mid;
            }
        }
    }
    Ok(LevelSearch {
        level: good,
        boxes_processed: boxes,
        wall_time: start.elapsed().as_secs_f64(),
        last_failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{default_var_names, parse};

    fn c(text: &str, n: usize) -> Arc<dyn Constraint> {
        ExprConstraint::new(parse(text, &default_var_names(n)).unwrap()).shared()
    }

    fn unit() -> IntervalBox {
        IntervalBox::cube(1, 1.0)
    }

    #[test]
    fn bounded_square_verifies() {
        let q = Query::new(unit(), c("x1^2 - 2", 1), Settings::default());
        assert!(check(&q).unwrap().is_verified());
    }

    #[test]
    fn square_above_half_is_refuted() {
        let q = Query::new(unit(), c("x1^2 - 0.5", 1), Settings::default());
        match check(&q).unwrap().status {
            Status::Refuted { witness, goal_value } => {
                assert!(witness[0].abs() > 0.5f64.sqrt());
                assert!(goal_value > 0.0);
            }
            s => panic!("expected refutation, got {s:?}"),
        }
    }

    #[test]
    fn infeasible_premise_is_vacuous() {
        let q = Query::new(unit(), c("x1 + 100", 1), Settings::default())
            .with_premise(c("x1 + 2", 1));
        assert!(check(&q).unwrap().is_verified());
    }

    #[test]
    fn tight_claim_ends_delta_unknown() {
        // x^2 <= 0 holds only at 0; boxes around 0 never prune.
        let q = Query::new(unit(), c("x1^2", 1), Settings::default());
        let v = check(&q).unwrap();
        assert!(!v.is_verified());
    }

    #[test]
    fn centered_form_agrees() {
        let b = IntervalBox::from_bounds(&[[0.4, 0.6]]);
        let q = Query::new(b, c("x1^2 - x1 - 0.26", 1), Settings::default());
        assert!(check(&q).unwrap().is_verified());
        assert!(check_with_mean_value(&q).unwrap().is_verified());
        let q = Query::new(
            IntervalBox::from_bounds(&[[1e-3, 1.0]]),
            c("sin(x1) - x1", 1),
            Settings::default(),
        );
        assert!(check_with_mean_value(&q).unwrap().is_verified());
    }

    #[test]
    fn claim_tight_at_a_point_is_never_refuted() {
        // sin(x) - x = 0 at the origin, so the box around 0 cannot be pruned.
        let q = Query::new(
            IntervalBox::from_bounds(&[[0.0, 1.0]]),
            c("sin(x1) - x1", 1),
            Settings::default(),
        );
        let v = check_with_mean_value(&q).unwrap();
        assert!(matches!(v.status, Status::DeltaUnknown { .. }));
    }

    #[test]
    fn budget_is_enforced() {
        let settings = Settings {
            budget: 10,
            ..Settings::default()
        };
        let q = Query::new(IntervalBox::cube(3, 1.0), c("x1^2 + x2^2 + x3^2 - 2.9", 3), settings);
        assert!(matches!(
            check(&q),
            Err(ProverError::ResourceExhausted { budget: 10 })
        ));
    }

    #[test]
    fn worker_count_does_not_change_verdicts() {
        let q = Query::new(
            IntervalBox::cube(2, 2.0),
            c("x1^2 + x2^2 - 4 - 0.3*sin(x1*x2)", 2),
            Settings::default(),
        )
        .with_premise(c("x1^2 + x2^2 - 3.5", 2));
        let a = Prover::sequential().check(&q).unwrap();
        let b = Prover::with_jobs(3).unwrap().check(&q).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.boxes_processed, b.boxes_processed);
    }

    #[test]
    fn bisection_finds_sublevel_limit() {
        // Largest c with {0.5|x|^2 <= c} inside [-1,1]^10.
        let n = 10;
        let settings = Settings::default();
        let verify = |lvl: f64| {
            let faces = IntervalBox::cube(n, 1.0).faces();
            let queries: Vec<Query> = faces
                .into_iter()
                .map(|f| {
                    let mut e = Expr::zero();
                    for i in 0..n {
                        e = e.add(&Expr::constant(0.5).mul(&Expr::var(i).powi(2)));
                    }
                    let goal = Expr::constant(lvl).sub(&e);
                    Query::new(f, ExprConstraint::new(goal).shared(), settings)
                })
                .collect();
            Prover::sequential().check_all(&queries)
        };
        let r = bisect_level(verify, 1e-3, 1.0, 1e-5).unwrap();
        assert!((r.level - 0.49999).abs() < 1e-4, "{}", r.level);
    }

    #[test]
    fn bisection_always_verified() {
        let ok = |_c: f64| {
            Ok(Verdict {
                status: Status::Verified,
                boxes_processed: 1,
                wall_time: 0.0,
            })
        };
        let r = bisect_level(ok, 0.0, 8.0, 1e-5).unwrap();
        assert!(r.level < 8.0 && r.level > 8.0 - 1e-5);
        assert_eq!(format!("{:.5}", r.level - 5e-6), "7.99999");
    }

    #[test]
    fn bisection_reports_no_level() {
        let bad = |_c: f64| {
            Ok(Verdict {
                status: Status::Refuted {
                    witness: vec![0.0],
                    goal_value: 1.0,
                },
                boxes_processed: 1,
                wall_time: 0.0,
            })
        };
        assert!(matches!(
            bisect_level(bad, 0.1, 1.0, 1e-3),
            Err(LevelError::NoLevel { .. })
        ));
    }
}
