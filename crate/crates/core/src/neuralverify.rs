//! Verified level sets of a trained network `W_N`.
//!
//! Enclosures of `W_N` and of `Ẇ_N = ∇W_N·f` over boxes are computed by
//! interval propagation through the layers, and plugged into the prover as
//! opaque constraints. Two levels are then searched:
//!
//! * `c1_V`: `{W_N <= c1_V} ∩ X ⊆ {V_P <= c}` for a verified quadratic level `c`;
//! * `c2_V`: `Ẇ_N <= -ε` on `{c1_V <= W_N <= c2_V} ∩ X` and `W_N > c2_V` on `∂X`.
//!
//! Every point of `{W_N <= c2_V} ∩ X` then flows into `{V_P <= c}`.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Expr, Tape};
use crate::interval::{Interval, IntervalBox};
use crate::learner::MlpNet;
use crate::prover::{
    bisect_level, Constraint, ExprConstraint, LevelError, LevelSearch, Prover, ProverError, Query,
    Settings, Status, Verdict,
};
use crate::system::DynamicalSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("network input has dimension {net}, system has {sys}")]
    Dimension { net: usize, sys: usize },
    #[error("linearization is not Hurwitz; no quadratic level to anchor to")]
    NotHurwitz,
    #[error("no inner neural level verifies")]
    NoLevel { failure: Option<Status> },
    #[error(transparent)]
    Prover(#[from] ProverError),
}

/// `a` with both endpoints pushed out by `err`.
fn pad(lo: f64, hi: f64, err: f64) -> Result<Interval, EvalError> {
    let (lo, hi) = (lo - err, hi + err);
    if lo.is_finite() && hi.is_finite() && lo <= hi {
        Ok(Interval { lo, hi })
    } else {
        Err(EvalError::NonFinite)
    }
}

/// Rounding-error bound for a floating dot product of `k` terms whose
/// absolute values sum to `mag`.
fn dot_error(k: usize, mag: f64) -> f64 {
    let u = f64::EPSILON * 0.5;
    let kk = (k + 2) as f64;
    kk * u / (1.0 - kk * u) * mag + f64::MIN_POSITIVE * kk
}

/// `W x + b` for scalar weights and interval `x`.
fn interval_affine(w: &[f64], cols: usize, b: Option<&[f64]>, x: &[Interval], out: &mut Vec<Interval>) -> Result<(), EvalError> {
    let rows = w.len() / cols;
    out.clear();
    for i in 0..rows {
        let row = &w[i * cols..(i + 1) * cols];
        let bias = b.map_or(0.0, |b| b[i]);
        let (mut lo, mut hi, mut mag) = (bias, bias, bias.abs());
        for (wij, xj) in row.iter().zip(x) {
            if *wij >= 0.0 {
                lo += wij * xj.lo;
                hi += wij * xj.hi;
            } else {
                lo += wij * xj.hi;
                hi += wij * xj.lo;
            }
            mag += wij.abs() * xj.mag();
        }
        out.push(pad(lo, hi, dot_error(cols, mag))?);
    }
    Ok(())
}

/// `Wᵀ g` for scalar weights and interval `g`.
fn interval_affine_t(w: &[f64], cols: usize, g: &[Interval], out: &mut Vec<Interval>) -> Result<(), EvalError> {
    let rows = g.len();
    out.clear();
    for j in 0..cols {
        let (mut lo, mut hi, mut mag) = (0.0, 0.0, 0.0);
        for (i, gi) in g.iter().enumerate() {
            let wij = w[i * cols + j];
            if wij >= 0.0 {
                lo += wij * gi.lo;
                hi += wij * gi.hi;
            } else {
                lo += wij * gi.hi;
                hi += wij * gi.lo;
            }
            mag += wij.abs() * gi.mag();
        }
        out.push(pad(lo, hi, dot_error(rows, mag))?);
    }
    Ok(())
}

/// Post-activation enclosures of every layer (input included).
fn forward_intervals(net: &MlpNet, bx: &IntervalBox) -> Result<Vec<Vec<Interval>>, EvalError> {
    let depth = net.layers.len();
    let mut acts = Vec::with_capacity(depth + 1);
    acts.push(bx.0.clone());
    for (k, l) in net.layers.iter().enumerate() {
        let mut z = Vec::with_capacity(l.rows);
        interval_affine(&l.w, l.cols, Some(&l.b), acts.last().unwrap(), &mut z)?;
        if k + 1 < depth {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        acts.push(z);
    }
    Ok(acts)
}

/// Sound enclosure of `{W_N(x) : x ∈ bx}`.
pub fn net_interval(net: &MlpNet, bx: &IntervalBox) -> Result<Interval, EvalError> {
    Ok(forward_intervals(net, bx)?.last().unwrap()[0])
}

/// Enclosure of `∇W_N` over `bx` by an interval reverse pass.
pub fn net_gradient_interval(net: &MlpNet, bx: &IntervalBox) -> Result<Vec<Interval>, EvalError> {
    let acts = forward_intervals(net, bx)?;
    let mut g = vec![Interval::point(1.0)];
    let mut next = Vec::new();
    for k in (0..net.layers.len()).rev() {
        let l = &net.layers[k];
        interval_affine_t(&l.w, l.cols, &g, &mut next)?;
        if k > 0 {
            // tanh' = 1 - a² over the activation enclosure.
            for (gj, a) in next.iter_mut().zip(&acts[k]) {
                let sq = a.powi(2)?;
                let s = Interval {
                    lo: (1.0 - sq.hi).max(0.0),
                    hi: (1.0 - sq.lo).min(1.0),
                };
                *gj = gj.try_mul(s)?;
            }
        }
        std::mem::swap(&mut g, &mut next);
    }
    Ok(g)
}

/// Vector field compiled for interval and point evaluation.
#[derive(Debug, Clone)]
pub struct FieldTapes(Vec<Tape>);

impl FieldTapes {
    pub fn new(sys: &DynamicalSystem) -> Self {
        FieldTapes(sys.f.exprs.iter().map(Tape::compile).collect())
    }

    fn eval_box(&self, bx: &IntervalBox) -> Result<Vec<Interval>, EvalError> {
        let mut stack = Vec::new();
        self.0
            .iter()
            .map(|t| t.eval_interval_with(bx, &mut stack))
            .collect()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut stack = Vec::new();
        self.0.iter().map(|t| t.eval_with(x, &mut stack)).collect()
    }
}

/// Sound enclosure of `{∇W_N(x)·f(x) : x ∈ bx}`.
pub fn net_lie_interval(net: &MlpNet, field: &FieldTapes, bx: &IntervalBox) -> Result<Interval, EvalError> {
    let g = net_gradient_interval(net, bx)?;
    let f = field.eval_box(bx)?;
    let mut acc = Interval::point(0.0);
    for (gi, fi) in g.iter().zip(&f) {
        acc = acc.try_add(gi.try_mul(*fi)?)?;
    }
    Ok(acc)
}

/// `∇W_N(x)·f(x)` at a point.
pub fn net_lie(net: &MlpNet, field: &FieldTapes, x: &[f64]) -> Result<f64, EvalError> {
    let f = field.eval(x)?;
    Ok(net.input_gradient(x).iter().zip(&f).map(|(a, b)| a * b).sum())
}

enum NetTerm {
    /// `scale · W_N + offset`.
    Level { scale: f64, offset: f64 },
    /// `Ẇ_N + offset`.
    Lie { field: Arc<FieldTapes>, offset: f64 },
}

/// Prover constraint built from the network.
pub struct NetConstraint {
    net: Arc<MlpNet>,
    term: NetTerm,
    label: String,
}

impl NetConstraint {
    /// `W_N - c`.
    pub fn below(net: Arc<MlpNet>, c: f64) -> Self {
        NetConstraint {
            net,
            term: NetTerm::Level {
                scale: 1.0,
                offset: -c,
            },
            label: format!("W_N - {c}"),
        }
    }

    /// `c - W_N`.
    pub fn above(net: Arc<MlpNet>, c: f64) -> Self {
        NetConstraint {
            net,
            term: NetTerm::Level {
                scale: -1.0,
                offset: c,
            },
            label: format!("{c} - W_N"),
        }
    }

    /// `Ẇ_N + eps`.
    pub fn decrease(net: Arc<MlpNet>, field: Arc<FieldTapes>, eps: f64) -> Self {
        NetConstraint {
            net,
            term: NetTerm::Lie { field, offset: eps },
            label: format!("dW_N/dt + {eps:e}"),
        }
    }

    pub fn shared(self) -> Arc<dyn Constraint> {
        Arc::new(self)
    }
}

impl Constraint for NetConstraint {
    fn eval_box(&self, b: &IntervalBox) -> Result<Interval, EvalError> {
        match &self.term {
            NetTerm::Level { scale, offset } => net_interval(&self.net, b)?
                .scale(*scale)?
                .try_add(Interval::point(*offset)),
            NetTerm::Lie { field, offset } => {
                net_lie_interval(&self.net, field, b)?.try_add(Interval::point(*offset))
            }
        }
    }

    fn eval_point(&self, x: &[f64]) -> Result<f64, EvalError> {
        match &self.term {
            NetTerm::Level { scale, offset } => Ok(scale * self.net.forward(x) + offset),
            NetTerm::Lie { field, offset } => Ok(net_lie(&self.net, field, x)? + offset),
        }
    }

    fn gradient_box(&self, b: &IntervalBox) -> Option<Result<Vec<Interval>, EvalError>> {
        match &self.term {
            NetTerm::Level { scale, .. } => Some(
                net_gradient_interval(&self.net, b)
                    .and_then(|g| g.into_iter().map(|gi| gi.scale(*scale)).collect()),
            ),
            NetTerm::Lie { .. } => None,
        }
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuralSettings {
    pub prover: Settings,
    /// Absolute tolerance of both level bisections.
    pub tol: f64,
    /// Decrease margin as a fraction of the band height `c2 - c1_V`.
    pub epsilon: f64,
}

impl Default for NeuralSettings {
    fn default() -> Self {
        NeuralSettings {
            prover: Settings::default(),
            tol: 1e-3,
            epsilon: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralResult {
    pub c1: f64,
    pub c2: f64,
    /// True when no level above `c1` verified and `c2 = c1`.
    pub degenerate: bool,
    pub boxes_processed: u64,
    pub wall_time: f64,
    pub last_failure: Option<Status>,
}

/// Membership in a verified neural region `{W_N <= c} ∩ X`.
#[derive(Debug, Clone)]
pub struct NeuralRegion<'a> {
    pub net: &'a MlpNet,
    pub level: f64,
    pub domain: &'a IntervalBox,
}

impl NeuralRegion<'_> {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.domain.contains(x) && self.net.forward(x) <= self.level
    }
}

/// Tries `lo + s` for shrinking offsets `s`, then bisects upward from the
/// first verified one.
fn bisect_above<F>(mut verify: F, lo: f64, hi: f64, tol: f64) -> Result<LevelSearch, LevelError>
where
    F: FnMut(f64) -> Result<Verdict, ProverError>,
{
    let span = hi - lo;
    let mut offset = span * 1e-3;
    let mut boxes = 0;
    loop {
        let v = verify(lo + offset)?;
        boxes += v.boxes_processed;
        if v.is_verified() {
            break;
        }
        offset /= 10.0;
        if offset < span * 1e-9 {
            return Err(LevelError::NoLevel {
                lo: lo + offset,
                failure: Some(v.status),
            });
        }
    }
    let mut r = bisect_level(verify, lo + offset, hi, tol)?;
    r.boxes_processed += boxes;
    Ok(r)
}

/// Verified `(c1_V, c2_V)` for `net` anchored to the quadratic level
/// `c_target` of `sys`.
pub fn neural_verifier(
    sys: &DynamicalSystem,
    net: &MlpNet,
    c_target: f64,
    prover: &Prover,
    settings: &NeuralSettings,
) -> Result<NeuralResult, NeuralError> {
    if net.input_dim() != sys.dim() {
        return Err(NeuralError::Dimension {
            net: net.input_dim(),
            sys: sys.dim(),
        });
    }
    let start = Instant::now();
    let v = sys.quadratic_form().ok_or(NeuralError::NotHurwitz)?;
    let domain = &sys.domain;
    let shared = Arc::new(net.clone());
    let field = Arc::new(FieldTapes::new(sys));
    let w0 = net.forward(&vec![0.0; sys.dim()]);
    let w_hi = net_interval(net, domain).map_or(1.0, |i| i.hi).max(w0 + settings.tol);

    // Step 1: {W_N <= c1} ∩ X inside {V_P <= c_target}.
    let quad_goal = ExprConstraint::labeled(v.sub(&Expr::constant(c_target)), format!("V_P - {c_target}")).shared();
    let inner = |c1: f64| {
        let q = Query::new(domain.clone(), quad_goal.clone(), settings.prover)
            .with_premise(NetConstraint::below(shared.clone(), c1).shared());
        prover.check(&q)
    };
    let s1 = bisect_above(inner, w0, w_hi, settings.tol).map_err(|e| match e {
        LevelError::NoLevel { failure, .. } => NeuralError::NoLevel { failure },
        LevelError::Prover(p) => NeuralError::Prover(p),
    })?;
    let c1 = s1.level;
    log::info!("{}: c1_V = {c1}", sys.name);

    // Step 2: decrease on the band and exclusion from the boundary.
    let faces = domain.faces();
    let outer = |c2: f64| {
        let eps = settings.epsilon * (c2 - c1);
        let mut queries: Vec<Query> = faces
            .iter()
            .map(|f| {
                Query::new(
                    f.clone(),
                    NetConstraint::above(shared.clone(), c2 + eps).shared(),
                    settings.prover,
                )
            })
            .collect();
        queries.push(
            Query::new(
                domain.clone(),
                NetConstraint::decrease(shared.clone(), field.clone(), eps).shared(),
                settings.prover,
            )
            .with_premise(NetConstraint::above(shared.clone(), c1).shared())
            .with_premise(NetConstraint::below(shared.clone(), c2).shared()),
        );
        prover.check_all(&queries)
    };
    let (c2, boxes2, last_failure) = if w_hi - c1 <= settings.tol {
        (c1, 0, None)
    } else {
        match bisect_level(outer, c1, w_hi, settings.tol) {
            Ok(r) => (r.level, r.boxes_processed, r.last_failure),
            Err(LevelError::NoLevel { failure, .. }) => (c1, 0, failure),
            Err(LevelError::Prover(p)) => return Err(p.into()),
        }
    };
    log::info!("{}: c2_V = {c2}", sys.name);
    Ok(NeuralResult {
        c1,
        c2,
        degenerate: c2 == c1,
        boxes_processed: s1.boxes_processed + boxes2,
        wall_time: start.elapsed().as_secs_f64(),
        last_failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::default_var_names;
    use crate::system::SystemOptions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vdp() -> DynamicalSystem {
        DynamicalSystem::build(
            "vdp",
            &default_var_names(2),
            &["-x2", "x1 - (1 - x1^2)*x2"],
            &[[-2.5, 2.5], [-3.5, 3.5]],
            SystemOptions::default(),
        )
        .unwrap()
    }

    fn random_box(rng: &mut ChaCha8Rng, n: usize) -> IntervalBox {
        IntervalBox::new(
            (0..n)
                .map(|_| {
                    let c = rng.gen_range(-2.0..2.0);
                    let r = rng.gen_range(0.0..0.5);
                    Interval::new(c - r, c + r)
                })
                .collect(),
        )
    }

    fn sample(rng: &mut ChaCha8Rng, bx: &IntervalBox) -> Vec<f64> {
        bx.0.iter()
            .map(|i| if i.width() > 0.0 { rng.gen_range(i.lo..i.hi) } else { i.lo })
            .collect()
    }

    /// `W(x) = 2tanh(1) - tanh(x + 1) - tanh(1 - x)`: even, zero at the
    /// origin and increasing in `|x|`.
    fn bump_net() -> MlpNet {
        let mut net = MlpNet::new(&[1, 2, 1], 0).unwrap();
        net.layers[0].w = vec![1.0, -1.0];
        net.layers[0].b = vec![1.0, 1.0];
        net.layers[1].w = vec![-1.0, -1.0];
        net.layers[1].b = vec![2.0 * 1f64.tanh()];
        net
    }

    #[test]
    fn single_neuron_enclosure_is_exact_up_to_rounding() {
        let mut net = MlpNet::new(&[1, 1, 1], 0).unwrap();
        net.layers[0].w = vec![1.0];
        net.layers[1].w = vec![1.0];
        let i = net_interval(&net, &IntervalBox::cube(1, 1.0)).unwrap();
        assert!((i.lo + 1f64.tanh()).abs() < 1e-14 && (i.hi - 1f64.tanh()).abs() < 1e-14);
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let mut net = MlpNet::with_hidden(2, 2, 4, 0).unwrap();
        net.params_mut().for_each(|p| *p = 0.0);
        net.layers[2].b[0] = 0.25;
        let i = net_interval(&net, &IntervalBox::cube(2, 3.0)).unwrap();
        assert!(i.lo <= 0.25 && i.hi >= 0.25 && i.width() < 1e-15);
    }

    #[test]
    fn enclosures_contain_samples() {
        let net = MlpNet::with_hidden(2, 2, 8, 21).unwrap();
        let sys = vdp();
        let field = FieldTapes::new(&sys);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let bx = random_box(&mut rng, 2);
            let w = net_interval(&net, &bx).unwrap();
            let lie = net_lie_interval(&net, &field, &bx).unwrap();
            let grad = net_gradient_interval(&net, &bx).unwrap();
            for _ in 0..200 {
                let x = sample(&mut rng, &bx);
                assert!(w.contains(net.forward(&x)));
                assert!(lie.contains(net_lie(&net, &field, &x).unwrap()));
                for (g, e) in grad.iter().zip(net.input_gradient(&x)) {
                    assert!(g.contains(e));
                }
            }
        }
    }

    #[test]
    fn linear_net_lie_matches_expression_enclosure() {
        let mut net = MlpNet::new(&[2, 1], 0).unwrap();
        net.layers[0].w = vec![1.0, 2.0];
        let sys = vdp();
        let field = FieldTapes::new(&sys);
        let bx = IntervalBox::from_bounds(&[[0.5, 1.0], [-1.0, 0.0]]);
        let lie = net_lie_interval(&net, &field, &bx).unwrap();
        let f1 = sys.f.exprs[0].eval_interval(&bx).unwrap();
        let f2 = sys.f.exprs[1].eval_interval(&bx).unwrap();
        let expected = f1.try_add(f2.scale(2.0).unwrap()).unwrap();
        assert!((lie.lo - expected.lo).abs() < 1e-12 && (lie.hi - expected.hi).abs() < 1e-12);
    }

    #[test]
    fn lie_at_equilibrium_is_zero() {
        let sys = DynamicalSystem::build("lin", &default_var_names(1), &["-x1"], &[[-1.0, 1.0]], SystemOptions::default()).unwrap();
        let net = MlpNet::with_hidden(1, 2, 5, 3).unwrap();
        let lie = net_lie_interval(&net, &FieldTapes::new(&sys), &IntervalBox::cube(1, 0.0)).unwrap();
        assert!(lie.lo <= 0.0 && lie.hi >= 0.0 && lie.width() < 1e-15);
    }

    #[test]
    fn monotone_candidate_levels_follow_quadratic_ones() {
        let sys = DynamicalSystem::build("lin", &default_var_names(1), &["-x1"], &[[-1.0, 1.0]], SystemOptions::default()).unwrap();
        let net = bump_net();
        let c_target = 0.125; // V_P = x²/2, so |x| <= 0.5
        let r = neural_verifier(&sys, &net, c_target, &Prover::sequential(), &NeuralSettings::default()).unwrap();
        let expected_c1 = net.forward(&[0.5]);
        assert!(r.c1 <= expected_c1 && r.c1 > expected_c1 - 2e-3, "{} vs {expected_c1}", r.c1);
        let expected_c2 = net.forward(&[1.0]);
        assert!(r.c2 <= expected_c2 && r.c2 > expected_c2 - 2e-3, "{} vs {expected_c2}", r.c2);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = MlpNet::with_hidden(3, 1, 2, 0).unwrap();
        assert!(matches!(
            neural_verifier(&vdp(), &net, 0.1, &Prover::sequential(), &NeuralSettings::default()),
            Err(NeuralError::Dimension { .. })
        ));
    }
}
