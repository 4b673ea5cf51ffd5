//! Closed real intervals and axis-aligned boxes.
//!
//! Rounding is handled by widening every computed endpoint outward by a few
//! ulps instead of switching the FPU rounding mode. The enclosures are not as
//! tight as directed rounding would give, but they are portable and sound for
//! the elementary operations used here.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::expr::EvalError;

/// Number of ulps each endpoint is pushed outward after a primitive operation.
pub const WIDEN_ULPS: u32 = 4;

/// Tolerated negative excursion of a square-root argument, relative to its
/// upper bound, before the argument is treated as touching the singularity.
const SQRT_SLACK: f64 = 1e-12;

fn down(mut x: f64, ulps: u32) -> f64 {
    for _ in 0..ulps {
        x = x.next_down();
    }
    x
}

fn up(mut x: f64, ulps: u32) -> f64 {
    for _ in 0..ulps {
        x = x.next_up();
    }
    x
}

/// A closed interval `[lo, hi]` with finite endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// Builds `[lo, hi]`; panics if the endpoints are unordered or not finite.
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(
            lo <= hi && lo.is_finite() && hi.is_finite(),
            "invalid interval [{lo}, {hi}]"
        );
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval::new(x, x)
    }

    fn checked(lo: f64, hi: f64) -> Result<Self, EvalError> {
        if lo.is_finite() && hi.is_finite() && lo <= hi {
            Ok(Interval { lo, hi })
        } else {
            Err(EvalError::NonFinite)
        }
    }

    fn widened(lo: f64, hi: f64, ulps: u32) -> Result<Self, EvalError> {
        Interval::checked(down(lo, ulps), up(hi, ulps))
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * self.lo + 0.5 * self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    /// Intersection, or `None` if disjoint.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    pub fn split(&self) -> (Interval, Interval) {
        let m = self.mid();
        (
            Interval { lo: self.lo, hi: m },
            Interval { lo: m, hi: self.hi },
        )
    }

    pub fn try_add(self, rhs: Interval) -> Result<Interval, EvalError> {
        Interval::widened(self.lo + rhs.lo, self.hi + rhs.hi, WIDEN_ULPS)
    }

    pub fn try_sub(self, rhs: Interval) -> Result<Interval, EvalError> {
        Interval::widened(self.lo - rhs.hi, self.hi - rhs.lo, WIDEN_ULPS)
    }

    pub fn try_mul(self, rhs: Interval) -> Result<Interval, EvalError> {
        let p = [
            self.lo * rhs.lo,
            self.lo * rhs.hi,
            self.hi * rhs.lo,
            self.hi * rhs.hi,
        ];
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::widened(lo, hi, WIDEN_ULPS)
    }

    pub fn try_div(self, rhs: Interval) -> Result<Interval, EvalError> {
        if rhs.contains_zero() {
            return Err(EvalError::DivisionByZero);
        }
        let q = [
            self.lo / rhs.lo,
            self.lo / rhs.hi,
            self.hi / rhs.lo,
            self.hi / rhs.hi,
        ];
        let lo = q.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::widened(lo, hi, WIDEN_ULPS)
    }

    /// Scales by an exact constant.
    pub fn scale(self, k: f64) -> Result<Interval, EvalError> {
        let (a, b) = (self.lo * k, self.hi * k);
        Interval::widened(a.min(b), a.max(b), WIDEN_ULPS)
    }

    /// Integer power with a tight range for even exponents.
    pub fn powi(self, n: u32) -> Result<Interval, EvalError> {
        match n {
            0 => return Ok(Interval::point(1.0)),
            1 => return Ok(self),
            _ => {}
        }
        let ulps = WIDEN_ULPS * n;
        let e = n as i32;
        if n % 2 == 1 {
            Interval::widened(self.lo.powi(e), self.hi.powi(e), ulps)
        } else if self.contains_zero() {
            Interval::checked(0.0, up(self.mag().powi(e), ulps))
        } else {
            let small = self.lo.abs().min(self.hi.abs());
            Interval::checked(down(small.powi(e), ulps).max(0.0), up(self.mag().powi(e), ulps))
        }
    }

    pub fn sqrt(self) -> Result<Interval, EvalError> {
        let slack = SQRT_SLACK * self.hi.abs().max(1.0);
        if self.hi < 0.0 || self.lo < -slack {
            return Err(EvalError::SqrtOfNegative);
        }
        let lo = if self.lo <= 0.0 {
            0.0
        } else {
            down(self.lo.sqrt(), WIDEN_ULPS).max(0.0)
        };
        Interval::checked(lo, up(self.hi.max(0.0).sqrt(), WIDEN_ULPS))
    }

    pub fn exp(self) -> Result<Interval, EvalError> {
        let lo = down(self.lo.exp(), WIDEN_ULPS).max(0.0);
        Interval::checked(lo, up(self.hi.exp(), WIDEN_ULPS))
    }

    pub fn tanh(self) -> Interval {
        Interval {
            lo: down(self.lo.tanh(), WIDEN_ULPS).max(-1.0),
            hi: up(self.hi.tanh(), WIDEN_ULPS).min(1.0),
        }
    }

    pub fn sin(self) -> Interval {
        // sin(x) = cos(x - pi/2): maxima at pi/2 + 2k pi, minima at -pi/2 + 2k pi.
        self.trig(f64::sin, FRAC_PI_2, -FRAC_PI_2)
    }

    pub fn cos(self) -> Interval {
        self.trig(f64::cos, 0.0, PI)
    }

    /// Range of a 2pi-periodic unit-amplitude function with maxima at
    /// `max_at + 2k pi` and minima at `min_at + 2k pi`.
    fn trig(self, f: fn(f64) -> f64, max_at: f64, min_at: f64) -> Interval {
        if self.width() >= TAU {
            return Interval { lo: -1.0, hi: 1.0 };
        }
        // Critical-point tests are done on a slightly enlarged argument so
        // that rounding in the k*2pi shifts can only loosen the result.
        let pad = 1e-12 * (1.0 + self.mag());
        let (a, b) = (self.lo - pad, self.hi + pad);
        let hits = |c: f64| {
            let k = ((a - c) / TAU).ceil();
            c + k * TAU <= b
        };
        let (fa, fb) = (f(self.lo), f(self.hi));
        let hi = if hits(max_at) {
            1.0
        } else {
            up(fa.max(fb), WIDEN_ULPS).min(1.0)
        };
        let lo = if hits(min_at) {
            -1.0
        } else {
            down(fa.min(fb), WIDEN_ULPS).max(-1.0)
        };
        Interval { lo, hi }
    }

    pub fn abs(self) -> Interval {
        if self.lo >= 0.0 {
            self
        } else if self.hi <= 0.0 {
            Interval {
                lo: -self.hi,
                hi: -self.lo,
            }
        } else {
            Interval {
                lo: 0.0,
                hi: self.mag(),
            }
        }
    }

    pub fn min(self, rhs: Interval) -> Interval {
        Interval {
            lo: self.lo.min(rhs.lo),
            hi: self.hi.min(rhs.hi),
        }
    }

    pub fn max(self, rhs: Interval) -> Interval {
        Interval {
            lo: self.lo.max(rhs.lo),
            hi: self.hi.max(rhs.hi),
        }
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

// Panicking operator forms for code paths where overflow is impossible
// (bounded network activations, small constant matrices).
impl Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        self.try_add(rhs).expect("interval overflow")
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        self.try_sub(rhs).expect("interval overflow")
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        self.try_mul(rhs).expect("interval overflow")
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// An axis-aligned box, one interval per state dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox(pub Vec<Interval>);

impl IntervalBox {
    pub fn new(dims: Vec<Interval>) -> Self {
        assert!(!dims.is_empty(), "a box needs at least one dimension");
        IntervalBox(dims)
    }

    /// Builds a box from `[lo, hi]` pairs.
    pub fn from_bounds(bounds: &[[f64; 2]]) -> Self {
        IntervalBox::new(bounds.iter().map(|b| Interval::new(b[0], b[1])).collect())
    }

    /// The cube `[-r, r]^n`.
    pub fn cube(n: usize, r: f64) -> Self {
        IntervalBox::new(vec![Interval::new(-r, r); n])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn max_width(&self) -> f64 {
        self.0.iter().map(Interval::width).fold(0.0, f64::max)
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.0.iter().map(Interval::mid).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.0.iter().zip(x).all(|(i, &v)| i.contains(v))
    }

    pub fn is_subset_of(&self, other: &IntervalBox) -> bool {
        self.dim() == other.dim() && self.0.iter().zip(&other.0).all(|(a, b)| a.is_subset_of(b))
    }

    /// Euclidean length of the diagonal.
    pub fn diameter(&self) -> f64 {
        self.0.iter().map(|i| i.width() * i.width()).sum::<f64>().sqrt()
    }

    pub fn volume(&self) -> f64 {
        self.0.iter().map(Interval::width).product()
    }

    /// Splits dimension `d` at its midpoint.
    pub fn bisect(&self, d: usize) -> (IntervalBox, IntervalBox) {
        let (a, b) = self.0[d].split();
        let mut left = self.clone();
        let mut right = self.clone();
        left.0[d] = a;
        right.0[d] = b;
        (left, right)
    }

    /// The box scaled about the origin.
    pub fn scaled(&self, k: f64) -> IntervalBox {
        IntervalBox(
            self.0
                .iter()
                .map(|i| Interval::new((i.lo * k).min(i.hi * k), (i.lo * k).max(i.hi * k)))
                .collect(),
        )
    }

    /// The box shrunk by `margin` on every side (dimensions narrower than
    /// `2 * margin` collapse to their midpoint).
    pub fn shrunk(&self, margin: f64) -> IntervalBox {
        IntervalBox(
            self.0
                .iter()
                .map(|i| {
                    if i.width() <= 2.0 * margin {
                        Interval::point(i.mid())
                    } else {
                        Interval::new(i.lo + margin, i.hi - margin)
                    }
                })
                .collect(),
        )
    }

    /// The `2n` faces of the box; face `2d` fixes dimension `d` at its lower
    /// bound and face `2d + 1` at its upper bound.
    pub fn faces(&self) -> Vec<IntervalBox> {
        let mut out = Vec::with_capacity(2 * self.dim());
        for d in 0..self.dim() {
            for end in [self.0[d].lo, self.0[d].hi] {
                let mut face = self.clone();
                face.0[d] = Interval::point(end);
                out.push(face);
            }
        }
        out
    }

    /// Sub-box over the listed dimensions.
    pub fn project(&self, dims: &[usize]) -> IntervalBox {
        IntervalBox::new(dims.iter().map(|&d| self.0[d]).collect())
    }
}

impl std::ops::Index<usize> for IntervalBox {
    type Output = Interval;
    fn index(&self, i: usize) -> &Interval {
        &self.0[i]
    }
}
