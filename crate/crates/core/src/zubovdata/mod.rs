//! Forward simulation of `ẋ = f(x)` augmented with `ż = ‖x‖²`, used to label
//! sample points with `tanh(α · ∫‖x(t)‖² dt)` for training.
//!
//! Coordinates are those of the shifted system (equilibrium at the origin).

mod dopri;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dopri::{Dopri5, StepOutcome};

use crate::expr::EvalError;
use crate::interval::IntervalBox;
use crate::system::{CompiledField, DynamicalSystem};

/// Default steepness of the value transform.
pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrationError {
    #[error("step size fell below {min_step:e} at t = {t}")]
    StepUnderflow { t: f64, min_step: f64 },
    #[error("step limit of {0} reached")]
    StepLimit(usize),
    #[error("initial state has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationOptions {
    pub rtol: f64,
    pub atol: f64,
    pub horizon: f64,
    /// Convergence radius; `None` means `1e-3 · diam(X)`.
    pub r_conv: Option<f64>,
    /// Blow-up radius as a multiple of `diam(X)`.
    pub blowup_factor: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions {
            rtol: 1e-8,
            atol: 1e-10,
            horizon: 40.0,
            r_conv: None,
            blowup_factor: 10.0,
            min_step: 1e-14,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Converged,
    Diverged,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub x0: Vec<f64>,
    pub classification: Classification,
    /// Accumulated `∫‖x‖²` at the stopping time.
    pub value_v: f64,
    pub final_time: f64,
}

impl Trajectory {
    /// Training label: `tanh(α·V)` if converged, `1` if diverged.
    pub fn label(&self, alpha: f64) -> Option<f64> {
        match self.classification {
            Classification::Converged => Some((alpha * self.value_v).tanh()),
            Classification::Diverged => Some(1.0),
            Classification::Undetermined => None,
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Reusable integrator for one system and domain.
pub struct Simulator {
    field: CompiledField,
    n: usize,
    escape: IntervalBox,
    r_conv: f64,
    r_blow: f64,
    options: IntegrationOptions,
}

impl Simulator {
    pub fn new(sys: &DynamicalSystem, options: IntegrationOptions) -> Self {
        let diam = sys.domain.diameter();
        Simulator {
            field: sys.compiled_field(),
            n: sys.dim(),
            escape: sys.domain.scaled(2.0),
            r_conv: options.r_conv.unwrap_or(1e-3 * diam),
            r_blow: options.blowup_factor * diam,
            options,
        }
    }

    pub fn r_conv(&self) -> f64 {
        self.r_conv
    }

    fn classify(&self, x: &[f64]) -> Option<Classification> {
        let r = norm(x);
        if r <= self.r_conv {
            Some(Classification::Converged)
        } else if !r.is_finite() || r >= self.r_blow || !self.escape.contains(x) {
            Some(Classification::Diverged)
        } else {
            None
        }
    }

    /// Integrates from `x0` until convergence, escape or the horizon.
    pub fn integrate(&self, x0: &[f64]) -> Result<Trajectory, IntegrationError> {
        let n = self.n;
        if x0.len() != n {
            return Err(IntegrationError::Dimension {
                expected: n,
                got: x0.len(),
            });
        }
        let mut y = x0.to_vec();
        y.push(0.0);
        let done = |classification, y: &[f64], t| Trajectory {
            x0: x0.to_vec(),
            classification,
            value_v: y[n],
            final_time: t,
        };
        if let Some(c) = self.classify(&y[..n]) {
            return Ok(done(c, &y, 0.0));
        }

        let mut stack = Vec::new();
        let field = &self.field;
        let mut rhs = |s: &[f64], ds: &mut [f64]| -> Result<(), EvalError> {
            field.eval_into(&s[..n], &mut ds[..n], &mut stack)?;
            ds[n] = s[..n].iter().map(|v| v * v).sum();
            Ok(())
        };
        let mut solver = Dopri5::new(n + 1, self.options.rtol, self.options.atol);
        // A failed evaluation means the state left the field's domain.
        if solver.prime(&y, &mut rhs).is_err() {
            return Ok(done(Classification::Diverged, &y, 0.0));
        }
        let horizon = self.options.horizon;
        let (mut t, mut h) = (0.0, 1e-2f64.min(horizon));
        for _ in 0..self.options.max_steps {
            let step = h.min(horizon - t);
            match solver.adaptive_step(&mut y, step, &mut rhs) {
                Err(_) => return Ok(done(Classification::Diverged, &y, t)),
                Ok(StepOutcome::Accepted { h_used, h_next }) => {
                    t += h_used;
                    h = h_next;
                    if let Some(c) = self.classify(&y[..n]) {
                        return Ok(done(c, &y, t));
                    }
                    if t >= horizon {
                        return Ok(done(Classification::Undetermined, &y, t));
                    }
                }
                Ok(StepOutcome::Rejected { h_next }) => {
                    if h_next < self.options.min_step {
                        return Err(IntegrationError::StepUnderflow {
                            t,
                            min_step: self.options.min_step,
                        });
                    }
                    h = h_next;
                }
            }
        }
        Err(IntegrationError::StepLimit(self.options.max_steps))
    }
}

/// Convenience wrapper building a [`Simulator`] for one trajectory.
pub fn integrate(
    sys: &DynamicalSystem,
    x0: &[f64],
    options: IntegrationOptions,
) -> Result<Trajectory, IntegrationError> {
    Simulator::new(sys, options).integrate(x0)
}

/// `n` points drawn uniformly from `domain` with a seeded generator.
pub fn sample_uniform(domain: &IntervalBox, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            domain
                .0
                .iter()
                .map(|iv| {
                    if iv.width() > 0.0 {
                        rng.gen_range(iv.lo..iv.hi)
                    } else {
                        iv.lo
                    }
                })
                .collect()
        })
        .collect()
}

/// Integrates every point in parallel; output order follows input order.
pub fn simulate_all(
    sim: &Simulator,
    points: &[Vec<f64>],
) -> Vec<Result<Trajectory, IntegrationError>> {
    points.par_iter().map(|x| sim.integrate(x)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dim: usize,
    pub points: Vec<(Vec<f64>, f64)>,
    pub alpha: f64,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Samples `n_samples` points in the domain and labels the decisive ones.
pub fn generate_data(
    sys: &DynamicalSystem,
    n_samples: usize,
    alpha: f64,
    seed: u64,
    options: IntegrationOptions,
) -> Dataset {
    let sim = Simulator::new(sys, options);
    let xs = sample_uniform(&sys.domain, n_samples, seed);
    let mut points = Vec::with_capacity(n_samples);
    let mut undetermined = 0;
    for (i, r) in simulate_all(&sim, &xs).into_iter().enumerate() {
        match r {
            Ok(tr) => match tr.label(alpha) {
                Some(w) => points.push((tr.x0, w)),
                None => undetermined += 1,
            },
            Err(e) => log::warn!("{}: sample {i} skipped: {e}", sys.name),
        }
    }
    if undetermined > 0 {
        log::info!("{}: {undetermined} undetermined samples discarded", sys.name);
    }
    Dataset {
        dim: sys.dim(),
        points,
        alpha,
        seed,
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// CSV with header `x1,...,xn,w`, values in round-trip precision.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "{},w", header.join(","))?;
        for (x, label) in &self.points {
            for v in x {
                write!(w, "{v:.16e},")?;
            }
            writeln!(w, "{label:.16e}")?;
        }
        Ok(())
    }

    /// Reads points back from [`Dataset::write_csv`] output. `alpha` and
    /// `seed` are not stored in the file and must be supplied.
    pub fn read_csv(text: &str, alpha: f64, seed: u64) -> Result<Dataset, DatasetError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(DatasetError::Format {
            line: 1,
            message: "empty file".into(),
        })?;
        let cols = header.split(',').count();
        if cols < 2 || header.split(',').next_back() != Some("w") {
            return Err(DatasetError::Format {
                line: 1,
                message: format!("unexpected header {header:?}"),
            });
        }
        let dim = cols - 1;
        let mut points = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| DatasetError::Format {
                    line: k + 2,
                    message: e.to_string(),
                })?;
            if vals.len() != cols {
                return Err(DatasetError::Format {
                    line: k + 2,
                    message: format!("expected {cols} fields, found {}", vals.len()),
                });
            }
            points.push((vals[..dim].to_vec(), vals[dim]));
        }
        Ok(Dataset {
            dim,
            points,
            alpha,
            seed,
        })
    }
}
