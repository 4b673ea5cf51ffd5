//! Physics-informed training of a neural Lyapunov candidate `W_N`.
//!
//! In `Zubov` mode the network is fitted to the PDE
//! `∇W·f + α(1 + W)‖x‖²(1 - W) = 0` with `W(0) = 0`, optionally anchored to
//! simulated labels. `Data` mode fits labels only and `Lyapunov` mode
//! penalizes violations of the plain Lyapunov conditions.

mod net;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use net::{Layer, MlpNet, NetError, Workspace};

use crate::expr::EvalError;
use crate::system::{CompiledField, DynamicalSystem};
use crate::zubovdata::{sample_uniform, Dataset, DEFAULT_ALPHA};

/// Decrease rate demanded in `Lyapunov` mode: `Ẇ <= -LYAP_DECAY ‖x‖²`.
pub const LYAP_DECAY: f64 = 0.01;
/// Positivity margin in `Lyapunov` mode: `W >= LYAP_POSITIVITY ‖x‖²`.
pub const LYAP_POSITIVITY: f64 = 0.001;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    DivergedTraining { epoch: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss mode {0:?} needs a non-empty data set")]
    MissingData(LossMode),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("vector field evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    Zubov,
    Data,
    Lyapunov,
}

/// Relative weights of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub residual: f64,
    pub boundary: f64,
    pub data: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            residual: 1.0,
            boundary: 1.0,
            data: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub layer: usize,
    pub width: usize,
    pub num_colloc_pts: usize,
    pub max_epoch: usize,
    pub batch_size: usize,
    pub loss_mode: LossMode,
    pub alpha: f64,
    /// `(c1, c2)` with `tanh(c1‖x‖²) <= W(x) <= tanh(c2‖x‖²)` penalized.
    pub sandwich: Option<(f64, f64)>,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            layer: 2,
            width: 30,
            num_colloc_pts: 300_000,
            max_epoch: 20,
            batch_size: 32,
            loss_mode: LossMode::Zubov,
            alpha: DEFAULT_ALPHA,
            sandwich: None,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: &str| Err(LearnerError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.layer == 0 || self.width == 0 {
            return bad("layer and width must be positive");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if let Some((c1, c2)) = self.sandwich {
            if !(c1 >= 0.0 && c2 >= c1) {
                return bad("sandwich needs 0 <= c1 <= c2");
            }
        }
        Ok(())
    }
}

/// Zubov residual `Ẇ + α(1 + W)ω(1 - W)` at one point.
pub fn zubov_residual(w: f64, lie: f64, omega: f64, alpha: f64) -> f64 {
    lie + alpha * (1.0 + w) * omega * (1.0 - w)
}

/// Loss components, each a batch mean before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub residual: f64,
    pub boundary: f64,
    pub data: f64,
    pub total: f64,
}

/// Collocation points with their vector field values.
pub struct Collocation {
    pub x: Vec<Vec<f64>>,
    pub fx: Vec<Vec<f64>>,
}

impl Collocation {
    pub fn new(field: &CompiledField, x: Vec<Vec<f64>>) -> Result<Self, EvalError> {
        let mut stack = Vec::new();
        let fx = x
            .iter()
            .map(|p| {
                let mut out = vec![0.0; p.len()];
                field.eval_into(p, &mut out, &mut stack).map(|_| out)
            })
            .collect::<Result<_, _>>()?;
        Ok(Collocation { x, fx })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

fn hinge(v: f64) -> f64 {
    v.max(0.0)
}

/// Loss and its parameter gradient on one minibatch.
///
/// `colloc` and `data` hold indices into the respective sets; `grad` is
/// overwritten.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    net: &MlpNet,
    cfg: &TrainConfig,
    colloc: &Collocation,
    colloc_idx: &[usize],
    data: &[(Vec<f64>, f64)],
    data_idx: &[usize],
    ws: &mut Workspace,
    grad: &mut MlpNet,
) -> LossParts {
    grad.params_mut().for_each(|g| *g = 0.0);
    let n = net.input_dim();
    let zeros = vec![0.0; n];
    let wt = cfg.weights;
    let mut parts = LossParts::default();

    // W(0)² with the same weight as the remaining boundary terms.
    let (w0, _) = net.forward_tangent(&zeros, &zeros, ws);
    parts.boundary += w0 * w0;
    net.backward(ws, wt.boundary * 2.0 * w0, 0.0, grad);

    let use_colloc = matches!(cfg.loss_mode, LossMode::Zubov | LossMode::Lyapunov);
    if use_colloc && !colloc_idx.is_empty() {
        let m = colloc_idx.len() as f64;
        let (mut res, mut bnd) = (0.0, 0.0);
        for &i in colloc_idx {
            let (x, fx) = (&colloc.x[i], &colloc.fx[i]);
            let omega: f64 = x.iter().map(|v| v * v).sum();
            let (w, lie) = net.forward_tangent(x, fx, ws);
            let (mut gw, mut glie) = (0.0, 0.0);
            match cfg.loss_mode {
                LossMode::Zubov => {
                    let r = zubov_residual(w, lie, omega, cfg.alpha);
                    res += r * r;
                    // ∂r/∂W = -2αωW, ∂r/∂Ẇ = 1.
                    let k = wt.residual * 2.0 * r / m;
                    gw += k * (-2.0 * cfg.alpha * omega * w);
                    glie += k;
                }
                LossMode::Lyapunov => {
                    let d = hinge(lie + LYAP_DECAY * omega);
                    let p = hinge(LYAP_POSITIVITY * omega - w);
                    res += d * d + p * p;
                    glie += wt.residual * 2.0 * d / m;
                    gw -= wt.residual * 2.0 * p / m;
                }
                LossMode::Data => unreachable!(),
            }
            if let Some((c1, c2)) = cfg.sandwich {
                let lo = hinge((c1 * omega).tanh() - w);
                let hi = hinge(w - (c2 * omega).tanh());
                bnd += lo * lo + hi * hi;
                gw += wt.boundary * 2.0 * (hi - lo) / m;
            }
            if gw != 0.0 || glie != 0.0 {
                net.backward(ws, gw, glie, grad);
            }
        }
        parts.residual = res / m;
        parts.boundary += bnd / m;
    }

    let use_data = matches!(cfg.loss_mode, LossMode::Zubov | LossMode::Data);
    if use_data && !data_idx.is_empty() {
        let m = data_idx.len() as f64;
        let mut sum = 0.0;
        for &i in data_idx {
            let (x, label) = (&data[i].0, data[i].1);
            let (w, _) = net.forward_tangent(x, &zeros, ws);
            let e = w - label;
            sum += e * e;
            net.backward(ws, wt.data * 2.0 * e / m, 0.0, grad);
        }
        parts.data = sum / m;
    }

    parts.total =
        wt.residual * parts.residual + wt.boundary * parts.boundary + wt.data * parts.data;
    parts
}

/// Adam with the usual defaults `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, net: &mut MlpNet, grad: &MlpNet) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in net
            .params_mut()
            .zip(grad.params())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub residual: f64,
    pub boundary: f64,
    pub data: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: MlpNet,
    pub log: Vec<EpochLog>,
    pub wall_time: f64,
}

/// Writes the training log as `epoch,residual,boundary,data,total`.
pub fn write_log_csv(log: &[EpochLog], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "epoch,residual,boundary,data,total")?;
    for e in log {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{:.16e}",
            e.epoch, e.residual, e.boundary, e.data, e.total
        )?;
    }
    Ok(())
}

/// Trains a fresh network on `sys`. Collocation points are drawn once.
pub fn train(
    sys: &DynamicalSystem,
    data: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, LearnerError> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let mut net = MlpNet::with_hidden(sys.dim(), cfg.layer, cfg.width, cfg.seed)?;
    let samples: &[(Vec<f64>, f64)] = data.map(|d| d.points.as_slice()).unwrap_or(&[]);
    if cfg.loss_mode == LossMode::Data && samples.is_empty() {
        return Err(LearnerError::MissingData(cfg.loss_mode));
    }
    let colloc = if cfg.loss_mode == LossMode::Data {
        Collocation {
            x: Vec::new(),
            fx: Vec::new(),
        }
    } else {
        let x = sample_uniform(&sys.domain, cfg.num_colloc_pts, cfg.seed.wrapping_add(1));
        Collocation::new(&sys.compiled_field(), x)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut adam = Adam::new(net.num_params(), cfg.lr);
    let mut grad = net.zeros_like();
    let mut ws = Workspace::default();
    let mut colloc_order: Vec<usize> = (0..colloc.len()).collect();
    let mut data_order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(cfg.max_epoch);

    for epoch in 1..=cfg.max_epoch {
        colloc_order.shuffle(&mut rng);
        data_order.shuffle(&mut rng);
        // An epoch is one pass over the collocation points, or over the
        // labels when no collocation points are used. The data batches
        // cycle through the labels alongside.
        let primary = if colloc.is_empty() {
            samples.len()
        } else {
            colloc.len()
        };
        let batches = primary.div_ceil(cfg.batch_size).max(1);
        let mut acc = LossParts::default();
        let mut data_cursor = 0;
        let mut data_idx = Vec::with_capacity(cfg.batch_size);
        for b in 0..batches {
            let lo = b * cfg.batch_size;
            let hi = (lo + cfg.batch_size).min(primary);
            let colloc_idx: &[usize] = if colloc.is_empty() {
                &[]
            } else {
                &colloc_order[lo..hi]
            };
            data_idx.clear();
            if colloc.is_empty() {
                data_idx.extend_from_slice(&data_order[lo..hi]);
            } else if !data_order.is_empty() {
                for _ in 0..cfg.batch_size {
                    data_idx.push(data_order[data_cursor]);
                    data_cursor = (data_cursor + 1) % data_order.len();
                }
            }
            let parts = batch_loss(
                &net, cfg, &colloc, colloc_idx, samples, &data_idx, &mut ws, &mut grad,
            );
            if !parts.total.is_finite() {
                return Err(LearnerError::DivergedTraining {
                    epoch,
                    loss: parts.total,
                });
            }
            adam.step(&mut net, &grad);
            acc.residual += parts.residual;
            acc.boundary += parts.boundary;
            acc.data += parts.data;
            acc.total += parts.total;
        }
        let k = batches as f64;
        let entry = EpochLog {
            epoch,
            residual: acc.residual / k,
            boundary: acc.boundary / k,
            data: acc.data / k,
            total: acc.total / k,
        };
        log::info!(
            "{} epoch {epoch}: total {:.3e} (residual {:.3e}, boundary {:.3e}, data {:.3e})",
            sys.name,
            entry.total,
            entry.residual,
            entry.boundary,
            entry.data
        );
        if net.params().any(|p| !p.is_finite()) {
            return Err(LearnerError::DivergedTraining {
                epoch,
                loss: entry.total,
            });
        }
        log.push(entry);
    }
    Ok(TrainOutcome {
        net,
        log,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
