//! Fully connected tanh network with a scalar linear output.
//!
//! Besides `W(x)` the forward pass carries a tangent `Ẇ = ∇W(x)·v` for a
//! direction `v`; `backward` then returns parameter gradients of any loss
//! that depends on both outputs.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("network needs at least an input and an output layer, got {0:?}")]
    Shape(Vec<usize>),
}

/// Dense layer `z = W a + b`; `w` is row-major with `rows` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.cols + j]
    }

    fn affine(&self, a: &[f64], out: &mut [f64], with_bias: bool) {
        for i in 0..self.rows {
            let row = &self.w[i * self.cols..(i + 1) * self.cols];
            let mut s = if with_bias { self.b[i] } else { 0.0 };
            for (wij, aj) in row.iter().zip(a) {
                s += wij * aj;
            }
            out[i] = s;
        }
    }

    /// `out = Wᵀ g`.
    fn affine_t(&self, g: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..self.rows {
            let row = &self.w[i * self.cols..(i + 1) * self.cols];
            for (o, wij) in out.iter_mut().zip(row) {
                *o += wij * g[i];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    /// `[n, w1, ..., wd, 1]`.
    pub dims: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Activations kept between a forward and a backward pass.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    a: Vec<Vec<f64>>,
    da: Vec<Vec<f64>>,
    /// Pre-activation tangents `ż` of the hidden layers.
    dz: Vec<Vec<f64>>,
    gz: Vec<f64>,
    gdz: Vec<f64>,
    ga: Vec<f64>,
    gda: Vec<f64>,
}

impl MlpNet {
    /// Glorot-uniform weights and zero biases.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self, NetError> {
        if dims.len() < 2 || dims.contains(&0) || *dims.last().unwrap() != 1 {
            return Err(NetError::Shape(dims.to_vec()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut l = Layer::zeros(fan_out, fan_in);
                l.w.iter_mut()
                    .for_each(|v| *v = rng.gen_range(-bound..bound));
                l
            })
            .collect();
        Ok(MlpNet {
            dims: dims.to_vec(),
            layers,
        })
    }

    /// `[n, width x layers, 1]`.
    pub fn with_hidden(n: usize, layers: usize, width: usize, seed: u64) -> Result<Self, NetError> {
        let mut dims = vec![n];
        dims.extend(std::iter::repeat_n(width, layers));
        dims.push(1);
        MlpNet::new(&dims, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in storage order (per layer: weights row-major, then biases).
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(&l.b))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    /// A network of the same shape with all parameters zero.
    pub fn zeros_like(&self) -> MlpNet {
        MlpNet {
            dims: self.dims.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.rows, l.cols))
                .collect(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            next.resize(l.rows, 0.0);
            l.affine(&a, &mut next, true);
            if k < last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut a, &mut next);
        }
        a[0]
    }

    /// `(W(x), ∇W(x)·v)`, storing activations for [`MlpNet::backward`].
    pub fn forward_tangent(&self, x: &[f64], v: &[f64], ws: &mut Workspace) -> (f64, f64) {
        let depth = self.layers.len();
        ws.a.resize_with(depth + 1, Vec::new);
        ws.da.resize_with(depth + 1, Vec::new);
        ws.dz.resize_with(depth + 1, Vec::new);
        ws.a[0].clear();
        ws.a[0].extend_from_slice(x);
        ws.da[0].clear();
        ws.da[0].extend_from_slice(v);
        for (k, l) in self.layers.iter().enumerate() {
            let (prev_a, rest_a) = ws.a.split_at_mut(k + 1);
            let (prev_da, rest_da) = ws.da.split_at_mut(k + 1);
            let (a, da) = (&mut rest_a[0], &mut rest_da[0]);
            a.resize(l.rows, 0.0);
            da.resize(l.rows, 0.0);
            l.affine(&prev_a[k], a, true);
            l.affine(&prev_da[k], da, false);
            if k + 1 < depth {
                let dz = &mut ws.dz[k + 1];
                dz.clear();
                dz.extend_from_slice(da);
                for (ai, dai) in a.iter_mut().zip(da.iter_mut()) {
                    *ai = ai.tanh();
                    *dai *= 1.0 - *ai * *ai;
                }
            }
        }
        (ws.a[depth][0], ws.da[depth][0])
    }

    /// Accumulates into `grad` the parameter gradient of a loss with
    /// `∂L/∂W = gy` and `∂L/∂Ẇ = gdy` at the last forward point.
    pub fn backward(&self, ws: &mut Workspace, gy: f64, gdy: f64, grad: &mut MlpNet) {
        let depth = self.layers.len();
        ws.gz.clear();
        ws.gz.push(gy);
        ws.gdz.clear();
        ws.gdz.push(gdy);
        for k in (0..depth).rev() {
            let l = &self.layers[k];
            let g = &mut grad.layers[k];
            let (a_prev, da_prev) = (&ws.a[k], &ws.da[k]);
            for i in 0..l.rows {
                let (gz, gdz) = (ws.gz[i], ws.gdz[i]);
                g.b[i] += gz;
                let row = &mut g.w[i * l.cols..(i + 1) * l.cols];
                for ((gw, ap), dap) in row.iter_mut().zip(a_prev).zip(da_prev) {
                    *gw += gz * ap + gdz * dap;
                }
            }
            if k == 0 {
                break;
            }
            ws.ga.resize(l.cols, 0.0);
            ws.gda.resize(l.cols, 0.0);
            l.affine_t(&ws.gz, &mut ws.ga);
            l.affine_t(&ws.gdz, &mut ws.gda);
            // Previous layer: a = tanh(z), ȧ = s ż with s = 1 - a².
            let (a, dz) = (&ws.a[k], &ws.dz[k]);
            ws.gz.resize(l.cols, 0.0);
            ws.gdz.resize(l.cols, 0.0);
            for j in 0..l.cols {
                let s = 1.0 - a[j] * a[j];
                ws.gdz[j] = s * ws.gda[j];
                let ga_total = ws.ga[j] - 2.0 * a[j] * ws.gda[j] * dz[j];
                ws.gz[j] = s * ga_total;
            }
        }
    }

    /// `∇W(x)` by a reverse pass through the plain forward computation.
    pub fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        let depth = self.layers.len();
        let mut acts = vec![x.to_vec()];
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; l.rows];
            l.affine(acts.last().unwrap(), &mut z, true);
            if k + 1 < depth {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        let mut g = vec![1.0];
        for k in (0..depth).rev() {
            let l = &self.layers[k];
            let mut prev = vec![0.0; l.cols];
            l.affine_t(&g, &mut prev);
            if k > 0 {
                for (p, a) in prev.iter_mut().zip(&acts[k]) {
                    *p *= 1.0 - a * a;
                }
            }
            g = prev;
        }
        g
    }

    /// Text form: magic line, layer dims, `alpha`, then each layer's weight
    /// rows followed by its bias line.
    pub fn to_text(&self, alpha: f64) -> String {
        let mut s = String::from("zubovnet v1\n");
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "{}", dims.join(" "));
        let _ = writeln!(s, "alpha {alpha:.16e}");
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.16e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        for l in &self.layers {
            for i in 0..l.rows {
                let _ = writeln!(s, "{}", join(&l.w[i * l.cols..(i + 1) * l.cols]));
            }
            let _ = writeln!(s, "{}", join(&l.b));
        }
        s
    }

    /// Parses [`MlpNet::to_text`] output into the network and its `alpha`.
    pub fn from_text(text: &str) -> Result<(MlpNet, f64), NetError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| NetError::Format {
                line: 0,
                message: format!("unexpected end of file, expected {what}"),
            })
        };
        let err = |line: usize, message: String| NetError::Format {
            line: line + 1,
            message,
        };
        let (ln, magic) = next("header")?;
        if magic.trim() != "zubovnet v1" {
            return Err(err(ln, format!("bad header {magic:?}")));
        }
        let (ln, dims_line) = next("layer dims")?;
        let dims: Vec<usize> = dims_line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| err(ln, format!("layer dims: {e}")))?;
        let (ln, alpha_line) = next("alpha")?;
        let alpha = alpha_line
            .trim()
            .strip_prefix("alpha")
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| err(ln, format!("bad alpha line {alpha_line:?}")))?;
        let mut net = MlpNet::new(&dims, 0)?;
        let mut row = |expected: usize, out: &mut [f64]| -> Result<(), NetError> {
            let (ln, line) = next("weights")?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| err(ln, format!("{e}")))?;
            if vals.len() != expected {
                return Err(err(ln, format!("expected {expected} values, found {}", vals.len())));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(err(ln, "non-finite parameter".into()));
            }
            out.copy_from_slice(&vals);
            Ok(())
        };
        for l in &mut net.layers {
            for i in 0..l.rows {
                row(l.cols, &mut l.w[i * l.cols..(i + 1) * l.cols])?;
            }
            row(l.rows, &mut l.b)?;
        }
        Ok((net, alpha))
    }
}
