//! The two-layer GAT / GCN classifier and its parameters.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::batch::GraphBatch;
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::rng;

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gat,
    Gcn,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Gat => "gat",
            Arch::Gcn => "gcn",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gat" => Ok(Arch::Gat),
            "gcn" => Ok(Arch::Gcn),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub layers: usize,
    pub input_dim: usize,
    /// Total hidden width; for GAT this is `heads × head_dim`.
    pub hidden: usize,
    pub heads: usize,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::Gat,
            layers: 2,
            input_dim: 68,
            hidden: 128,
            heads: 8,
            leaky_slope: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers != 2 {
            return Err(Error::Config(format!("only 2-layer models are supported, got {}", self.layers)));
        }
        if self.input_dim == 0 || self.hidden == 0 || self.heads == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config("leaky_slope must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Parameter names and shapes in canonical order.
    pub fn shapes(&self) -> Vec<(&'static str, (usize, usize))> {
        let (d, h, k, f) = (self.input_dim, self.hidden, self.heads, self.head_dim());
        match self.arch {
            Arch::Gat => vec![
                ("w1", (d, h)),
                ("att_src1", (k, f)),
                ("att_dst1", (k, f)),
                ("b1", (1, h)),
                ("w2", (h, k * NUM_CLASSES)),
                ("att_src2", (k, NUM_CLASSES)),
                ("att_dst2", (k, NUM_CLASSES)),
                ("b2", (1, NUM_CLASSES)),
            ],
            Arch::Gcn => vec![
                ("w1", (d, h)),
                ("b1", (1, h)),
                ("w2", (h, NUM_CLASSES)),
                ("b2", (1, NUM_CLASSES)),
            ],
        }
    }
}

/// All trainable tensors of one classifier, in [`ModelConfig::shapes`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn new(names: Vec<String>, tensors: Vec<Array2<f64>>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::Shape("parameter names and tensors differ in count".into()));
        }
        Ok(ParamSet { names, tensors })
    }

    /// Glorot-uniform weights and attention vectors, zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::rng_for(seed, &[rng::tag("init")]);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, (rows, cols)) in cfg.shapes() {
            let t = if name.starts_with('b') {
                Array2::zeros((rows, cols))
            } else {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                Array2::from_shape_simple_fn((rows, cols), || (2.0 * r.random::<f64>() - 1.0) * limit)
            };
            names.push(name.to_string());
            tensors.push(t);
        }
        Ok(ParamSet { names, tensors })
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.dim() == b.dim())
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.scaled_add(alpha, b);
        }
    }

    pub fn storage_bytes(&self) -> usize {
        self.num_scalars() * std::mem::size_of::<f64>()
    }
}

/// Forward pass output: per-readout log-probabilities plus handles for gradients.
pub struct Forward {
    pub tape: Tape,
    pub params: Vec<Var>,
    pub log_probs: Var,
    /// Attention outputs of the two layers (GAT only).
    pub attention: Vec<Var>,
}

impl Forward {
    pub fn log_probs(&self) -> &Array2<f64> {
        self.tape.value(self.log_probs)
    }
}

/// Stateless two-layer classifier; parameters are passed in.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Model { cfg })
    }

    /// Records the forward pass of `batch` on a fresh tape.
    pub fn forward(&self, params: &ParamSet, batch: &GraphBatch) -> Result<Forward> {
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        if batch.feature_dim() != self.cfg.input_dim {
            return Err(Error::Shape(format!(
                "batch feature width {} but model expects {}",
                batch.feature_dim(),
                self.cfg.input_dim
            )));
        }
        batch.validate()?;
        let mut tape = Tape::new();
        let x = tape.constant(batch.x.clone());
        let vars: Vec<Var> = params.tensors.iter().map(|t| tape.param(t.clone())).collect();
        let [l1, l2] = &batch.layers;
        let slope = self.cfg.leaky_slope;
        let mut attention = Vec::new();
        let logits = match self.cfg.arch {
            Arch::Gat => {
                let (w1, s1, d1, b1, w2, s2, d2, b2) =
                    (vars[0], vars[1], vars[2], vars[3], vars[4], vars[5], vars[6], vars[7]);
                let z1 = tape.matmul(x, w1);
                let a1 = tape.attention(z1, s1, d1, Arc::clone(l1), slope);
                attention.push(a1);
                let h1 = tape.add_row(a1, b1);
                let h1 = tape.elu(h1);
                let z2 = tape.matmul(h1, w2);
                let a2 = tape.attention(z2, s2, d2, Arc::clone(l2), slope);
                attention.push(a2);
                let m2 = tape.head_mean(a2, self.cfg.heads);
                let ego = tape.gather(m2, Arc::clone(&batch.readout));
                tape.add_row(ego, b2)
            }
            Arch::Gcn => {
                let (w1, b1, w2, b2) = (vars[0], vars[1], vars[2], vars[3]);
                let z1 = tape.matmul(x, w1);
                let p1 = tape.propagate(z1, Arc::clone(l1));
                let h1 = tape.add_row(p1, b1);
                let h1 = tape.elu(h1);
                let z2 = tape.matmul(h1, w2);
                let p2 = tape.propagate(z2, Arc::clone(l2));
                let ego = tape.gather(p2, Arc::clone(&batch.readout));
                tape.add_row(ego, b2)
            }
        };
        let log_probs = tape.log_softmax(logits);
        if tape.value(log_probs).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "log-probabilities of a {}-node batch",
                batch.num_nodes()
            )));
        }
        Ok(Forward {
            tape,
            params: vars,
            log_probs,
            attention,
        })
    }

    /// Mean NLL over the batch readout and its parameter gradients.
    pub fn loss_and_grad(&self, params: &ParamSet, batch: &GraphBatch) -> Result<(f64, ParamSet)> {
        let mut fwd = self.forward(params, batch)?;
        let loss = fwd.tape.nll_mean(fwd.log_probs, Arc::clone(&batch.labels));
        let value = fwd.tape.value(loss)[[0, 0]];
        let mut grads: Gradients = fwd.tape.backward(loss);
        let tensors = fwd
            .params
            .iter()
            .zip(&params.tensors)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Array2::zeros(t.raw_dim())))
            .collect();
        let g = ParamSet {
            names: params.names.clone(),
            tensors,
        };
        if !value.is_finite() || !g.is_finite() {
            return Err(Error::NonFinite("loss or gradient".into()));
        }
        Ok((value, g))
    }

    /// Probability of class 1 for each readout row.
    pub fn predict(&self, params: &ParamSet, batch: &GraphBatch) -> Result<Vec<f64>> {
        let fwd = self.forward(params, batch)?;
        Ok(fwd.log_probs().column(1).iter().map(|lp| lp.exp()).collect())
    }
}

/// Largest relative error between analytic gradients and central differences
/// with step `h`, over every scalar parameter. Relative error is
/// `|a − f| / max(|a|, |f|, floor)`.
pub fn gradient_check(model: &Model, params: &ParamSet, batch: &GraphBatch, h: f64, floor: f64) -> Result<f64> {
    let (_, grads) = model.loss_and_grad(params, batch)?;
    let loss_at = |p: &ParamSet| -> Result<f64> {
        let lp = model.forward(p, batch)?;
        nll_loss(lp.log_probs(), &batch.labels)
    };
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for t in 0..params.tensors.len() {
        for k in 0..params.tensors[t].len() {
            let orig = params.tensors[t].as_slice().expect("standard layout")[k];
            probe.tensors[t].as_slice_mut().expect("standard layout")[k] = orig + h;
            let up = loss_at(&probe)?;
            probe.tensors[t].as_slice_mut().expect("standard layout")[k] = orig - h;
            let down = loss_at(&probe)?;
            probe.tensors[t].as_slice_mut().expect("standard layout")[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = grads.tensors[t].as_slice().expect("standard layout")[k];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(floor));
        }
    }
    Ok(worst)
}

/// Mean negative log-likelihood of `labels` under row log-probabilities.
pub fn nll_loss(log_probs: &Array2<f64>, labels: &[u8]) -> Result<f64> {
    if log_probs.nrows() != labels.len() || log_probs.ncols() != NUM_CLASSES {
        return Err(Error::Shape("log-probabilities and labels disagree".into()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(Error::Config(format!("label {y} is not 0 or 1")));
        }
        s -= log_probs[[r, y as usize]];
    }
    Ok(s / labels.len() as f64)
}
