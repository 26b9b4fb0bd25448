//! Elastic weight consolidation with a diagonal empirical Fisher.

use crate::error::{Error, Result};
use crate::nn::{GraphBatch, Model, ParamSet, Regularizer};

/// One consolidated task: anchor parameters and their importance.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub theta: ParamSet,
    pub fisher: ParamSet,
}

/// Per-task penalties `(λ/2) Σ_k F_k (θ_k − θ*_k)²`, summed over tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct EwcState {
    pub lambda: f64,
    anchors: Vec<Anchor>,
}

impl EwcState {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("EWC lambda {lambda} must be non-negative")));
        }
        Ok(EwcState {
            lambda,
            anchors: Vec::new(),
        })
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn push(&mut self, theta: ParamSet, fisher: ParamSet) -> Result<()> {
        if !theta.same_shape(&fisher) {
            return Err(Error::Shape("Fisher and anchor shapes differ".into()));
        }
        if fisher.tensors().iter().any(|t| t.iter().any(|&f| f.is_nan() || f < 0.0)) {
            return Err(Error::NonFinite("Fisher diagonal must be non-negative".into()));
        }
        self.anchors.push(Anchor { theta, fisher });
        Ok(())
    }

    /// Adds an anchor at `params` with the mean squared per-example gradient
    /// over `examples` (each a single-readout batch).
    pub fn consolidate(&mut self, model: &Model, params: &ParamSet, examples: &[GraphBatch]) -> Result<()> {
        let fisher = empirical_fisher(model, params, examples)?;
        self.push(params.clone(), fisher)
    }

    pub fn penalty(&self, params: &ParamSet) -> f64 {
        let mut total = 0.0;
        for a in &self.anchors {
            for ((p, t), f) in params.tensors().iter().zip(a.theta.tensors()).zip(a.fisher.tensors()) {
                total += ndarray::Zip::from(p)
                    .and(t)
                    .and(f)
                    .fold(0.0, |acc, &p, &t, &f| acc + f * (p - t) * (p - t));
            }
        }
        0.5 * self.lambda * total
    }

    pub fn storage_bytes(&self) -> usize {
        self.anchors
            .iter()
            .map(|a| a.theta.storage_bytes() + a.fisher.storage_bytes())
            .sum()
    }
}

impl Regularizer for EwcState {
    fn apply(&self, params: &ParamSet, grads: &mut ParamSet) -> f64 {
        for a in &self.anchors {
            for (((g, p), t), f) in grads
                .tensors_mut()
                .iter_mut()
                .zip(params.tensors())
                .zip(a.theta.tensors())
                .zip(a.fisher.tensors())
            {
                ndarray::Zip::from(g)
                    .and(p)
                    .and(t)
                    .and(f)
                    .for_each(|g, &p, &t, &f| *g += self.lambda * f * (p - t));
            }
        }
        self.penalty(params)
    }
}

/// Mean over examples of the squared gradient of each example's NLL.
pub fn empirical_fisher(model: &Model, params: &ParamSet, examples: &[GraphBatch]) -> Result<ParamSet> {
    let mut fisher = params.zeros_like();
    if examples.is_empty() {
        return Ok(fisher);
    }
    for ex in examples {
        let (_, g) = model.loss_and_grad(params, ex)?;
        for (f, g) in fisher.tensors_mut().iter_mut().zip(g.tensors()) {
            ndarray::Zip::from(f).and(g).for_each(|f, &g| *f += g * g);
        }
    }
    let n = examples.len() as f64;
    for f in fisher.tensors_mut() {
        f.mapv_inplace(|v| v / n);
    }
    Ok(fisher)
}
