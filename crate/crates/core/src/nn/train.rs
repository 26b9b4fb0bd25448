//! Training loops shared by the static and continual runners.

use rand::seq::SliceRandom;

use super::batch::GraphBatch;
use super::model::{Model, ModelConfig, ParamSet};
use super::optim::{Adam, TrainConfig};
use crate::error::Result;
use crate::rng::Rng;

/// Adds a penalty to the loss; implementations add its gradient to `grads`.
pub trait Regularizer {
    fn apply(&self, params: &ParamSet, grads: &mut ParamSet) -> f64;
}

/// A model, its current parameters and optimizer state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub model: Model,
    pub params: ParamSet,
    pub optim: Adam,
    pub train: TrainConfig,
}

impl Learner {
    pub fn new(model_cfg: ModelConfig, train: TrainConfig, init_seed: u64) -> Result<Self> {
        train.validate()?;
        let model = Model::new(model_cfg)?;
        let params = ParamSet::init(&model.cfg, init_seed)?;
        Ok(Learner {
            optim: Adam::from_config(&train),
            model,
            params,
            train,
        })
    }

    /// One optimizer step on `batch`; returns the loss including any penalty.
    pub fn step(&mut self, batch: &GraphBatch, reg: Option<&dyn Regularizer>) -> Result<f64> {
        let (mut loss, mut grads) = self.model.loss_and_grad(&self.params, batch)?;
        if let Some(r) = reg {
            loss += r.apply(&self.params, &mut grads);
        }
        self.optim.step(&mut self.params, &grads)?;
        Ok(loss)
    }

    /// One epoch of shuffled minibatches over single-readout `blocks`.
    /// Returns the readout-weighted mean loss.
    pub fn epoch(&mut self, blocks: &[GraphBatch], rng: &mut Rng, reg: Option<&dyn Regularizer>) -> Result<f64> {
        let mut order: Vec<usize> = (0..blocks.len()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(self.train.batch_size) {
            let parts: Vec<&GraphBatch> = chunk.iter().map(|&i| &blocks[i]).collect();
            let batch = GraphBatch::concat(&parts)?;
            let loss = self.step(&batch, reg)?;
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        Ok(if count > 0 { total / count as f64 } else { 0.0 })
    }

    /// `train.epochs` minibatch epochs; returns per-epoch losses.
    pub fn fit_blocks(&mut self, blocks: &[GraphBatch], rng: &mut Rng, reg: Option<&dyn Regularizer>) -> Result<Vec<f64>> {
        if blocks.is_empty() {
            return Ok(Vec::new());
        }
        (0..self.train.epochs).map(|_| self.epoch(blocks, rng, reg)).collect()
    }

    /// `train.epochs` full-batch steps on one batch; returns per-epoch losses.
    pub fn fit_full(&mut self, batch: &GraphBatch, reg: Option<&dyn Regularizer>) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        (0..self.train.epochs).map(|_| self.step(batch, reg)).collect()
    }

    /// Class-1 probabilities for each block's readout, batched.
    pub fn score_blocks(&self, blocks: &[GraphBatch]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(blocks.len());
        for chunk in blocks.chunks(256) {
            let parts: Vec<&GraphBatch> = chunk.iter().collect();
            out.extend(self.model.predict(&self.params, &GraphBatch::concat(&parts)?)?);
        }
        Ok(out)
    }

    pub fn score(&self, batch: &GraphBatch) -> Result<Vec<f64>> {
        self.model.predict(&self.params, batch)
    }
}
