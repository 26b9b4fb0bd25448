//! Replay stores for ego-graphs and single nodes, and their selection rules.

use std::path::Path;

use ndarray::Array1;
use rand::seq::index;

use crate::ego_sampler::{read_dump, write_dump, EgoGraph};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph_store::{NodeId, Split, TaskGraph};
use crate::nn::{ego_block, GraphBatch};
use crate::rng::Rng;

/// `floor(r · pool)`, robust to the rounding of `r · pool` just below an integer.
pub fn replay_budget(rate: f64, pool: usize) -> usize {
    ((rate * pool as f64 + 1e-9).floor() as usize).min(pool)
}

pub fn check_rate(rate: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Config(format!("replay rate {rate} outside [0, 1]")))
    }
}

/// `k` distinct indices of `0..n`, uniformly without replacement.
pub fn sample_indices(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    index::sample(rng, n, k.min(n)).into_vec()
}

/// A stored ego-graph with its provenance and model input block.
#[derive(Debug, Clone)]
pub struct ReplayEntry {
    pub source_task: usize,
    pub ego: EgoGraph,
    pub block: GraphBatch,
}

/// The replay set of stored ego-graphs. Entries are never mutated once stored.
#[derive(Debug, Clone, Default)]
pub struct ReplayStore {
    rate: f64,
    entries: Vec<ReplayEntry>,
}

impl ReplayStore {
    pub fn new(rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(ReplayStore { rate, entries: Vec::new() })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    pub fn blocks(&self) -> impl Iterator<Item = &GraphBatch> {
        self.entries.iter().map(|e| &e.block)
    }

    /// Stores `floor(r · |pool|)` ego-graphs drawn uniformly without
    /// replacement; `blocks[i]` is the model input of `pool[i]`.
    pub fn add_sample(&mut self, pool: &[EgoGraph], blocks: &[GraphBatch], rng: &mut Rng) -> Result<usize> {
        if pool.len() != blocks.len() {
            return Err(Error::Shape("replay pool and blocks differ in length".into()));
        }
        let k = replay_budget(self.rate, pool.len());
        for i in sample_indices(pool.len(), k, rng) {
            self.entries.push(ReplayEntry {
                source_task: pool[i].task_id,
                ego: pool[i].clone(),
                block: blocks[i].clone(),
            });
        }
        Ok(k)
    }

    pub fn storage_bytes(&self) -> usize {
        self.entries.iter().map(|e| e.ego.storage_bytes()).sum()
    }

    /// Writes the store in the ego dump format.
    pub fn save(&self, prefix: &Path) -> Result<()> {
        let egos: Vec<EgoGraph> = self.entries.iter().map(|e| e.ego.clone()).collect();
        write_dump(prefix, &egos)
    }

    /// Reads a store written by [`ReplayStore::save`]; the ego-graphs must carry features.
    pub fn load(prefix: &Path, rate: f64, compact: bool) -> Result<Self> {
        let mut store = ReplayStore::new(rate)?;
        for ego in read_dump(prefix)? {
            let block = ego_block(&ego, compact)?;
            store.entries.push(ReplayEntry {
                source_task: ego.task_id,
                ego,
                block,
            });
        }
        Ok(store)
    }
}

/// A stored node: features frozen at storage time, plus its label.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredNode {
    pub source_task: usize,
    pub node: NodeId,
    pub features: Array1<f64>,
    pub label: u8,
}

#[derive(Debug, Clone, Default)]
pub struct NodeStore {
    rate: f64,
    entries: Vec<StoredNode>,
}

impl NodeStore {
    pub fn new(rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(NodeStore { rate, entries: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[StoredNode] {
        &self.entries
    }

    pub fn budget(&self, pool: usize) -> usize {
        replay_budget(self.rate, pool)
    }

    pub fn add_nodes(&mut self, g: &TaskGraph, x: &FeatureMatrix, nodes: &[NodeId]) {
        for &v in nodes {
            self.entries.push(StoredNode {
                source_task: g.task_id(),
                node: v,
                features: x.row(v).to_owned(),
                label: g.label(v),
            });
        }
    }

    /// Uniform random train nodes, `floor(r · |train|)` of them.
    pub fn add_random(&mut self, g: &TaskGraph, x: &FeatureMatrix, rng: &mut Rng) -> usize {
        let train = g.split_nodes(Split::Train);
        let k = self.budget(train.len());
        let chosen: Vec<NodeId> = sample_indices(train.len(), k, rng).into_iter().map(|i| train[i]).collect();
        self.add_nodes(g, x, &chosen);
        k
    }

    /// `batch` with every stored node appended as an isolated, self-looped readout.
    pub fn augment(&self, batch: &GraphBatch) -> Result<GraphBatch> {
        if self.entries.is_empty() {
            return Ok(batch.clone());
        }
        let rows: Vec<_> = self.entries.iter().map(|e| (e.features.view(), e.label)).collect();
        batch.with_isolated(&rows)
    }

    pub fn storage_bytes(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.features.len() * 8 + std::mem::size_of::<StoredNode>())
            .sum()
    }
}

/// Mean-of-feature selection: per class, the nodes closest (Euclidean) to the
/// class mean of `candidates`, `budget / 2` per class with the odd one going to
/// class 1. A class that is absent or too small cedes its share to the other.
/// Ties break by node id.
pub fn er_mf_select(x: &FeatureMatrix, labels: &[u8], candidates: &[NodeId], budget: usize) -> Result<Vec<NodeId>> {
    if budget > candidates.len() {
        return Err(Error::Config(format!(
            "budget {budget} exceeds the {} candidate nodes",
            candidates.len()
        )));
    }
    let by_class: [Vec<NodeId>; 2] = [0u8, 1].map(|c| candidates.iter().copied().filter(|&v| labels[v] == c).collect());
    let mut want = [budget / 2, budget - budget / 2];
    for c in 0..2 {
        let spare = want[c].saturating_sub(by_class[c].len());
        want[c] -= spare;
        want[1 - c] += spare;
    }
    let mut chosen = Vec::with_capacity(budget);
    for c in 0..2 {
        let nodes = &by_class[c];
        if want[c] == 0 || nodes.is_empty() {
            continue;
        }
        let mut mean = Array1::<f64>::zeros(x.dim());
        for &v in nodes {
            mean += &x.row(v);
        }
        mean /= nodes.len() as f64;
        let mut ranked: Vec<(f64, NodeId)> = nodes
            .iter()
            .map(|&v| ((&x.row(v) - &mean).mapv(|d| d * d).sum(), v))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        chosen.extend(ranked.iter().take(want[c]).map(|&(_, v)| v));
    }
    Ok(chosen)
}
