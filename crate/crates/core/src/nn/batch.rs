//! Model inputs: node features plus one destination-indexed edge list per layer.
//!
//! Ego-graphs are batched as a disjoint union; the readout rows are the egos.
//! Each layer only computes the rows a later layer reads: with two layers an
//! ego's output depends on members within two hops, the first layer needs the
//! ego and its neighbours and the second layer needs the ego alone. Ego blocks
//! are compacted this way by default. Compaction is exact.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1};

use crate::ego_sampler::EgoGraph;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph_store::{NodeId, TaskGraph};

/// Incoming edges grouped by destination. Destination `i` is input row
/// `targets[i]`; `sources` are input rows. `weights` are the symmetric
/// degree-normalized coefficients used by the GCN layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Csr {
    pub offsets: Vec<usize>,
    pub sources: Vec<usize>,
    pub weights: Vec<f64>,
    pub targets: Vec<usize>,
}

impl Csr {
    fn empty() -> Self {
        Csr {
            offsets: vec![0],
            ..Default::default()
        }
    }

    /// Number of destinations, i.e. output rows.
    pub fn num_nodes(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn num_edges(&self) -> usize {
        self.sources.len()
    }

    #[inline]
    pub fn range(&self, i: usize) -> (usize, usize) {
        (self.offsets[i], self.offsets[i + 1])
    }

    /// Whether every index refers to one of `n_in` input rows.
    pub fn fits(&self, n_in: usize) -> bool {
        self.targets.len() == self.num_nodes()
            && self.targets.iter().chain(&self.sources).all(|&v| v < n_in)
    }

    fn push(&mut self, target: usize, incoming: impl IntoIterator<Item = (usize, f64)>) {
        for (s, w) in incoming {
            self.sources.push(s);
            self.weights.push(w);
        }
        self.offsets.push(self.sources.len());
        self.targets.push(target);
    }

    fn extend_shifted(&mut self, other: &Csr, base: usize) {
        let edge_base = self.sources.len();
        self.sources.extend(other.sources.iter().map(|s| s + base));
        self.weights.extend_from_slice(&other.weights);
        self.offsets.extend(other.offsets[1..].iter().map(|o| o + edge_base));
        self.targets.extend(other.targets.iter().map(|t| t + base));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub x: Array2<f64>,
    /// Layer `l` reads the rows produced by layer `l − 1` (the features for
    /// the first layer) and produces one row per destination.
    pub layers: [Arc<Csr>; 2],
    /// Rows of the last layer's output that are classified.
    pub readout: Arc<Vec<usize>>,
    pub labels: Arc<Vec<u8>>,
}

/// Builder for a single block from feature rows and per-layer edges.
struct Builder {
    rows: Vec<f64>,
    dim: usize,
    layers: [Csr; 2],
    readout: Vec<usize>,
    labels: Vec<u8>,
}

impl Builder {
    fn new(dim: usize) -> Self {
        Builder {
            rows: Vec::new(),
            dim,
            layers: [Csr::empty(), Csr::empty()],
            readout: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn add_row(&mut self, features: Option<ArrayView1<'_, f64>>) {
        match features {
            Some(f) => self.rows.extend(f.iter()),
            None => self.rows.extend(std::iter::repeat_n(0.0, self.dim)),
        }
    }

    fn finish(self, num_rows: usize) -> GraphBatch {
        let [l1, l2] = self.layers;
        GraphBatch {
            x: Array2::from_shape_vec((num_rows, self.dim), self.rows).expect("row count"),
            layers: [Arc::new(l1), Arc::new(l2)],
            readout: Arc::new(self.readout),
            labels: Arc::new(self.labels),
        }
    }
}

impl GraphBatch {
    pub fn num_nodes(&self) -> usize {
        self.x.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn len(&self) -> usize {
        self.readout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readout.is_empty()
    }

    /// Disjoint union of ego-graphs; ego slot 0 of each is a readout row.
    pub fn from_egos(egos: &[&EgoGraph], compact: bool) -> Result<Self> {
        let blocks: Vec<GraphBatch> = egos
            .iter()
            .map(|e| ego_block(e, compact))
            .collect::<Result<_>>()?;
        let refs: Vec<&GraphBatch> = blocks.iter().collect();
        GraphBatch::concat(&refs)
    }

    /// Concatenates batches into one disjoint union.
    pub fn concat(parts: &[&GraphBatch]) -> Result<Self> {
        let dim = parts.first().map_or(0, |p| p.feature_dim());
        if parts.iter().any(|p| p.feature_dim() != dim) {
            return Err(Error::Shape("batches have different feature widths".into()));
        }
        let total_nodes: usize = parts.iter().map(|p| p.num_nodes()).sum();
        let mut rows = Vec::with_capacity(total_nodes * dim);
        let mut layers = [Csr::empty(), Csr::empty()];
        let mut readout = Vec::new();
        let mut labels = Vec::new();
        // input rows of layer 1, input rows of layer 2, output rows of layer 2
        let mut base = [0usize; 3];
        for p in parts {
            rows.extend(p.x.iter());
            layers[0].extend_shifted(&p.layers[0], base[0]);
            layers[1].extend_shifted(&p.layers[1], base[1]);
            readout.extend(p.readout.iter().map(|r| r + base[2]));
            labels.extend_from_slice(&p.labels);
            base[0] += p.num_nodes();
            base[1] += p.layers[0].num_nodes();
            base[2] += p.layers[1].num_nodes();
        }
        let [l1, l2] = layers;
        Ok(GraphBatch {
            x: Array2::from_shape_vec((total_nodes, dim), rows).expect("row count"),
            layers: [Arc::new(l1), Arc::new(l2)],
            readout: Arc::new(readout),
            labels: Arc::new(labels),
        })
    }

    /// Checks that layer indices, readout rows and labels are consistent.
    pub fn validate(&self) -> Result<()> {
        let [l1, l2] = &self.layers;
        if !l1.fits(self.num_nodes()) || !l2.fits(l1.num_nodes()) {
            return Err(Error::Shape("layer edges refer to missing rows".into()));
        }
        if self.readout.iter().any(|&r| r >= l2.num_nodes()) || self.readout.len() != self.labels.len() {
            return Err(Error::Shape("readout rows and labels disagree".into()));
        }
        Ok(())
    }

    /// Whole task graph with self-loops; `readout` nodes carry their labels.
    pub fn full_graph(g: &TaskGraph, x: &FeatureMatrix, readout: &[NodeId]) -> Result<Self> {
        check_features(g, x)?;
        let norm = |v: NodeId| 1.0 / ((g.degree(v) + 1) as f64).sqrt();
        let mut csr = Csr::empty();
        for v in 0..g.num_nodes() {
            let nv = norm(v);
            csr.push(v, incoming_with_self(g, v).map(|u| (u, nv * norm(u))));
        }
        let csr = Arc::new(csr);
        Ok(GraphBatch {
            x: x.array().to_owned(),
            layers: [Arc::clone(&csr), csr],
            readout: Arc::new(readout.to_vec()),
            labels: Arc::new(readout.iter().map(|&v| g.label(v)).collect()),
        })
    }

    /// Exact two-hop receptive field of `v` in the full graph, as a single-readout block.
    pub fn receptive_field(g: &TaskGraph, x: &FeatureMatrix, v: NodeId) -> Result<Self> {
        check_features(g, x)?;
        let mut local: Vec<NodeId> = vec![v];
        let mut hop = vec![0u8];
        let mut pos = std::collections::HashMap::from([(v, 0usize)]);
        let mut frontier = 0;
        while frontier < local.len() {
            let u = local[frontier];
            let d = hop[frontier];
            frontier += 1;
            if d == 2 {
                continue;
            }
            for &w in g.adj(u) {
                if let std::collections::hash_map::Entry::Vacant(slot) = pos.entry(w) {
                    slot.insert(local.len());
                    local.push(w);
                    hop.push(d + 1);
                }
            }
        }
        let norm = |u: NodeId| 1.0 / ((g.degree(u) + 1) as f64).sqrt();
        let mut b = Builder::new(x.dim());
        for &u in &local {
            b.add_row(Some(x.row(u)));
        }
        for (i, &u) in local.iter().enumerate().take_while(|&(i, _)| hop[i] <= 1) {
            let nu = norm(u);
            let incoming: Vec<(usize, f64)> = incoming_with_self(g, u).map(|w| (pos[&w], nu * norm(w))).collect();
            if i == 0 {
                b.layers[1].push(0, incoming.iter().copied());
            }
            b.layers[0].push(i, incoming);
        }
        b.readout.push(0);
        b.labels.push(g.label(v));
        Ok(b.finish(local.len()))
    }

    /// Appends isolated, self-looped nodes that are also readout rows.
    pub fn with_isolated(&self, rows: &[(ArrayView1<'_, f64>, u8)]) -> Result<Self> {
        let mut b = Builder::new(self.feature_dim());
        for (i, (f, y)) in rows.iter().enumerate() {
            if f.len() != self.feature_dim() {
                return Err(Error::Shape("isolated node feature width".into()));
            }
            b.add_row(Some(f.view()));
            b.layers[0].push(i, [(i, 1.0)]);
            b.layers[1].push(i, [(i, 1.0)]);
            b.readout.push(i);
            b.labels.push(*y);
        }
        let extra = b.finish(rows.len());
        GraphBatch::concat(&[self, &extra])
    }
}

fn check_features(g: &TaskGraph, x: &FeatureMatrix) -> Result<()> {
    if x.num_nodes() != g.num_nodes() {
        return Err(Error::Shape(format!(
            "feature matrix has {} rows, graph has {} nodes",
            x.num_nodes(),
            g.num_nodes()
        )));
    }
    Ok(())
}

/// Neighbours of `v` plus `v` itself, ascending.
fn incoming_with_self(g: &TaskGraph, v: NodeId) -> impl Iterator<Item = NodeId> + '_ {
    let nb = g.adj(v);
    let split = nb.partition_point(|&u| u < v);
    nb[..split]
        .iter()
        .copied()
        .chain(std::iter::once(v))
        .chain(nb[split..].iter().copied())
}

/// One ego-graph as a block with readout at local row 0.
pub fn ego_block(e: &EgoGraph, compact: bool) -> Result<GraphBatch> {
    let dim = e
        .feature_dim()
        .ok_or_else(|| Error::Shape(format!("ego-graph of node {} has no features", e.ego_node)))?;
    let n = e.size();
    let adj = e.adjacency();
    for i in 0..e.num_real() {
        if !adj.get(i, i) {
            return Err(Error::Shape(format!(
                "real member slot {i} of ego {} has no self-loop",
                e.ego_node
            )));
        }
    }
    let degree: Vec<usize> = (0..n).map(|i| adj.row(i).count()).collect();
    let norm = |i: usize| if degree[i] > 0 { 1.0 / (degree[i] as f64).sqrt() } else { 0.0 };

    // slots kept, and their hop distance from the ego inside the ego-graph
    let (slots, hop): (Vec<usize>, Vec<u8>) = if compact {
        let mut slots = vec![0usize];
        let mut hop = vec![0u8];
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut k = 0;
        while k < slots.len() {
            let (s, d) = (slots[k], hop[k]);
            k += 1;
            if d == 2 {
                continue;
            }
            for t in adj.row(s) {
                if !seen[t] {
                    seen[t] = true;
                    slots.push(t);
                    hop.push(d + 1);
                }
            }
        }
        (slots, hop)
    } else {
        ((0..n).collect(), vec![0; n])
    };
    let mut local = vec![usize::MAX; n];
    for (i, &s) in slots.iter().enumerate() {
        local[s] = i;
    }
    let mut b = Builder::new(dim);
    for &s in &slots {
        b.add_row(e.member_feature(s));
    }
    for (i, &s) in slots.iter().enumerate() {
        if hop[i] > 1 {
            break;
        }
        let ns = norm(s);
        let incoming: Vec<(usize, f64)> = adj
            .row(s)
            .filter(|&t| local[t] != usize::MAX)
            .map(|t| (local[t], ns * norm(t)))
            .collect();
        if i == 0 || !compact {
            b.layers[1].push(i, incoming.iter().copied());
        }
        b.layers[0].push(i, incoming);
    }
    b.readout.push(0);
    b.labels.push(e.ego_label);
    Ok(b.finish(slots.len()))
}
