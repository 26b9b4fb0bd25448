//! Node input features: a DeepWalk embedding per node concatenated with
//! log1p-transformed, train-standardized raw counts.

use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore as _};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_store::{NodeId, Split, TaskGraph};
use crate::rng;
use crate::util::read_to_string;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepWalkConfig {
    pub dims: usize,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for DeepWalkConfig {
    fn default() -> Self {
        DeepWalkConfig {
            dims: 64,
            walks_per_node: 10,
            walk_length: 40,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

impl DeepWalkConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("dims", self.dims),
            ("walks_per_node", self.walks_per_node),
            ("walk_length", self.walk_length),
            ("window", self.window),
            ("negatives", self.negatives),
            ("epochs", self.epochs),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("deepwalk {name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("deepwalk learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// `|V| × dims` embedding table, one row per dense node id.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    table: Array2<f32>,
}

impl Embedding {
    pub fn from_array(table: Array2<f32>) -> Self {
        Embedding { table }
    }

    pub fn num_nodes(&self) -> usize {
        self.table.nrows()
    }

    pub fn dims(&self) -> usize {
        self.table.ncols()
    }

    pub fn row(&self, v: NodeId) -> ArrayView1<'_, f32> {
        self.table.row(v)
    }

    pub fn table(&self) -> &Array2<f32> {
        &self.table
    }

    /// Reads `node_id,e1..ed` rows (optional header) aligned to `g`'s node order.
    pub fn load_csv(path: &Path, g: &TaskGraph) -> Result<Self> {
        let text = read_to_string(path)?;
        let mut rows: Vec<Option<Vec<f32>>> = vec![None; g.num_nodes()];
        let mut dims = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<f32>, _> =
                fields[1..].iter().map(|s| s.parse::<f32>()).collect();
            let vals = match parsed {
                Ok(v) => v,
                Err(_) if i == 0 => continue,
                Err(_) => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: "bad embedding value".into(),
                    })
                }
            };
            if *dims.get_or_insert(vals.len()) != vals.len() || vals.is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "inconsistent embedding width".into(),
                });
            }
            let v = g.lookup(fields[0])?;
            rows[v] = Some(vals);
        }
        let dims = dims.ok_or_else(|| Error::Ingest(format!("{} is empty", path.display())))?;
        let mut table = Array2::zeros((g.num_nodes(), dims));
        for (v, row) in rows.into_iter().enumerate() {
            let row = row.ok_or_else(|| {
                Error::Ingest(format!("node {} has no embedding", g.external_id(v)))
            })?;
            table.row_mut(v).assign(&ArrayView1::from(&row));
        }
        Ok(Embedding { table })
    }
}

fn random_walks(g: &TaskGraph, cfg: &DeepWalkConfig) -> Vec<Vec<NodeId>> {
    let n = g.num_nodes();
    let mut out = Vec::with_capacity(n * cfg.walks_per_node);
    for round in 0..cfg.walks_per_node {
        let mut order: Vec<NodeId> = (0..n).collect();
        order.shuffle(&mut rng::rng_for(cfg.seed, &[rng::tag("walk-order"), round as u64]));
        let walks: Vec<Vec<NodeId>> = order
            .par_iter()
            .map(|&start| {
                let mut r = rng::rng_for(cfg.seed, &[rng::tag("walk"), round as u64, start as u64]);
                let mut walk = Vec::with_capacity(cfg.walk_length);
                walk.push(start);
                let mut cur = start;
                while walk.len() < cfg.walk_length {
                    let nb = g.adj(cur);
                    if nb.is_empty() {
                        break;
                    }
                    cur = nb[r.random_range(0..nb.len())];
                    walk.push(cur);
                }
                walk
            })
            .collect();
        out.extend(walks);
    }
    out
}

#[inline(always)]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f32>() + tail
}

#[inline(always)]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline(always)]
fn sigmoid(x: f32) -> f32 {
    if x > 6.0 {
        1.0
    } else if x < -6.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Node ids repeated in proportion to `freq^0.75`, for O(1) negative sampling.
fn unigram_table(freq: &[f64]) -> Vec<u32> {
    let size = (freq.len() * 100).clamp(1, 1 << 22);
    let weights: Vec<f64> = freq.iter().map(|f| f.powf(0.75)).collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return (0..freq.len() as u32).collect();
    }
    let mut table = Vec::with_capacity(size);
    let mut acc = 0.0;
    for (v, w) in weights.iter().enumerate() {
        acc += w;
        let upto = ((acc / total) * size as f64).round() as usize;
        while table.len() < upto.min(size) {
            table.push(v as u32);
        }
    }
    table
}

struct SkipGram<'a> {
    walks: &'a [Vec<NodeId>],
    table: &'a [u32],
    cfg: &'a DeepWalkConfig,
    d: usize,
}

impl SkipGram<'_> {
    fn run(&self, input: &mut [f32], output: &mut [f32], r: &mut rng::Rng) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { self.run_avx2(input, output, r) };
            return;
        }
        self.run_generic(input, output, r)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn run_avx2(&self, input: &mut [f32], output: &mut [f32], r: &mut rng::Rng) {
        self.run_generic(input, output, r)
    }

    #[inline(always)]
    fn run_generic(&self, input: &mut [f32], output: &mut [f32], r: &mut rng::Rng) {
        let d = self.d;
        let tokens: usize = self.walks.iter().map(Vec::len).sum();
        let total = (tokens * self.cfg.epochs).max(1) as f32;
        let mut processed = 0usize;
        let mut grad = vec![0f32; d];
        for _ in 0..self.cfg.epochs {
            for walk in self.walks {
                for (i, &center) in walk.iter().enumerate() {
                    let lr = (self.cfg.learning_rate * (1.0 - processed as f32 / total))
                        .max(self.cfg.learning_rate * 1e-4);
                    processed += 1;
                    let b = r.random_range(1..=self.cfg.window);
                    let lo = i.saturating_sub(b);
                    let hi = (i + b).min(walk.len() - 1);
                    for (j, &context) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                        if j == i {
                            continue;
                        }
                        grad.iter_mut().for_each(|x| *x = 0.0);
                        let cin = &input[center * d..(center + 1) * d];
                        for k in 0..=self.cfg.negatives {
                            let (target, label) = if k == 0 {
                                (context, 1.0)
                            } else {
                                let t = self.table[(r.next_u32() as usize) % self.table.len()] as usize;
                                if t == context {
                                    continue;
                                }
                                (t, 0.0)
                            };
                            let out = &mut output[target * d..(target + 1) * d];
                            let f = sigmoid(dot(cin, out));
                            let gcoef = (label - f) * lr;
                            axpy(gcoef, out, &mut grad);
                            axpy(gcoef, cin, out);
                        }
                        axpy(1.0, &grad, &mut input[center * d..(center + 1) * d]);
                    }
                }
            }
        }
    }
}

/// Truncated random walks followed by skip-gram with negative sampling.
///
/// Walk generation runs in parallel; the skip-gram pass is sequential so a
/// fixed seed always yields the same table.
pub fn deepwalk_train(g: &TaskGraph, cfg: &DeepWalkConfig) -> Result<Embedding> {
    cfg.validate()?;
    let n = g.num_nodes();
    let d = cfg.dims;
    let mut r = rng::rng_for(cfg.seed, &[rng::tag("skipgram")]);
    let mut input = vec![0f32; n * d];
    for x in input.iter_mut() {
        *x = (r.random::<f32>() - 0.5) / d as f32;
    }
    let mut output = vec![0f32; n * d];

    let walks = random_walks(g, cfg);
    let mut freq = vec![0f64; n];
    for w in &walks {
        for &v in w {
            freq[v] += 1.0;
        }
    }
    let table = unigram_table(&freq);

    let pass = SkipGram {
        walks: &walks,
        table: &table,
        cfg,
        d,
    };
    pass.run(&mut input, &mut output, &mut r);
    let table = Array2::from_shape_vec((n, d), input).expect("shape");
    if table.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("deepwalk embedding".into()));
    }
    Ok(Embedding { table })
}

/// Per-column mean and population standard deviation (Welford).
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnStats {
    pub fn from_rows<'a>(width: usize, rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut count = 0f64;
        let mut mean = vec![0f64; width];
        let mut m2 = vec![0f64; width];
        for row in rows {
            count += 1.0;
            for c in 0..width {
                let delta = row[c] - mean[c];
                mean[c] += delta / count;
                m2[c] += delta * (row[c] - mean[c]);
            }
        }
        let std = m2
            .iter()
            .map(|&s| if count > 0.0 { (s / count).sqrt() } else { 0.0 })
            .collect();
        ColumnStats { mean, std }
    }

    /// Standardizes `x`; zero-variance columns map to 0.
    pub fn apply(&self, c: usize, x: f64) -> f64 {
        if self.std[c] > 1e-12 {
            (x - self.mean[c]) / self.std[c]
        } else {
            0.0
        }
    }
}

/// Model input matrix, `|V| × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    x: Array2<f64>,
}

impl FeatureMatrix {
    pub fn from_array(x: Array2<f64>) -> Self {
        FeatureMatrix { x }
    }

    pub fn num_nodes(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, v: NodeId) -> ArrayView1<'_, f64> {
        self.x.row(v)
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.x
    }
}

/// `[embedding | z(log1p(raw counts))]` with standardization fitted on the
/// train split only.
pub fn build_features(emb: &Embedding, g: &TaskGraph) -> Result<FeatureMatrix> {
    if emb.num_nodes() != g.num_nodes() {
        return Err(Error::Shape(format!(
            "embedding has {} rows, graph has {} nodes",
            emb.num_nodes(),
            g.num_nodes()
        )));
    }
    let w = g.raw_width();
    let n = g.num_nodes();
    let mut logged = Array2::<f64>::zeros((n, w));
    for v in 0..n {
        for (c, &x) in g.raw_row(v).iter().enumerate() {
            if x < 0.0 || !x.is_finite() {
                return Err(Error::Ingest(format!(
                    "node {} has invalid raw count {x}",
                    g.external_id(v)
                )));
            }
            logged[[v, c]] = x.ln_1p();
        }
    }
    let train = g.split_nodes(Split::Train);
    let stats = ColumnStats::from_rows(
        w,
        train.iter().map(|&v| logged.row(v).to_slice().expect("contiguous")),
    );
    for v in 0..n {
        for c in 0..w {
            logged[[v, c]] = stats.apply(c, logged[[v, c]]);
        }
    }
    let emb64 = emb.table.mapv(f64::from);
    let x = concatenate(Axis(1), &[emb64.view(), logged.view()]).map_err(|e| Error::Shape(e.to_string()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature matrix".into()));
    }
    Ok(FeatureMatrix { x })
}
