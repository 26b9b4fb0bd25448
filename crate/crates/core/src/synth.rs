//! Synthetic task streams: stochastic block model graphs with latent node
//! attributes, lognormal count features and a drifting label rule.
//!
//! Each node has a latent vector `z = μ_t + c_b + ξ`, where `μ_t` is a task
//! offset, `c_b` the centre of its block and `ξ` unit noise. Raw counts are
//! `exp(m + s·(M z) + σ·ε)` for a fixed mixing matrix `M`. A node's label score
//! mixes its own `w_t·z` with the mean over its neighbours; the top fraction
//! becomes positive and `label_noise` of all labels are flipped.
//!
//! Between tasks, `drift` controls how much changes: that fraction of the
//! rule coordinates and block centres is redrawn, and the task offset moves
//! proportionally. With `drift = 0` every task is drawn from one distribution.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_store::{compute_stats, default_feature_names, GraphStats, NodeId, TaskGraph, TaskGraphParts};
use crate::rng::{self, Rng};
use crate::util::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelRule {
    /// Thresholded linear score over latent attributes, mixed with neighbours.
    Linear,
    /// Label is the block index modulo 2.
    Block,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_tasks: usize,
    pub nodes_per_task: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub label_rule: LabelRule,
    /// Weight of the neighbour mean in the label score.
    pub homophily: f64,
    pub drift: f64,
    pub label_noise: f64,
    /// Target fraction of positive labels after noise.
    pub positive_rate: f64,
    /// 3 or 4 raw count columns.
    pub raw_width: usize,
    pub latent_dim: usize,
    /// Spread of block centres around the task offset.
    pub block_spread: f64,
    /// Spread of the task offsets (scaled by `drift`).
    pub task_shift: f64,
    /// Gain of the latent signal in log counts.
    pub feature_gain: f64,
    /// Noise of the log counts.
    pub feature_noise: f64,
    /// Noise added to the label score before thresholding.
    pub score_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_tasks: 5,
            nodes_per_task: 2000,
            blocks: 10,
            p_in: 0.012,
            p_out: 0.0003,
            label_rule: LabelRule::Linear,
            homophily: 0.5,
            drift: 0.5,
            label_noise: 0.02,
            positive_rate: 0.3,
            raw_width: 4,
            latent_dim: 4,
            block_spread: 1.0,
            task_shift: 1.5,
            feature_gain: 0.8,
            feature_noise: 0.3,
            score_noise: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Expected degree of a node under the block model.
    pub fn expected_degree(&self) -> f64 {
        let n = self.nodes_per_task as f64;
        if n == 0.0 {
            return 0.0;
        }
        let sizes = block_sizes(self.nodes_per_task, self.blocks.max(1));
        let within: f64 = sizes.iter().map(|&s| (s * s.saturating_sub(1)) as f64).sum();
        let all = n * (n - 1.0);
        (within * self.p_in + (all - within) * self.p_out) / n
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_tasks == 0 || self.nodes_per_task == 0 || self.blocks == 0 {
            return bad("num_tasks, nodes_per_task and blocks must be positive".into());
        }
        if self.blocks > self.nodes_per_task {
            return bad(format!("{} blocks for {} nodes", self.blocks, self.nodes_per_task));
        }
        if !(self.p_in > self.p_out && self.p_out > 0.0 && self.p_in <= 1.0) {
            return bad(format!("need 1 >= p_in > p_out > 0, got p_in={} p_out={}", self.p_in, self.p_out));
        }
        if !(0.0..=1.0).contains(&self.drift) {
            return bad(format!("drift {} outside [0, 1]", self.drift));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad(format!("label_noise {} outside [0, 0.5)", self.label_noise));
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            return bad(format!("homophily {} outside [0, 1]", self.homophily));
        }
        if !(self.positive_rate > self.label_noise && self.positive_rate < 1.0 - self.label_noise) {
            return bad(format!(
                "positive_rate {} unreachable with label_noise {}",
                self.positive_rate, self.label_noise
            ));
        }
        if !(3..=4).contains(&self.raw_width) || self.latent_dim == 0 {
            return bad("raw_width must be 3 or 4 and latent_dim positive".into());
        }
        let spreads = [self.block_spread, self.task_shift, self.feature_gain, self.feature_noise, self.score_noise];
        if spreads.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("spreads, gains and noises must be finite and non-negative".into());
        }
        let deg = self.expected_degree();
        if deg < 1.0 {
            return bad(format!("expected degree {deg:.3} is below 1"));
        }
        Ok(())
    }
}

fn block_sizes(n: usize, blocks: usize) -> Vec<usize> {
    (0..blocks).map(|b| n / blocks + usize::from(b < n % blocks)).collect()
}

fn normal_vec(r: &mut Rng, k: usize, scale: f64) -> Vec<f64> {
    (0..k).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, r)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-task generative parameters, evolved sequentially.
#[derive(Debug, Clone)]
struct TaskLaw {
    rule: Vec<f64>,
    offset: Vec<f64>,
    centres: Vec<Vec<f64>>,
}

fn evolve_laws(cfg: &SynthConfig) -> Vec<TaskLaw> {
    let k = cfg.latent_dim;
    let mut r = rng::rng_for(cfg.seed, &[rng::tag("synth-law")]);
    let mut law = TaskLaw {
        rule: unit(normal_vec(&mut r, k, 1.0)),
        offset: vec![0.0; k],
        centres: (0..cfg.blocks).map(|_| normal_vec(&mut r, k, cfg.block_spread)).collect(),
    };
    let mut laws = vec![law.clone()];
    let n_coords = (cfg.drift * k as f64).round() as usize;
    let n_centres = (cfg.drift * cfg.blocks as f64).round() as usize;
    for _ in 1..cfg.num_tasks {
        let mut coords: Vec<usize> = (0..k).collect();
        coords.shuffle(&mut r);
        let mut rule = law.rule.clone();
        for &c in &coords[..n_coords] {
            rule[c] = StandardNormal.sample(&mut r);
        }
        law.rule = unit(rule);
        law.offset = normal_vec(&mut r, k, cfg.drift * cfg.task_shift);
        let mut blocks: Vec<usize> = (0..cfg.blocks).collect();
        blocks.shuffle(&mut r);
        for &b in &blocks[..n_centres] {
            law.centres[b] = normal_vec(&mut r, k, cfg.block_spread);
        }
        laws.push(law.clone());
    }
    laws
}

/// Fixed map from latent attributes to log counts, shared by all tasks.
fn mixing(cfg: &SynthConfig) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut r = rng::rng_for(cfg.seed, &[rng::tag("synth-mixing")]);
    let rows = (0..cfg.raw_width)
        .map(|_| unit(normal_vec(&mut r, cfg.latent_dim, 1.0)))
        .collect();
    // typical magnitudes: followers, following, tweets, listed
    let base = [4.0, 5.0, 6.0, 1.0][..cfg.raw_width].to_vec();
    (rows, base)
}

fn sample_edges(cfg: &SynthConfig, block: &[usize], r: &mut Rng) -> Vec<(NodeId, NodeId)> {
    let n = block.len();
    let mut edges = Vec::new();
    // geometric skipping over the upper triangle, separately per probability
    for (p, same) in [(cfg.p_in, true), (cfg.p_out, false)] {
        let log_q = (1.0 - p).ln();
        let mut idx: i64 = -1;
        let total = (n * (n - 1) / 2) as i64;
        loop {
            let u: f64 = r.random::<f64>();
            let skip = if p >= 1.0 { 0 } else { ((1.0 - u).ln() / log_q).floor() as i64 };
            idx += 1 + skip;
            if idx >= total {
                break;
            }
            let (a, b) = pair_from_index(idx as usize, n);
            if (block[a] == block[b]) == same {
                edges.push((a, b));
            }
        }
    }
    edges.sort_unstable();
    edges
}

/// Inverse of the row-major enumeration of pairs `a < b`.
fn pair_from_index(idx: usize, n: usize) -> (usize, usize) {
    // row a holds n - 1 - a pairs
    let nf = n as f64;
    let mut a = ((2.0 * nf - 1.0 - ((2.0 * nf - 1.0).powi(2) - 8.0 * idx as f64).sqrt()) / 2.0).floor() as usize;
    let start = |a: usize| a * (2 * n - a - 1) / 2;
    while a > 0 && start(a) > idx {
        a -= 1;
    }
    while start(a + 1) <= idx {
        a += 1;
    }
    (a, a + 1 + idx - start(a))
}

fn generate_task(cfg: &SynthConfig, task: usize, law: &TaskLaw, mix: &(Vec<Vec<f64>>, Vec<f64>)) -> Result<TaskGraph> {
    let n = cfg.nodes_per_task;
    let k = cfg.latent_dim;
    let mut r = rng::rng_for(cfg.seed, &[rng::tag("synth-task"), task as u64]);
    let mut block: Vec<usize> = block_sizes(n, cfg.blocks)
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    block.shuffle(&mut r);
    let edges = sample_edges(cfg, &block, &mut r);
    let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for &(a, b) in &edges {
        adj[a].push(b);
        adj[b].push(a);
    }

    let latent: Vec<Vec<f64>> = (0..n)
        .map(|v| {
            let noise = normal_vec(&mut r, k, 1.0);
            (0..k).map(|c| law.offset[c] + law.centres[block[v]][c] + noise[c]).collect()
        })
        .collect();

    let (rows, base) = mix;
    let raw: Vec<Vec<f64>> = latent
        .iter()
        .map(|z| {
            rows.iter()
                .zip(base)
                .map(|(m, b)| {
                    let eps: f64 = StandardNormal.sample(&mut r);
                    (b + cfg.feature_gain * dot(m, z) + cfg.feature_noise * eps).exp().floor()
                })
                .collect()
        })
        .collect();

    let mut labels: Vec<u8> = match cfg.label_rule {
        LabelRule::Block => block.iter().map(|b| (b % 2) as u8).collect(),
        LabelRule::Linear => {
            let own: Vec<f64> = latent.iter().map(|z| dot(&law.rule, z)).collect();
            let score: Vec<f64> = (0..n)
                .map(|v| {
                    let nb = if adj[v].is_empty() {
                        own[v]
                    } else {
                        adj[v].iter().map(|&u| own[u]).sum::<f64>() / adj[v].len() as f64
                    };
                    let eps: f64 = StandardNormal.sample(&mut r);
                    (1.0 - cfg.homophily) * own[v] + cfg.homophily * nb + cfg.score_noise * eps
                })
                .collect();
            // fraction before flips so that the rate after flips hits the target
            let q = (cfg.positive_rate - cfg.label_noise) / (1.0 - 2.0 * cfg.label_noise);
            let n_pos = (q * n as f64).round() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
            let mut labels = vec![0u8; n];
            for &v in &order[..n_pos] {
                labels[v] = 1;
            }
            labels
        }
    };
    for l in labels.iter_mut() {
        if r.random::<f64>() < cfg.label_noise {
            *l = 1 - *l;
        }
    }

    TaskGraph::new(
        TaskGraphParts {
            task_id: task,
            node_ids: (0..n).map(|v| v.to_string()).collect(),
            feature_names: default_feature_names(cfg.raw_width),
            raw_features: raw,
            labels,
            edges,
        },
        rng::derive_seed(cfg.seed, &[rng::tag("splits"), task as u64]),
    )
}

/// Generates `num_tasks` graphs; task ids are `1..=num_tasks`.
pub fn generate_task_stream(cfg: &SynthConfig) -> Result<Vec<TaskGraph>> {
    cfg.validate()?;
    let laws = evolve_laws(cfg);
    let mix = mixing(cfg);
    laws.par_iter()
        .enumerate()
        .map(|(i, law)| generate_task(cfg, i + 1, law, &mix))
        .collect()
}

/// Files written for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
}

impl TaskFiles {
    pub fn in_dir(dir: &Path, task: usize) -> Self {
        TaskFiles {
            edges: dir.join(format!("task_{task}.edges")),
            features: dir.join(format!("task_{task}.features.csv")),
            labels: dir.join(format!("task_{task}.labels.csv")),
        }
    }
}

/// Writes each task's edge, feature and label files into `dir`.
pub fn write_stream(dir: &Path, stream: &[TaskGraph]) -> Result<Vec<TaskFiles>> {
    stream
        .iter()
        .map(|g| {
            let files = TaskFiles::in_dir(dir, g.task_id());
            g.export(&files.edges, &files.features, &files.labels)?;
            Ok(files)
        })
        .collect()
}

/// One [`GraphStats`] row per task.
pub fn summarize(stream: &[TaskGraph]) -> Vec<GraphStats> {
    stream.iter().map(compute_stats).collect()
}

/// CSV of per-task statistics: nodes, links, average degree, positive-label percentage.
pub fn stats_csv(stream: &[TaskGraph]) -> String {
    let mut s = String::from("task,num_nodes,num_links,avg_degree,pos_label_pct\n");
    for (g, st) in stream.iter().zip(summarize(stream)) {
        s.push_str(&format!(
            "{},{},{},{:.3},{:.2}\n",
            g.task_id(),
            st.num_nodes,
            st.num_links,
            st.avg_degree,
            st.pos_label_pct
        ));
    }
    s
}

/// Writes the stream plus `stats.csv` into `dir`.
pub fn emit(dir: &Path, stream: &[TaskGraph]) -> Result<Vec<TaskFiles>> {
    let files = write_stream(dir, stream)?;
    write_atomic(&dir.join("stats.csv"), stats_csv(stream).as_bytes())?;
    Ok(files)
}

/// Fraction of edges whose endpoints share a label.
pub fn edge_homophily(g: &TaskGraph) -> f64 {
    let (mut same, mut total) = (0usize, 0usize);
    for (a, b) in g.edges() {
        total += 1;
        same += usize::from(g.label(a) == g.label(b));
    }
    if total == 0 {
        0.0
    } else {
        same as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_tasks: 3,
            nodes_per_task: 400,
            blocks: 4,
            p_in: 0.025,
            p_out: 0.001,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn pair_index_round_trip() {
        for n in [2usize, 3, 7, 50] {
            let mut idx = 0;
            for a in 0..n {
                for b in a + 1..n {
                    assert_eq!(pair_from_index(idx, n), (a, b));
                    idx += 1;
                }
            }
        }
    }

    #[test]
    fn same_seed_same_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        for run in ["a", "b"] {
            let s = generate_task_stream(&cfg).unwrap();
            emit(&dir.path().join(run), &s).unwrap();
        }
        for t in 1..=3 {
            for name in [format!("task_{t}.edges"), format!("task_{t}.features.csv"), format!("task_{t}.labels.csv")] {
                let a = std::fs::read(dir.path().join("a").join(&name)).unwrap();
                let b = std::fs::read(dir.path().join("b").join(&name)).unwrap();
                assert_eq!(a, b, "{name}");
            }
        }
    }

    #[test]
    fn files_reload_to_same_graph() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_task_stream(&small()).unwrap();
        let files = write_stream(dir.path(), &s).unwrap();
        for (g, f) in s.iter().zip(&files) {
            let back = crate::graph_store::load_task_graph(g.task_id(), &f.edges, &f.features, &f.labels, g.seed()).unwrap();
            assert_eq!(&back, g);
        }
    }

    #[test]
    fn block_labels_are_homophilous() {
        let cfg = SynthConfig {
            num_tasks: 1,
            nodes_per_task: 400,
            blocks: 2,
            p_in: 0.05,
            p_out: 0.005,
            label_rule: LabelRule::Block,
            label_noise: 0.0,
            positive_rate: 0.5,
            ..SynthConfig::default()
        };
        let g = &generate_task_stream(&cfg).unwrap()[0];
        // oracle: count same-label edges directly
        let mut same = 0;
        let mut total = 0;
        for a in 0..g.num_nodes() {
            for &b in g.adj(a) {
                if a < b {
                    total += 1;
                    same += (g.label(a) == g.label(b)) as usize;
                }
            }
        }
        let h = same as f64 / total as f64;
        assert!(h > 0.8, "homophily {h}");
        assert_eq!(edge_homophily(g), h);
    }

    #[test]
    fn degree_matches_expectation() {
        let cfg = SynthConfig::default();
        let stream = generate_task_stream(&SynthConfig { num_tasks: 2, ..cfg.clone() }).unwrap();
        let expected = cfg.expected_degree();
        // binomial expectation computed directly from the block sizes
        let n = cfg.nodes_per_task as f64;
        let s = (cfg.nodes_per_task / cfg.blocks) as f64;
        let pairs_in = cfg.blocks as f64 * s * (s - 1.0) / 2.0;
        let pairs_out = n * (n - 1.0) / 2.0 - pairs_in;
        let oracle = 2.0 * (pairs_in * cfg.p_in + pairs_out * cfg.p_out) / n;
        assert!((expected - oracle).abs() < 1e-9);
        for st in summarize(&stream) {
            assert!((st.avg_degree - oracle).abs() <= 0.2 * oracle, "{} vs {oracle}", st.avg_degree);
        }
    }

    #[test]
    fn positive_rate_near_target() {
        for rate in [0.05, 0.3, 0.6] {
            let cfg = SynthConfig { positive_rate: rate, label_noise: 0.03, ..small() };
            for st in summarize(&generate_task_stream(&cfg).unwrap()) {
                assert!((st.pos_label_pct / 100.0 - rate).abs() <= 0.05, "{rate}: {}", st.pos_label_pct);
            }
        }
    }

    #[test]
    fn summary_matches_compute_stats() {
        let s = generate_task_stream(&small()).unwrap();
        let rows = summarize(&s);
        assert_eq!(rows.len(), 3);
        for (g, st) in s.iter().zip(rows) {
            assert_eq!(st, compute_stats(g));
        }
        assert_eq!(stats_csv(&s).lines().count(), 4);
    }

    #[test]
    fn degenerate_configs_rejected() {
        let sparse = SynthConfig { p_in: 0.002, p_out: 0.0001, ..SynthConfig::default() };
        assert!(matches!(sparse.validate(), Err(Error::Config(m)) if m.contains("below 1")));
        assert!(SynthConfig { p_out: 0.02, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { drift: 1.5, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { label_noise: 0.5, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig::default().validate().is_ok());
    }

    #[test]
    fn zero_drift_keeps_the_law() {
        let cfg = SynthConfig { drift: 0.0, ..small() };
        let laws = evolve_laws(&cfg);
        for l in &laws[1..] {
            assert_eq!(l.rule, laws[0].rule);
            assert_eq!(l.centres, laws[0].centres);
            assert!(l.offset.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn three_column_schema() {
        let cfg = SynthConfig { raw_width: 3, ..small() };
        let s = generate_task_stream(&cfg).unwrap();
        assert_eq!(s[0].raw_width(), 3);
        assert!(s.iter().all(|g| (0..g.num_nodes()).all(|v| g.raw_row(v).iter().all(|&x| x >= 0.0))));
    }
}
