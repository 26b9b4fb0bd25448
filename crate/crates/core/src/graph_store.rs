//! Task graph ingestion, validation, splits and descriptive statistics.
//!
//! A [`TaskGraph`] is one task's social graph: an undirected, simple graph
//! with dense node indices, per-node raw count features, binary labels and a
//! train/val/test assignment. It is immutable once built.
//!
//! File contract:
//!
//! - edge file: one edge per line, `src<TAB>dst`; `#` starts a comment line.
//! - feature file: a header row, then `node_id,f1,f2,f3[,f4]`.
//! - label file: `node_id,label` with label in {0,1}; an optional header row.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::util::{read_to_string, write_atomic};

pub type NodeId = usize;

pub const TRAIN_FRACTION: f64 = 0.75;
pub const VAL_FRACTION: f64 = 0.125;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("invalid split tag {other:?}"))),
        }
    }
}

/// Counters for input noise that was dropped rather than rejected.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub self_loops_dropped: usize,
    pub duplicates_dropped: usize,
}

/// Raw pieces of a task graph, before validation.
#[derive(Debug, Clone, Default)]
pub struct TaskGraphParts {
    pub task_id: usize,
    pub node_ids: Vec<String>,
    pub feature_names: Vec<String>,
    /// One row per node, in `node_ids` order.
    pub raw_features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    /// Endpoints as dense indices into `node_ids`.
    pub edges: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    task_id: usize,
    node_ids: Vec<String>,
    index: HashMap<String, NodeId>,
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
    feature_names: Vec<String>,
    raw_features: Vec<f64>,
    labels: Vec<u8>,
    splits: Vec<Split>,
    seed: u64,
    report: IngestReport,
}

impl TaskGraph {
    /// Validates `parts` and assigns splits with `seed`.
    ///
    /// Self-loops and duplicate edges are dropped and counted in
    /// [`TaskGraph::ingest_report`].
    pub fn new(parts: TaskGraphParts, seed: u64) -> Result<Self> {
        let n = parts.node_ids.len();
        if n == 0 {
            return Err(Error::Ingest("empty graph".into()));
        }
        if parts.labels.len() != n || parts.raw_features.len() != n {
            return Err(Error::Ingest(format!(
                "{} nodes but {} labels and {} feature rows",
                n,
                parts.labels.len(),
                parts.raw_features.len()
            )));
        }
        let width = parts.feature_names.len();
        if !(3..=4).contains(&width) {
            return Err(Error::Ingest(format!(
                "expected 3 or 4 raw feature columns, got {width}"
            )));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, id) in parts.node_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Ingest(format!("duplicate node id {id}")));
            }
        }
        let mut raw_features = Vec::with_capacity(n * width);
        for (i, row) in parts.raw_features.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Ingest(format!(
                    "node {} has {} feature values, expected {width}",
                    parts.node_ids[i],
                    row.len()
                )));
            }
            for &x in row {
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::Ingest(format!(
                        "node {} has invalid raw count {x}",
                        parts.node_ids[i]
                    )));
                }
            }
            raw_features.extend_from_slice(row);
        }
        for (i, &l) in parts.labels.iter().enumerate() {
            if l > 1 {
                return Err(Error::Ingest(format!(
                    "node {} has label {l}, expected 0 or 1",
                    parts.node_ids[i]
                )));
            }
        }

        let mut report = IngestReport::default();
        let mut seen = HashSet::with_capacity(parts.edges.len());
        let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for &(a, b) in &parts.edges {
            if a >= n || b >= n {
                return Err(Error::Ingest(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                report.self_loops_dropped += 1;
                continue;
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                report.duplicates_dropped += 1;
                continue;
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::with_capacity(2 * seen.len());
        offsets.push(0);
        for mut list in adj {
            list.sort_unstable();
            targets.extend(list);
            offsets.push(targets.len());
        }
        if report.self_loops_dropped + report.duplicates_dropped > 0 {
            log::warn!(
                "task {}: dropped {} self-loops and {} duplicate edges",
                parts.task_id,
                report.self_loops_dropped,
                report.duplicates_dropped
            );
        }

        let splits = assign_splits(&parts.node_ids, seed);
        Ok(TaskGraph {
            task_id: parts.task_id,
            node_ids: parts.node_ids,
            index,
            offsets,
            targets,
            feature_names: parts.feature_names,
            raw_features,
            labels: parts.labels,
            splits,
            seed,
            report,
        })
    }

    /// Graph with ids `"0".."n-1"`, all-zero 4-column raw features and label 0.
    pub fn from_edges(task_id: usize, n: usize, edges: &[(NodeId, NodeId)], seed: u64) -> Result<Self> {
        Self::new(
            TaskGraphParts {
                task_id,
                node_ids: (0..n).map(|i| i.to_string()).collect(),
                feature_names: default_feature_names(4),
                raw_features: vec![vec![0.0; 4]; n],
                labels: vec![0; n],
                edges: edges.to_vec(),
            },
            seed,
        )
    }

    /// Returns a copy with the given labels (splits are unchanged).
    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.num_nodes() || labels.iter().any(|&l| l > 1) {
            return Err(Error::Ingest("label vector does not match graph".into()));
        }
        self.labels = labels;
        Ok(self)
    }

    /// Returns a copy with the given raw feature rows.
    pub fn with_raw_features(mut self, rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.len() != self.num_nodes()
            || !(3..=4).contains(&width)
            || rows.iter().any(|r| r.len() != width || r.iter().any(|&x| !x.is_finite() || x < 0.0))
        {
            return Err(Error::Ingest("raw feature rows do not match graph".into()));
        }
        self.feature_names = default_feature_names(width);
        self.raw_features = rows.into_iter().flatten().collect();
        Ok(self)
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn ingest_report(&self) -> IngestReport {
        self.report
    }

    pub fn external_id(&self, v: NodeId) -> &str {
        &self.node_ids[v]
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn lookup(&self, external: &str) -> Result<NodeId> {
        self.index
            .get(external)
            .copied()
            .ok_or_else(|| Error::UnknownNode(external.to_string()))
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v < self.num_nodes()
    }

    /// Ascending neighbor list of `v`.
    pub fn neighbors(&self, v: NodeId) -> Result<&[NodeId]> {
        if !self.contains(v) {
            return Err(Error::UnknownNode(v.to_string()));
        }
        Ok(self.adj(v))
    }

    /// Unchecked variant of [`TaskGraph::neighbors`]; panics on out-of-range `v`.
    #[inline]
    pub fn adj(&self, v: NodeId) -> &[NodeId] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adj(a).binary_search(&b).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.adj(u).iter().copied().filter(move |&v| v > u).map(move |v| (u, v))
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn raw_width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn raw_row(&self, v: NodeId) -> &[f64] {
        let w = self.raw_width();
        &self.raw_features[v * w..(v + 1) * w]
    }

    pub fn label(&self, v: NodeId) -> u8 {
        self.labels[v]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn split(&self, v: NodeId) -> Split {
        self.splits[v]
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Nodes carrying `split`, ascending.
    pub fn split_nodes(&self, split: Split) -> Vec<NodeId> {
        (0..self.num_nodes()).filter(|&v| self.splits[v] == split).collect()
    }

    pub fn stats(&self) -> GraphStats {
        compute_stats(self)
    }

    /// Writes the edge, feature and label files that [`load_task_graph`] reads.
    pub fn export(&self, edge_file: &Path, feature_file: &Path, label_file: &Path) -> Result<()> {
        let mut edges = String::from("# src\tdst\n");
        for (u, v) in self.edges() {
            edges.push_str(&format!("{}\t{}\n", self.node_ids[u], self.node_ids[v]));
        }
        let mut feats = format!("node_id,{}\n", self.feature_names.join(","));
        let mut labels = String::from("node_id,label\n");
        for v in 0..self.num_nodes() {
            let row: Vec<String> = self.raw_row(v).iter().map(|x| format!("{x}")).collect();
            feats.push_str(&format!("{},{}\n", self.node_ids[v], row.join(",")));
            labels.push_str(&format!("{},{}\n", self.node_ids[v], self.labels[v]));
        }
        write_atomic(edge_file, edges.as_bytes())?;
        write_atomic(feature_file, feats.as_bytes())?;
        write_atomic(label_file, labels.as_bytes())
    }
}

pub fn default_feature_names(width: usize) -> Vec<String> {
    ["follower", "following", "tweet", "listed"][..width.min(4)]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Numeric order when every id parses as an integer, lexicographic otherwise.
fn canonical_order(ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    let numeric: Option<Vec<i128>> = ids.iter().map(|s| s.parse::<i128>().ok()).collect();
    match numeric {
        Some(keys) => order.sort_by_key(|&i| keys[i]),
        None => order.sort_by(|&a, &b| ids[a].cmp(&ids[b])),
    }
    order
}

/// Split tags from a seeded shuffle of the canonically ordered node set.
fn assign_splits(ids: &[String], seed: u64) -> Vec<Split> {
    let n = ids.len();
    let mut order = canonical_order(ids);
    let mut r = rng::rng_for(seed, &[rng::tag("splits")]);
    order.shuffle(&mut r);
    let (n_train, n_val) = split_sizes(n);
    let mut splits = vec![Split::Test; n];
    for (pos, &v) in order.iter().enumerate() {
        splits[v] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

/// Train and validation sizes for `n` nodes; the rest is test.
pub fn split_sizes(n: usize) -> (usize, usize) {
    let n_train = (TRAIN_FRACTION * n as f64).round() as usize;
    let n_val = ((VAL_FRACTION * n as f64).round() as usize).min(n - n_train);
    (n_train, n_val)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub num_nodes: usize,
    pub num_links: usize,
    pub avg_degree: f64,
    pub pos_label_pct: f64,
}

impl GraphStats {
    pub fn from_counts(num_nodes: usize, num_links: usize, num_positive: usize) -> Self {
        let (avg_degree, pos_label_pct) = if num_nodes == 0 {
            (0.0, 0.0)
        } else {
            (
                2.0 * num_links as f64 / num_nodes as f64,
                100.0 * num_positive as f64 / num_nodes as f64,
            )
        };
        GraphStats {
            num_nodes,
            num_links,
            avg_degree,
            pos_label_pct,
        }
    }
}

pub fn compute_stats(g: &TaskGraph) -> GraphStats {
    let positives = g.labels.iter().filter(|&&l| l == 1).count();
    GraphStats::from_counts(g.num_nodes(), g.num_edges(), positives)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Loads one task graph from its three files and assigns splits with `seed`.
pub fn load_task_graph(
    task_id: usize,
    edge_file: &Path,
    feature_file: &Path,
    label_file: &Path,
    seed: u64,
) -> Result<TaskGraph> {
    let feat_text = read_to_string(feature_file)?;
    let mut lines = data_lines(&feat_text);
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Ingest(format!("{} has no header", feature_file.display())))?;
    let header: Vec<&str> = header.split(',').map(str::trim).collect();
    if !(4..=5).contains(&header.len()) {
        return Err(parse_err(
            feature_file,
            1,
            format!("header must be node_id plus 3 or 4 columns, got {} fields", header.len()),
        ));
    }
    let feature_names: Vec<String> = header[1..].iter().map(|s| s.to_string()).collect();
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    for (ln, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(parse_err(
                feature_file,
                ln,
                format!("expected {} fields, got {}", header.len(), fields.len()),
            ));
        }
        let mut vals = Vec::with_capacity(fields.len() - 1);
        for f in &fields[1..] {
            let x: f64 = f
                .parse()
                .map_err(|_| parse_err(feature_file, ln, format!("bad number {f:?}")))?;
            if !x.is_finite() || x < 0.0 {
                return Err(Error::Ingest(format!(
                    "node {} has negative or non-finite raw count {x}",
                    fields[0]
                )));
            }
            vals.push(x);
        }
        rows.push((fields[0].to_string(), vals));
    }

    let label_text = read_to_string(label_file)?;
    let mut label_map: HashMap<String, u8> = HashMap::new();
    for (ln, line) in data_lines(&label_text) {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(parse_err(label_file, ln, "expected node_id,label"));
        }
        let label = match fields[1] {
            "0" => 0u8,
            "1" => 1u8,
            _ if label_map.is_empty() && ln == 1 => continue,
            other => return Err(parse_err(label_file, ln, format!("label {other:?} is not 0 or 1"))),
        };
        label_map.insert(fields[0].to_string(), label);
    }

    let ids: Vec<String> = rows.iter().map(|(id, _)| id.clone()).collect();
    let order = canonical_order(&ids);
    let mut parts = TaskGraphParts {
        task_id,
        feature_names,
        ..Default::default()
    };
    let mut index: HashMap<String, NodeId> = HashMap::with_capacity(ids.len());
    for &i in &order {
        let (id, vals) = &rows[i];
        let label = *label_map
            .get(id)
            .ok_or_else(|| Error::Ingest(format!("node {id} has no label")))?;
        if index.insert(id.clone(), parts.node_ids.len()).is_some() {
            return Err(Error::Ingest(format!("duplicate node id {id} in feature file")));
        }
        parts.node_ids.push(id.clone());
        parts.raw_features.push(vals.clone());
        parts.labels.push(label);
    }
    if let Some(extra) = label_map.keys().find(|k| !index.contains_key(*k)) {
        return Err(Error::Ingest(format!("node {extra} has a label but no features")));
    }

    let edge_text = read_to_string(edge_file)?;
    for (ln, line) in data_lines(&edge_text) {
        // ids may contain spaces when the separator is a tab
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
            return Err(parse_err(edge_file, ln, "expected src<TAB>dst"));
        }
        let mut ends = [0usize; 2];
        for (slot, name) in ends.iter_mut().zip(&fields) {
            *slot = *index.get(*name).ok_or_else(|| {
                Error::Ingest(format!(
                    "edge endpoint {name} (line {ln}) missing from feature or label file"
                ))
            })?;
        }
        parts.edges.push((ends[0], ends[1]));
    }
    TaskGraph::new(parts, seed)
}
