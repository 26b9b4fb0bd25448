//! Fixed-size ego-graph extraction.
//!
//! Every ego-graph has exactly `n` member slots: the ego at position 0, then
//! real members, then trailing DUMMY slots when the neighbourhood runs out.
//! Dummies carry zero features and no edges. Real members carry self-loops.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph_store::{NodeId, Split, TaskGraph};
use crate::rng;
use crate::util::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingStrategy {
    Bfs,
    Rwr,
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingStrategy::Bfs => "bfs",
            SamplingStrategy::Rwr => "rwr",
        })
    }
}

impl FromStr for SamplingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bfs" => Ok(SamplingStrategy::Bfs),
            "rwr" => Ok(SamplingStrategy::Rwr),
            other => Err(Error::Config(format!("unknown sampling strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub strategy: SamplingStrategy,
    pub ego_size: usize,
    pub restart_prob: f64,
    pub step_cap: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            strategy: SamplingStrategy::Bfs,
            ego_size: 50,
            restart_prob: 0.5,
            step_cap: 500,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn bfs(ego_size: usize) -> Self {
        SamplerConfig {
            ego_size,
            step_cap: 10 * ego_size,
            ..Default::default()
        }
    }

    pub fn rwr(ego_size: usize, restart_prob: f64, seed: u64) -> Self {
        SamplerConfig {
            strategy: SamplingStrategy::Rwr,
            ego_size,
            restart_prob,
            step_cap: 10 * ego_size,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ego_size == 0 {
            return Err(Error::Config("ego_size must be at least 1".into()));
        }
        if self.step_cap < self.ego_size {
            return Err(Error::Config(format!(
                "step_cap {} is smaller than ego_size {}",
                self.step_cap, self.ego_size
            )));
        }
        if !(self.restart_prob > 0.0 && self.restart_prob <= 1.0) {
            return Err(Error::Config(format!(
                "restart_prob {} outside (0, 1]",
                self.restart_prob
            )));
        }
        Ok(())
    }
}

/// Square bit matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl BitMatrix {
    pub fn new(n: usize) -> Self {
        let words = n.div_ceil(64);
        BitMatrix {
            n,
            words,
            bits: vec![0; n * words],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words + j / 64] >> (j % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        let w = &mut self.bits[i * self.words + j / 64];
        if on {
            *w |= 1 << (j % 64);
        } else {
            *w &= !(1 << (j % 64));
        }
    }

    /// Column indices of set bits in row `i`, ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.get(i, j))
    }

    fn to_hex(&self) -> String {
        let mut bytes = vec![0u8; (self.n * self.n).div_ceil(8)];
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) {
                    let k = i * self.n + j;
                    bytes[k / 8] |= 0x80 >> (k % 8);
                }
            }
        }
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn from_hex(n: usize, hex: &str) -> Option<Self> {
        if hex.len() != 2 * (n * n).div_ceil(8) {
            return None;
        }
        let mut m = BitMatrix::new(n);
        for (bi, chunk) in hex.as_bytes().chunks(2).enumerate() {
            let byte = u8::from_str_radix(std::str::from_utf8(chunk).ok()?, 16).ok()?;
            for bit in 0..8 {
                let k = bi * 8 + bit;
                if k < n * n && byte & (0x80 >> bit) != 0 {
                    m.set(k / n, k % n, true);
                }
            }
        }
        Some(m)
    }
}

/// A fixed-size ego-graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoGraph {
    pub task_id: usize,
    pub ego_node: NodeId,
    pub ego_label: u8,
    /// Length `n`; `None` marks a DUMMY slot. Dummies only appear after all real members.
    members: Vec<Option<NodeId>>,
    adjacency: BitMatrix,
    /// Feature rows of the real members, in member order. Dummy rows are implicit zeros.
    features: Option<Array2<f64>>,
}

impl EgoGraph {
    fn build(g: &TaskGraph, ego: NodeId, real: Vec<NodeId>, n: usize) -> Self {
        debug_assert!(real.len() <= n && real[0] == ego);
        let k = real.len();
        let mut adjacency = BitMatrix::new(n);
        for i in 0..k {
            adjacency.set(i, i, true);
            for j in (i + 1)..k {
                if g.has_edge(real[i], real[j]) {
                    adjacency.set(i, j, true);
                    adjacency.set(j, i, true);
                }
            }
        }
        let mut members: Vec<Option<NodeId>> = real.into_iter().map(Some).collect();
        members.resize(n, None);
        EgoGraph {
            task_id: g.task_id(),
            ego_node: ego,
            ego_label: g.label(ego),
            members,
            adjacency,
            features: None,
        }
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[Option<NodeId>] {
        &self.members
    }

    pub fn real_members(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.members.iter().flatten().copied()
    }

    pub fn num_real(&self) -> usize {
        self.members.iter().filter(|m| m.is_some()).count()
    }

    pub fn num_dummies(&self) -> usize {
        self.size() - self.num_real()
    }

    pub fn adjacency(&self) -> &BitMatrix {
        &self.adjacency
    }

    /// Copies the real members' rows out of `x`.
    pub fn attach_features(&mut self, x: &FeatureMatrix) {
        let d = x.dim();
        let k = self.num_real();
        let mut rows = Array2::zeros((k, d));
        for (i, v) in self.real_members().enumerate() {
            rows.row_mut(i).assign(&x.row(v));
        }
        self.features = Some(rows);
    }

    pub fn has_features(&self) -> bool {
        self.features.is_some()
    }

    /// Feature row for member slot `i`; `None` for dummies or when no features are attached.
    pub fn member_feature(&self, i: usize) -> Option<ArrayView1<'_, f64>> {
        let f = self.features.as_ref()?;
        (i < f.nrows()).then(|| f.row(i))
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.features.as_ref().map(|f| f.ncols())
    }

    /// The full `n × d` member feature matrix with all-zero dummy rows.
    pub fn member_features(&self) -> Option<Array2<f64>> {
        let f = self.features.as_ref()?;
        let mut out = Array2::zeros((self.size(), f.ncols()));
        out.slice_mut(ndarray::s![..f.nrows(), ..]).assign(f);
        Some(out)
    }

    /// Approximate heap footprint in bytes.
    pub fn storage_bytes(&self) -> usize {
        self.members.len() * std::mem::size_of::<Option<NodeId>>()
            + self.adjacency.bits.len() * 8
            + self.features.as_ref().map_or(0, |f| f.len() * 8)
    }

    /// Same ego-graph padded with `extra` further dummy slots.
    pub fn padded(&self, extra: usize) -> Self {
        let n = self.size() + extra;
        let mut adjacency = BitMatrix::new(n);
        for i in 0..self.size() {
            for j in self.adjacency.row(i) {
                adjacency.set(i, j, true);
            }
        }
        let mut members = self.members.clone();
        members.resize(n, None);
        EgoGraph {
            members,
            adjacency,
            ..self.clone()
        }
    }
}

fn check_node(g: &TaskGraph, v: NodeId) -> Result<()> {
    if g.contains(v) {
        Ok(())
    } else {
        Err(Error::UnknownNode(v.to_string()))
    }
}

/// Ego plus its `n - 1` nearest nodes by BFS distance; the last, partially
/// included ring is filled in ascending node id.
pub fn bfs_extract(g: &TaskGraph, v: NodeId, cfg: &SamplerConfig) -> Result<EgoGraph> {
    check_node(g, v)?;
    cfg.validate()?;
    let n = cfg.ego_size;
    let mut real = vec![v];
    let mut seen = HashSet::from([v]);
    let mut ring = vec![v];
    while real.len() < n && !ring.is_empty() {
        let mut next: Vec<NodeId> = Vec::new();
        for &u in &ring {
            for &w in g.adj(u) {
                if seen.insert(w) {
                    next.push(w);
                }
            }
        }
        next.sort_unstable();
        let take = (n - real.len()).min(next.len());
        real.extend_from_slice(&next[..take]);
        ring = next;
    }
    Ok(EgoGraph::build(g, v, real, n))
}

/// Random walk with restart from `v`, collecting distinct nodes until `n - 1`
/// are found or `step_cap` steps elapse.
pub fn rwr_extract(g: &TaskGraph, v: NodeId, cfg: &SamplerConfig) -> Result<EgoGraph> {
    check_node(g, v)?;
    cfg.validate()?;
    let n = cfg.ego_size;
    let mut real = vec![v];
    if g.degree(v) > 0 {
        let mut r = rng::rng_for(
            cfg.seed,
            &[rng::tag("rwr"), g.seed(), g.task_id() as u64, v as u64],
        );
        let mut seen = HashSet::from([v]);
        let mut cur = v;
        for _ in 0..cfg.step_cap {
            if real.len() >= n {
                break;
            }
            if r.random::<f64>() < cfg.restart_prob {
                cur = v;
                continue;
            }
            let nb = g.adj(cur);
            cur = nb[r.random_range(0..nb.len())];
            if seen.insert(cur) {
                real.push(cur);
            }
        }
    }
    Ok(EgoGraph::build(g, v, real, n))
}

pub fn extract(g: &TaskGraph, v: NodeId, cfg: &SamplerConfig) -> Result<EgoGraph> {
    match cfg.strategy {
        SamplingStrategy::Bfs => bfs_extract(g, v, cfg),
        SamplingStrategy::Rwr => rwr_extract(g, v, cfg),
    }
}

/// One ego-graph per node tagged `split`, in ascending node order.
pub fn extract_all(g: &TaskGraph, split: Split, cfg: &SamplerConfig) -> Result<Vec<EgoGraph>> {
    cfg.validate()?;
    g.split_nodes(split)
        .into_par_iter()
        .map(|v| extract(g, v, cfg))
        .collect()
}

/// [`extract_all`] followed by attaching feature rows.
pub fn extract_with_features(
    g: &TaskGraph,
    x: &FeatureMatrix,
    split: Split,
    cfg: &SamplerConfig,
) -> Result<Vec<EgoGraph>> {
    let mut egos = extract_all(g, split, cfg)?;
    egos.par_iter_mut().for_each(|e| e.attach_features(x));
    Ok(egos)
}

const DUMMY_TOKEN: &str = "-1";

/// Writes `<prefix>.csv` (`task_id,ego_node,members...`, dense node indices,
/// `-1` for DUMMY) and `<prefix>.adj` (one hex row-major bitmap per record).
/// When every ego-graph has features, `<prefix>.feat` stores the label and the
/// real-member feature rows.
pub fn write_dump(prefix: &Path, egos: &[EgoGraph]) -> Result<()> {
    let mut csv = String::new();
    let mut adj = String::new();
    for e in egos {
        csv.push_str(&format!("{},{}", e.task_id, e.ego_node));
        for m in &e.members {
            match m {
                Some(id) => csv.push_str(&format!(",{id}")),
                None => csv.push_str(&format!(",{DUMMY_TOKEN}")),
            }
        }
        csv.push('\n');
        adj.push_str(&e.adjacency.to_hex());
        adj.push('\n');
    }
    write_atomic(&prefix.with_extension("csv"), csv.as_bytes())?;
    write_atomic(&prefix.with_extension("adj"), adj.as_bytes())?;
    if !egos.is_empty() && egos.iter().all(EgoGraph::has_features) {
        let mut feat = String::new();
        for e in egos {
            let f = e.features.as_ref().expect("checked above");
            feat.push_str(&format!("{},{},{}", e.ego_label, f.nrows(), f.ncols()));
            for x in f.iter() {
                feat.push_str(&format!(",{x}"));
            }
            feat.push('\n');
        }
        write_atomic(&prefix.with_extension("feat"), feat.as_bytes())?;
    }
    Ok(())
}

/// Reads a dump written by [`write_dump`]. Labels and features are restored
/// when the `.feat` file exists; otherwise labels are 0 and no features are attached.
pub fn read_dump(prefix: &Path) -> Result<Vec<EgoGraph>> {
    let open = |ext: &str| {
        let p = prefix.with_extension(ext);
        std::fs::File::open(&p)
            .map(BufReader::new)
            .map_err(|e| Error::io(&p, e))
    };
    let csv_path = prefix.with_extension("csv");
    let adj_path = prefix.with_extension("adj");
    let bad = |path: &Path, line: usize, m: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: m.to_string(),
    };
    let csv_lines: Vec<String> = open("csv")?
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(&csv_path, e))?;
    let adj_lines: Vec<String> = open("adj")?
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(&adj_path, e))?;
    if csv_lines.len() != adj_lines.len() {
        return Err(bad(&adj_path, adj_lines.len(), "record count differs from csv"));
    }
    let feat_path = prefix.with_extension("feat");
    let feat_lines: Option<Vec<String>> = if feat_path.exists() {
        Some(
            open("feat")?
                .lines()
                .collect::<std::io::Result<_>>()
                .map_err(|e| Error::io(&feat_path, e))?,
        )
    } else {
        None
    };
    let mut out = Vec::with_capacity(csv_lines.len());
    for (i, (line, hex)) in csv_lines.iter().zip(&adj_lines).enumerate() {
        let ln = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(bad(&csv_path, ln, "expected task_id,ego_node,members..."));
        }
        let task_id: usize = fields[0].parse().map_err(|_| bad(&csv_path, ln, "bad task id"))?;
        let ego_node: NodeId = fields[1].parse().map_err(|_| bad(&csv_path, ln, "bad ego node"))?;
        let mut members = Vec::with_capacity(fields.len() - 2);
        for f in &fields[2..] {
            if *f == DUMMY_TOKEN {
                members.push(None);
            } else {
                members.push(Some(f.parse().map_err(|_| bad(&csv_path, ln, "bad member id"))?));
            }
        }
        let n = members.len();
        let adjacency =
            BitMatrix::from_hex(n, hex.trim()).ok_or_else(|| bad(&adj_path, ln, "bad bitmap"))?;
        let mut ego = EgoGraph {
            task_id,
            ego_node,
            ego_label: 0,
            members,
            adjacency,
            features: None,
        };
        if let Some(lines) = &feat_lines {
            let fl = lines.get(i).ok_or_else(|| bad(&feat_path, ln, "missing record"))?;
            let vals: Vec<&str> = fl.split(',').collect();
            let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| bad(&feat_path, ln, "bad header"));
            if vals.len() < 3 {
                return Err(bad(&feat_path, ln, "expected label,rows,cols,values..."));
            }
            ego.ego_label = vals[0].parse().map_err(|_| bad(&feat_path, ln, "bad label"))?;
            let (rows, cols) = (parse_usize(vals[1])?, parse_usize(vals[2])?);
            let data: Vec<f64> = vals[3..]
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(&feat_path, ln, "bad value"))?;
            ego.features = Some(
                Array2::from_shape_vec((rows, cols), data)
                    .map_err(|_| bad(&feat_path, ln, "feature shape mismatch"))?,
            );
        }
        out.push(ego);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_store::TaskGraph;

    fn star(leaves: usize) -> TaskGraph {
        let edges: Vec<_> = (1..=leaves).map(|l| (0, l)).collect();
        TaskGraph::from_edges(0, leaves + 1, &edges, 0).unwrap()
    }

    #[test]
    fn star_takes_lowest_leaves() {
        let g = star(60);
        let e = bfs_extract(&g, 0, &SamplerConfig::bfs(50)).unwrap();
        assert_eq!(e.num_dummies(), 0);
        let real: Vec<_> = e.real_members().collect();
        assert_eq!(real, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn path_pads_with_dummies() {
        let g = TaskGraph::from_edges(0, 3, &[(0, 1), (1, 2)], 0).unwrap();
        let e = bfs_extract(&g, 0, &SamplerConfig::bfs(5)).unwrap();
        assert_eq!(e.members(), &[Some(0), Some(1), Some(2), None, None]);
        for d in 3..5 {
            assert_eq!(e.adjacency().row(d).count(), 0);
            for i in 0..5 {
                assert!(!e.adjacency().get(i, d));
            }
        }
        assert!(e.adjacency().get(0, 1) && e.adjacency().get(1, 2) && !e.adjacency().get(0, 2));
        assert!((0..3).all(|i| e.adjacency().get(i, i)));
    }

    #[test]
    fn rwr_isolated_node_is_all_dummies() {
        let g = TaskGraph::from_edges(0, 3, &[(1, 2)], 0).unwrap();
        let e = rwr_extract(&g, 0, &SamplerConfig::rwr(5, 0.5, 1)).unwrap();
        assert_eq!(e.num_real(), 1);
        assert_eq!(e.num_dummies(), 4);
    }

    #[test]
    fn rwr_on_complete_graph_fills_clique() {
        let mut edges = Vec::new();
        for a in 0..10 {
            for b in (a + 1)..10 {
                edges.push((a, b));
            }
        }
        let g = TaskGraph::from_edges(0, 10, &edges, 0).unwrap();
        let cfg = SamplerConfig {
            step_cap: 500,
            ..SamplerConfig::rwr(5, 0.5, 3)
        };
        let e = rwr_extract(&g, 4, &cfg).unwrap();
        assert_eq!(e.num_dummies(), 0);
        for i in 0..5 {
            for j in 0..5 {
                assert!(e.adjacency().get(i, j));
            }
        }
    }

    #[test]
    fn rwr_is_reproducible() {
        let g = star(30);
        let cfg = SamplerConfig::rwr(10, 0.3, 11);
        assert_eq!(rwr_extract(&g, 3, &cfg).unwrap(), rwr_extract(&g, 3, &cfg).unwrap());
    }

    #[test]
    fn unknown_node_errors() {
        let g = star(3);
        assert!(matches!(bfs_extract(&g, 9, &SamplerConfig::bfs(3)), Err(Error::UnknownNode(_))));
        assert!(matches!(
            rwr_extract(&g, 9, &SamplerConfig::rwr(3, 0.5, 0)),
            Err(Error::UnknownNode(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig { ego_size: 0, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { step_cap: 10, ..SamplerConfig::bfs(50) }.validate().is_err());
        assert!(SamplerConfig { restart_prob: 0.0, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { restart_prob: 1.0, ..Default::default() }.validate().is_ok());
    }

    #[test]
    fn extract_all_covers_split() {
        let edges: Vec<_> = (0..7).map(|i| (i, i + 1)).collect();
        let g = TaskGraph::from_edges(0, 8, &edges, 2).unwrap();
        let cfg = SamplerConfig::bfs(4);
        let train = extract_all(&g, Split::Train, &cfg).unwrap();
        assert_eq!(train.len(), g.split_nodes(Split::Train).len());
        assert_eq!(train.len(), 6);
        let again = extract_all(&g, Split::Train, &cfg).unwrap();
        assert_eq!(train, again);
        let tiny = TaskGraph::from_edges(0, 1, &[], 0).unwrap();
        assert!(extract_all(&tiny, Split::Test, &cfg).unwrap().is_empty());
    }

    #[test]
    fn bitmatrix_hex_round_trip() {
        let mut m = BitMatrix::new(7);
        for (i, j) in [(0, 0), (1, 6), (6, 1), (3, 3), (6, 6)] {
            m.set(i, j, true);
        }
        assert_eq!(BitMatrix::from_hex(7, &m.to_hex()).unwrap(), m);
    }

    #[test]
    fn dump_round_trip() {
        let g = star(8);
        let x = FeatureMatrix::from_array(ndarray::Array2::from_shape_fn((9, 3), |(i, j)| (i * 3 + j) as f64 * 0.1));
        let mut egos = extract_all(&g, Split::Train, &SamplerConfig::bfs(6)).unwrap();
        egos.iter_mut().for_each(|e| e.attach_features(&x));
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("egos");
        write_dump(&prefix, &egos).unwrap();
        assert_eq!(read_dump(&prefix).unwrap(), egos);
    }
}
