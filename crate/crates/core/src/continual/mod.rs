//! Task-stream runner: EgoCL, node replay, EWC, ER-MF, naive incremental
//! training and the fully retrained reference.

pub mod ewc;
pub mod replay;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ego_sampler::{extract_with_features, SamplerConfig, SamplingStrategy};
use crate::error::{Error, Result};
use crate::features::{build_features, deepwalk_train, DeepWalkConfig, FeatureMatrix};
use crate::graph_store::{NodeId, Split, TaskGraph};
use crate::metrics::{auc, AucMatrix, ResourceReport};
use crate::nn::{checkpoint, ego_block, Adam, Arch, GraphBatch, Learner, ModelConfig, ParamSet, TrainConfig};
use crate::rng::{self, tag};

pub use ewc::EwcState;
pub use replay::{er_mf_select, replay_budget, NodeStore, ReplayStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Incremental,
    EgoCl,
    NodeReplay,
    Ewc,
    ErMf,
    FullRetrain,
}

impl Strategy {
    fn name(self) -> &'static str {
        match self {
            Strategy::Incremental => "incremental",
            Strategy::EgoCl => "egocl",
            Strategy::NodeReplay => "node-replay",
            Strategy::Ewc => "ewc",
            Strategy::ErMf => "er-mf",
            Strategy::FullRetrain => "retrain",
        }
    }

    pub fn uses_replay_rate(self) -> bool {
        matches!(self, Strategy::EgoCl | Strategy::NodeReplay | Strategy::ErMf)
    }
}

/// What the classifier sees: fixed-size ego-graphs, or the whole task graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Input {
    Ego(SamplingStrategy),
    Full,
}

/// A continual strategy with its input mode and architecture.
///
/// Labels read `<strategy>[-bfs|-rwr|-full][-gat|-gcn]`, e.g. `egocl-bfs`,
/// `incremental-full-gcn`, `ewc`. Replay-free ego methods default to BFS;
/// node replay, EWC and ER-MF are full-graph only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Method {
    pub strategy: Strategy,
    pub input: Input,
    pub arch: Arch,
}

impl Method {
    pub fn new(strategy: Strategy, input: Input, arch: Arch) -> Result<Self> {
        let full_only = matches!(strategy, Strategy::NodeReplay | Strategy::Ewc | Strategy::ErMf);
        match (full_only, input) {
            (true, Input::Ego(_)) => Err(Error::Config(format!(
                "{} needs the entire graph as input",
                strategy.name()
            ))),
            (false, Input::Full) if strategy == Strategy::EgoCl => {
                Err(Error::Config("egocl replays ego-graphs and needs ego input".into()))
            }
            _ => Ok(Method { strategy, input, arch }),
        }
    }

    pub fn egocl(s: SamplingStrategy) -> Self {
        Method { strategy: Strategy::EgoCl, input: Input::Ego(s), arch: Arch::Gat }
    }

    pub fn incremental(input: Input) -> Self {
        Method { strategy: Strategy::Incremental, input, arch: Arch::Gat }
    }

    pub fn full(strategy: Strategy) -> Result<Self> {
        Method::new(strategy, Input::Full, Arch::Gat)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.strategy.name())?;
        let full_only = matches!(self.strategy, Strategy::NodeReplay | Strategy::Ewc | Strategy::ErMf);
        match self.input {
            Input::Ego(SamplingStrategy::Bfs) => f.write_str("-bfs")?,
            Input::Ego(SamplingStrategy::Rwr) => f.write_str("-rwr")?,
            Input::Full if !full_only => f.write_str("-full")?,
            Input::Full => {}
        }
        if self.arch == Arch::Gcn {
            f.write_str("-gcn")?;
        }
        Ok(())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let strategies = [
            Strategy::NodeReplay,
            Strategy::ErMf,
            Strategy::Incremental,
            Strategy::EgoCl,
            Strategy::Ewc,
            Strategy::FullRetrain,
        ];
        let (strategy, rest) = strategies
            .iter()
            .find_map(|&st| s.strip_prefix(st.name()).map(|rest| (st, rest)))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))?;
        let full_only = matches!(strategy, Strategy::NodeReplay | Strategy::Ewc | Strategy::ErMf);
        let mut input = if full_only { Input::Full } else { Input::Ego(SamplingStrategy::Bfs) };
        let mut arch = Arch::Gat;
        for part in rest.split('-').filter(|p| !p.is_empty()) {
            match part {
                "bfs" => input = Input::Ego(SamplingStrategy::Bfs),
                "rwr" => input = Input::Ego(SamplingStrategy::Rwr),
                "full" => input = Input::Full,
                other => arch = other.parse().map_err(|_| Error::Config(format!("unknown method {s:?}")))?,
            }
        }
        Method::new(strategy, input, arch)
    }
}

/// Static (single-task) methods: `gat`/`gcn` on the full graph, `ego-bfs[-gcn]`, `ego-rwr[-gcn]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StaticMethod {
    pub input: Input,
    pub arch: Arch,
}

impl fmt::Display for StaticMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.input {
            Input::Full => write!(f, "{}", self.arch)?,
            Input::Ego(SamplingStrategy::Bfs) => f.write_str("ego-bfs")?,
            Input::Ego(SamplingStrategy::Rwr) => f.write_str("ego-rwr")?,
        }
        match (self.input, self.arch) {
            (Input::Ego(_), Arch::Gcn) => f.write_str("-gcn"),
            _ => Ok(()),
        }
    }
}

impl FromStr for StaticMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let bad = || Error::Config(format!("unknown static method {s:?}"));
        if let Ok(arch) = s.parse::<Arch>() {
            return Ok(StaticMethod { input: Input::Full, arch });
        }
        let rest = s.strip_prefix("ego-").ok_or_else(bad)?;
        let mut parts = rest.split('-');
        let input = match parts.next() {
            Some("bfs") => Input::Ego(SamplingStrategy::Bfs),
            Some("rwr") => Input::Ego(SamplingStrategy::Rwr),
            _ => return Err(bad()),
        };
        let arch = match parts.next() {
            None => Arch::Gat,
            Some(a) => a.parse().map_err(|_| bad())?,
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(StaticMethod { input, arch })
    }
}

/// One task graph with its feature matrix.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub graph: Arc<TaskGraph>,
    pub x: Arc<FeatureMatrix>,
}

/// Trains the task's DeepWalk embedding (seeded per task) and builds its features.
pub fn prepare_task(g: TaskGraph, dw: &DeepWalkConfig) -> Result<PreparedTask> {
    let cfg = DeepWalkConfig {
        seed: rng::derive_seed(dw.seed, &[tag("deepwalk"), g.task_id() as u64]),
        ..dw.clone()
    };
    let emb = deepwalk_train(&g, &cfg)?;
    let x = build_features(&emb, &g)?;
    Ok(PreparedTask {
        graph: Arc::new(g),
        x: Arc::new(x),
    })
}

/// Validates the stream ordering and prepares every task.
pub fn prepare_stream(stream: Vec<TaskGraph>, dw: &DeepWalkConfig) -> Result<Vec<PreparedTask>> {
    validate_stream(&stream)?;
    stream.into_iter().map(|g| prepare_task(g, dw)).collect()
}

/// `N ≥ 1` and strictly increasing task ids.
pub fn validate_stream(stream: &[TaskGraph]) -> Result<()> {
    if stream.is_empty() {
        return Err(Error::Config("task stream is empty".into()));
    }
    if stream.windows(2).any(|w| w[0].task_id() >= w[1].task_id()) {
        return Err(Error::Config("task ids must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    /// Replay rate `r` for EgoCL, node replay and ER-MF.
    pub replay_rate: Option<f64>,
    /// EWC strength; used only by EWC.
    pub ewc_lambda: Option<f64>,
    pub seed: u64,
    /// Restrict ego blocks to the two-hop receptive field (exact for two layers).
    pub compact: bool,
    /// When set, the replay store and parameters are written here after each task.
    pub checkpoint_dir: Option<PathBuf>,
}

pub const DEFAULT_REPLAY_RATE: f64 = 0.1;
pub const DEFAULT_EWC_LAMBDA: f64 = 10.0;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            replay_rate: None,
            ewc_lambda: None,
            seed: 0,
            compact: true,
            checkpoint_dir: None,
        }
    }
}

impl RunConfig {
    /// Rejects parameters the method does not use and fills defaults for those it does.
    pub fn resolve(&self, method: &Method) -> Result<(f64, f64)> {
        let uses_rate = method.strategy.uses_replay_rate();
        let uses_lambda = method.strategy == Strategy::Ewc;
        if self.replay_rate.is_some() && !uses_rate {
            return Err(Error::Config(format!("{method} does not take a replay rate")));
        }
        if self.ewc_lambda.is_some() && !uses_lambda {
            return Err(Error::Config(format!("{method} does not take an EWC lambda")));
        }
        let r = self.replay_rate.unwrap_or(DEFAULT_REPLAY_RATE);
        replay::check_rate(r)?;
        let lambda = self.ewc_lambda.unwrap_or(DEFAULT_EWC_LAMBDA);
        EwcState::new(lambda)?;
        self.train.validate()?;
        self.sampler.validate()?;
        Ok((r, lambda))
    }

    /// This configuration with only the parameters `method` uses.
    pub fn for_method(&self, method: &Method) -> RunConfig {
        RunConfig {
            replay_rate: self.replay_rate.filter(|_| method.strategy.uses_replay_rate()),
            ewc_lambda: self.ewc_lambda.filter(|_| method.strategy == Strategy::Ewc),
            ..self.clone()
        }
    }
}

/// Result of one stream run.
#[derive(Debug, Clone)]
pub struct StreamRun {
    pub method: Method,
    pub seed: u64,
    pub matrix: AucMatrix,
    /// Per task, the training loss of each epoch.
    pub losses: Vec<Vec<f64>>,
    /// Replay store size after each task (0 for store-free strategies).
    pub store_sizes: Vec<usize>,
    /// Classifier after each task.
    pub params: Vec<ParamSet>,
    pub resources: ResourceReport,
}

/// Held-out evaluation data of one task.
enum TestView {
    Ego { blocks: Vec<GraphBatch>, labels: Vec<u8> },
    Full { batch: GraphBatch },
}

impl TestView {
    fn build(task: &PreparedTask, input: Input, cfg: &RunConfig) -> Result<Self> {
        let g = &task.graph;
        match input {
            Input::Ego(s) => {
                let sampler = SamplerConfig { strategy: s, ..cfg.sampler };
                let egos = extract_with_features(g, &task.x, Split::Test, &sampler)?;
                let labels = egos.iter().map(|e| e.ego_label).collect();
                let blocks = egos.par_iter().map(|e| ego_block(e, cfg.compact)).collect::<Result<_>>()?;
                Ok(TestView::Ego { blocks, labels })
            }
            Input::Full => {
                let test = g.split_nodes(Split::Test);
                Ok(TestView::Full {
                    batch: GraphBatch::full_graph(g, &task.x, &test)?,
                })
            }
        }
    }

    fn auc(&self, learner: &Learner) -> Result<f64> {
        match self {
            TestView::Ego { blocks, labels } => auc(&learner.score_blocks(blocks)?, labels),
            TestView::Full { batch } => auc(&learner.score(batch)?, &batch.labels),
        }
    }
}

/// Training data of the current task; dropped once the task completes.
enum TrainView {
    Ego { egos: Vec<crate::ego_sampler::EgoGraph>, blocks: Vec<GraphBatch> },
    Full { batch: GraphBatch, nodes: Vec<NodeId> },
}

impl TrainView {
    fn build(task: &PreparedTask, input: Input, cfg: &RunConfig) -> Result<Self> {
        let g = &task.graph;
        match input {
            Input::Ego(s) => {
                let sampler = SamplerConfig { strategy: s, ..cfg.sampler };
                let egos = extract_with_features(g, &task.x, Split::Train, &sampler)?;
                let blocks = egos.par_iter().map(|e| ego_block(e, cfg.compact)).collect::<Result<_>>()?;
                Ok(TrainView::Ego { egos, blocks })
            }
            Input::Full => {
                let nodes = g.split_nodes(Split::Train);
                Ok(TrainView::Full {
                    batch: GraphBatch::full_graph(g, &task.x, &nodes)?,
                    nodes,
                })
            }
        }
    }
}

fn sampler_for(cfg: &RunConfig) -> SamplerConfig {
    SamplerConfig {
        seed: rng::derive_seed(cfg.sampler.seed, &[tag("sampler"), cfg.seed]),
        ..cfg.sampler
    }
}

fn new_learner(method: &Method, cfg: &RunConfig, input_dim: usize) -> Result<Learner> {
    let model = ModelConfig {
        arch: method.arch,
        input_dim,
        ..cfg.model.clone()
    };
    Learner::new(model, cfg.train.clone(), rng::derive_seed(cfg.seed, &[tag("init")]))
}

/// Runs `method` over the prepared stream and fills the AUC matrix.
///
/// Parameters carry over between tasks (except for the retrained reference);
/// the optimizer state is reset at the start of each task.
pub fn run_stream(tasks: &[PreparedTask], method: &Method, cfg: &RunConfig) -> Result<StreamRun> {
    if tasks.is_empty() {
        return Err(Error::Config("task stream is empty".into()));
    }
    if tasks.windows(2).any(|w| w[0].graph.task_id() >= w[1].graph.task_id()) {
        return Err(Error::Config("task ids must be strictly increasing".into()));
    }
    let (rate, lambda) = cfg.resolve(method)?;
    let cfg = &RunConfig {
        sampler: sampler_for(cfg),
        ..cfg.clone()
    };
    let dim = tasks[0].x.dim();
    if tasks.iter().any(|t| t.x.dim() != dim) {
        return Err(Error::Shape("tasks have different feature widths".into()));
    }
    let n = tasks.len();
    let mut learner = new_learner(method, cfg, dim)?;
    let mut res = ResourceReport::default();
    let mut matrix = AucMatrix::new(n);
    let mut losses = Vec::with_capacity(n);
    let mut store_sizes = Vec::with_capacity(n);
    let mut history = Vec::with_capacity(n);
    let mut tests: Vec<TestView> = Vec::with_capacity(n);

    let mut ego_store = ReplayStore::new(rate)?;
    let mut node_store = NodeStore::new(rate)?;
    let mut ewc = EwcState::new(lambda)?;
    // the retrained reference keeps every task's training data
    let mut retained_blocks: Vec<GraphBatch> = Vec::new();
    let mut retained_full: Vec<GraphBatch> = Vec::new();

    for (i, task) in tasks.iter().enumerate() {
        let t = task.graph.task_id() as u64;
        let mut shuffle = rng::rng_for(cfg.seed, &[tag("shuffle"), t]);
        let view = res.time_section("sample", || TrainView::build(task, method.input, cfg))?;
        learner.optim = Adam::from_config(&cfg.train);

        let task_losses = res.time_section("train", || -> Result<Vec<f64>> {
            match (method.strategy, view) {
                (Strategy::Incremental, TrainView::Ego { blocks, .. }) => learner.fit_blocks(&blocks, &mut shuffle, None),
                (Strategy::Incremental, TrainView::Full { batch, .. }) => learner.fit_full(&batch, None),
                (Strategy::EgoCl, TrainView::Ego { egos, blocks }) => {
                    let mut combined = blocks.clone();
                    combined.extend(ego_store.blocks().cloned());
                    let l = learner.fit_blocks(&combined, &mut shuffle, None)?;
                    let mut pick = rng::rng_for(cfg.seed, &[tag("replay"), t]);
                    ego_store.add_sample(&egos, &blocks, &mut pick)?;
                    Ok(l)
                }
                (Strategy::NodeReplay, TrainView::Full { batch, .. }) => {
                    let l = learner.fit_full(&node_store.augment(&batch)?, None)?;
                    let mut pick = rng::rng_for(cfg.seed, &[tag("replay"), t]);
                    node_store.add_random(&task.graph, &task.x, &mut pick);
                    Ok(l)
                }
                (Strategy::ErMf, TrainView::Full { batch, nodes }) => {
                    let l = learner.fit_full(&node_store.augment(&batch)?, None)?;
                    let budget = node_store.budget(nodes.len());
                    let chosen = er_mf_select(&task.x, task.graph.labels(), &nodes, budget)?;
                    node_store.add_nodes(&task.graph, &task.x, &chosen);
                    Ok(l)
                }
                (Strategy::Ewc, TrainView::Full { batch, nodes }) => {
                    let reg: Option<&dyn crate::nn::Regularizer> = if ewc.anchors().is_empty() { None } else { Some(&ewc) };
                    let l = learner.fit_full(&batch, reg)?;
                    let examples: Vec<GraphBatch> = nodes
                        .par_iter()
                        .map(|&v| GraphBatch::receptive_field(&task.graph, &task.x, v))
                        .collect::<Result<_>>()?;
                    ewc.consolidate(&learner.model, &learner.params, &examples)?;
                    Ok(l)
                }
                (Strategy::FullRetrain, view) => {
                    learner = new_learner(method, cfg, dim)?;
                    match view {
                        TrainView::Ego { blocks, .. } => {
                            retained_blocks.extend(blocks);
                            learner.fit_blocks(&retained_blocks, &mut shuffle, None)
                        }
                        TrainView::Full { batch, .. } => {
                            retained_full.push(batch);
                            let parts: Vec<&GraphBatch> = retained_full.iter().collect();
                            learner.fit_full(&GraphBatch::concat(&parts)?, None)
                        }
                    }
                }
                (s, _) => Err(Error::Config(format!("{} does not support this input", s.name()))),
            }
        })?;
        losses.push(task_losses);

        store_sizes.push(match method.strategy {
            Strategy::EgoCl => ego_store.len(),
            Strategy::NodeReplay | Strategy::ErMf => node_store.len(),
            _ => 0,
        });
        if let Some(dir) = &cfg.checkpoint_dir {
            checkpoint::save(&learner.params, &dir.join(format!("params_{method}_{}_task{t}.txt", cfg.seed)))?;
            if method.strategy == Strategy::EgoCl {
                ego_store.save(&dir.join(format!("replay_{method}_{}_task{t}", cfg.seed)))?;
            }
        }

        tests.push(res.time_section("sample", || TestView::build(task, method.input, cfg))?);
        res.time_section("test", || -> Result<()> {
            for (j, view) in tests.iter().enumerate() {
                matrix.set(i, j, view.auc(&learner)?)?;
            }
            Ok(())
        })?;
        history.push(learner.params.clone());
    }
    res.storage_bytes = ego_store.storage_bytes() + node_store.storage_bytes() + ewc.storage_bytes();
    Ok(StreamRun {
        method: *method,
        seed: cfg.seed,
        matrix,
        losses,
        store_sizes,
        params: history,
        resources: res,
    })
}

/// Trains `method` on one task alone and returns its test AUC.
pub fn static_auc(task: &PreparedTask, method: &StaticMethod, cfg: &RunConfig) -> Result<f64> {
    let m = Method::new(Strategy::Incremental, method.input, method.arch)?;
    let cfg = RunConfig {
        replay_rate: None,
        ewc_lambda: None,
        ..cfg.clone()
    };
    let run = run_stream(std::slice::from_ref(task), &m, &cfg)?;
    Ok(run.matrix.get(0, 0).expect("1x1 matrix is filled"))
}

#[cfg(test)]
mod tests;
