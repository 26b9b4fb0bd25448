//! Experiment manifest: a TOML file with one section per concern.
//!
//! ```toml
//! [dataset]
//! source = "files"      # or "synth", which reads the [synth] section
//! dir = "data"          # task_<t>.edges, task_<t>.features.csv, task_<t>.labels.csv
//! num_tasks = 5
//!
//! [strategy]
//! names = ["egocl-bfs", "incremental-bfs"]
//! replay_rate = 0.1
//!
//! [evaluation]
//! seeds = 5
//! out_dir = "results"
//! ```
//!
//! Every other section (`sampler`, `features`, `model`, `train`, `static`,
//! `sweep`) is optional and defaults to the standard setup. Seeds inside
//! sections are offsets added to the run seed.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::continual::{prepare_stream, Method, PreparedTask, RunConfig, StaticMethod};
use crate::ego_sampler::SamplerConfig;
use crate::error::{Error, Result};
use crate::features::DeepWalkConfig;
use crate::graph_store::{load_task_graph, TaskGraph};
use crate::nn::{ModelConfig, TrainConfig};
use crate::synth::{generate_task_stream, SynthConfig, TaskFiles};
use crate::util::read_to_string;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synth,
    Files,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DataSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Number of tasks under `dir`; counted from the files when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_tasks: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySection {
    /// Continual method labels, e.g. `egocl-bfs`, `node-replay`, `ewc`.
    pub names: Vec<String>,
    pub replay_rate: f64,
    pub ewc_lambda: f64,
}

impl Default for StrategySection {
    fn default() -> Self {
        StrategySection {
            names: vec!["egocl-bfs".into(), "incremental-bfs".into()],
            replay_rate: crate::continual::DEFAULT_REPLAY_RATE,
            ewc_lambda: crate::continual::DEFAULT_EWC_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticSection {
    pub methods: Vec<String>,
}

impl Default for StaticSection {
    fn default() -> Self {
        StaticSection {
            methods: vec!["gat".into(), "ego-bfs".into(), "ego-rwr".into()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    ReplayRate,
    EgoSize,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::ReplayRate => "replay_rate",
            SweepAxis::EgoSize => "ego_size",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replay_rate" => Ok(SweepAxis::ReplayRate),
            "ego_size" => Ok(SweepAxis::EgoSize),
            other => Err(Error::Manifest(format!("unknown sweep axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub strategy: String,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            axis: SweepAxis::ReplayRate,
            values: vec![0.01, 0.05, 0.1, 0.2, 0.3],
            strategy: "egocl-bfs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub seeds: usize,
    pub first_seed: u64,
    pub out_dir: PathBuf,
    pub threads: usize,
    /// Write parameters and replay stores after every task.
    pub checkpoints: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            seeds: 5,
            first_seed: 0,
            out_dir: PathBuf::from("results"),
            threads: 1,
            checkpoints: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifest {
    pub dataset: DatasetSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    pub sampler: SamplerConfig,
    pub features: DeepWalkConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub strategy: StrategySection,
    #[serde(rename = "static")]
    pub static_methods: StaticSection,
    pub sweep: SweepSection,
    pub evaluation: EvaluationSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::parse(&text, &base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m: Manifest = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.base_dir = base_dir.to_path_buf();
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    /// A manifest reading `num_tasks` tasks from `dir`, everything else default.
    pub fn for_files(dir: &Path, num_tasks: usize) -> Self {
        Manifest {
            dataset: DatasetSection {
                source: DataSource::Files,
                dir: Some(dir.to_path_buf()),
                num_tasks: Some(num_tasks),
            },
            ..Manifest::default()
        }
    }

    /// A manifest for the synthetic stream `cfg`.
    pub fn for_synth(cfg: SynthConfig) -> Self {
        Manifest {
            synth: Some(cfg),
            ..Manifest::default()
        }
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        match self.dataset.source {
            DataSource::Synth => {
                if self.dataset.dir.is_some() || self.dataset.num_tasks.is_some() {
                    return Err(Error::Manifest(
                        "dataset source is synth but dataset.dir or dataset.num_tasks is set".into(),
                    ));
                }
                self.synth_config().validate()?;
            }
            DataSource::Files => {
                if self.dataset.dir.is_none() {
                    return Err(Error::Manifest("dataset source is files but dataset.dir is missing".into()));
                }
                if self.synth.is_some() {
                    return Err(Error::Manifest(
                        "dataset source is files but a [synth] section is present".into(),
                    ));
                }
                if self.dataset.num_tasks == Some(0) {
                    return Err(Error::Manifest("dataset.num_tasks must be positive".into()));
                }
            }
        }
        if self.evaluation.seeds == 0 {
            return Err(Error::Manifest("evaluation.seeds must be positive".into()));
        }
        if self.evaluation.threads == 0 {
            return Err(Error::Manifest("evaluation.threads must be positive".into()));
        }
        self.sampler.validate()?;
        self.features.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        crate::continual::replay::check_rate(self.strategy.replay_rate)?;
        crate::continual::EwcState::new(self.strategy.ewc_lambda)?;
        self.methods()?;
        self.statics()?;
        self.sweep_method()?;
        self.check_sweep_values()?;
        Ok(())
    }

    fn check_sweep_values(&self) -> Result<()> {
        if self.sweep.values.is_empty() {
            return Err(Error::Manifest("sweep.values is empty".into()));
        }
        for &v in &self.sweep.values {
            match self.sweep.axis {
                SweepAxis::ReplayRate => crate::continual::replay::check_rate(v)?,
                SweepAxis::EgoSize => {
                    if !(v >= 1.0 && v.fract() == 0.0) {
                        return Err(Error::Manifest(format!("ego size {v} is not a positive integer")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        self.synth.clone().unwrap_or_default()
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        if self.strategy.names.is_empty() {
            return Err(Error::Manifest("strategy.names is empty".into()));
        }
        self.strategy.names.iter().map(|s| s.parse()).collect()
    }

    pub fn statics(&self) -> Result<Vec<StaticMethod>> {
        if self.static_methods.methods.is_empty() {
            return Err(Error::Manifest("static.methods is empty".into()));
        }
        self.static_methods.methods.iter().map(|s| s.parse()).collect()
    }

    pub fn sweep_method(&self) -> Result<Method> {
        let m: Method = self.sweep.strategy.parse()?;
        if self.sweep.axis == SweepAxis::ReplayRate && !m.strategy.uses_replay_rate() {
            return Err(Error::Manifest(format!("sweep strategy {m} has no replay rate")));
        }
        Ok(m)
    }

    /// Run seeds `first_seed .. first_seed + seeds`.
    pub fn seeds(&self) -> Vec<u64> {
        let first = self.evaluation.first_seed;
        (first..first + self.evaluation.seeds as u64).collect()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.evaluation.out_dir)
    }

    /// Input files of each task, checked for existence.
    pub fn task_files(&self) -> Result<Vec<TaskFiles>> {
        let dir = self
            .dataset
            .dir
            .as_ref()
            .map(|d| self.resolve(d))
            .ok_or_else(|| Error::Manifest("no dataset directory".into()))?;
        let count = match self.dataset.num_tasks {
            Some(n) => n,
            None => (1..).take_while(|&t| TaskFiles::in_dir(&dir, t).edges.exists()).count(),
        };
        if count == 0 {
            return Err(Error::Manifest(format!("no task files in {}", dir.display())));
        }
        let files: Vec<TaskFiles> = (1..=count).map(|t| TaskFiles::in_dir(&dir, t)).collect();
        for f in &files {
            for p in [&f.edges, &f.features, &f.labels] {
                if !p.exists() {
                    return Err(Error::Manifest(format!("missing file {}", p.display())));
                }
            }
        }
        Ok(files)
    }

    /// The task stream for run seed `seed`; splits and synthetic draws depend on it.
    pub fn load_stream(&self, seed: u64) -> Result<Vec<TaskGraph>> {
        match self.dataset.source {
            DataSource::Synth => {
                let mut cfg = self.synth_config();
                cfg.seed = cfg.seed.wrapping_add(seed);
                generate_task_stream(&cfg)
            }
            DataSource::Files => self
                .task_files()?
                .iter()
                .enumerate()
                .map(|(i, f)| load_task_graph(i + 1, &f.edges, &f.features, &f.labels, seed))
                .collect(),
        }
    }

    pub fn deepwalk(&self, seed: u64) -> DeepWalkConfig {
        DeepWalkConfig {
            seed: self.features.seed.wrapping_add(seed),
            ..self.features.clone()
        }
    }

    /// Loaded stream with features built, for run seed `seed`.
    pub fn prepare(&self, seed: u64) -> Result<Vec<PreparedTask>> {
        prepare_stream(self.load_stream(seed)?, &self.deepwalk(seed))
    }

    /// Run configuration for `seed`, carrying both strategy parameters;
    /// narrow it with [`RunConfig::for_method`].
    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            model: self.model.clone(),
            train: TrainConfig {
                seed: self.train.seed.wrapping_add(seed),
                ..self.train.clone()
            },
            sampler: self.sampler,
            replay_rate: Some(self.strategy.replay_rate),
            ewc_lambda: Some(self.strategy.ewc_lambda),
            seed,
            compact: true,
            checkpoint_dir: None,
        }
    }
}
