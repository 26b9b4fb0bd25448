//! Command implementations behind the `egocl` binary.
//!
//! Every command reads an [`ExperimentManifest`](Manifest) (defaults when none
//! is given), runs seeds on a rayon pool of `--threads` workers and writes its
//! tables atomically into the output directory. Apart from timing columns,
//! outputs depend only on the manifest and the seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::continual::{run_stream, static_auc, Method, PreparedTask, RunConfig, StreamRun};
use crate::ego_sampler::{extract_all, write_dump};
use crate::error::{Error, Result};
use crate::graph_store::Split;
use crate::manifest::{DataSource, Manifest, SweepAxis};
use crate::metrics::{normalize_columns, MeanStd, MetricsReport};
use crate::synth::{emit, stats_csv};
use crate::util::write_atomic;

#[derive(Debug, Parser)]
#[command(name = "egocl", version, about = "Ego-graph continual node classification experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment manifest (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Output directory, overriding `evaluation.out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of seeds, overriding `evaluation.seeds`.
    #[arg(long, global = true, value_name = "K")]
    pub seeds: Option<usize>,
    /// Worker threads, overriding `evaluation.threads`.
    #[arg(long, global = true, value_name = "T")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Per-task graph statistics.
    Stats,
    /// Writes the synthetic stream as input files plus a manifest.
    Synth,
    /// Extracts ego-graphs for every node of every task.
    Sample,
    /// Trains each static method on each task independently.
    Static,
    /// Runs each configured strategy over the task stream.
    Continual,
    /// Varies the replay rate or the ego-graph size.
    Sweep,
    /// Train and test time per strategy, normalized by the column minimum.
    Bench,
}

/// Manifest with the command-line overrides applied.
pub fn effective_manifest(cli: &Cli) -> Result<Manifest> {
    let mut m = match &cli.manifest {
        Some(p) => Manifest::load(p)?,
        None => Manifest::default(),
    };
    if let Some(out) = &cli.out {
        m.evaluation.out_dir = std::path::absolute(out).map_err(|e| Error::io(out, e))?;
    }
    if let Some(k) = cli.seeds {
        m.evaluation.seeds = k;
    }
    if let Some(t) = cli.threads {
        m.evaluation.threads = t;
    }
    m.validate()?;
    Ok(m)
}

/// Runs one command and returns the paths it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let m = effective_manifest(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(m.evaluation.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Stats => cmd_stats(&m),
        Command::Synth => cmd_synth(&m),
        Command::Sample => cmd_sample(&m),
        Command::Static => cmd_static(&m),
        Command::Continual => cmd_continual(&m),
        Command::Sweep => cmd_sweep(&m),
        Command::Bench => cmd_bench(&m),
    })
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    write_atomic(&path, contents.as_bytes())?;
    written.push(path);
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn first_seed(m: &Manifest) -> u64 {
    m.evaluation.first_seed
}

pub fn cmd_stats(m: &Manifest) -> Result<Vec<PathBuf>> {
    let stream = m.load_stream(first_seed(m))?;
    let table = stats_csv(&stream);
    print!("{table}");
    let mut out = Vec::new();
    write(m.out_dir().join("stats.csv"), &table, &mut out)?;
    Ok(out)
}

/// Writes task files, `stats.csv` and a `manifest.toml` that reads them back.
pub fn cmd_synth(m: &Manifest) -> Result<Vec<PathBuf>> {
    if m.dataset.source != DataSource::Synth {
        return Err(Error::Manifest("synth needs a synthetic dataset source".into()));
    }
    let dir = m.out_dir();
    let stream = m.load_stream(first_seed(m))?;
    let files = emit(&dir, &stream)?;
    let mut out: Vec<PathBuf> = files
        .into_iter()
        .flat_map(|f| [f.edges, f.features, f.labels])
        .collect();
    out.push(dir.join("stats.csv"));
    let mut stub = Manifest::for_files(Path::new("."), stream.len());
    stub.sampler = m.sampler;
    stub.features = m.features.clone();
    stub.model = m.model.clone();
    stub.train = m.train.clone();
    stub.strategy = m.strategy.clone();
    stub.static_methods = m.static_methods.clone();
    stub.sweep = m.sweep.clone();
    stub.evaluation = m.evaluation.clone();
    stub.evaluation.out_dir = PathBuf::from("results");
    write(dir.join("manifest.toml"), &stub.to_toml()?, &mut out)?;
    Ok(out)
}

/// One ego-graph dump per task (`egos_task<t>.csv` / `.adj`) and a summary table.
pub fn cmd_sample(m: &Manifest) -> Result<Vec<PathBuf>> {
    let seed = first_seed(m);
    let stream = m.load_stream(seed)?;
    let dir = m.out_dir();
    let mut cfg = m.sampler;
    cfg.seed = cfg.seed.wrapping_add(seed);
    let mut out = Vec::new();
    let mut table = String::from("task,egos,ego_size,mean_real,mean_dummies\n");
    for g in &stream {
        let mut egos = Vec::new();
        for split in [Split::Train, Split::Val, Split::Test] {
            egos.extend(extract_all(g, split, &cfg)?);
        }
        egos.sort_by_key(|e| e.ego_node);
        let prefix = dir.join(format!("egos_task{}", g.task_id()));
        write_dump(&prefix, &egos)?;
        out.push(prefix.with_extension("csv"));
        out.push(prefix.with_extension("adj"));
        let n = egos.len().max(1) as f64;
        let real: usize = egos.iter().map(|e| e.num_real()).sum();
        let dummies: usize = egos.iter().map(|e| e.num_dummies()).sum();
        let _ = writeln!(
            table,
            "{},{},{},{:.3},{:.3}",
            g.task_id(),
            egos.len(),
            cfg.ego_size,
            real as f64 / n,
            dummies as f64 / n
        );
    }
    write(dir.join("sample.csv"), &table, &mut out)?;
    Ok(out)
}

/// Prepared streams for every seed, in seed order.
fn prepare_all(m: &Manifest) -> Result<Vec<(u64, Vec<PreparedTask>)>> {
    m.seeds()
        .into_par_iter()
        .map(|s| {
            log::info!("preparing seed {s}");
            Ok((s, m.prepare(s)?))
        })
        .collect()
}

/// Per-task AUC of every static method, averaged over seeds; the best
/// method of each row is named in the last column.
pub fn cmd_static(m: &Manifest) -> Result<Vec<PathBuf>> {
    let methods = m.statics()?;
    let names: Vec<String> = methods.iter().map(ToString::to_string).collect();
    let per_seed: Vec<(u64, Vec<Vec<f64>>)> = prepare_all(m)?
        .into_par_iter()
        .map(|(s, tasks)| {
            let cfg = m.run_config(s);
            let cfg = RunConfig {
                replay_rate: None,
                ewc_lambda: None,
                ..cfg
            };
            let rows = tasks
                .iter()
                .map(|t| methods.iter().map(|sm| static_auc(t, sm, &cfg)).collect::<Result<Vec<f64>>>())
                .collect::<Result<Vec<_>>>()?;
            Ok((s, rows))
        })
        .collect::<Result<_>>()?;
    let num_tasks = per_seed.first().map_or(0, |(_, r)| r.len());
    let mut table = format!("task,{},best\n", names.join(","));
    let mut runs = String::from("seed,task,method,auc\n");
    for t in 0..num_tasks {
        let means: Vec<f64> = (0..methods.len())
            .map(|k| MeanStd::of(&per_seed.iter().map(|(_, r)| r[t][k]).collect::<Vec<_>>()).mean)
            .collect();
        let best = argmax(&means);
        let cells: Vec<String> = means.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(table, "{},{},{}", t + 1, cells.join(","), names[best]);
    }
    for (s, rows) in &per_seed {
        for (t, row) in rows.iter().enumerate() {
            for (name, v) in names.iter().zip(row) {
                let _ = writeln!(runs, "{s},{},{name},{v:.6}", t + 1);
            }
        }
    }
    let dir = m.out_dir();
    let mut out = Vec::new();
    write(dir.join("results.csv"), &table, &mut out)?;
    write(dir.join("static_runs.csv"), &runs, &mut out)?;
    Ok(out)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn stream_config(m: &Manifest, seed: u64, method: &Method) -> RunConfig {
    let mut cfg = m.run_config(seed).for_method(method);
    if m.evaluation.checkpoints {
        cfg.checkpoint_dir = Some(m.out_dir().join("checkpoints"));
    }
    cfg
}

/// All (seed, method) stream runs, grouped by method in manifest order.
fn run_all(m: &Manifest, methods: &[Method], configure: impl Fn(u64, &Method) -> RunConfig + Sync) -> Result<Vec<Vec<StreamRun>>> {
    let per_seed: Vec<Vec<StreamRun>> = prepare_all(m)?
        .into_par_iter()
        .map(|(s, tasks)| {
            methods
                .iter()
                .map(|method| {
                    log::info!("seed {s}: {method}");
                    run_stream(&tasks, method, &configure(s, method))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok((0..methods.len())
        .map(|k| per_seed.iter().map(|runs| runs[k].clone()).collect())
        .collect())
}

#[derive(Debug, Serialize)]
struct StrategyMetrics {
    strategy: String,
    seeds: Vec<u64>,
    avg_auc: MeanStd,
    fgt: Option<MeanStd>,
    runs: Vec<MetricsReport>,
}

fn summarize_runs(label: &str, runs: &[StreamRun]) -> Result<StrategyMetrics> {
    let reports = runs
        .iter()
        .map(|r| {
            let meta = serde_json::json!({
                "store_sizes": r.store_sizes,
                "storage_bytes": r.resources.storage_bytes,
            });
            MetricsReport::from_matrix(label, r.seed, &r.matrix, meta)
        })
        .collect::<Result<Vec<_>>>()?;
    let aucs: Vec<f64> = reports.iter().map(|r| r.avg_auc).collect();
    let fgts: Option<Vec<f64>> = reports.iter().map(|r| r.fgt).collect();
    Ok(StrategyMetrics {
        strategy: label.to_string(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        avg_auc: MeanStd::of(&aucs),
        fgt: fgts.map(|f| MeanStd::of(&f)),
        runs: reports,
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Config(format!("serializing metrics: {e}")))
}

/// AUC matrices per (strategy, seed), per-strategy metrics and a summary
/// table with the best average AUC flagged.
pub fn cmd_continual(m: &Manifest) -> Result<Vec<PathBuf>> {
    let methods = m.methods()?;
    let grouped = run_all(m, &methods, |s, method| stream_config(m, s, method))?;
    let dir = m.out_dir();
    let mut out = Vec::new();
    let mut summaries = Vec::new();
    for (method, runs) in methods.iter().zip(&grouped) {
        let label = method.to_string();
        for r in runs {
            write(dir.join(format!("auc_matrix_{label}_{}.csv", r.seed)), &r.matrix.to_csv(), &mut out)?;
        }
        let summary = summarize_runs(&label, runs)?;
        write(dir.join(format!("metrics_{label}.json")), &to_json(&summary)?, &mut out)?;
        summaries.push(summary);
    }
    let best = argmax(&summaries.iter().map(|s| s.avg_auc.mean).collect::<Vec<_>>());
    let mut table = String::from("strategy,seeds,avg_auc_mean,avg_auc_std,fgt_mean,fgt_std,best\n");
    for (i, s) in summaries.iter().enumerate() {
        let _ = writeln!(
            table,
            "{},{},{:.6},{:.6},{},{},{}",
            s.strategy,
            s.seeds.len(),
            s.avg_auc.mean,
            s.avg_auc.std,
            fmt_opt(s.fgt.map(|f| f.mean)),
            fmt_opt(s.fgt.map(|f| f.std)),
            u8::from(i == best)
        );
    }
    write(dir.join("results.csv"), &table, &mut out)?;
    Ok(out)
}

/// One (avg_auc, fgt) row per sweep value per seed.
pub fn cmd_sweep(m: &Manifest) -> Result<Vec<PathBuf>> {
    let method = m.sweep_method()?;
    let axis = m.sweep.axis;
    let values = m.sweep.values.clone();
    let prepared = prepare_all(m)?;
    let rows: Vec<Vec<(u64, f64, StreamRun)>> = prepared
        .into_par_iter()
        .map(|(s, tasks)| {
            values
                .iter()
                .map(|&v| {
                    let mut cfg = stream_config(m, s, &method);
                    match axis {
                        SweepAxis::ReplayRate => cfg.replay_rate = Some(v),
                        SweepAxis::EgoSize => {
                            cfg.sampler.ego_size = v as usize;
                            cfg.sampler.step_cap = cfg.sampler.step_cap.max(10 * v as usize);
                        }
                    }
                    log::info!("seed {s}: {method} {axis}={v}");
                    Ok((s, v, run_stream(&tasks, &method, &cfg)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut table = String::from("strategy,axis,value,seed,avg_auc,fgt\n");
    for (s, v, run) in rows.iter().flatten() {
        let r = MetricsReport::from_matrix(&method.to_string(), *s, &run.matrix, serde_json::Value::Null)?;
        let _ = writeln!(table, "{method},{axis},{v},{s},{:.6},{}", r.avg_auc, fmt_opt(r.fgt));
    }
    let mut out = Vec::new();
    write(m.out_dir().join("results.csv"), &table, &mut out)?;
    Ok(out)
}

/// Train and test wall time per strategy, summed over seeds, each column
/// divided by its minimum; raw seconds and storage follow.
pub fn cmd_bench(m: &Manifest) -> Result<Vec<PathBuf>> {
    let methods = m.methods()?;
    let grouped = run_all(m, &methods, |s, method| stream_config(m, s, method))?;
    let mut raw: Vec<BTreeMap<&str, f64>> = Vec::new();
    for runs in &grouped {
        let mut acc = BTreeMap::new();
        for r in runs {
            for section in ["sample", "train", "test"] {
                *acc.entry(section).or_insert(0.0) += r.resources.seconds(section);
            }
            *acc.entry("storage").or_insert(0.0) += r.resources.storage_bytes as f64 / runs.len() as f64;
        }
        raw.push(acc);
    }
    let mut norm: Vec<Vec<f64>> = raw.iter().map(|r| vec![r["train"], r["test"]]).collect();
    normalize_columns(&mut norm);
    let mut table = String::from("strategy,train,test,train_s,test_s,sample_s,storage_bytes\n");
    for ((method, n), r) in methods.iter().zip(&norm).zip(&raw) {
        let _ = writeln!(
            table,
            "{method},{:.2},{:.2},{:.6},{:.6},{:.6},{:.0}",
            n[0], n[1], r["train"], r["test"], r["sample"], r["storage"]
        );
    }
    let mut out = Vec::new();
    write(m.out_dir().join("bench.csv"), &table, &mut out)?;
    Ok(out)
}

/// Machine-readable error record printed by the binary on failure.
pub fn error_record(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}
