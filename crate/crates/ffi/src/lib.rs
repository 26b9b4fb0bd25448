//! C interface to `egocl`.
//!
//! Every function returns an [`EgoclStatus`]; outputs go through pointer
//! arguments. On failure the message is kept per thread and can be read with
//! [`egocl_last_error`]. Graphs and AUC matrices are opaque handles that the
//! caller releases with the matching `_free` function. Panics never cross the
//! boundary; they are reported as [`EgoclStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use clap::Parser as _;
use egocl::cli::{self, Cli};
use egocl::ego_sampler::{extract, SamplerConfig};
use egocl::graph_store::{compute_stats, load_task_graph, TaskGraph};
use egocl::metrics::{self, AucMatrix};
use egocl::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EgoclStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Ingest = 5,
    UnknownNode = 6,
    Config = 7,
    Shape = 8,
    NonFinite = 9,
    UndefinedMetric = 10,
    Manifest = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

impl From<&Error> for EgoclStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => EgoclStatus::Io,
            Error::Parse { .. } => EgoclStatus::Parse,
            Error::Ingest(_) => EgoclStatus::Ingest,
            Error::UnknownNode(_) => EgoclStatus::UnknownNode,
            Error::Config(_) => EgoclStatus::Config,
            Error::Shape(_) => EgoclStatus::Shape,
            Error::NonFinite(_) => EgoclStatus::NonFinite,
            Error::UndefinedMetric(_) => EgoclStatus::UndefinedMetric,
            Error::Manifest(_) => EgoclStatus::Manifest,
        }
    }
}

/// Descriptive statistics of one task graph.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EgoclStats {
    pub num_nodes: usize,
    pub num_links: usize,
    pub avg_degree: f64,
    pub pos_label_pct: f64,
}

/// Opaque task graph.
pub struct EgoclGraph(TaskGraph);

/// Opaque lower-triangular AUC matrix.
pub struct EgoclAucMatrix(AucMatrix);

/// Sampling strategies for [`egocl_sample_ego`].
pub const EGOCL_SAMPLER_BFS: u32 = 0;
pub const EGOCL_SAMPLER_RWR: u32 = 1;

/// Member slot value marking a dummy in [`egocl_sample_ego`] output.
pub const EGOCL_DUMMY: i64 = -1;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(EgoclStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn fail(status: EgoclStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EgoclStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(fail(EgoclStatus::Panic, msg))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            EgoclStatus::Ok
        }
        Err(Failure(status, msg)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = msg);
            status
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(EgoclStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn string_arg(p: *const c_char, what: &str) -> Result<String, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| fail(EgoclStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string. `*needed` receives the full size including the NUL,
/// so a too small buffer can be retried.
///
/// # Safety
/// `buf` must be valid for `len` bytes (or null with `len == 0`); `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn egocl_last_error(buf: *mut c_char, len: usize, needed: *mut usize) -> EgoclStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    let size = msg.len() + 1;
    if !needed.is_null() {
        *needed = size;
    }
    if len < size {
        return EgoclStatus::BufferTooSmall;
    }
    if buf.is_null() {
        return EgoclStatus::NullPointer;
    }
    ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), msg.len());
    *buf.add(msg.len()) = 0;
    EgoclStatus::Ok
}

/// Area under the ROC curve of `scores` against binary `labels`, ties counted half.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn egocl_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> EgoclStatus {
    guard(|| {
        non_null(out, "out")?;
        let s = slice_arg(scores, n, "scores")?;
        let l = slice_arg(labels, n, "labels")?;
        *out = metrics::auc(s, l)?;
        Ok(())
    })
}

/// Empty `num_tasks × num_tasks` AUC matrix.
///
/// # Safety
/// `out` must be writable; the handle is released with [`egocl_auc_matrix_free`].
#[no_mangle]
pub unsafe extern "C" fn egocl_auc_matrix_new(num_tasks: usize, out: *mut *mut EgoclAucMatrix) -> EgoclStatus {
    guard(|| {
        non_null(out, "out")?;
        if num_tasks == 0 {
            return Err(fail(EgoclStatus::Config, "num_tasks must be at least 1"));
        }
        *out = Box::into_raw(Box::new(EgoclAucMatrix(AucMatrix::new(num_tasks))));
        Ok(())
    })
}

/// Records the AUC on task `task` after training through `stage` (both 0-based, `task <= stage`).
///
/// # Safety
/// `m` must come from [`egocl_auc_matrix_new`].
#[no_mangle]
pub unsafe extern "C" fn egocl_auc_matrix_set(
    m: *mut EgoclAucMatrix,
    stage: usize,
    task: usize,
    value: f64,
) -> EgoclStatus {
    guard(|| {
        non_null(m, "matrix")?;
        (*m).0.set(stage, task, value)?;
        Ok(())
    })
}

/// Mean of the final row.
///
/// # Safety
/// `m` must come from [`egocl_auc_matrix_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn egocl_auc_matrix_avg_auc(m: *const EgoclAucMatrix, out: *mut f64) -> EgoclStatus {
    guard(|| {
        non_null(m, "matrix")?;
        non_null(out, "out")?;
        *out = metrics::avg_auc(&(*m).0)?;
        Ok(())
    })
}

/// Mean drop from each task's own AUC to its final AUC; needs two or more tasks.
///
/// # Safety
/// `m` must come from [`egocl_auc_matrix_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn egocl_auc_matrix_fgt(m: *const EgoclAucMatrix, out: *mut f64) -> EgoclStatus {
    guard(|| {
        non_null(m, "matrix")?;
        non_null(out, "out")?;
        *out = metrics::fgt(&(*m).0)?;
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`egocl_auc_matrix_new`] and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn egocl_auc_matrix_free(m: *mut EgoclAucMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Loads a task graph from its edge, feature and label files. `seed` drives the split.
///
/// # Safety
/// Paths must be NUL-terminated; `out` must be writable. Release with [`egocl_graph_free`].
#[no_mangle]
pub unsafe extern "C" fn egocl_graph_load(
    edge_file: *const c_char,
    feature_file: *const c_char,
    label_file: *const c_char,
    task_id: usize,
    seed: u64,
    out: *mut *mut EgoclGraph,
) -> EgoclStatus {
    guard(|| {
        non_null(out, "out")?;
        let e = PathBuf::from(string_arg(edge_file, "edge_file")?);
        let f = PathBuf::from(string_arg(feature_file, "feature_file")?);
        let l = PathBuf::from(string_arg(label_file, "label_file")?);
        let g = load_task_graph(task_id, &e, &f, &l, seed)?;
        *out = Box::into_raw(Box::new(EgoclGraph(g)));
        Ok(())
    })
}

/// Builds an unlabelled graph on nodes `0..num_nodes` from `num_edges` pairs `(src[i], dst[i])`.
///
/// # Safety
/// `src` and `dst` must hold `num_edges` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn egocl_graph_from_edges(
    num_nodes: usize,
    src: *const usize,
    dst: *const usize,
    num_edges: usize,
    seed: u64,
    out: *mut *mut EgoclGraph,
) -> EgoclStatus {
    guard(|| {
        non_null(out, "out")?;
        let s = slice_arg(src, num_edges, "src")?;
        let d = slice_arg(dst, num_edges, "dst")?;
        let edges: Vec<(usize, usize)> = s.iter().copied().zip(d.iter().copied()).collect();
        let g = TaskGraph::from_edges(0, num_nodes, &edges, seed)?;
        *out = Box::into_raw(Box::new(EgoclGraph(g)));
        Ok(())
    })
}

/// # Safety
/// `g` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn egocl_graph_stats(g: *const EgoclGraph, out: *mut EgoclStats) -> EgoclStatus {
    guard(|| {
        non_null(g, "graph")?;
        non_null(out, "out")?;
        let s = compute_stats(&(*g).0);
        *out = EgoclStats {
            num_nodes: s.num_nodes,
            num_links: s.num_links,
            avg_degree: s.avg_degree,
            pos_label_pct: s.pos_label_pct,
        };
        Ok(())
    })
}

/// # Safety
/// `g` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn egocl_graph_free(g: *mut EgoclGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Extracts the size-`ego_size` ego-graph of node `ego` into `members`
/// (internal node ids, [`EGOCL_DUMMY`] for padding; ego first).
/// `restart_prob` and `seed` only apply to [`EGOCL_SAMPLER_RWR`].
///
/// # Safety
/// `g` must come from this library; `members` must hold `ego_size` elements.
#[no_mangle]
pub unsafe extern "C" fn egocl_sample_ego(
    g: *const EgoclGraph,
    ego: usize,
    strategy: u32,
    ego_size: usize,
    restart_prob: f64,
    seed: u64,
    members: *mut i64,
) -> EgoclStatus {
    guard(|| {
        non_null(g, "graph")?;
        non_null(members, "members")?;
        let cfg = match strategy {
            EGOCL_SAMPLER_BFS => SamplerConfig::bfs(ego_size),
            EGOCL_SAMPLER_RWR => SamplerConfig::rwr(ego_size, restart_prob, seed),
            other => return Err(fail(EgoclStatus::Config, format!("unknown sampler {other}"))),
        };
        let e = extract(&(*g).0, ego, &cfg)?;
        let out = std::slice::from_raw_parts_mut(members, ego_size);
        for (slot, m) in out.iter_mut().zip(e.members()) {
            *slot = m.map_or(EGOCL_DUMMY, |v| v as i64);
        }
        Ok(())
    })
}

/// Runs a CLI command (`stats`, `synth`, `sample`, `static`, `continual`,
/// `sweep` or `bench`). `manifest` and `out_dir` may be null; zero `seeds` or
/// `threads` keeps the manifest value.
///
/// # Safety
/// Non-null strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn egocl_run(
    command: *const c_char,
    manifest: *const c_char,
    out_dir: *const c_char,
    seeds: u32,
    threads: u32,
) -> EgoclStatus {
    guard(|| {
        let mut args = vec!["egocl".to_string(), string_arg(command, "command")?];
        if !manifest.is_null() {
            args.extend(["--manifest".into(), string_arg(manifest, "manifest")?]);
        }
        if !out_dir.is_null() {
            args.extend(["--out".into(), string_arg(out_dir, "out_dir")?]);
        }
        if seeds > 0 {
            args.extend(["--seeds".into(), seeds.to_string()]);
        }
        if threads > 0 {
            args.extend(["--threads".into(), threads.to_string()]);
        }
        let parsed = Cli::try_parse_from(&args).map_err(|e| fail(EgoclStatus::Config, e.to_string()))?;
        cli::run(&parsed)?;
        Ok(())
    })
}
