//! Text checkpoint of a [`ParamSet`]: a version line, then per tensor a
//! `tensor <name> <rows> <cols>` header followed by one comma-separated row per line.
//! Values use the shortest representation that parses back to the same `f64`.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::model::ParamSet;
use crate::error::{Error, Result};
use crate::util::{read_to_string, write_atomic};

const MAGIC: &str = "egocl-params v1";

pub fn to_string(params: &ParamSet) -> String {
    let mut s = String::from(MAGIC);
    s.push('\n');
    for (name, t) in params.names().iter().zip(params.tensors()) {
        let _ = writeln!(s, "tensor {name} {} {}", t.nrows(), t.ncols());
        for row in t.rows() {
            let vals: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            s.push_str(&vals.join(","));
            s.push('\n');
        }
    }
    s
}

pub fn from_str(text: &str) -> Result<ParamSet> {
    let bad = |line: usize, m: &str| Error::Parse {
        path: "<checkpoint>".into(),
        line,
        message: m.to_string(),
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(bad(1, "missing checkpoint version header")),
    }
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    while let Some((ln, header)) = lines.next() {
        if header.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" {
            return Err(bad(ln, "expected `tensor <name> <rows> <cols>`"));
        }
        let rows: usize = parts[2].parse().map_err(|_| bad(ln, "bad row count"))?;
        let cols: usize = parts[3].parse().map_err(|_| bad(ln, "bad column count"))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (rl, row) = lines.next().ok_or_else(|| bad(ln, "truncated tensor"))?;
            for v in row.split(',') {
                data.push(v.trim().parse::<f64>().map_err(|_| bad(rl, "bad value"))?);
            }
        }
        let t = Array2::from_shape_vec((rows, cols), data).map_err(|_| bad(ln, "row width mismatch"))?;
        names.push(parts[1].to_string());
        tensors.push(t);
    }
    ParamSet::new(names, tensors)
}

pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    write_atomic(path, to_string(params).as_bytes())
}

pub fn load(path: &Path) -> Result<ParamSet> {
    from_str(&read_to_string(path)?).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other,
    })
}
