//! Reverse-mode gradient tape over dense 2-D `f64` tensors.
//!
//! Values are recorded in execution order; [`Tape::backward`] walks the
//! record in reverse and accumulates vector-Jacobian products. Graph
//! operations (attention aggregation, fixed-weight aggregation) are single
//! fused ops with hand-written adjoints.

use std::sync::Arc;

use ndarray::{Array2, Axis};

use super::batch::Csr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Elu(Var),
    Attention(Box<AttentionRecord>),
    Propagate { z: Var, csr: Arc<Csr> },
    HeadMean { x: Var, heads: usize },
    Gather { x: Var, rows: Arc<Vec<usize>> },
    LogSoftmax(Var),
    NllMean { logp: Var, labels: Arc<Vec<u8>> },
}

#[derive(Debug)]
struct AttentionRecord {
    z: Var,
    att_src: Var,
    att_dst: Var,
    heads: usize,
    slope: f64,
    csr: Arc<Csr>,
    /// Softmax weights per (edge, head).
    alpha: Vec<f64>,
    /// Pre-activation scores per (edge, head).
    score: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `x + b` with `b` a `1 × cols` row broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let v = self.value(x) + self.value(b);
        let ng = self.ng(x) || self.ng(b);
        self.push(v, Op::AddRow(x, b), ng)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|t| if t > 0.0 { t } else { t.exp_m1() });
        let ng = self.ng(x);
        self.push(v, Op::Elu(x), ng)
    }

    /// Multi-head attention aggregation over the destination-indexed CSR.
    ///
    /// `z` is `N × (heads·f)`; `att_src`, `att_dst` are `heads × f`. For
    /// destination `i` (input row `t = targets[i]`) and head `h`:
    /// `e_ij = LeakyReLU(a_dst·z_t + a_src·z_j)`, `α_ij = softmax_j(e_ij)`,
    /// output row `i` is `Σ_j α_ij z_j`. Heads are concatenated. The output has
    /// one row per destination; destinations without incoming edges get zeros.
    pub fn attention(&mut self, z: Var, att_src: Var, att_dst: Var, csr: Arc<Csr>, slope: f64) -> Var {
        let zv = self.value(z);
        let (asrc, adst) = (self.value(att_src), self.value(att_dst));
        let heads = asrc.nrows();
        let f = asrc.ncols();
        let n_in = zv.nrows();
        let n = csr.num_nodes();
        assert_eq!(zv.ncols(), heads * f, "attention input width");
        assert!(csr.fits(n_in), "attention graph size");
        let mut ss = vec![0.0; n_in * heads];
        for j in 0..n_in {
            let row = zv.row(j);
            let row = row.as_slice().expect("row-major");
            for h in 0..heads {
                let zh = &row[h * f..(h + 1) * f];
                ss[j * heads + h] = dot(zh, asrc.row(h).as_slice().expect("row-major"));
            }
        }
        let mut sd = vec![0.0; n * heads];
        for (i, &t) in csr.targets.iter().enumerate() {
            let row = zv.row(t);
            let row = row.as_slice().expect("row-major");
            for h in 0..heads {
                let zh = &row[h * f..(h + 1) * f];
                sd[i * heads + h] = dot(zh, adst.row(h).as_slice().expect("row-major"));
            }
        }
        let m = csr.num_edges();
        let mut alpha = vec![0.0; m * heads];
        let mut score = vec![0.0; m * heads];
        let mut out = Array2::<f64>::zeros((n, heads * f));
        for i in 0..n {
            let (lo, hi) = csr.range(i);
            if lo == hi {
                continue;
            }
            let mut orow = out.row_mut(i);
            let orow = orow.as_slice_mut().expect("row-major");
            for h in 0..heads {
                let mut mx = f64::NEG_INFINITY;
                for e in lo..hi {
                    let j = csr.sources[e];
                    let s = sd[i * heads + h] + ss[j * heads + h];
                    score[e * heads + h] = s;
                    let act = if s > 0.0 { s } else { slope * s };
                    alpha[e * heads + h] = act;
                    mx = mx.max(act);
                }
                let mut denom = 0.0;
                for e in lo..hi {
                    let w = (alpha[e * heads + h] - mx).exp();
                    alpha[e * heads + h] = w;
                    denom += w;
                }
                let oh = &mut orow[h * f..(h + 1) * f];
                for e in lo..hi {
                    let a = alpha[e * heads + h] / denom;
                    alpha[e * heads + h] = a;
                    let zj = zv.row(csr.sources[e]);
                    let zj = &zj.as_slice().expect("row-major")[h * f..(h + 1) * f];
                    for (o, &zz) in oh.iter_mut().zip(zj) {
                        *o += a * zz;
                    }
                }
            }
        }
        let ng = self.ng(z) || self.ng(att_src) || self.ng(att_dst);
        self.push(
            out,
            Op::Attention(Box::new(AttentionRecord {
                z,
                att_src,
                att_dst,
                heads,
                slope,
                csr,
                alpha,
                score,
            })),
            ng,
        )
    }

    /// Attention weights recorded by an [`Tape::attention`] output, indexed `[edge * heads + head]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention(r) => Some(&r.alpha),
            _ => None,
        }
    }

    /// Fixed-weight aggregation `out_i = Σ_e w_e z_src(e)` using the CSR's edge
    /// weights, one output row per destination.
    pub fn propagate(&mut self, z: Var, csr: Arc<Csr>) -> Var {
        let zv = self.value(z);
        assert!(csr.fits(zv.nrows()), "propagate graph size");
        let mut out = Array2::<f64>::zeros((csr.num_nodes(), zv.ncols()));
        for i in 0..csr.num_nodes() {
            let (lo, hi) = csr.range(i);
            let mut orow = out.row_mut(i);
            for e in lo..hi {
                orow.scaled_add(csr.weights[e], &zv.row(csr.sources[e]));
            }
        }
        let ng = self.ng(z);
        self.push(out, Op::Propagate { z, csr }, ng)
    }

    /// Averages `heads` equal-width column blocks.
    pub fn head_mean(&mut self, x: Var, heads: usize) -> Var {
        let xv = self.value(x);
        let c = xv.ncols() / heads;
        assert_eq!(c * heads, xv.ncols(), "head_mean width");
        let mut out = Array2::<f64>::zeros((xv.nrows(), c));
        for h in 0..heads {
            out += &xv.slice(ndarray::s![.., h * c..(h + 1) * c]);
        }
        out /= heads as f64;
        let ng = self.ng(x);
        self.push(out, Op::HeadMean { x, heads }, ng)
    }

    pub fn gather(&mut self, x: Var, rows: Arc<Vec<usize>>) -> Var {
        let v = self.value(x).select(Axis(0), &rows);
        let ng = self.ng(x);
        self.push(v, Op::Gather { x, rows }, ng)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = mx + row.iter().map(|t| (t - mx).exp()).sum::<f64>().ln();
            row.mapv_inplace(|t| t - lse);
        }
        let ng = self.ng(x);
        self.push(v, Op::LogSoftmax(x), ng)
    }

    /// Mean negative log-likelihood of `labels` under row log-probabilities; `1 × 1`.
    pub fn nll_mean(&mut self, logp: Var, labels: Arc<Vec<u8>>) -> Var {
        let lv = self.value(logp);
        assert_eq!(lv.nrows(), labels.len(), "nll label count");
        let n = labels.len().max(1) as f64;
        let s: f64 = labels.iter().enumerate().map(|(r, &y)| -lv[[r, y as usize]]).sum();
        let ng = self.ng(logp);
        self.push(Array2::from_elem((1, 1), s / n), Op::NllMean { logp, labels }, ng)
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.apply_vjp(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn apply_vjp(&self, op: &Op, out: &Array2<f64>, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let mut acc = |v: Var, d: Array2<f64>| {
            if !self.ng(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot => *slot = Some(d),
            }
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                if self.ng(*b) {
                    acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Elu(x) => {
                let d = ndarray::Zip::from(g)
                    .and(out)
                    .map_collect(|&gi, &yi| if yi > 0.0 { gi } else { gi * (yi + 1.0) });
                acc(*x, d);
            }
            Op::Attention(r) => {
                let (dz, dsrc, ddst) = self.attention_vjp(r, g);
                acc(r.z, dz);
                acc(r.att_src, dsrc);
                acc(r.att_dst, ddst);
            }
            Op::Propagate { z, csr } => {
                let mut dz = Array2::<f64>::zeros(self.value(*z).raw_dim());
                for i in 0..csr.num_nodes() {
                    let (lo, hi) = csr.range(i);
                    for e in lo..hi {
                        dz.row_mut(csr.sources[e]).scaled_add(csr.weights[e], &g.row(i));
                    }
                }
                acc(*z, dz);
            }
            Op::HeadMean { x, heads } => {
                let c = g.ncols();
                let mut d = Array2::<f64>::zeros((g.nrows(), c * heads));
                let scaled = g / *heads as f64;
                for h in 0..*heads {
                    d.slice_mut(ndarray::s![.., h * c..(h + 1) * c]).assign(&scaled);
                }
                acc(*x, d);
            }
            Op::Gather { x, rows } => {
                let mut d = Array2::<f64>::zeros(self.value(*x).raw_dim());
                for (r, &src) in rows.iter().enumerate() {
                    let mut dr = d.row_mut(src);
                    dr += &g.row(r);
                }
                acc(*x, d);
            }
            Op::LogSoftmax(x) => {
                let mut d = g.clone();
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(out.rows()) {
                    let gs = drow.sum();
                    for (di, &yi) in drow.iter_mut().zip(yrow) {
                        *di -= yi.exp() * gs;
                    }
                }
                acc(*x, d);
            }
            Op::NllMean { logp, labels } => {
                let lv = self.value(*logp);
                let mut d = Array2::<f64>::zeros(lv.raw_dim());
                let scale = g[[0, 0]] / labels.len().max(1) as f64;
                for (r, &y) in labels.iter().enumerate() {
                    d[[r, y as usize]] = -scale;
                }
                acc(*logp, d);
            }
        }
    }

    fn attention_vjp(&self, r: &AttentionRecord, g: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let zv = self.value(r.z);
        let asrc = self.value(r.att_src);
        let adst = self.value(r.att_dst);
        let heads = r.heads;
        let f = asrc.ncols();
        let n_in = zv.nrows();
        let csr = &r.csr;
        let n = csr.num_nodes();
        let mut dz = Array2::<f64>::zeros(zv.raw_dim());
        // both score adjoints are indexed by input row
        let mut dsd = vec![0.0; n_in * heads];
        let mut dss = vec![0.0; n_in * heads];
        let mut dalpha: Vec<f64> = Vec::new();
        for i in 0..n {
            let (lo, hi) = csr.range(i);
            if lo == hi {
                continue;
            }
            let t = csr.targets[i];
            let gi = g.row(i);
            let gi = gi.as_slice().expect("row-major");
            for h in 0..heads {
                let gh = &gi[h * f..(h + 1) * f];
                dalpha.clear();
                let mut weighted = 0.0;
                for e in lo..hi {
                    let zj = zv.row(csr.sources[e]);
                    let da = dot(gh, &zj.as_slice().expect("row-major")[h * f..(h + 1) * f]);
                    weighted += r.alpha[e * heads + h] * da;
                    dalpha.push(da);
                }
                for (k, e) in (lo..hi).enumerate() {
                    let j = csr.sources[e];
                    let a = r.alpha[e * heads + h];
                    let de = a * (dalpha[k] - weighted);
                    let ds = if r.score[e * heads + h] > 0.0 { de } else { r.slope * de };
                    dsd[t * heads + h] += ds;
                    dss[j * heads + h] += ds;
                    let mut dzj = dz.row_mut(j);
                    let dzj = &mut dzj.as_slice_mut().expect("row-major")[h * f..(h + 1) * f];
                    for (d, &gg) in dzj.iter_mut().zip(gh) {
                        *d += a * gg;
                    }
                }
            }
        }
        let mut dsrc = Array2::<f64>::zeros(asrc.raw_dim());
        let mut ddst = Array2::<f64>::zeros(adst.raw_dim());
        for i in 0..n_in {
            let zi = zv.row(i);
            let zi = zi.as_slice().expect("row-major");
            let mut dzi = dz.row_mut(i);
            let dzi = dzi.as_slice_mut().expect("row-major");
            for h in 0..heads {
                let (a_d, a_s) = (dsd[i * heads + h], dss[i * heads + h]);
                if a_d == 0.0 && a_s == 0.0 {
                    continue;
                }
                let ad = adst.row(h);
                let as_ = asrc.row(h);
                for k in 0..f {
                    dzi[h * f + k] += a_d * ad[k] + a_s * as_[k];
                    ddst[[h, k]] += a_d * zi[h * f + k];
                    dsrc[[h, k]] += a_s * zi[h * f + k];
                }
            }
        }
        (dz, dsrc, ddst)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads[v.0].take()
    }
}
