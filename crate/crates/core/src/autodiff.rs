//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records one forward pass. Parameter leaves read straight from a
//! borrowed [`ParamSet`], so building a tape never copies the weights. The
//! backward pass accepts several seeds at once, which is how gradients from a
//! batch-level loss (the contrastive term) are pushed back into per-example
//! tapes.

use crate::params::{Grads, ParamId, ParamSet};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<f64> },
    NormalizeRows { x: Var, norms: Vec<f64> },
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { table: Var, ids: Vec<usize> },
    SegmentMean { table: Var, groups: Vec<Vec<usize>> },
    MeanRows(Var),
    SumRows(Var),
    SumCols(Var),
    SumAll(Var),
    Transpose(Var),
    Nll { logits: Var, targets: Vec<usize> },
    LogMeanExp(Var),
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

const RMS_EPS: f64 = 1e-6;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self { params, nodes: Vec::with_capacity(256) }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_nt(self.value(b));
        self.push(v, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Adds the `1 × c` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a single row");
        assert_eq!(r.cols(), self.value(a).cols(), "add_row width mismatch");
        let mut v = self.value(a).clone();
        let rd = r.data().to_vec();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(&rd) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scaled(s);
        self.push(v, Op::Scale(a, s))
    }

    /// Tanh approximation of GELU; smooth everywhere.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_K * (x + 0.044715 * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    /// Row-wise softmax with max shift.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for i in 0..v.rows() {
            softmax_in_place(v.row_mut(i));
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Row-wise softmax with entries `(i, j)`, `j > i`, masked out.
    pub fn causal_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let keep = (i + 1).min(row.len());
            softmax_in_place(&mut row[..keep]);
            row[keep..].iter_mut().for_each(|e| *e = 0.0);
        }
        // The masked entries are exact zeros, so the generic softmax backward
        // rule yields zero gradient for them.
        self.push(v, Op::SoftmaxRows(a))
    }

    /// RMS normalisation of each row followed by a learned per-column gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Var {
        let xm = self.value(x);
        let g = self.value(gain);
        assert_eq!(g.shape(), (1, xm.cols()), "rms_norm gain shape");
        let n = xm.cols() as f64;
        let mut inv = Vec::with_capacity(xm.rows());
        let mut v = xm.clone();
        let gd = g.data().to_vec();
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let ms = row.iter().map(|e| e * e).sum::<f64>() / n;
            let r = 1.0 / (ms + RMS_EPS).sqrt();
            inv.push(r);
            for (e, gj) in row.iter_mut().zip(&gd) {
                *e *= r * gj;
            }
        }
        self.push(v, Op::RmsNorm { x, gain, inv_rms: inv })
    }

    /// Each row divided by its Euclidean norm. Rows must be nonzero.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let mut v = xm.clone();
        let mut norms = Vec::with_capacity(v.rows());
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let n = row.iter().map(|e| e * e).sum::<f64>().sqrt();
            norms.push(n);
            row.iter_mut().for_each(|e| *e /= n);
        }
        self.push(v, Op::NormalizeRows { x, norms })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xm = self.value(x);
        assert!(start + len <= xm.cols(), "slice_cols out of range");
        let v = Mat::from_fn(xm.rows(), len, |i, j| xm.at(i, start + j));
        self.push(v, Op::SliceCols { x, start })
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xm = self.value(x);
        assert!(start + len <= xm.rows(), "slice_rows out of range");
        let v = Mat::from_vec(len, xm.cols(), xm.data()[start * xm.cols()..(start + len) * xm.cols()].to_vec());
        self.push(v, Op::SliceRows { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Mat::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                v.row_mut(i)[off..off + m.cols()].copy_from_slice(m.row(i));
            }
            off += m.cols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows width mismatch");
            data.extend_from_slice(m.data());
            rows += m.rows();
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let v = self.value(table).gather_rows(ids);
        self.push(v, Op::GatherRows { table, ids: ids.to_vec() })
    }

    /// Row `g` of the output is the mean of `table` rows listed in `groups[g]`.
    pub fn segment_mean(&mut self, table: Var, groups: &[Vec<usize>]) -> Var {
        let t = self.value(table);
        let mut v = Mat::zeros(groups.len(), t.cols());
        for (g, ids) in groups.iter().enumerate() {
            assert!(!ids.is_empty(), "segment_mean over an empty group");
            let w = 1.0 / ids.len() as f64;
            let out = v.row_mut(g);
            for &id in ids {
                for (o, x) in out.iter_mut().zip(t.row(id)) {
                    *o += w * x;
                }
            }
        }
        self.push(v, Op::SegmentMean { table, groups: groups.to_vec() })
    }

    /// Column-wise mean, `1 × c`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let v = self.value(x).mean_rows();
        self.push(v, Op::MeanRows(x))
    }

    /// Sum of each row, `r × 1`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let v = Mat::from_fn(m.rows(), 1, |i, _| m.row(i).iter().sum());
        self.push(v, Op::SumRows(x))
    }

    /// Sum of each column, `1 × c`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let mut out = vec![0.0; m.cols()];
        for i in 0..m.rows() {
            for (o, e) in out.iter_mut().zip(m.row(i)) {
                *o += e;
            }
        }
        self.push(Mat::row_vector(out), Op::SumCols(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Mat::from_vec(1, 1, vec![s]), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).transpose();
        self.push(v, Op::Transpose(x))
    }

    /// `Σ_t −log softmax(logits[t])[targets[t]]` as a `1 × 1` node.
    pub fn nll(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len(), "one target per logit row");
        let mut total = 0.0;
        for (t, &y) in targets.iter().enumerate() {
            let row = l.row(t);
            total += log_sum_exp(row) - row[y];
        }
        self.push(Mat::from_vec(1, 1, vec![total]), Op::Nll { logits, targets: targets.to_vec() })
    }

    /// `ln( mean_i exp(x_i) )` over every entry, with max shift.
    pub fn log_mean_exp(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let v = log_sum_exp(m.data()) - (m.len() as f64).ln();
        self.push(Mat::from_vec(1, 1, vec![v]), Op::LogMeanExp(x))
    }

    /// Backward pass from a single scalar root with unit seed.
    pub fn backward(&self, root: Var) -> Backward {
        self.backward_seeded(&[(root, Mat::from_vec(1, 1, vec![1.0]))])
    }

    /// Backward pass from arbitrary seeds. Seeds on the same node add up.
    pub fn backward_seeded(&self, seeds: &[(Var, Mat)]) -> Backward {
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        let mut param_grads = Grads::for_params(self.params);
        for (v, g) in seeds {
            assert_eq!(self.value(*v).shape(), g.shape(), "seed shape mismatch");
            accumulate(&mut grads, *v, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Input) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Input => unreachable!(),
                Op::Param(id) => param_grads.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = g.matmul_nt(self.value(b));
                    let gb = self.value(a).matmul_tn(&g);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::MatMulNt(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = g.matmul(self.value(b));
                    let gb = g.matmul_tn(self.value(a));
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scaled(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let mut gr = vec![0.0; g.cols()];
                    for i in 0..g.rows() {
                        for (o, e) in gr.iter_mut().zip(g.row(i)) {
                            *o += e;
                        }
                    }
                    accumulate(&mut grads, *row, Mat::row_vector(gr));
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scaled(*s)),
                Op::Gelu(a) => {
                    let gx = g.zip_map(self.value(*a), |dy, x| {
                        let u = GELU_K * (x + 0.044715 * x * x * x);
                        let t = u.tanh();
                        let du = GELU_K * (1.0 + 3.0 * 0.044715 * x * x);
                        dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    });
                    accumulate(&mut grads, *a, gx);
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().expect("tanh value");
                    accumulate(&mut grads, *a, g.zip_map(y, |dy, t| dy * (1.0 - t * t)));
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("sigmoid value");
                    accumulate(&mut grads, *a, g.zip_map(y, |dy, s| dy * s * (1.0 - s)));
                }
                Op::Softplus(a) => {
                    accumulate(&mut grads, *a, g.zip_map(self.value(*a), |dy, x| dy * sigmoid(x)));
                }
                Op::Exp(a) => {
                    let y = node.value.as_ref().expect("exp value");
                    accumulate(&mut grads, *a, g.zip_map(y, |dy, e| dy * e));
                }
                Op::Log(a) => {
                    accumulate(&mut grads, *a, g.zip_map(self.value(*a), |dy, x| dy / x));
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().expect("softmax value");
                    let mut gx = Mat::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (yy, gg)) in gx.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yy * (gg - s);
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::RmsNorm { x, gain, inv_rms } => {
                    let xm = self.value(*x);
                    let gm = self.value(*gain).data();
                    let n = xm.cols() as f64;
                    let mut gx = Mat::zeros(xm.rows(), xm.cols());
                    let mut gg = vec![0.0; xm.cols()];
                    for i in 0..xm.rows() {
                        let r = inv_rms[i];
                        let xr = xm.row(i);
                        let dy = g.row(i);
                        let mut s = 0.0;
                        for j in 0..xr.len() {
                            gg[j] += dy[j] * xr[j] * r;
                            s += dy[j] * gm[j] * xr[j];
                        }
                        let c = r * r * r * s / n;
                        for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                            *o = gm[j] * dy[j] * r - xr[j] * c;
                        }
                    }
                    accumulate(&mut grads, *gain, Mat::row_vector(gg));
                    accumulate(&mut grads, *x, gx);
                }
                Op::NormalizeRows { x, norms } => {
                    let y = node.value.as_ref().expect("normalize value");
                    let mut gx = Mat::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let dy = g.row(i);
                        let s: f64 = yr.iter().zip(dy).map(|(a, b)| a * b).sum();
                        for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                            *o = (dy[j] - yr[j] * s) / norms[i];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceCols { x, start } => {
                    let xm = self.value(*x);
                    let mut gx = Mat::zeros(xm.rows(), xm.cols());
                    for i in 0..g.rows() {
                        gx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceRows { x, start } => {
                    let xm = self.value(*x);
                    let mut gx = Mat::zeros(xm.rows(), xm.cols());
                    let c = xm.cols();
                    gx.data_mut()[start * c..(start + g.rows()) * c].copy_from_slice(g.data());
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let gp = Mat::from_fn(g.rows(), w, |i, j| g.at(i, off + j));
                        off += w;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let c = g.cols();
                    let mut off = 0;
                    for &p in parts {
                        let r = self.value(p).rows();
                        let gp = Mat::from_vec(r, c, g.data()[off * c..(off + r) * c].to_vec());
                        off += r;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::GatherRows { table, ids } => {
                    scatter_rows(self, &mut grads, &mut param_grads, *table, |add| {
                        for (r, &id) in ids.iter().enumerate() {
                            add(id, g.row(r), 1.0);
                        }
                    });
                }
                Op::SegmentMean { table, groups } => {
                    scatter_rows(self, &mut grads, &mut param_grads, *table, |add| {
                        for (r, ids) in groups.iter().enumerate() {
                            let w = 1.0 / ids.len() as f64;
                            for &id in ids {
                                add(id, g.row(r), w);
                            }
                        }
                    });
                }
                Op::MeanRows(x) => {
                    let xm = self.value(*x);
                    let w = 1.0 / xm.rows() as f64;
                    let gr: Vec<f64> = g.data().iter().map(|v| v * w).collect();
                    let gx = Mat::from_fn(xm.rows(), xm.cols(), |_, j| gr[j]);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SumRows(x) => {
                    let xm = self.value(*x);
                    let gx = Mat::from_fn(xm.rows(), xm.cols(), |i, _| g.at(i, 0));
                    accumulate(&mut grads, *x, gx);
                }
                Op::SumCols(x) => {
                    let xm = self.value(*x);
                    let gx = Mat::from_fn(xm.rows(), xm.cols(), |_, j| g.at(0, j));
                    accumulate(&mut grads, *x, gx);
                }
                Op::SumAll(x) => {
                    let xm = self.value(*x);
                    let s = g.data()[0];
                    accumulate(&mut grads, *x, Mat::filled(xm.rows(), xm.cols(), s));
                }
                Op::Transpose(x) => accumulate(&mut grads, *x, g.transpose()),
                Op::Nll { logits, targets } => {
                    let l = self.value(*logits);
                    let s = g.data()[0];
                    let mut gl = Mat::zeros(l.rows(), l.cols());
                    for (t, &y) in targets.iter().enumerate() {
                        let row = gl.row_mut(t);
                        row.copy_from_slice(l.row(t));
                        softmax_in_place(row);
                        row[y] -= 1.0;
                        row.iter_mut().for_each(|e| *e *= s);
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::LogMeanExp(x) => {
                    let xm = self.value(*x);
                    let s = g.data()[0];
                    let mut w = xm.data().to_vec();
                    softmax_in_place(&mut w);
                    w.iter_mut().for_each(|e| *e *= s);
                    accumulate(&mut grads, *x, Mat::from_vec(xm.rows(), xm.cols(), w));
                }
            }
        }
        Backward { nodes: grads, params: param_grads }
    }
}

/// Scatter-add rows into a table gradient. Parameter tables are written
/// straight into the dense parameter gradient instead of a node slot.
fn scatter_rows(
    tape: &Tape<'_>,
    grads: &mut [Option<Mat>],
    param_grads: &mut Grads,
    table: Var,
    body: impl FnOnce(&mut dyn FnMut(usize, &[f64], f64)),
) {
    let shape = tape.value(table).shape();
    let target: &mut Mat = match &tape.nodes[table.0].op {
        Op::Param(id) => param_grads.slot_mut(*id, shape),
        _ => grads[table.0].get_or_insert_with(|| Mat::zeros(shape.0, shape.1)),
    };
    body(&mut |id, row, w| {
        for (o, e) in target.row_mut(id).iter_mut().zip(row) {
            *o += w * e;
        }
    });
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of a backward pass.
pub struct Backward {
    nodes: Vec<Option<Mat>>,
    params: Grads,
}

impl Backward {
    /// Gradient with respect to an input node, if any flowed into it.
    /// Interior node gradients are released during the pass.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.nodes[v.0].as_ref()
    }

    pub fn params(&self) -> &Grads {
        &self.params
    }

    pub fn into_params(self) -> Grads {
        self.params
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    xs.iter_mut().for_each(|x| *x /= s);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of every parameter coordinate of a small graph.
    fn check(params: &ParamSet, f: impl Fn(&mut Tape) -> Var) {
        let tape_grads = {
            let mut t = Tape::new(params);
            let out = f(&mut t);
            t.backward(out).into_params()
        };
        let h = 1e-6;
        for (id, name, m) in params.iter() {
            for k in 0..m.len() {
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    p.get_mut(id).data_mut()[k] += delta;
                    let mut t = Tape::new(&p);
                    let out = f(&mut t);
                    t.scalar(out)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = tape_grads.coord(id, k);
                let err = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-6);
                assert!(err < 1e-5, "{name}[{k}]: fd {fd} vs analytic {an}");
            }
        }
    }

    fn random_params(shapes: &[(&str, usize, usize)], seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        for &(n, r, c) in shapes {
            ps.add(n, Mat::randn(r, c, 0.7, &mut rng));
        }
        ps
    }

    #[test]
    fn dense_ops_match_finite_differences() {
        let ps = random_params(&[("a", 3, 4), ("b", 4, 5), ("r", 1, 5), ("c", 3, 5), ("g", 1, 5)], 1);
        check(&ps, |t| {
            let a = t.param(ParamId(0));
            let b = t.param(ParamId(1));
            let r = t.param(ParamId(2));
            let c = t.param(ParamId(3));
            let g = t.param(ParamId(4));
            let x = t.matmul(a, b);
            let x = t.add_row(x, r);
            let x = t.gelu(x);
            let y = t.mul(x, c);
            let y = t.rms_norm(y, g);
            let z = t.tanh(y);
            let s = t.softmax_rows(z);
            let q = t.matmul_nt(s, c);
            let q = t.causal_softmax_rows(q);
            let n = t.sum_all(q);
            let e = t.sub(x, c);
            let e = t.sigmoid(e);
            let m = t.mean_rows(e);
            let m = t.softplus(m);
            let m = t.sum_all(m);
            let total = t.add(n, m);
            t.scale(total, 1.3)
        });
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let ps = random_params(&[("t", 6, 3), ("x", 2, 3), ("l", 4, 6)], 2);
        check(&ps, |t| {
            let table = t.param(ParamId(0));
            let x = t.param(ParamId(1));
            let l = t.param(ParamId(2));
            let g = t.gather_rows(table, &[4, 1, 4]);
            let s = t.segment_mean(table, &[vec![0, 2], vec![5], vec![1, 1, 3]]);
            let both = t.concat_rows(&[g, s, x]);
            let nr = t.normalize_rows(both);
            let cc = t.concat_cols(&[nr, nr]);
            let sl = t.slice_cols(cc, 2, 3);
            let sr = t.slice_rows(sl, 1, 4);
            let tr = t.transpose(sr);
            let logits = t.matmul(tr, l);
            let logits = t.slice_rows(logits, 0, 3);
            let nll = t.nll(logits, &[0, 5, 2]);
            let sc = t.sum_cols(sr);
            let sc = t.exp(sc);
            let sc = t.log(sc);
            let sr2 = t.sum_rows(sc);
            let lme = t.log_mean_exp(sr);
            let a = t.add(nll, sr2);
            t.add(a, lme)
        });
    }

    #[test]
    fn multiple_seeds_accumulate() {
        let ps = random_params(&[("w", 2, 2)], 3);
        let mut t = Tape::new(&ps);
        let w = t.param(ParamId(0));
        let a = t.sum_all(w);
        let b = t.scale(w, 2.0);
        let b = t.sum_all(b);
        let bw = t.backward_seeded(&[(a, Mat::filled(1, 1, 1.0)), (b, Mat::filled(1, 1, 0.5))]);
        let g = bw.params().get(ParamId(0)).unwrap();
        assert!(g.data().iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn masked_softmax_entries_are_zero() {
        let ps = ParamSet::new();
        let mut t = Tape::new(&ps);
        let x = t.input(Mat::from_fn(3, 3, |i, j| (i + j) as f64));
        let y = t.causal_softmax_rows(x);
        let v = t.value(y);
        assert_eq!(v.at(0, 1), 0.0);
        assert_eq!(v.at(1, 2), 0.0);
        assert!((v.at(0, 0) - 1.0).abs() < 1e-15);
    }
}
