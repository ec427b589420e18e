//! Reverse-mode automatic differentiation over a recorded operation list.

use std::rc::Rc;

use super::tensor::Tensor;
use super::GraspNetError;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Reshape(Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    /// Second operand repeats with its own length as period.
    AddRepeat(Var, Var),
    Scale(Var, f64),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Gather { x: Var, index: Rc<Vec<Option<usize>>> },
    Concat(Vec<Var>),
    Bmm { a: Var, b: Var, trans_b: bool },
    /// Softmax over the last axis. Masked entries have zero output, so the
    /// backward pass needs only the stored probabilities.
    MaskedSoftmax(Var),
    Sse { pred: Var, target: Rc<Tensor> },
    WeightedSum(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Computation graph. Values are computed eagerly as ops are added.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn mismatch(what: &str, a: &[usize], b: &[usize]) -> GraspNetError {
    GraspNetError::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, GraspNetError> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// `x[.., k] · w[k, m]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var, GraspNetError> {
        let (xt, wt) = (self.value(x), self.value(w));
        if wt.shape.len() != 2 || xt.last_dim() != wt.shape[0] {
            return Err(mismatch("matmul", &xt.shape, &wt.shape));
        }
        let (k, m) = (wt.shape[0], wt.shape[1]);
        let rows = xt.rows();
        let mut out = vec![0.0; rows * m];
        for r in 0..rows {
            let xr = &xt.data[r * k..(r + 1) * k];
            let orow = &mut out[r * m..(r + 1) * m];
            for (i, &a) in xr.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let wr = &wt.data[i * m..(i + 1) * m];
                for (o, &b) in orow.iter_mut().zip(wr) {
                    *o += a * b;
                }
            }
        }
        let mut shape = xt.shape.clone();
        *shape.last_mut().unwrap() = m;
        Ok(self.push(Tensor { shape, data: out }, Op::MatMul(x, w)))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, GraspNetError> {
        let (xt, bt) = (self.value(x), self.value(b));
        if bt.shape.len() != 1 || bt.shape[0] != xt.last_dim() {
            return Err(mismatch("add_bias", &xt.shape, &bt.shape));
        }
        let m = bt.shape[0];
        let data = xt.data.iter().enumerate().map(|(i, v)| v + bt.data[i % m]).collect();
        let shape = xt.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::AddBias(x, b)))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, GraspNetError> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GraspNetError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape != bt.shape {
            return Err(mismatch("add", &at.shape, &bt.shape));
        }
        let data = at.data.iter().zip(&bt.data).map(|(x, y)| x + y).collect();
        let shape = at.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b)))
    }

    /// `a + b` where `b` is tiled along the flat data of `a`.
    pub fn add_repeat(&mut self, a: Var, b: Var) -> Result<Var, GraspNetError> {
        let (at, bt) = (self.value(a), self.value(b));
        if bt.is_empty() || at.len() % bt.len() != 0 {
            return Err(mismatch("add_repeat", &at.shape, &bt.shape));
        }
        let n = bt.len();
        let data = at.data.iter().enumerate().map(|(i, v)| v + bt.data[i % n]).collect();
        let shape = at.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::AddRepeat(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xt = self.value(x);
        let t = Tensor { shape: xt.shape.clone(), data: xt.data.iter().map(|v| v * s).collect() };
        self.push(t, Op::Scale(x, s))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, GraspNetError> {
        let (xt, gt, bt) = (self.value(x), self.value(gamma), self.value(beta));
        let m = xt.last_dim();
        if gt.shape != [m] || bt.shape != [m] {
            return Err(mismatch("layer_norm", &xt.shape, &gt.shape));
        }
        let rows = xt.rows();
        let mut xhat = vec![0.0; xt.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xt.len()];
        for r in 0..rows {
            let row = &xt.data[r * m..(r + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..m {
                let h = (row[j] - mean) * is;
                xhat[r * m + j] = h;
                out[r * m + j] = h * gt.data[j] + bt.data[j];
            }
        }
        let shape = xt.shape.clone();
        Ok(self.push(Tensor { shape, data: out }, Op::LayerNorm { x, gamma, beta, xhat, inv_std }))
    }

    fn unary(&mut self, x: Var, f: fn(f64) -> f64, op: Op) -> Var {
        let xt = self.value(x);
        let t = Tensor { shape: xt.shape.clone(), data: xt.data.iter().map(|&v| f(v)).collect() };
        self.push(t, op)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    /// `out[i] = x[index[i]]`, or 0 for `None`.
    pub fn gather(&mut self, x: Var, index: Rc<Vec<Option<usize>>>, shape: &[usize]) -> Result<Var, GraspNetError> {
        let xt = self.value(x);
        if shape.iter().product::<usize>() != index.len() {
            return Err(GraspNetError::ShapeMismatch(format!("gather index {} vs shape {shape:?}", index.len())));
        }
        if let Some(bad) = index.iter().flatten().find(|&&i| i >= xt.len()) {
            return Err(GraspNetError::ShapeMismatch(format!("gather index {bad} out of {}", xt.len())));
        }
        let data = index.iter().map(|i| i.map_or(0.0, |i| xt.data[i])).collect();
        Ok(self.push(Tensor { shape: shape.to_vec(), data }, Op::Gather { x, index }))
    }

    /// Concatenation along the last axis; leading shapes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, GraspNetError> {
        let first = self.value(parts[0]);
        let lead = first.shape[..first.shape.len() - 1].to_vec();
        let rows = first.rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.shape[..t.shape.len() - 1] != lead[..] {
                return Err(mismatch("concat", &first.shape, &t.shape));
            }
            widths.push(t.last_dim());
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let t = self.value(p);
            for r in 0..rows {
                data[r * total + off..r * total + off + w].copy_from_slice(&t.data[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead;
        shape.push(total);
        Ok(self.push(Tensor { shape, data }, Op::Concat(parts.to_vec())))
    }

    /// Batched product of `[b, n, k]` with `[b, k, m]` (or `[b, m, k]` when
    /// `trans_b`).
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, GraspNetError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape.len() != 3 || bt.shape.len() != 3 || at.shape[0] != bt.shape[0] {
            return Err(mismatch("bmm", &at.shape, &bt.shape));
        }
        let (batch, n, k) = (at.shape[0], at.shape[1], at.shape[2]);
        let (bk, m) = if trans_b { (bt.shape[2], bt.shape[1]) } else { (bt.shape[1], bt.shape[2]) };
        if bk != k {
            return Err(mismatch("bmm", &at.shape, &bt.shape));
        }
        let mut out = vec![0.0; batch * n * m];
        for z in 0..batch {
            let ab = &at.data[z * n * k..(z + 1) * n * k];
            let bb = &bt.data[z * k * m..(z + 1) * k * m];
            let ob = &mut out[z * n * m..(z + 1) * n * m];
            for i in 0..n {
                for j in 0..m {
                    let mut acc = 0.0;
                    for l in 0..k {
                        let bv = if trans_b { bb[j * k + l] } else { bb[l * m + j] };
                        acc += ab[i * k + l] * bv;
                    }
                    ob[i * m + j] = acc;
                }
            }
        }
        Ok(self.push(Tensor { shape: vec![batch, n, m], data: out }, Op::Bmm { a, b, trans_b }))
    }

    pub fn masked_softmax(&mut self, x: Var, mask: Option<Rc<Vec<bool>>>) -> Result<Var, GraspNetError> {
        let xt = self.value(x);
        if let Some(m) = &mask {
            if m.is_empty() || xt.len() % m.len() != 0 || m.len() % xt.last_dim() != 0 {
                return Err(GraspNetError::ShapeMismatch(format!("mask of {} for {:?}", m.len(), xt.shape)));
            }
        }
        let n = xt.last_dim();
        let mut out = vec![0.0; xt.len()];
        let masked = |i: usize| mask.as_ref().is_some_and(|m| m[i % m.len()]);
        for r in 0..xt.rows() {
            let base = r * n;
            let mut mx = f64::NEG_INFINITY;
            for j in 0..n {
                if !masked(base + j) {
                    mx = mx.max(xt.data[base + j]);
                }
            }
            if mx == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for j in 0..n {
                if !masked(base + j) {
                    let e = (xt.data[base + j] - mx).exp();
                    out[base + j] = e;
                    sum += e;
                }
            }
            out[base..base + n].iter_mut().for_each(|v| *v /= sum);
        }
        let shape = xt.shape.clone();
        Ok(self.push(Tensor { shape, data: out }, Op::MaskedSoftmax(x)))
    }

    /// Sum of squared differences against a constant target.
    pub fn sse(&mut self, pred: Var, target: Rc<Tensor>) -> Result<Var, GraspNetError> {
        let pt = self.value(pred);
        if pt.shape != target.shape {
            return Err(mismatch("sse", &pt.shape, &target.shape));
        }
        let s = pt.data.iter().zip(&target.data).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(self.push(Tensor::scalar(s), Op::Sse { pred, target }))
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var, GraspNetError> {
        let shape = self.value(terms[0].0).shape.clone();
        let mut data = vec![0.0; self.value(terms[0].0).len()];
        for &(v, w) in terms {
            let t = self.value(v);
            if t.shape != shape {
                return Err(mismatch("weighted_sum", &shape, &t.shape));
            }
            data.iter_mut().zip(&t.data).for_each(|(d, x)| *d += w * x);
        }
        Ok(self.push(Tensor { shape, data }, Op::WeightedSum(terms.to_vec())))
    }

    /// Gradients of the scalar `out` with respect to every node; `None` for
    /// nodes it does not depend on.
    pub fn backward(&self, out: Var) -> Vec<Option<Vec<f64>>> {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(vec![1.0; self.nodes[out.0].value.len()]);
        for id in (0..=out.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        grads
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            let n = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Reshape(x) => acc(*x, &|s| s.iter_mut().zip(g).for_each(|(a, b)| *a += b)),
            Op::MatMul(x, w) => {
                let (xt, wt) = (val(*x), val(*w));
                let (k, m) = (wt.shape[0], wt.shape[1]);
                let rows = xt.rows();
                acc(*x, &|s| {
                    for r in 0..rows {
                        let gr = &g[r * m..(r + 1) * m];
                        for i in 0..k {
                            let wr = &wt.data[i * m..(i + 1) * m];
                            s[r * k + i] += gr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                acc(*w, &|s| {
                    for r in 0..rows {
                        let gr = &g[r * m..(r + 1) * m];
                        for i in 0..k {
                            let a = xt.data[r * k + i];
                            if a == 0.0 {
                                continue;
                            }
                            for (sv, gv) in s[i * m..(i + 1) * m].iter_mut().zip(gr) {
                                *sv += a * gv;
                            }
                        }
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc(*x, &|s| s.iter_mut().zip(g).for_each(|(a, v)| *a += v));
                let m = val(*b).len();
                acc(*b, &|s| g.iter().enumerate().for_each(|(i, v)| s[i % m] += v));
            }
            Op::Add(a, b) => {
                acc(*a, &|s| s.iter_mut().zip(g).for_each(|(x, v)| *x += v));
                acc(*b, &|s| s.iter_mut().zip(g).for_each(|(x, v)| *x += v));
            }
            Op::AddRepeat(a, b) => {
                acc(*a, &|s| s.iter_mut().zip(g).for_each(|(x, v)| *x += v));
                let n = val(*b).len();
                acc(*b, &|s| g.iter().enumerate().for_each(|(i, v)| s[i % n] += v));
            }
            Op::Scale(x, k) => acc(*x, &|s| s.iter_mut().zip(g).for_each(|(a, v)| *a += k * v)),
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gt = val(*gamma);
                let m = gt.len();
                let rows = inv_std.len();
                acc(*x, &|s| {
                    for r in 0..rows {
                        let range = r * m..(r + 1) * m;
                        let dh: Vec<f64> = g[range.clone()].iter().zip(&gt.data).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(&xhat[range.clone()]).map(|(a, b)| a * b).sum();
                        for j in 0..m {
                            let h = xhat[r * m + j];
                            s[r * m + j] += inv_std[r] / m as f64 * (m as f64 * dh[j] - sum_dh - h * sum_dh_h);
                        }
                    }
                });
                acc(*gamma, &|s| g.iter().zip(xhat).enumerate().for_each(|(i, (a, h))| s[i % m] += a * h));
                acc(*beta, &|s| g.iter().enumerate().for_each(|(i, a)| s[i % m] += a));
            }
            Op::Gelu(x) => {
                let xt = val(*x);
                acc(*x, &|s| s.iter_mut().zip(g).zip(&xt.data).for_each(|((a, v), xv)| *a += v * gelu_grad(*xv)));
            }
            Op::Sigmoid(x) => {
                let y = &node.value.data;
                acc(*x, &|s| s.iter_mut().zip(g).zip(y).for_each(|((a, v), yv)| *a += v * yv * (1.0 - yv)));
            }
            Op::Tanh(x) => {
                let y = &node.value.data;
                acc(*x, &|s| s.iter_mut().zip(g).zip(y).for_each(|((a, v), yv)| *a += v * (1.0 - yv * yv)));
            }
            Op::Softplus(x) => {
                let xt = val(*x);
                acc(*x, &|s| s.iter_mut().zip(g).zip(&xt.data).for_each(|((a, v), xv)| *a += v * sigmoid(*xv)));
            }
            Op::Gather { x, index } => acc(*x, &|s| {
                for (o, i) in index.iter().enumerate() {
                    if let Some(i) = i {
                        s[*i] += g[o];
                    }
                }
            }),
            Op::Concat(parts) => {
                let total = node.value.last_dim();
                let rows = node.value.rows();
                let mut off = 0;
                for &p in parts {
                    let w = val(p).last_dim();
                    acc(p, &|s| {
                        for r in 0..rows {
                            for j in 0..w {
                                s[r * w + j] += g[r * total + off + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let (at, bt) = (val(*a), val(*b));
                let (batch, n, k) = (at.shape[0], at.shape[1], at.shape[2]);
                let m = node.value.shape[2];
                let bidx = |l: usize, j: usize| if *trans_b { j * k + l } else { l * m + j };
                acc(*a, &|s| {
                    for z in 0..batch {
                        for i in 0..n {
                            for l in 0..k {
                                let mut sum = 0.0;
                                for j in 0..m {
                                    sum += g[z * n * m + i * m + j] * bt.data[z * k * m + bidx(l, j)];
                                }
                                s[z * n * k + i * k + l] += sum;
                            }
                        }
                    }
                });
                acc(*b, &|s| {
                    for z in 0..batch {
                        for l in 0..k {
                            for j in 0..m {
                                let mut sum = 0.0;
                                for i in 0..n {
                                    sum += at.data[z * n * k + i * k + l] * g[z * n * m + i * m + j];
                                }
                                s[z * k * m + bidx(l, j)] += sum;
                            }
                        }
                    }
                });
            }
            Op::MaskedSoftmax(x) => {
                let y = &node.value.data;
                let n = node.value.last_dim();
                acc(*x, &|s| {
                    for r in 0..y.len() / n {
                        let range = r * n..(r + 1) * n;
                        let dot: f64 = g[range.clone()].iter().zip(&y[range.clone()]).map(|(a, b)| a * b).sum();
                        for j in range {
                            s[j] += y[j] * (g[j] - dot);
                        }
                    }
                });
            }
            Op::Sse { pred, target } => {
                let pt = val(*pred);
                acc(*pred, &|s| {
                    for ((sv, p), t) in s.iter_mut().zip(&pt.data).zip(&target.data) {
                        *sv += 2.0 * (p - t) * g[0];
                    }
                });
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    acc(v, &|s| s.iter_mut().zip(g).for_each(|(a, b)| *a += w * b));
                }
            }
        }
    }
}
