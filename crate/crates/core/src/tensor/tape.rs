use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Silu(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    LogSoftmax(Var),
    GatherRows { input: Var, index: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records differentiable operations in execution order.
///
/// Values are immutable once recorded. [`Tape::backward`] walks the record
/// in reverse exactly once; afterwards the tape only answers gradient queries.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

fn dims2(shape: &[usize]) -> Option<(usize, usize)> {
    match *shape {
        [n] => Some((1, n)),
        [r, c] => Some((r, c)),
        _ => None,
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
        None => *slot = Some(delta.to_vec()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a tensor as a leaf. Gradients flow to it iff it `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records a tensor that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    /// Copy of `v` cut off from the gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = self.node(v);
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(shape, value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(&n.shape, n.value.clone()).expect("recorded shapes are valid")
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let n = self.node(v);
        if n.value.len() == 1 {
            Ok(n.value[0])
        } else {
            Err(Error::Rank(n.shape.clone()))
        }
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        let (shape, value) = if na.shape == nb.shape {
            let v = na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect();
            (na.shape.clone(), v)
        } else if nb.value.len() == 1 {
            let y = nb.value[0];
            (na.shape.clone(), na.value.iter().map(|&x| f(x, y)).collect())
        } else if na.value.len() == 1 {
            let x = na.value[0];
            (nb.shape.clone(), nb.value.iter().map(|&y| f(x, y)).collect())
        } else {
            return Err(Error::shape(name, &na.shape, &nb.shape));
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let n = self.node(a);
        let shape = n.shape.clone();
        let value = n.value.iter().map(|&x| f(x)).collect();
        let rg = n.requires_grad;
        self.push(shape, value, op, rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| k * x, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, libm::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, libm::log, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let s = n.value.iter().sum();
        let rg = n.requires_grad;
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let s = n.value.iter().sum::<f64>() / n.value.len() as f64;
        let rg = n.requires_grad;
        self.push(vec![1], vec![s], Op::Mean(a), rg)
    }

    /// `a · b` for 2-D operands (a 1-D operand is read as a single row).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        let (m, k) = dims2(&na.shape).ok_or_else(|| Error::shape("matmul", &na.shape, &nb.shape))?;
        let (k2, n) = dims2(&nb.shape).ok_or_else(|| Error::shape("matmul", &na.shape, &nb.shape))?;
        if k != k2 {
            return Err(Error::shape("matmul", &na.shape, &nb.shape));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&na.value, &nb.value, &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    /// `x · w + b`, with the bias row added to every output row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (nx, nw, nb) = (self.node(x), self.node(w), self.node(b));
        let (m, k) = dims2(&nx.shape).ok_or_else(|| Error::shape("affine", &nx.shape, &nw.shape))?;
        let (k2, n) = dims2(&nw.shape).ok_or_else(|| Error::shape("affine", &nx.shape, &nw.shape))?;
        if k != k2 {
            return Err(Error::shape("affine", &nx.shape, &nw.shape));
        }
        if nb.value.len() != n {
            return Err(Error::shape("affine", &nw.shape, &nb.shape));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(&nb.value);
        }
        matmul_into(&nx.value, &nw.value, &mut out, m, k, n);
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(vec![m, n], out, Op::Affine(x, w, b), rg))
    }

    /// Joins 2-D tensors along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or(Error::Tape("concat of nothing"))?;
        let (r0, c0) = dims2(self.shape(first)).ok_or_else(|| Error::shape("concat", self.shape(first), &[]))?;
        let mut dims = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            let (r, c) = dims2(s).ok_or_else(|| Error::shape("concat", &[r0, c0], s))?;
            let ok = match axis {
                0 => c == c0,
                1 => r == r0,
                _ => false,
            };
            if !ok {
                return Err(Error::shape("concat", &[r0, c0], s));
            }
            dims.push((r, c));
        }
        let (shape, value) = if axis == 0 {
            let rows = dims.iter().map(|d| d.0).sum();
            let mut value = Vec::with_capacity(rows * c0);
            for &v in inputs {
                value.extend_from_slice(self.value(v));
            }
            (vec![rows, c0], value)
        } else {
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut value = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for (&v, &(_, c)) in inputs.iter().zip(&dims) {
                    value.extend_from_slice(&self.value(v)[i * c..(i + 1) * c]);
                }
            }
            (vec![r0, cols], value)
        };
        let rg = self.rg(inputs);
        Ok(self.push(shape, value, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// Rows (`axis = 0`) or columns (`axis = 1`) `start..end` of a 2-D tensor.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        let (r, c) = dims2(&s).ok_or_else(|| Error::shape("slice", &s, &[start, end]))?;
        let extent = match axis {
            0 => r,
            1 => c,
            _ => 0,
        };
        if start >= end || end > extent {
            return Err(Error::shape("slice", &s, &[start, end]));
        }
        let src = self.value(input);
        let (shape, value) = if axis == 0 {
            (vec![end - start, c], src[start * c..end * c].to_vec())
        } else {
            let w = end - start;
            let mut value = Vec::with_capacity(r * w);
            for i in 0..r {
                value.extend_from_slice(&src[i * c + start..i * c + end]);
            }
            (vec![r, w], value)
        };
        let rg = self.rg(&[input]);
        Ok(self.push(shape, value, Op::Slice { input, axis, start }, rg))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.node(a);
        let (r, c) = dims2(&n.shape).ok_or_else(|| Error::shape("log_softmax", &n.shape, &[]))?;
        let mut out = Vec::with_capacity(r * c);
        for row in n.value.chunks(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|&x| libm::exp(x - max)).sum::<f64>());
            out.extend(row.iter().map(|&x| x - lse));
        }
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        Ok(self.push(shape, out, Op::LogSoftmax(a), rg))
    }

    /// Embedding lookup: row `index[i]` of `input` becomes output row `i`.
    pub fn gather_rows(&mut self, input: Var, index: &[usize]) -> Result<Var> {
        let s = self.shape(input).to_vec();
        let (r, c) = dims2(&s).ok_or_else(|| Error::shape("gather_rows", &s, &[]))?;
        if index.is_empty() {
            return Err(Error::shape("gather_rows", &s, &[0]));
        }
        let src = self.value(input);
        let mut value = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= r {
                return Err(Error::shape("gather_rows", &s, &[i]));
            }
            value.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[input]);
        Ok(self.push(vec![index.len(), c], value, Op::GatherRows { input, index: index.to_vec() }, rg))
    }

    /// Propagates `d loss / d node` to every node that requires a gradient.
    ///
    /// The tape is consumed: a second call fails with [`Error::Tape`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Tape("backward called on a consumed tape"));
        }
        let ln = self.node(loss);
        if ln.value.len() != 1 {
            return Err(Error::Rank(ln.shape.clone()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            let wants = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if wants(a) {
                        let da = self.reduce_broadcast(*a, &g);
                        accumulate(&mut grads[a.0], &da);
                    }
                    if wants(b) {
                        let gb: Vec<f64> = g.iter().map(|x| sign * x).collect();
                        let db = self.reduce_broadcast(*b, &gb);
                        accumulate(&mut grads[b.0], &db);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let at = |v: &Vec<f64>, j: usize| if v.len() == 1 { v[0] } else { v[j] };
                    if wants(a) {
                        let full: Vec<f64> = g.iter().enumerate().map(|(j, x)| x * at(vb, j)).collect();
                        let da = self.reduce_broadcast(*a, &full);
                        accumulate(&mut grads[a.0], &da);
                    }
                    if wants(b) {
                        let full: Vec<f64> = g.iter().enumerate().map(|(j, x)| x * at(va, j)).collect();
                        let db = self.reduce_broadcast(*b, &full);
                        accumulate(&mut grads[b.0], &db);
                    }
                }
                Op::Scale(a, k) => {
                    let d: Vec<f64> = g.iter().map(|x| k * x).collect();
                    accumulate(&mut grads[a.0], &d);
                }
                Op::AddScalar(a) => accumulate(&mut grads[a.0], &g),
                Op::MatMul(a, b) => {
                    let (m, k) = dims2(&self.nodes[a.0].shape).unwrap();
                    let n = g.len() / m;
                    if wants(a) {
                        let bt = transpose(&self.nodes[b.0].value, k, n);
                        let mut da = vec![0.0; m * k];
                        matmul_into(&g, &bt, &mut da, m, n, k);
                        accumulate(&mut grads[a.0], &da);
                    }
                    if wants(b) {
                        let at = transpose(&self.nodes[a.0].value, m, k);
                        let mut db = vec![0.0; k * n];
                        matmul_into(&at, &g, &mut db, k, m, n);
                        accumulate(&mut grads[b.0], &db);
                    }
                }
                Op::Affine(x, w, b) => {
                    let (m, k) = dims2(&self.nodes[x.0].shape).unwrap();
                    let n = g.len() / m;
                    if wants(x) {
                        let wt = transpose(&self.nodes[w.0].value, k, n);
                        let mut dx = vec![0.0; m * k];
                        matmul_into(&g, &wt, &mut dx, m, n, k);
                        accumulate(&mut grads[x.0], &dx);
                    }
                    if wants(w) {
                        let xt = transpose(&self.nodes[x.0].value, m, k);
                        let mut dw = vec![0.0; k * n];
                        matmul_into(&xt, &g, &mut dw, k, m, n);
                        accumulate(&mut grads[w.0], &dw);
                    }
                    if wants(b) {
                        let mut db = vec![0.0; n];
                        for row in g.chunks(n) {
                            db.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                        }
                        accumulate(&mut grads[b.0], &db);
                    }
                }
                Op::Silu(a) => {
                    let d: Vec<f64> = self.nodes[a.0]
                        .value
                        .iter()
                        .zip(&g)
                        .map(|(&x, gy)| {
                            let s = sigmoid(x);
                            gy * (s + x * s * (1.0 - s))
                        })
                        .collect();
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Exp(a) => {
                    let d: Vec<f64> = node.value.iter().zip(&g).map(|(y, gy)| y * gy).collect();
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Ln(a) => {
                    let d: Vec<f64> = self.nodes[a.0].value.iter().zip(&g).map(|(x, gy)| gy / x).collect();
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Square(a) => {
                    let d: Vec<f64> = self.nodes[a.0].value.iter().zip(&g).map(|(x, gy)| 2.0 * x * gy).collect();
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Sum(a) | Op::Mean(a) => {
                    let len = self.nodes[a.0].value.len();
                    let v = if matches!(node.op, Op::Mean(_)) { g[0] / len as f64 } else { g[0] };
                    accumulate(&mut grads[a.0], &vec![v; len]);
                }
                Op::Concat { inputs, axis } => {
                    let (r, total_c) = dims2(&node.shape).unwrap();
                    let mut row_off = 0;
                    let mut col_off = 0;
                    for v in inputs {
                        let (vr, vc) = dims2(&self.nodes[v.0].shape).unwrap();
                        if wants(v) {
                            let d: Vec<f64> = if *axis == 0 {
                                g[row_off * total_c..(row_off + vr) * total_c].to_vec()
                            } else {
                                (0..r)
                                    .flat_map(|i| g[i * total_c + col_off..i * total_c + col_off + vc].iter().copied())
                                    .collect()
                            };
                            accumulate(&mut grads[v.0], &d);
                        }
                        row_off += vr;
                        col_off += vc;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let (r, c) = dims2(&self.nodes[input.0].shape).unwrap();
                    let mut d = vec![0.0; r * c];
                    if *axis == 0 {
                        d[start * c..start * c + g.len()].copy_from_slice(&g);
                    } else {
                        let w = g.len() / r;
                        for i in 0..r {
                            d[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                        }
                    }
                    accumulate(&mut grads[input.0], &d);
                }
                Op::LogSoftmax(a) => {
                    let c = *node.shape.last().unwrap();
                    let mut d = Vec::with_capacity(g.len());
                    for (yrow, grow) in node.value.chunks(c).zip(g.chunks(c)) {
                        let gs: f64 = grow.iter().sum();
                        d.extend(yrow.iter().zip(grow).map(|(y, gy)| gy - libm::exp(*y) * gs));
                    }
                    accumulate(&mut grads[a.0], &d);
                }
                Op::GatherRows { input, index } => {
                    let len = self.nodes[input.0].value.len();
                    let c = *node.shape.last().unwrap();
                    let mut d = vec![0.0; len];
                    for (k, &i) in index.iter().enumerate() {
                        d[i * c..(i + 1) * c].iter_mut().zip(&g[k * c..(k + 1) * c]).for_each(|(a, b)| *a += b);
                    }
                    accumulate(&mut grads[input.0], &d);
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn reduce_broadcast(&self, v: Var, full: &[f64]) -> Vec<f64> {
        if self.nodes[v.0].value.len() == 1 && full.len() != 1 {
            vec![full.iter().sum()]
        } else {
            full.to_vec()
        }
    }

    /// Gradient of the last backward pass with respect to `v`.
    ///
    /// `None` before backward; zeros for nodes the loss does not depend on.
    pub fn grad(&self, v: Var) -> Option<Vec<f64>> {
        if !self.consumed {
            return None;
        }
        Some(match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => vec![0.0; self.nodes[v.0].value.len()],
        })
    }

    /// Accumulates the gradient of `v` into `target.grad`.
    pub fn write_grad(&self, v: Var, target: &mut Tensor) -> Result<()> {
        let g = self.grad(v).ok_or(Error::Tape("gradients requested before backward"))?;
        target.accumulate_grad(&g)
    }
}

fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = a[i * c + j];
        }
    }
    t
}
