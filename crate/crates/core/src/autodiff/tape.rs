use super::tensor::{matmul_at_acc, matmul_bt_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    LinComb(Vec<(usize, f64)>),
    MatMul(usize, usize),
    AddRow(usize, usize),
    Tanh(usize),
    Square(usize),
    Powi(usize, i32),
    Reciprocal(usize),
    Sum(usize),
    Mean(usize),
    Concat(Vec<usize>, Axis),
    Slice {
        input: usize,
        axis: Axis,
        start: usize,
        len: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

/// Append-only record of tensor operations for reverse-mode differentiation.
///
/// Values are computed eagerly when an operation is recorded. Node inputs
/// always point at earlier nodes, so the node order is a topological order
/// and [`Tape::backward`] is a single reverse sweep. The tape is meant to be
/// rebuilt for every loss evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of a scalar root with respect to the trainable leaves of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<(usize, Tensor)>,
}

impl Gradients {
    /// Gradient for `leaf`. Leaves that are not trainable have no entry.
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.grads
            .binary_search_by_key(&leaf.0, |(i, _)| *i)
            .ok()
            .map(|pos| &self.grads[pos].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.grads.iter().map(|(i, g)| (Var(*i), g))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf: backward reports a gradient for it.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Constant leaf: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, trainable: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: trainable,
            trainable,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            trainable: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary_shape(&self, name: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb || sb == (1, 1) {
            Ok(sa)
        } else if sa == (1, 1) {
            Ok(sb)
        } else {
            Err(Error::shape(
                name,
                format!("{}x{} vs {}x{}", sa.0, sa.1, sb.0, sb.1),
            ))
        }
    }

    fn zip_values(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (rows, cols) = self.binary_shape(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = match (va.len(), vb.len()) {
            (na, nb) if na == nb => va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect(),
            (1, _) => vb.data().iter().map(|&y| f(va.item(), y)).collect(),
            _ => va.data().iter().map(|&x| f(x, vb.item())).collect(),
        };
        Tensor::new(rows, cols, data)
    }

    /// Elementwise `a + b`; either operand may be `1x1`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_values("add", a, b, |x, y| x + y)?;
        self.push("add", v, Op::Add(a.0, b.0), &[a.0, b.0])
    }

    /// Elementwise `a - b`; either operand may be `1x1`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_values("sub", a, b, |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a.0, b.0), &[a.0, b.0])
    }

    /// Elementwise `a * b`; either operand may be `1x1`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_values("mul", a, b, |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a.0, b.0), &[a.0, b.0])
    }

    /// `c * a` for a constant `c`.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| c * x);
        self.push("scale", v, Op::Scale(a.0, c), &[a.0])
    }

    /// `sum_i c_i * x_i` over same-shaped operands with constant weights.
    pub fn lin_comb(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let first = terms
            .first()
            .ok_or_else(|| Error::shape("lin_comb", "no terms"))?;
        let shape = self.shape(first.1);
        let mut out = Tensor::zeros(shape.0, shape.1);
        for &(c, v) in terms {
            if self.shape(v) != shape {
                let s = self.shape(v);
                return Err(Error::shape(
                    "lin_comb",
                    format!("{}x{} vs {}x{}", shape.0, shape.1, s.0, s.1),
                ));
            }
            out.add_scaled(self.value(v), c);
        }
        let inputs: Vec<usize> = terms.iter().map(|(_, v)| v.0).collect();
        let op = Op::LinComb(terms.iter().map(|&(c, v)| (v.0, c)).collect());
        self.push("lin_comb", out, op, &inputs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push("matmul", v, Op::MatMul(a.0, b.0), &[a.0, b.0])
    }

    /// Adds the `1xc` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(Error::shape(
                "add_row",
                format!("{}x{} plus row {}x{}", sa.0, sa.1, sr.0, sr.1),
            ));
        }
        let mut v = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for chunk in v.data_mut().chunks_mut(sa.1) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push("add_row", v, Op::AddRow(a.0, row.0), &[a.0, row.0])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push("tanh", v, Op::Tanh(a.0), &[a.0])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        self.push("square", v, Op::Square(a.0), &[a.0])
    }

    pub fn powi(&mut self, a: Var, n: i32) -> Result<Var> {
        let v = self.value(a).map(|x| x.powi(n));
        self.push("powi", v, Op::Powi(a.0, n), &[a.0])
    }

    pub fn reciprocal(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push("reciprocal", v, Op::Reciprocal(a.0), &[a.0])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push("mean", v, Op::Mean(a.0), &[a.0])
    }

    /// Mean of squared entries, the building block of every loss term.
    pub fn mean_square(&mut self, a: Var) -> Result<Var> {
        let sq = self.square(a)?;
        self.mean(sq)
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let (r0, c0) = self.shape(*first);
        let mut rows = 0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            match axis {
                Axis::Rows if c == c0 => rows += r,
                Axis::Cols if r == r0 => cols += c,
                _ => {
                    return Err(Error::shape(
                        "concat",
                        format!("{r}x{c} does not align with {r0}x{c0} along {axis:?}"),
                    ))
                }
            }
        }
        let value = match axis {
            Axis::Rows => {
                let mut data = Vec::with_capacity(rows * c0);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::new(rows, c0, data)?
            }
            Axis::Cols => {
                let mut data = Vec::with_capacity(r0 * cols);
                for r in 0..r0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
                Tensor::new(r0, cols, data)?
            }
        };
        let inputs: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push("concat", value, Op::Concat(inputs.clone(), axis), &inputs)
    }

    /// `len` consecutive rows or columns of `a` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        let extent = match axis {
            Axis::Rows => r,
            Axis::Cols => c,
        };
        if len == 0 || start + len > extent {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} out of {r}x{c} along {axis:?}", start + len),
            ));
        }
        let src = self.value(a);
        let value = match axis {
            Axis::Rows => Tensor::new(len, c, src.data()[start * c..(start + len) * c].to_vec())?,
            Axis::Cols => {
                let mut data = Vec::with_capacity(r * len);
                for row in 0..r {
                    data.extend_from_slice(&src.row_slice(row)[start..start + len]);
                }
                Tensor::new(r, len, data)?
            }
        };
        let op = Op::Slice {
            input: a.0,
            axis,
            start,
            len,
        };
        self.push("slice", value, op, &[a.0])
    }

    /// Reverse sweep from the scalar `root`.
    ///
    /// Gradients accumulate in strict reverse node order, so repeated runs
    /// on identical tapes are bit-identical.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let (rows, cols) = self.shape(root);
        if rows * cols != 1 {
            return Err(Error::NonScalarRoot { rows, cols });
        }
        self.consumed = true;

        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::scalar(1.0));
        let mut grads = Vec::new();

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                if node.trainable {
                    let g = adj[i]
                        .take()
                        .unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()));
                    grads.push((i, g));
                }
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
        }
        grads.reverse();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, adj: &mut [Option<Tensor>], idx: usize, contrib: Tensor) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        match &mut adj[idx] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    /// Reduces a same-shaped contribution onto an operand that may have been
    /// broadcast from `1x1`.
    fn fit_to(&self, idx: usize, contrib: Tensor) -> Tensor {
        if self.nodes[idx].value.len() == 1 && contrib.len() != 1 {
            Tensor::scalar(contrib.sum())
        } else {
            contrib
        }
    }

    fn other_broadcast(&self, idx: usize, n: usize) -> Vec<f64> {
        let v = &self.nodes[idx].value;
        if v.len() == n {
            v.data().to_vec()
        } else {
            vec![v.item(); n]
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(adj, *a, self.fit_to(*a, g.clone()));
                self.accumulate(adj, *b, self.fit_to(*b, g.clone()));
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, self.fit_to(*a, g.clone()));
                self.accumulate(adj, *b, self.fit_to(*b, g.map(|x| -x)));
            }
            Op::Mul(a, b) => {
                let n = g.len();
                if self.nodes[*a].requires_grad {
                    let bv = self.other_broadcast(*b, n);
                    let mut c = g.clone();
                    c.data_mut().iter_mut().zip(&bv).for_each(|(x, y)| *x *= y);
                    self.accumulate(adj, *a, self.fit_to(*a, c));
                }
                if self.nodes[*b].requires_grad {
                    let av = self.other_broadcast(*a, n);
                    let mut c = g.clone();
                    c.data_mut().iter_mut().zip(&av).for_each(|(x, y)| *x *= y);
                    self.accumulate(adj, *b, self.fit_to(*b, c));
                }
            }
            Op::Scale(a, c) => self.accumulate(adj, *a, g.map(|x| c * x)),
            Op::LinComb(terms) => {
                for &(idx, c) in terms {
                    self.accumulate(adj, idx, g.map(|x| c * x));
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if self.nodes[*a].requires_grad {
                    let mut da = Tensor::zeros(va.rows(), va.cols());
                    matmul_bt_acc(g, vb, &mut da);
                    self.accumulate(adj, *a, da);
                }
                if self.nodes[*b].requires_grad {
                    let mut db = Tensor::zeros(vb.rows(), vb.cols());
                    matmul_at_acc(va, g, &mut db);
                    self.accumulate(adj, *b, db);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(adj, *a, g.clone());
                if self.nodes[*row].requires_grad {
                    let cols = g.cols();
                    let mut dr = vec![0.0; cols];
                    for chunk in g.data().chunks(cols) {
                        dr.iter_mut().zip(chunk).for_each(|(d, x)| *d += x);
                    }
                    self.accumulate(adj, *row, Tensor::row(dr));
                }
            }
            Op::Tanh(a) => {
                let mut c = g.clone();
                c.data_mut()
                    .iter_mut()
                    .zip(out.data())
                    .for_each(|(x, y)| *x *= 1.0 - y * y);
                self.accumulate(adj, *a, c);
            }
            Op::Square(a) => {
                let mut c = g.clone();
                c.data_mut()
                    .iter_mut()
                    .zip(self.nodes[*a].value.data())
                    .for_each(|(x, v)| *x *= 2.0 * v);
                self.accumulate(adj, *a, c);
            }
            Op::Powi(a, n) => {
                let n = *n;
                let mut c = g.clone();
                c.data_mut()
                    .iter_mut()
                    .zip(self.nodes[*a].value.data())
                    .for_each(|(x, v)| *x *= n as f64 * v.powi(n - 1));
                self.accumulate(adj, *a, c);
            }
            Op::Reciprocal(a) => {
                let mut c = g.clone();
                c.data_mut()
                    .iter_mut()
                    .zip(out.data())
                    .for_each(|(x, y)| *x *= -y * y);
                self.accumulate(adj, *a, c);
            }
            Op::Sum(a) => {
                let (r, c) = self.nodes[*a].value.shape();
                self.accumulate(adj, *a, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = self.nodes[*a].value.shape();
                let n = (r * c) as f64;
                self.accumulate(adj, *a, Tensor::filled(r, c, g.item() / n));
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.nodes[p].value.shape();
                    if self.nodes[p].requires_grad {
                        let piece = match axis {
                            Axis::Rows => Tensor::new(
                                r,
                                c,
                                g.data()[offset * c..(offset + r) * c].to_vec(),
                            ),
                            Axis::Cols => {
                                let mut data = Vec::with_capacity(r * c);
                                for row in 0..r {
                                    data.extend_from_slice(&g.row_slice(row)[offset..offset + c]);
                                }
                                Tensor::new(r, c, data)
                            }
                        }
                        .expect("concat piece shape");
                        self.accumulate(adj, p, piece);
                    }
                    offset += match axis {
                        Axis::Rows => r,
                        Axis::Cols => c,
                    };
                }
            }
            Op::Slice {
                input,
                axis,
                start,
                len,
            } => {
                let (r, c) = self.nodes[*input].value.shape();
                let mut full = Tensor::zeros(r, c);
                match axis {
                    Axis::Rows => {
                        full.data_mut()[start * c..(start + len) * c].copy_from_slice(g.data())
                    }
                    Axis::Cols => {
                        for row in 0..r {
                            full.data_mut()[row * c + start..row * c + start + len]
                                .copy_from_slice(g.row_slice(row));
                        }
                    }
                }
                self.accumulate(adj, *input, full);
            }
        }
    }
}
