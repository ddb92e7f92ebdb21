//! Wengert-list reverse-mode differentiation.
//!
//! A [`Tape`] owns every value produced during one forward pass. Operations
//! take [`Var`] handles and append a node; [`Tape::backward`] walks the list in
//! reverse once and returns the gradients of all differentiable leaves.

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: u32,
}

impl Var {
    pub fn node_id(self) -> usize {
        self.idx as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(usize, usize),
    /// Right operand is either the same shape or a trailing-axis vector.
    Binary(Binary, usize, usize),
    Unary(Unary, usize),
    Scale(usize, F),
    AddScalar(usize),
    Rsqrt(usize),
    Sum(usize),
    MeanRows(usize),
    Reshape(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Narrow { x: usize, axis: usize, start: usize },
    IndexAxis { x: usize, axis: usize, index: usize },
    Stack { inputs: Vec<usize>, axis: usize },
    Flip { x: usize, axis: usize },
    Im2Col { x: usize, kernel: usize, dilation: usize, pad_left: usize },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
    leaf: bool,
}

/// Gradients of the leaves that asked for one.
#[derive(Debug)]
pub struct Gradients<F> {
    tape: u32,
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, var: Var) -> Option<&Tensor<F>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.node_id()).and_then(|g| g.as_ref())
    }

    /// Iterates `(node_id, gradient)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor<F>)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (i, g)))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<F>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.node_id()).and_then(Option::take)
    }
}

/// (outer, dim, inner) split of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub struct Tape<F> {
    id: u32,
    nodes: Vec<Node<F>>,
    consumed: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.node_id() >= self.nodes.len() {
            return Err(Error::NotOnTape);
        }
        Ok(v.node_id())
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        let leaf = matches!(op, Op::Leaf);
        self.nodes.push(Node { value, op, requires_grad, leaf });
        Var { tape: self.id, idx: (self.nodes.len() - 1) as u32 }
    }

    fn any_grad(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Differentiable leaf (a parameter or an input under test).
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<F>> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.value(v)?.shape())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.nodes[ia].value.shape(), self.nodes[ib].value.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape { op: "matmul", lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, self.nodes[ia].value.data(), false, self.nodes[ib].value.data(), false, F::zero(), &mut out);
        let rg = self.any_grad(&[ia, ib]);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(ia, ib), rg))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let same = va.shape() == vb.shape();
        let bcast = !same
            && vb.rank() == 1
            && va.rank() >= 1
            && va.shape()[va.rank() - 1] == vb.shape()[0];
        if !same && !bcast {
            let op = match kind {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
            };
            return Err(Error::Shape { op, lhs: va.shape().to_vec(), rhs: vb.shape().to_vec() });
        }
        let f = match kind {
            Binary::Add => |x: F, y: F| x + y,
            Binary::Sub => |x: F, y: F| x - y,
            Binary::Mul => |x: F, y: F| x * y,
        };
        let bd = vb.data();
        let out: Vec<F> = if same {
            va.data().iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let c = bd.len();
            va.data().chunks_exact(c).flat_map(|row| row.iter().zip(bd).map(move |(&x, &y)| f(x, y))).collect()
        };
        let shape = va.shape().to_vec();
        let rg = self.any_grad(&[ia, ib]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Binary(kind, ia, ib), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// Elementwise op by kind; `b` is required for binary kinds and ignored otherwise.
    pub fn ewise(&mut self, kind: Ewise, a: Var, b: Option<Var>) -> Result<Var> {
        let need = |b: Option<Var>| b.ok_or_else(|| Error::InvalidArgument(format!("{kind:?} needs two operands")));
        match kind {
            Ewise::Add => self.add(a, need(b)?),
            Ewise::Sub => self.sub(a, need(b)?),
            Ewise::Mul => self.mul(a, need(b)?),
            Ewise::Sigmoid => self.sigmoid(a),
            Ewise::Tanh => self.tanh(a),
            Ewise::Relu => self.relu(a),
        }
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        let out: Vec<F> = match kind {
            Unary::Sigmoid => va.data().iter().map(|&x| sigmoid(x)).collect(),
            Unary::Tanh => va.data().iter().map(|&x| x.tanh()).collect(),
            Unary::Relu => va.data().iter().map(|&x| if x > F::zero() { x } else { F::zero() }).collect(),
        };
        let shape = va.shape().to_vec();
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::Unary(kind, ia), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn scale(&mut self, a: Var, c: F) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        let out = va.data().iter().map(|&x| x * c).collect();
        let shape = va.shape().to_vec();
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::Scale(ia, c), rg))
    }

    pub fn add_scalar(&mut self, a: Var, c: F) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        let out = va.data().iter().map(|&x| x + c).collect();
        let shape = va.shape().to_vec();
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::AddScalar(ia), rg))
    }

    /// `x^(-1/2)`; inputs must be positive.
    pub fn rsqrt(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        let out = va.data().iter().map(|&x| F::one() / x.sqrt()).collect();
        let shape = va.shape().to_vec();
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::Rsqrt(ia), rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.nodes[ia].value.data().iter().copied().sum();
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(Tensor::scalar(s), Op::Sum(ia), rg))
    }

    /// Mean over every axis but the last: `[..., C] -> [C]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        if va.rank() < 2 {
            return Err(Error::Axis { op: "mean_rows", axis: 1, rank: va.rank() });
        }
        let c = va.shape()[va.rank() - 1];
        let rows = va.len() / c;
        let mut acc = vec![F::zero(); c];
        for row in va.data().chunks_exact(c) {
            for (s, &x) in acc.iter_mut().zip(row) {
                *s += x;
            }
        }
        let inv = F::one() / F::of(rows as f64);
        acc.iter_mut().for_each(|s| *s *= inv);
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(Tensor::new([c], acc)?, Op::MeanRows(ia), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        if numel(shape) != va.len() {
            return Err(Error::Shape { op: "reshape", lhs: va.shape().to_vec(), rhs: shape.to_vec() });
        }
        let out = Tensor::new(shape.to_vec(), va.data().to_vec())?;
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(out, Op::Reshape(ia), rg))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        self.concat_many(&[a, b], axis)
    }

    pub fn concat_many(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let ids = parts.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let first = self
            .nodes
            .get(*ids.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?)
            .map(|n| n.value.shape().to_vec())
            .unwrap_or_default();
        if axis >= first.len() {
            return Err(Error::Axis { op: "concat", axis, rank: first.len() });
        }
        let mut total = 0;
        for &i in &ids {
            let s = self.nodes[i].value.shape();
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(ax, (x, y))| ax == axis || x == y);
            if !compatible {
                return Err(Error::Shape { op: "concat", lhs: first.clone(), rhs: s.to_vec() });
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &i in &ids {
                let v = &self.nodes[i].value;
                let block = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let rg = self.any_grad(&ids);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { inputs: ids, axis }, rg))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        if axis >= va.rank() {
            return Err(Error::Axis { op: "narrow", axis, rank: va.rank() });
        }
        let (outer, dim, inner) = split_axis(va.shape(), axis);
        if len == 0 || start + len > dim {
            return Err(Error::InvalidArgument(format!("narrow [{start}, {}) of axis length {dim}", start + len)));
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            out.extend_from_slice(&va.data()[base..base + len * inner]);
        }
        let mut shape = va.shape().to_vec();
        shape[axis] = len;
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::Narrow { x: ia, axis, start }, rg))
    }

    /// Selects one index along `axis`, dropping that axis.
    pub fn index_axis(&mut self, a: Var, axis: usize, index: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        if axis >= va.rank() || va.rank() < 2 {
            return Err(Error::Axis { op: "index_axis", axis, rank: va.rank() });
        }
        let (outer, dim, inner) = split_axis(va.shape(), axis);
        if index >= dim {
            return Err(Error::InvalidArgument(format!("index {index} out of range for axis length {dim}")));
        }
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * dim + index) * inner;
            out.extend_from_slice(&va.data()[base..base + inner]);
        }
        let mut shape = va.shape().to_vec();
        shape.remove(axis);
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::IndexAxis { x: ia, axis, index }, rg))
    }

    /// Stacks equally shaped tensors along a new axis.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let ids = parts.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let Some(&first) = ids.first() else {
            return Err(Error::InvalidArgument("stack of nothing".into()));
        };
        let base = self.nodes[first].value.shape().to_vec();
        if axis > base.len() {
            return Err(Error::Axis { op: "stack", axis, rank: base.len() + 1 });
        }
        for &i in &ids {
            let s = self.nodes[i].value.shape();
            if s != base.as_slice() {
                return Err(Error::Shape { op: "stack", lhs: base.clone(), rhs: s.to_vec() });
            }
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis..]);
        let mut out = Vec::with_capacity(outer * inner * ids.len());
        for o in 0..outer {
            for &i in &ids {
                out.extend_from_slice(&self.nodes[i].value.data()[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = base;
        shape.insert(axis, ids.len());
        let rg = self.any_grad(&ids);
        Ok(self.push(Tensor::new(shape, out)?, Op::Stack { inputs: ids, axis }, rg))
    }

    /// Reverses the order of entries along `axis`.
    pub fn flip(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        if axis >= va.rank() {
            return Err(Error::Axis { op: "flip", axis, rank: va.rank() });
        }
        let (outer, dim, inner) = split_axis(va.shape(), axis);
        let mut out = Vec::with_capacity(va.len());
        for o in 0..outer {
            for j in (0..dim).rev() {
                let base = (o * dim + j) * inner;
                out.extend_from_slice(&va.data()[base..base + inner]);
            }
        }
        let shape = va.shape().to_vec();
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::Flip { x: ia, axis }, rg))
    }

    /// Unfolds `[B, T, C]` into convolution patches `[B·T, kernel·C]`.
    ///
    /// Patch row `(b, t)` holds `x[b, t + j·dilation − pad_left, :]` for tap
    /// `j`, with zeros outside the sequence.
    pub fn im2col(&mut self, a: Var, kernel: usize, dilation: usize, pad_left: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        if va.rank() != 3 {
            return Err(Error::Axis { op: "im2col", axis: 2, rank: va.rank() });
        }
        if kernel == 0 || dilation == 0 {
            return Err(Error::InvalidArgument("kernel and dilation must be positive".into()));
        }
        let (b, t, c) = (va.shape()[0], va.shape()[1], va.shape()[2]);
        let x = va.data();
        let width = kernel * c;
        let mut out = vec![F::zero(); b * t * width];
        for bi in 0..b {
            for ti in 0..t {
                let row = &mut out[(bi * t + ti) * width..(bi * t + ti + 1) * width];
                for j in 0..kernel {
                    let src = ti as isize + (j * dilation) as isize - pad_left as isize;
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    let s = (bi * t + src as usize) * c;
                    row[j * c..(j + 1) * c].copy_from_slice(&x[s..s + c]);
                }
            }
        }
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(Tensor::new([b * t, width], out)?, Op::Im2Col { x: ia, kernel, dilation, pad_left }, rg))
    }

    /// Reverse sweep from a scalar `loss`. May run once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>> {
        let root = self.idx(loss)?;
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let shape = self.nodes[root].value.shape();
        if numel(shape) != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(vec![F::one()]);
        let mut leaf_grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();

        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if node.leaf {
                let g = grads[i].take().unwrap_or_else(|| vec![F::zero(); node.value.len()]);
                leaf_grads[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients { tape: self.id, grads: leaf_grads })
    }

    fn propagate(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let nodes = &self.nodes;
        let wants = |j: usize| nodes[j].requires_grad;
        // Zero-initialised accumulator for input j.
        fn slot<'a, F: Scalar>(grads: &'a mut [Option<Vec<F>>], nodes: &[Node<F>], j: usize) -> &'a mut Vec<F> {
            grads[j].get_or_insert_with(|| vec![F::zero(); nodes[j].value.len()])
        }
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (va, vb) = (&nodes[a].value, &nodes[b].value);
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if wants(a) {
                    F::gemm(m, n, k, g, false, vb.data(), true, F::one(), slot(grads, nodes, a));
                }
                if wants(b) {
                    F::gemm(k, m, n, va.data(), true, g, false, F::one(), slot(grads, nodes, b));
                }
            }
            &Op::Binary(kind, a, b) => {
                let (va, vb) = (&nodes[a].value, &nodes[b].value);
                let bcast = va.shape() != vb.shape();
                let c = vb.len();
                if wants(a) {
                    let ga = slot(grads, nodes, a);
                    match kind {
                        Binary::Add | Binary::Sub => ga.iter_mut().zip(g).for_each(|(s, &x)| *s += x),
                        Binary::Mul => {
                            for (r, (srow, grow)) in ga.chunks_exact_mut(c).zip(g.chunks_exact(c)).enumerate() {
                                let brow = if bcast { vb.data() } else { &vb.data()[r * c..(r + 1) * c] };
                                for ((s, &x), &y) in srow.iter_mut().zip(grow).zip(brow) {
                                    *s += x * y;
                                }
                            }
                        }
                    }
                }
                if wants(b) {
                    let gb = slot(grads, nodes, b);
                    for (r, grow) in g.chunks_exact(c).enumerate() {
                        let dst: &mut [F] = if bcast { &mut gb[..] } else { &mut gb[r * c..(r + 1) * c] };
                        match kind {
                            Binary::Add => dst.iter_mut().zip(grow).for_each(|(s, &x)| *s += x),
                            Binary::Sub => dst.iter_mut().zip(grow).for_each(|(s, &x)| *s -= x),
                            Binary::Mul => {
                                let arow = &va.data()[r * c..(r + 1) * c];
                                for ((s, &x), &y) in dst.iter_mut().zip(grow).zip(arow) {
                                    *s += x * y;
                                }
                            }
                        }
                    }
                }
            }
            &Op::Unary(kind, a) => {
                if !wants(a) {
                    return;
                }
                let (x, y) = (nodes[a].value.data(), out.data());
                let ga = slot(grads, nodes, a);
                match kind {
                    Unary::Sigmoid => {
                        for ((s, &gy), &y) in ga.iter_mut().zip(g).zip(y) {
                            *s += gy * y * (F::one() - y);
                        }
                    }
                    Unary::Tanh => {
                        for ((s, &gy), &y) in ga.iter_mut().zip(g).zip(y) {
                            *s += gy * (F::one() - y * y);
                        }
                    }
                    Unary::Relu => {
                        for ((s, &gy), &x) in ga.iter_mut().zip(g).zip(x) {
                            if x > F::zero() {
                                *s += gy;
                            }
                        }
                    }
                }
            }
            &Op::Scale(a, c) => {
                if wants(a) {
                    slot(grads, nodes, a).iter_mut().zip(g).for_each(|(s, &x)| *s += x * c);
                }
            }
            &Op::AddScalar(a) | &Op::Reshape(a) => {
                if wants(a) {
                    slot(grads, nodes, a).iter_mut().zip(g).for_each(|(s, &x)| *s += x);
                }
            }
            &Op::Rsqrt(a) => {
                if wants(a) {
                    let half = F::of(0.5);
                    for ((s, &gy), &y) in slot(grads, nodes, a).iter_mut().zip(g).zip(out.data()) {
                        *s -= gy * half * y * y * y;
                    }
                }
            }
            &Op::Sum(a) => {
                if wants(a) {
                    let g0 = g[0];
                    slot(grads, nodes, a).iter_mut().for_each(|s| *s += g0);
                }
            }
            &Op::MeanRows(a) => {
                if wants(a) {
                    let c = g.len();
                    let rows = nodes[a].value.len() / c;
                    let inv = F::one() / F::of(rows as f64);
                    for srow in slot(grads, nodes, a).chunks_exact_mut(c) {
                        for (s, &x) in srow.iter_mut().zip(g) {
                            *s += x * inv;
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                let total = out.shape()[*axis] * inner;
                for &j in inputs {
                    let block = nodes[j].value.shape()[*axis] * inner;
                    if wants(j) {
                        let gj = slot(grads, nodes, j);
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + block];
                            gj[o * block..(o + 1) * block].iter_mut().zip(src).for_each(|(s, &x)| *s += x);
                        }
                    }
                    offset += block;
                }
            }
            &Op::Narrow { x, axis, start } => {
                if wants(x) {
                    let (outer, dim, inner) = split_axis(nodes[x].value.shape(), axis);
                    let len = out.shape()[axis];
                    let gx = slot(grads, nodes, x);
                    for o in 0..outer {
                        let dst = &mut gx[o * dim * inner + start * inner..][..len * inner];
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(s, &v)| *s += v);
                    }
                }
            }
            &Op::IndexAxis { x, axis, index } => {
                if wants(x) {
                    let (outer, dim, inner) = split_axis(nodes[x].value.shape(), axis);
                    let gx = slot(grads, nodes, x);
                    for o in 0..outer {
                        let dst = &mut gx[(o * dim + index) * inner..][..inner];
                        dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]).for_each(|(s, &v)| *s += v);
                    }
                }
            }
            Op::Stack { inputs, axis } => {
                let base = nodes[inputs[0]].value.shape();
                let outer = numel(&base[..*axis]);
                let inner = numel(&base[*axis..]);
                let n = inputs.len();
                for (k, &j) in inputs.iter().enumerate() {
                    if !wants(j) {
                        continue;
                    }
                    let gj = slot(grads, nodes, j);
                    for o in 0..outer {
                        let src = &g[(o * n + k) * inner..][..inner];
                        gj[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(s, &v)| *s += v);
                    }
                }
            }
            &Op::Flip { x, axis } => {
                if wants(x) {
                    let (outer, dim, inner) = split_axis(out.shape(), axis);
                    let gx = slot(grads, nodes, x);
                    for o in 0..outer {
                        for j in 0..dim {
                            let src = &g[(o * dim + dim - 1 - j) * inner..][..inner];
                            let dst = &mut gx[(o * dim + j) * inner..][..inner];
                            dst.iter_mut().zip(src).for_each(|(s, &v)| *s += v);
                        }
                    }
                }
            }
            &Op::Im2Col { x, kernel, dilation, pad_left } => {
                if wants(x) {
                    let s = nodes[x].value.shape();
                    let (b, t, c) = (s[0], s[1], s[2]);
                    let width = kernel * c;
                    let gx = slot(grads, nodes, x);
                    for bi in 0..b {
                        for ti in 0..t {
                            let row = &g[(bi * t + ti) * width..][..width];
                            for j in 0..kernel {
                                let src = ti as isize + (j * dilation) as isize - pad_left as isize;
                                if src < 0 || src >= t as isize {
                                    continue;
                                }
                                let dst = &mut gx[(bi * t + src as usize) * c..][..c];
                                dst.iter_mut().zip(&row[j * c..(j + 1) * c]).for_each(|(s, &v)| *s += v);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Elementwise kinds accepted by [`Tape::ewise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ewise {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
}
