use std::fmt;
use std::sync::Arc;

use super::tensor::{NeighborIndex, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation supplied from outside the tape, e.g. a fused
/// loss with a closed-form adjoint.
pub trait CustomOp<T: Scalar>: fmt::Debug {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    /// Returns one gradient per input, each shaped like that input.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, T),
    ScaleRows(Var, Arc<Vec<T>>),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherSum(Var, Arc<NeighborIndex>),
    NormalizeRows(Var, Vec<T>),
    Custom(Box<dyn CustomOp<T>>, Vec<Var>),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation in evaluation order; inputs of every node
/// precede it, so the reverse sweep is a plain backwards walk.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<[usize; 2]>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; zeros if `v` was not reached from the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::Shape {
                op: "add_row_bias",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (x, &b) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(value, Op::AddRowBias(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: Vec<T>) -> Result<Var> {
        let av = self.value(a);
        if factors.len() != av.rows() {
            return Err(Error::Shape {
                op: "scale_rows",
                left: av.shape(),
                right: [factors.len(), 1],
            });
        }
        let mut value = av.clone();
        for (r, &f) in factors.iter().enumerate() {
            for x in value.row_mut(r) {
                *x *= f;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::ScaleRows(a, Arc::new(factors)), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(T::zero()));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(T::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(T::ln);
        let rg = self.rg(a);
        self.push(value, Op::Log(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = T::from_usize_lossy(v.len().max(1));
        let value = Tensor::scalar(v.sum() / n);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// Column sums, `n x c -> 1 x c`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_rows();
        let rg = self.rg(a);
        self.push(value, Op::SumRows(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::vstack(&refs)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::hstack(&refs)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// `out[i] = sum_{j in index.neighbors(i)} src[j]`; rows with no
    /// neighbours are zero.
    pub fn gather_sum(&mut self, src: Var, index: Arc<NeighborIndex>) -> Result<Var> {
        let sv = self.value(src);
        if let Some(max) = index.max_index() {
            if max >= sv.rows() {
                return Err(Error::Shape {
                    op: "gather_sum",
                    left: sv.shape(),
                    right: [max + 1, sv.cols()],
                });
            }
        }
        let c = sv.cols();
        let mut out = vec![T::zero(); index.len() * c];
        for (i, orow) in out.chunks_mut(c.max(1)).enumerate().take(index.len()) {
            for &j in index.neighbors(i) {
                for (o, &s) in orow.iter_mut().zip(sv.row(j)) {
                    *o += s;
                }
            }
        }
        let value = Tensor::from_vec(index.len(), c, out)?;
        let rg = self.rg(src);
        Ok(self.push(value, Op::GatherSum(src, index), rg))
    }

    /// Scales each row to unit L2 norm. All-zero rows are left at zero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut value = av.clone();
        let mut norms = Vec::with_capacity(av.rows());
        for r in 0..av.rows() {
            let n = av.row(r).iter().map(|&x| x * x).sum::<T>().sqrt();
            norms.push(n);
            if n > T::zero() {
                for x in value.row_mut(r) {
                    *x /= n;
                }
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::NormalizeRows(a, norms), rg)
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp<T>>, inputs: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = inputs.iter().map(|&p| self.value(p)).collect();
        let value = op.forward(&refs)?;
        let rg = inputs.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Custom(op, inputs.to_vec()), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        // only leaves and nodes flagged as requiring grad keep adjoints
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.matmul_t(bv)?);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, av.t_matmul(g)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-T::one()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.hadamard(bv)?);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.hadamard(av)?);
                }
            }
            Op::AddRowBias(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*bias) {
                    self.accumulate(grads, *bias, g.sum_rows());
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::ScaleRows(a, factors) => {
                let mut d = g.clone();
                for (r, &f) in factors.iter().enumerate() {
                    for x in d.row_mut(r) {
                        *x *= f;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let mut d = g.clone();
                for (x, &inp) in d.data_mut().iter_mut().zip(av.data()) {
                    if inp <= T::zero() {
                        *x = T::zero();
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.hadamard(&node.value)?),
            Op::Log(a) => {
                let av = self.value(*a);
                let mut d = g.clone();
                for (x, &inp) in d.data_mut().iter_mut().zip(av.data()) {
                    *x /= inp;
                }
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let [r, c] = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::full(r, c, g.data()[0]));
            }
            Op::Mean(a) => {
                let [r, c] = self.value(*a).shape();
                let n = T::from_usize_lossy((r * c).max(1));
                self.accumulate(grads, *a, Tensor::full(r, c, g.data()[0] / n));
            }
            Op::SumRows(a) => {
                let [r, c] = self.value(*a).shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i).copy_from_slice(g.row(0));
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let [r, c] = self.value(p).shape();
                    if self.rg(p) {
                        let d = Tensor::from_vec(r, c, g.data()[offset * c..(offset + r) * c].to_vec())?;
                        self.accumulate(grads, p, d);
                    }
                    offset += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let [r, c] = self.value(p).shape();
                    if self.rg(p) {
                        let mut d = Tensor::zeros(r, c);
                        for i in 0..r {
                            d.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + c]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    offset += c;
                }
            }
            Op::GatherSum(src, index) => {
                let [r, c] = self.value(*src).shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..index.len() {
                    let gi = g.row(i);
                    for &j in index.neighbors(i) {
                        for (x, &y) in d.row_mut(j).iter_mut().zip(gi) {
                            *x += y;
                        }
                    }
                }
                self.accumulate(grads, *src, d);
            }
            Op::NormalizeRows(a, norms) => {
                let y = &node.value;
                let mut d = Tensor::zeros(y.rows(), y.cols());
                for (r, &n) in norms.iter().enumerate() {
                    if n <= T::zero() {
                        continue;
                    }
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((x, &yv), &gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *x = (gv - yv * dot) / n;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Custom(op, inputs) => {
                let refs: Vec<&Tensor<T>> = inputs.iter().map(|&p| self.value(p)).collect();
                let ds = op.backward(&refs, &node.value, g)?;
                if ds.len() != inputs.len() {
                    return Err(Error::Contract(format!(
                        "custom op `{}` returned {} gradients for {} inputs",
                        op.name(),
                        ds.len(),
                        inputs.len()
                    )));
                }
                for (&p, d) in inputs.iter().zip(ds) {
                    if d.shape() != self.value(p).shape() {
                        return Err(Error::Shape {
                            op: "custom backward",
                            left: self.value(p).shape(),
                            right: d.shape(),
                        });
                    }
                    self.accumulate(grads, p, d);
                }
            }
        }
        Ok(())
    }
}
