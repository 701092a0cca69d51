use std::collections::HashMap;

use ndarray::{s, Array1, Array2, Axis};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    Concat(Vec<Var>),
    Slice(Var, usize),
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    ScaleCols(Var, Vec<f64>),
    SumSquares(Var),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation over 2-D arrays for reverse-mode
/// differentiation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

const LAYER_NORM_EPS: f64 = 1e-5;

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

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable parameter; repeated requests within one tape share a node
    /// so that their gradients accumulate.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.values(id).clone(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul inner dimensions");
        let out = va.dot(vb);
        let g = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), g)
    }

    /// `x + b` with the single-row `b` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (vx, vb) = (self.value(x), self.value(b));
        assert_eq!(vb.nrows(), 1, "bias must be one row");
        assert_eq!(vx.ncols(), vb.ncols(), "bias width");
        let out = vx + vb;
        let g = self.needs(x) || self.needs(b);
        self.push(out, Op::AddRow(x, b), g)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what} operands differ in shape");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let out = self.value(a) + self.value(b);
        let g = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let out = self.value(a) - self.value(b);
        let g = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let out = self.value(a) * self.value(b);
        let g = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), g)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x) * k;
        let g = self.needs(x);
        self.push(out, Op::Scale(x, k), g)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(0.0));
        let g = self.needs(x);
        self.push(out, Op::Relu(x), g)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let g = self.needs(x);
        self.push(out, Op::Sigmoid(x), g)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::tanh);
        let g = self.needs(x);
        self.push(out, Op::Tanh(x), g)
    }

    /// Per-row normalisation followed by a learned gain and bias (both single rows).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let vx = self.value(x);
        let d = vx.ncols() as f64;
        assert_eq!(self.shape(gain), (1, vx.ncols()), "layer-norm gain width");
        assert_eq!(self.shape(bias), (1, vx.ncols()), "layer-norm bias width");
        let mean = vx.sum_axis(Axis(1)) / d;
        let centred = vx - &mean.view().insert_axis(Axis(1));
        let var = centred.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + LAYER_NORM_EPS).sqrt());
        let xhat = centred * &inv_std.view().insert_axis(Axis(1));
        let out = &xhat * self.value(gain) + self.value(bias);
        let g = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            g,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat rows must agree");
        let g = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::Concat(parts.to_vec()), g)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let out = self.value(x).slice(s![.., start..end]).to_owned();
        let g = self.needs(x);
        self.push(out, Op::Slice(x, start), g)
    }

    /// Row `i` of the output is row `idx[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let out = self.value(x).select(Axis(0), idx);
        let g = self.needs(x);
        self.push(out, Op::Gather(x, idx.to_vec()), g)
    }

    /// Sums row `i` of `x` into output row `idx[i]`; the output has `rows` rows.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.nrows(), idx.len(), "scatter index count");
        let mut out = Array2::zeros((rows, vx.ncols()));
        for (i, &d) in idx.iter().enumerate() {
            out.row_mut(d).scaled_add(1.0, &vx.row(i));
        }
        let g = self.needs(x);
        self.push(out, Op::ScatterAdd(x, idx.to_vec()), g)
    }

    /// Multiplies column `j` by the constant `k[j]`.
    pub fn scale_cols(&mut self, x: Var, k: &[f64]) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.ncols(), k.len(), "column scale width");
        let row = ndarray::ArrayView1::from(k);
        let out = vx * &row;
        let g = self.needs(x);
        self.push(out, Op::ScaleCols(x, k.to_vec()), g)
    }

    /// `1x1` sum of squared entries.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|a| a * a).sum::<f64>();
        let g = self.needs(x);
        self.push(Array2::from_elem((1, 1), v), Op::SumSquares(x), g)
    }

    /// `1x1` sum of entries.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).sum();
        let g = self.needs(x);
        self.push(Array2::from_elem((1, 1), v), Op::Sum(x), g)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        debug_assert_eq!(a.dim(), (1, 1));
        a[[0, 0]]
    }

    /// Back-propagates from the scalar `loss` and adds the resulting parameter
    /// gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::State("backward called without a recorded forward pass".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "loss must be a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &dy, &mut grads, store);
        }
        Ok(())
    }

    fn propagate(
        &self,
        node: &Node,
        dy: &Array2<f64>,
        grads: &mut [Option<Array2<f64>>],
        store: &mut ParamStore,
    ) {
        let mut acc = |v: Var, g: Array2<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => *store.grad_mut(*id) += dy,
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    acc(*a, dy.dot(&self.value(*b).t()));
                }
                if self.needs(*b) {
                    acc(*b, self.value(*a).t().dot(dy));
                }
            }
            Op::AddRow(x, b) => {
                acc(*x, dy.clone());
                if self.needs(*b) {
                    acc(*b, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, dy.clone());
                acc(*b, -dy);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    acc(*a, dy * self.value(*b));
                }
                if self.needs(*b) {
                    acc(*b, dy * self.value(*a));
                }
            }
            Op::Scale(x, k) => acc(*x, dy * *k),
            Op::Relu(x) => {
                let mut g = dy.clone();
                g.zip_mut_with(self.value(*x), |g, &v| {
                    if v <= 0.0 {
                        *g = 0.0
                    }
                });
                acc(*x, g);
            }
            Op::Sigmoid(x) => {
                let mut g = dy.clone();
                g.zip_mut_with(&node.value, |g, &y| *g *= y * (1.0 - y));
                acc(*x, g);
            }
            Op::Tanh(x) => {
                let mut g = dy.clone();
                g.zip_mut_with(&node.value, |g, &y| *g *= 1.0 - y * y);
                acc(*x, g);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                if self.needs(*gain) {
                    acc(*gain, (dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.needs(*bias) {
                    acc(*bias, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.needs(*x) {
                    let d = xhat.ncols() as f64;
                    let dxhat = dy * self.value(*gain);
                    let sum_d = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let sum_dx = (&dxhat * xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let g = (dxhat * d - &sum_d - xhat * &sum_dx)
                        * &(inv_std / d).view().insert_axis(Axis(1));
                    acc(*x, g);
                }
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.needs(p) {
                        acc(p, dy.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::Slice(x, start) => {
                let mut g = Array2::zeros(self.value(*x).dim());
                g.slice_mut(s![.., *start..*start + dy.ncols()]).assign(dy);
                acc(*x, g);
            }
            Op::Gather(x, idx) => {
                let mut g = Array2::zeros(self.value(*x).dim());
                for (i, &r) in idx.iter().enumerate() {
                    g.row_mut(r).scaled_add(1.0, &dy.row(i));
                }
                acc(*x, g);
            }
            Op::ScatterAdd(x, idx) => acc(*x, dy.select(Axis(0), idx)),
            Op::ScaleCols(x, k) => acc(*x, dy * &ndarray::ArrayView1::from(k.as_slice())),
            Op::SumSquares(x) => acc(*x, self.value(*x) * (2.0 * dy[[0, 0]])),
            Op::Sum(x) => acc(*x, Array2::from_elem(self.value(*x).dim(), dy[[0, 0]])),
        }
    }
}
