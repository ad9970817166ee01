//! Define-by-run reverse-mode differentiation.
//!
//! Forward evaluation happens eagerly as nodes are pushed; `backward`
//! replays the tape in reverse. The built-in op set is small (affine,
//! rectifier, sigmoid, tanh, abs, exp, log, softplus, sums, products,
//! powers plus structural ops); domain modules contribute structured ops
//! (volume rendering, scatter, convolution) through [`CustomOp`], each with
//! a hand-derived vector-Jacobian product that the test suite checks
//! against central finite differences.

use std::sync::Arc;

use super::kernels;
use super::store::ParamStore;
use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    /// Position on the tape; indexes the result of
    /// [`Tape::backward_full`].
    pub fn index(&self) -> usize {
        self.0
    }
}

/// A structured operation with a hand-written backward pass.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Evaluate the op. Returns the output and any intermediates worth
    /// keeping for the backward pass.
    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Vec<Tensor>)>;

    /// Vector-Jacobian product. `needs[i]` tells whether input `i`
    /// requires a gradient; entries for inputs that do not may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        saved: &[Tensor],
        grad_out: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>>;
}

enum Op {
    Const,
    Var,
    Param(String),
    /// y = x wᵀ + b with x:[n×i], w:[o×i], b:[1×o].
    Affine,
    Relu,
    Sigmoid,
    Tanh,
    Abs,
    Exp,
    Log,
    Softplus,
    AddS,
    MulS(f64),
    /// Elementwise x^p for constant p.
    PowS(f64),
    /// Pass-through gradient strictly inside (lo, hi), zero outside.
    Clamp(f64, f64),
    Add,
    Sub,
    Mul,
    Div,
    /// Scalar replicated to the output shape.
    Broadcast,
    ConcatCols,
    Reshape,
    SumAll,
    /// Mean over columns: [n×m] -> [n×1].
    RowMean,
    Custom(Arc<dyn CustomOp>),
}

impl Op {
    fn name(&self) -> &str {
        match self {
            Op::Const => "const",
            Op::Var => "var",
            Op::Param(_) => "param",
            Op::Affine => "affine",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Abs => "abs",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Softplus => "softplus",
            Op::AddS => "add_scalar",
            Op::MulS(_) => "mul_scalar",
            Op::PowS(_) => "pow_scalar",
            Op::Clamp(_, _) => "clamp",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Broadcast => "broadcast",
            Op::ConcatCols => "concat_cols",
            Op::Reshape => "reshape",
            Op::SumAll => "sum_all",
            Op::RowMean => "row_mean",
            Op::Custom(c) => c.name(),
        }
    }
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    saved: Vec<Tensor>,
    needs_grad: bool,
}

/// Gradient tape. Nodes are appended in topological order by construction.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor, saved: Vec<Tensor>) -> NodeId {
        let needs_grad = match op {
            Op::Const => false,
            Op::Var | Op::Param(_) => true,
            _ => inputs.iter().any(|i| self.nodes[i.0].needs_grad),
        };
        self.nodes.push(Node {
            op,
            inputs,
            value,
            saved,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Const, vec![], t, vec![])
    }

    /// Leaf that participates in `backward_full` (not tied to a store).
    pub fn var(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Var, vec![], t, vec![])
    }

    /// Leaf bound to a named parameter block. Frozen blocks enter as
    /// constants, so no gradient work is spent on them.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let block = store.block(name)?;
        let (r, c) = block.shape2d();
        let t = Tensor::new(r, c, block.values().to_vec())?;
        if block.trainable() {
            Ok(self.push(Op::Param(name.to_string()), vec![], t, vec![]))
        } else {
            Ok(self.constant(t))
        }
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, icols) = xv.shape();
        let (o, wi) = wv.shape();
        if wi != icols {
            return Err(Error::Shape(format!(
                "affine: input has {icols} features, weight expects {wi}"
            )));
        }
        if bv.shape() != (1, o) {
            return Err(Error::Shape(format!(
                "affine: bias shape {:?} does not match {o} outputs",
                bv.shape()
            )));
        }
        let mut y = Tensor::zeros(n, o);
        kernels::affine_forward(
            xv.data(),
            n,
            icols,
            wv.data(),
            o,
            bv.data(),
            y.data_mut(),
        );
        Ok(self.push(Op::Affine, vec![x, w, b], y, vec![]))
    }

    fn unary(&mut self, op: Op, x: NodeId, f: impl Fn(f64) -> f64) -> NodeId {
        let y = self.value(x).map(f);
        self.push(op, vec![x], y, vec![])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Relu, x, |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Sigmoid, x, kernels::sigmoid)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Tanh, x, f64::tanh)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Abs, x, f64::abs)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Exp, x, f64::exp)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Log, x, f64::ln)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Softplus, x, kernels::softplus)
    }

    pub fn add_scalar(&mut self, x: NodeId, s: f64) -> NodeId {
        self.unary(Op::AddS, x, |v| v + s)
    }

    pub fn mul_scalar(&mut self, x: NodeId, s: f64) -> NodeId {
        self.unary(Op::MulS(s), x, |v| v * s)
    }

    pub fn pow_scalar(&mut self, x: NodeId, p: f64) -> NodeId {
        self.unary(Op::PowS(p), x, |v| v.powf(p))
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(Op::Clamp(lo, hi), x, |v| v.clamp(lo, hi))
    }

    fn binary(&mut self, op: Op, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "{}: shapes {:?} vs {:?}",
                op.name(),
                av.shape(),
                bv.shape()
            )));
        }
        let data: Vec<f64> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(av.rows(), av.cols(), data)?;
        Ok(self.push(op, vec![a, b], t, vec![]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Mul, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Div, a, b, |x, y| x / y)
    }

    /// Replicate a `1×1` scalar to `rows×cols`.
    pub fn broadcast(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let v = self.value(x).item()?;
        let t = Tensor::new(rows, cols, vec![v; rows * cols])?;
        Ok(self.push(Op::Broadcast, vec![x], t, vec![]))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::Shape(format!(
                "concat_cols: {} vs {} rows",
                av.rows(),
                bv.rows()
            )));
        }
        let (n, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(n * (ca + cb));
        for r in 0..n {
            data.extend_from_slice(&av.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&bv.data()[r * cb..(r + 1) * cb]);
        }
        let t = Tensor::new(n, ca + cb, data)?;
        Ok(self.push(Op::ConcatCols, vec![a, b], t, vec![]))
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let t = self.value(x).reshaped(rows, cols)?;
        Ok(self.push(Op::Reshape, vec![x], t, vec![]))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Op::SumAll, vec![x], Tensor::scalar(s), vec![])
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len();
        let s = self.sum_all(x);
        self.mul_scalar(s, 1.0 / n as f64)
    }

    pub fn row_mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let (n, m) = v.shape();
        let data: Vec<f64> = (0..n)
            .map(|r| v.data()[r * m..(r + 1) * m].iter().sum::<f64>() / m as f64)
            .collect();
        let t = Tensor::new(n, 1, data)?;
        Ok(self.push(Op::RowMean, vec![x], t, vec![]))
    }

    /// Push a structured op; forward runs immediately.
    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = inputs.iter().map(|i| self.value(*i)).collect();
        let (out, saved) = op.forward(&tensors)?;
        Ok(self.push(Op::Custom(op), inputs.to_vec(), out, saved))
    }

    /// Gradients of a scalar loss with respect to every grad-requiring node.
    ///
    /// Fails with a numeric error naming the op if any forward value on the
    /// tape is non-finite.
    pub fn backward_full(&self, loss: NodeId) -> Result<Vec<Option<Tensor>>> {
        let lnode = &self.nodes[loss.0];
        if lnode.value.shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward expects a scalar loss, got {:?}",
                lnode.value.shape()
            )));
        }
        if !lnode.value.all_finite() {
            // Walk the tape to name the first op that went non-finite.
            for node in &self.nodes {
                if !node.value.all_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite forward value in op `{}`",
                        node.op.name()
                    )));
                }
            }
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(id);
            let Some(g) = upper[0].as_ref() else {
                continue;
            };
            let node = &self.nodes[id];
            let input_grads = self.node_vjp(node, g)?;
            for (slot, grad) in node.inputs.iter().zip(input_grads) {
                let Some(grad) = grad else { continue };
                if !self.nodes[slot.0].needs_grad {
                    continue;
                }
                match &mut lower[slot.0] {
                    Some(acc) => {
                        debug_assert_eq!(acc.shape(), grad.shape());
                        acc.data_mut()
                            .iter_mut()
                            .zip(grad.data())
                            .for_each(|(a, &b)| *a += b);
                    }
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(grads)
    }

    /// Accumulate gradients of `loss` into the store's gradient buffers.
    ///
    /// Buffers are zeroed first, so every trainable block ends up with its
    /// gradient and blocks the loss does not reach stay at zero. Use
    /// [`Tape::backward_accumulate`] for chunked batches.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        store.zero_grads();
        self.backward_accumulate(loss, store)
    }

    /// Like [`Tape::backward`] but adds onto existing gradient buffers.
    pub fn backward_accumulate(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward_full(loss)?;
        for (node, grad) in self.nodes.iter().zip(grads) {
            if let (Op::Param(name), Some(g)) = (&node.op, grad) {
                let buf = store.grad_mut(name)?;
                buf.iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b);
            }
        }
        Ok(())
    }

    fn node_vjp(&self, node: &Node, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let needs: Vec<bool> = node
            .inputs
            .iter()
            .map(|i| self.nodes[i.0].needs_grad)
            .collect();
        let inv: Vec<&Tensor> = node.inputs.iter().map(|i| self.value(*i)).collect();
        let out = &node.value;
        let grads: Vec<Option<Tensor>> = match &node.op {
            Op::Const | Op::Var | Op::Param(_) => vec![],
            Op::Affine => {
                let x = inv[0];
                let w = inv[1];
                let (n, icols) = x.shape();
                let o = w.rows();
                let mut gx = None;
                let mut gw = None;
                let mut gb = None;
                if needs[0] {
                    let mut t = Tensor::zeros(n, icols);
                    kernels::affine_grad_input(g.data(), n, o, w.data(), icols, t.data_mut());
                    gx = Some(t);
                }
                if needs[1] {
                    let mut t = Tensor::zeros(o, icols);
                    kernels::affine_grad_weight(g.data(), n, o, x.data(), icols, t.data_mut());
                    gw = Some(t);
                }
                if needs[2] {
                    let mut t = Tensor::zeros(1, o);
                    kernels::affine_grad_bias(g.data(), n, o, t.data_mut());
                    gb = Some(t);
                }
                vec![gx, gw, gb]
            }
            Op::Relu => vec![Some(elementwise_vjp(g, inv[0], |x, _| {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }, out))],
            Op::Sigmoid => vec![Some(elementwise_vjp(g, inv[0], |_, y| y * (1.0 - y), out))],
            Op::Tanh => vec![Some(elementwise_vjp(g, inv[0], |_, y| 1.0 - y * y, out))],
            Op::Abs => vec![Some(elementwise_vjp(g, inv[0], |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }, out))],
            Op::Exp => vec![Some(elementwise_vjp(g, inv[0], |_, y| y, out))],
            Op::Log => vec![Some(elementwise_vjp(g, inv[0], |x, _| 1.0 / x, out))],
            Op::Softplus => vec![Some(elementwise_vjp(g, inv[0], |x, _| kernels::sigmoid(x), out))],
            Op::AddS => vec![Some(g.clone())],
            Op::MulS(s) => {
                let s = *s;
                vec![Some(g.map(|v| v * s))]
            }
            Op::PowS(p) => {
                let p = *p;
                vec![Some(elementwise_vjp(g, inv[0], |x, _| {
                    // Guard the singular derivative at zero for p < 1.
                    let x = if p < 1.0 { x.max(1e-12) } else { x };
                    p * x.powf(p - 1.0)
                }, out))]
            }
            Op::Clamp(lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                vec![Some(elementwise_vjp(g, inv[0], |x, _| {
                    if x > lo && x < hi {
                        1.0
                    } else {
                        0.0
                    }
                }, out))]
            }
            Op::Add => vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| g.clone()),
            ],
            Op::Sub => vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| g.map(|v| -v)),
            ],
            Op::Mul => {
                let ga = needs[0].then(|| {
                    let mut t = g.clone();
                    t.data_mut()
                        .iter_mut()
                        .zip(inv[1].data())
                        .for_each(|(a, &b)| *a *= b);
                    t
                });
                let gb = needs[1].then(|| {
                    let mut t = g.clone();
                    t.data_mut()
                        .iter_mut()
                        .zip(inv[0].data())
                        .for_each(|(a, &b)| *a *= b);
                    t
                });
                vec![ga, gb]
            }
            Op::Div => {
                let ga = needs[0].then(|| {
                    let mut t = g.clone();
                    t.data_mut()
                        .iter_mut()
                        .zip(inv[1].data())
                        .for_each(|(a, &b)| *a /= b);
                    t
                });
                let gb = needs[1].then(|| {
                    let mut t = g.clone();
                    t.data_mut()
                        .iter_mut()
                        .zip(inv[0].data().iter().zip(inv[1].data()))
                        .for_each(|(a, (&num, &den))| *a *= -num / (den * den));
                    t
                });
                vec![ga, gb]
            }
            Op::Broadcast => {
                let s: f64 = g.data().iter().sum();
                vec![Some(Tensor::scalar(s))]
            }
            Op::ConcatCols => {
                let (n, ca) = inv[0].shape();
                let cb = inv[1].cols();
                let mut da = Vec::with_capacity(n * ca);
                let mut db = Vec::with_capacity(n * cb);
                for r in 0..n {
                    let row = &g.data()[r * (ca + cb)..(r + 1) * (ca + cb)];
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                vec![
                    Some(Tensor::new(n, ca, da)?),
                    Some(Tensor::new(n, cb, db)?),
                ]
            }
            Op::Reshape => {
                let (r, c) = inv[0].shape();
                vec![Some(g.reshaped(r, c)?)]
            }
            Op::SumAll => {
                let gv = g.item()?;
                let (r, c) = inv[0].shape();
                vec![Some(Tensor::new(r, c, vec![gv; r * c])?)]
            }
            Op::RowMean => {
                let (n, m) = inv[0].shape();
                let mut data = vec![0.0; n * m];
                for r in 0..n {
                    let gr = g.data()[r] / m as f64;
                    data[r * m..(r + 1) * m].iter_mut().for_each(|v| *v = gr);
                }
                vec![Some(Tensor::new(n, m, data)?)]
            }
            Op::Custom(op) => op.backward(&inv, out, &node.saved, g, &needs)?,
        };
        if grads.len() != node.inputs.len() {
            return Err(Error::Shape(format!(
                "op `{}` returned {} gradients for {} inputs",
                node.op.name(),
                grads.len(),
                node.inputs.len()
            )));
        }
        Ok(grads)
    }
}

fn elementwise_vjp(
    g: &Tensor,
    x: &Tensor,
    dfdx: impl Fn(f64, f64) -> f64,
    y: &Tensor,
) -> Tensor {
    let mut t = g.clone();
    t.data_mut()
        .iter_mut()
        .zip(x.data().iter().zip(y.data()))
        .for_each(|(gv, (&xv, &yv))| *gv *= dfdx(xv, yv));
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_vec;

    fn check_unary(f: impl Fn(&mut Tape, NodeId) -> NodeId, xs: &[f64], tol: f64) {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::row(xs.to_vec()).unwrap());
        let y = f(&mut tape, x);
        let loss = tape.sum_all(y);
        let grads = tape.backward_full(loss).unwrap();
        let got = grads[x.0].as_ref().unwrap();

        let fd = finite_diff_vec(
            |v| {
                let mut t = Tape::new();
                let x = t.var(Tensor::row(v.to_vec()).unwrap());
                let y = f(&mut t, x);
                let l = t.sum_all(y);
                t.value(l).item().unwrap()
            },
            xs,
            1e-6,
        );
        for (a, b) in got.data().iter().zip(&fd) {
            assert!(
                (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs())),
                "grad {a} vs fd {b}"
            );
        }
    }

    #[test]
    fn unary_grads_match_finite_differences() {
        let xs = [0.3, -0.7, 1.4, 2.2, -0.1];
        check_unary(|t, x| t.sigmoid(x), &xs, 1e-7);
        check_unary(|t, x| t.tanh(x), &xs, 1e-7);
        check_unary(|t, x| t.softplus(x), &xs, 1e-7);
        check_unary(|t, x| t.exp(x), &xs, 1e-7);
        let pos = [0.3, 0.7, 1.4, 2.2, 0.1];
        check_unary(|t, x| t.log(x), &pos, 1e-6);
        check_unary(|t, x| t.pow_scalar(x, 2.5), &pos, 1e-6);
        // Away from the kink / switch points these are differentiable.
        check_unary(|t, x| t.abs(x), &xs, 1e-7);
        check_unary(|t, x| t.relu(x), &xs, 1e-7);
    }

    #[test]
    fn binary_and_structural_grads() {
        let mut tape = Tape::new();
        let a = tape.var(Tensor::new(2, 3, vec![0.5, -1.0, 2.0, 0.1, 0.7, -0.3]).unwrap());
        let b = tape.var(Tensor::new(2, 3, vec![1.5, 0.4, -0.6, 2.0, 1.1, 0.9]).unwrap());
        let prod = tape.mul(a, b).unwrap();
        let quot = tape.div(prod, b).unwrap(); // == a, but exercises div vjp
        let cat = tape.concat_cols(quot, prod).unwrap();
        let m = tape.row_mean(cat).unwrap();
        let loss = tape.sum_all(m);
        let grads = tape.backward_full(loss).unwrap();

        let base: Vec<f64> = [0.5, -1.0, 2.0, 0.1, 0.7, -0.3]
            .iter()
            .chain(&[1.5, 0.4, -0.6, 2.0, 1.1, 0.9])
            .copied()
            .collect();
        let fd = finite_diff_vec(
            |v| {
                let mut t = Tape::new();
                let a = t.var(Tensor::new(2, 3, v[..6].to_vec()).unwrap());
                let b = t.var(Tensor::new(2, 3, v[6..].to_vec()).unwrap());
                let prod = t.mul(a, b).unwrap();
                let quot = t.div(prod, b).unwrap();
                let cat = t.concat_cols(quot, prod).unwrap();
                let m = t.row_mean(cat).unwrap();
                let l = t.sum_all(m);
                t.value(l).item().unwrap()
            },
            &base,
            1e-6,
        );
        let ga = grads[a.0].as_ref().unwrap();
        let gb = grads[b.0].as_ref().unwrap();
        for (i, (g, f)) in ga.data().iter().chain(gb.data()).zip(&fd).enumerate() {
            assert!((g - f).abs() < 1e-6 * (1.0 + f.abs()), "entry {i}: {g} vs {f}");
        }
    }

    #[test]
    fn quadratic_loss_gradient_is_2p() {
        let mut tape = Tape::new();
        let p = tape.var(Tensor::row(vec![1.0, -2.0, 3.0]).unwrap());
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.sum_all(sq);
        let grads = tape.backward_full(loss).unwrap();
        assert_eq!(grads[p.0].as_ref().unwrap().data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn disconnected_block_gets_zero_grad() {
        let mut store = ParamStore::new();
        store.add_block("a", vec![2], vec![1.0, 2.0], true).unwrap();
        store.add_block("b", vec![2], vec![3.0, 4.0], true).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&store, "a").unwrap();
        let _b = tape.param(&store, "b").unwrap();
        let sq = tape.mul(a, a).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("a").unwrap(), &[2.0, 4.0]);
        assert_eq!(store.grad("b").unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn nan_in_forward_names_the_op() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::row(vec![-1.0]).unwrap());
        let y = tape.log(x); // NaN
        let loss = tape.sum_all(y);
        let err = tape.backward_full(loss).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("log"), "unexpected message: {msg}");
    }

    #[test]
    fn frozen_params_enter_as_constants() {
        let mut store = ParamStore::new();
        store.add_block("w", vec![2], vec![1.0, 2.0], false).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.var(Tensor::new(64, 8, (0..512).map(|i| (i as f64) * 0.01).collect()).unwrap());
            let w = tape.var(Tensor::new(4, 8, (0..32).map(|i| (i as f64) * 0.1 - 1.0).collect()).unwrap());
            let b = tape.var(Tensor::row(vec![0.1, -0.2, 0.3, -0.4]).unwrap());
            let y = tape.affine(x, w, b).unwrap();
            let s = tape.sigmoid(y);
            let l = tape.sum_all(s);
            tape.value(l).item().unwrap()
        };
        let bits_a = run().to_bits();
        let bits_b = run().to_bits();
        assert_eq!(bits_a, bits_b);
    }
}
