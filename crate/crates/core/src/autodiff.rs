//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so the tape is already
//! topologically sorted and [`Graph::backward`] is a single reverse sweep.
//! A graph is single-threaded for its whole lifetime.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{Binary, GatherIndex, Tensor, Unary};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Unary(Unary, usize),
    Binary(Binary, usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    AddBias(usize, usize),
    Reshape(usize),
    Gather(usize, Arc<GatherIndex>),
    ScatterAdd(usize, Arc<GatherIndex>),
    Sum(usize),
    SoftmaxColumns(usize),
    SoftmaxBound { lo: usize, hi: usize, upper: bool },
    CrossEntropy(usize, Arc<[usize]>),
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Recording of primitive operations with their forward values.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Adjoints produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of `var`; `None` when the root does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Adjoint of `var`, or zeros of `shape` when untouched.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, tracked });
        Var(nodes.len() - 1)
    }

    fn tracked(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].tracked)
    }

    /// Differentiable leaf (a parameter or an input being attacked).
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.with_value(v, Tensor::clone)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.with_value(v, |t| t.data()[0])
    }

    fn record(&self, op: Op, operands: &[usize], compute: impl FnOnce(&[Node]) -> Result<Tensor>) -> Result<Var> {
        let value = compute(&self.nodes.borrow())?;
        let tracked = self.tracked(operands);
        Ok(self.push(value, op, tracked))
    }

    pub fn unary(&self, op: Unary, a: Var) -> Var {
        let value = self.with_value(a, |t| t.unary(op));
        let tracked = self.tracked(&[a.0]) && op != Unary::Heaviside;
        self.push(value, Op::Unary(op, a.0), tracked)
    }

    pub fn binary(&self, op: Binary, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Binary(op, a.0, b.0), &[a.0, b.0], |n| {
            n[a.0].value.binary(op, &n[b.0].value)
        })
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a.0, b.0), &[a.0, b.0], |n| {
            n[a.0].value.matmul(&n[b.0].value)
        })
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        self.record(Op::Transpose(a.0), &[a.0], |n| n[a.0].value.transpose())
    }

    pub fn add_bias(&self, a: Var, bias: Var) -> Result<Var> {
        self.record(Op::AddBias(a.0, bias.0), &[a.0, bias.0], |n| {
            n[a.0].value.add_bias(&n[bias.0].value)
        })
    }

    pub fn reshape(&self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.record(Op::Reshape(a.0), &[a.0], |n| n[a.0].value.clone().reshape(shape))
    }

    pub fn gather(&self, a: Var, index: &Arc<GatherIndex>) -> Result<Var> {
        self.record(Op::Gather(a.0, index.clone()), &[a.0], |n| {
            n[a.0].value.gather(index)
        })
    }

    pub fn scatter_add(&self, a: Var, index: &Arc<GatherIndex>) -> Result<Var> {
        self.record(Op::ScatterAdd(a.0, index.clone()), &[a.0], |n| {
            n[a.0].value.scatter_add(index)
        })
    }

    /// Sum of all entries as a `[1, 1]` scalar.
    pub fn sum(&self, a: Var) -> Var {
        let value = self.with_value(a, |t| Tensor::scalar(t.sum()));
        let tracked = self.tracked(&[a.0]);
        self.push(value, Op::Sum(a.0), tracked)
    }

    pub fn softmax_columns(&self, a: Var) -> Result<Var> {
        self.record(Op::SoftmaxColumns(a.0), &[a.0], |n| {
            n[a.0].value.softmax_columns()
        })
    }

    pub fn softmax_bound(&self, lo: Var, hi: Var, upper: bool) -> Result<Var> {
        self.record(
            Op::SoftmaxBound {
                lo: lo.0,
                hi: hi.0,
                upper,
            },
            &[lo.0, hi.0],
            |n| Tensor::softmax_bound(&n[lo.0].value, &n[hi.0].value, upper),
        )
    }

    /// Mean softmax cross-entropy over the columns of `[classes, batch]` logits.
    pub fn cross_entropy(&self, logits: Var, labels: &[usize]) -> Result<Var> {
        let labels: Arc<[usize]> = Arc::from(labels);
        let l2 = labels.clone();
        self.record(Op::CrossEntropy(logits.0, labels), &[logits.0], move |n| {
            cross_entropy_value(&n[logits.0].value, &l2).map(Tensor::scalar)
        })
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_len = nodes
            .get(root.0)
            .ok_or_else(|| Error::contract("backward root is not on this graph"))?
            .value
            .len();
        if root_len != 1 {
            return Err(Error::contract(alloc::format!(
                "backward root must be scalar, got shape {:?}",
                nodes[root.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(nodes[root.0].value.shape().to_vec(), 1.0));

        for id in (0..=root.0).rev() {
            let node = &nodes[id];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut push = |target: usize, contrib: Tensor| {
                if !nodes[target].tracked {
                    return;
                }
                match &mut grads[target] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Unary(op, a) => {
                    let x = &nodes[*a].value;
                    let y = &node.value;
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data().iter().zip(y.data()))
                        .map(|(&gi, (&xi, &yi))| gi * op.derivative(xi, yi))
                        .collect();
                    push(*a, Tensor::new(x.shape().to_vec(), data)?);
                }
                Op::Binary(op, a, b) => {
                    let (ga, gb) = binary_adjoint(*op, &g, &nodes[*a].value, &nodes[*b].value)?;
                    push(*a, ga);
                    push(*b, gb);
                }
                Op::MatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    if nodes[*a].tracked {
                        push(*a, g.matmul(&bv.transpose()?)?);
                    }
                    if nodes[*b].tracked {
                        push(*b, av.transpose()?.matmul(&g)?);
                    }
                }
                Op::Transpose(a) => push(*a, g.transpose()?),
                Op::AddBias(a, b) => {
                    if nodes[*b].tracked {
                        push(*b, g.sum_columns()?);
                    }
                    push(*a, g);
                }
                Op::Reshape(a) => {
                    let shape = nodes[*a].value.shape().to_vec();
                    push(*a, g.reshape(shape)?);
                }
                Op::Gather(a, index) => push(*a, g.scatter_add(index)?),
                Op::ScatterAdd(a, index) => push(*a, g.gather(index)?),
                Op::Sum(a) => {
                    let s = g.data()[0];
                    push(*a, Tensor::full(nodes[*a].value.shape().to_vec(), s));
                }
                Op::SoftmaxColumns(a) => push(*a, softmax_adjoint(&node.value, &g)?),
                Op::SoftmaxBound { lo, hi, upper } => {
                    let (glo, ghi) =
                        softmax_bound_adjoint(&nodes[*lo].value, &nodes[*hi].value, *upper, &node.value, &g);
                    push(*lo, glo);
                    push(*hi, ghi);
                }
                Op::CrossEntropy(a, labels) => {
                    let z = &nodes[*a].value;
                    let mut p = z.softmax_columns()?;
                    let c = z.cols();
                    let scale = g.data()[0] / c as f64;
                    for (j, &label) in labels.iter().enumerate() {
                        p.data_mut()[label * c + j] -= 1.0;
                    }
                    push(*a, p.scale(scale));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn binary_adjoint(op: Binary, g: &Tensor, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok(match op {
        Binary::Add => (g.clone(), g.clone()),
        Binary::Sub => (g.clone(), g.neg()),
        Binary::Mul => (g.mul(b)?, g.mul(a)?),
        Binary::Div => {
            let ga = g.div(b)?;
            let gb = g
                .mul(a)?
                .zip_with(b, "div", |num, den| -num / (den * den))?;
            (ga, gb)
        }
        Binary::Max | Binary::Min => {
            let first_wins = |x: f64, y: f64| {
                if op == Binary::Max {
                    x >= y
                } else {
                    x <= y
                }
            };
            let n = g.len();
            let mut ga = vec![0.0; n];
            let mut gb = vec![0.0; n];
            for i in 0..n {
                if first_wins(a.data()[i], b.data()[i]) {
                    ga[i] = g.data()[i];
                } else {
                    gb[i] = g.data()[i];
                }
            }
            (
                Tensor::new(a.shape().to_vec(), ga)?,
                Tensor::new(b.shape().to_vec(), gb)?,
            )
        }
    })
}

fn softmax_adjoint(y: &Tensor, g: &Tensor) -> Result<Tensor> {
    let (r, c) = (y.rows(), y.cols());
    let mut out = vec![0.0; r * c];
    for j in 0..c {
        let dot: f64 = (0..r).map(|i| y.data()[i * c + j] * g.data()[i * c + j]).sum();
        for i in 0..r {
            let k = i * c + j;
            out[k] = y.data()[k] * (g.data()[k] - dot);
        }
    }
    Tensor::new(y.shape().to_vec(), out)
}

fn softmax_bound_adjoint(
    lo: &Tensor,
    hi: &Tensor,
    upper: bool,
    out: &Tensor,
    g: &Tensor,
) -> (Tensor, Tensor) {
    let (r, c) = (lo.rows(), lo.cols());
    let mut g_lo = Tensor::zeros_like(lo);
    let mut g_hi = Tensor::zeros_like(hi);
    let (own, other) = if upper { (hi, lo) } else { (lo, hi) };
    let mut g_own = vec![0.0; r * c];
    let mut g_other = vec![0.0; r * c];
    for j in 0..c {
        for k in 0..r {
            let idx = k * c + j;
            let p = out.data()[idx];
            let gk = g.data()[idx];
            if gk == 0.0 {
                continue;
            }
            g_own[idx] += gk * p * (1.0 - p);
            let a = own.data()[idx];
            let m = (0..r)
                .filter(|&i| i != k)
                .map(|i| other.data()[i * c + j])
                .fold(a, f64::max);
            let mut denom = crate::math::exp(a - m);
            for i in (0..r).filter(|&i| i != k) {
                denom += crate::math::exp(other.data()[i * c + j] - m);
            }
            for i in (0..r).filter(|&i| i != k) {
                let w = crate::math::exp(other.data()[i * c + j] - m) / denom;
                g_other[i * c + j] -= gk * p * w;
            }
        }
    }
    let (own_t, other_t) = if upper {
        (&mut g_hi, &mut g_lo)
    } else {
        (&mut g_lo, &mut g_hi)
    };
    own_t.data_mut().copy_from_slice(&g_own);
    other_t.data_mut().copy_from_slice(&g_other);
    (g_lo, g_hi)
}

/// Mean cross-entropy of column logits against class labels.
pub fn cross_entropy_value(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (r, c) = (logits.rows(), logits.cols());
    if labels.len() != c {
        return Err(Error::dim("cross_entropy", logits.shape(), &[labels.len()]));
    }
    let mut total = 0.0;
    for (j, &label) in labels.iter().enumerate() {
        if label >= r {
            return Err(Error::contract(alloc::format!(
                "label {label} out of range for {r} classes"
            )));
        }
        let col = |i: usize| logits.data()[i * c + j];
        let m = (0..r).map(col).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + crate::math::ln((0..r).map(|i| crate::math::exp(col(i) - m)).sum());
        total += lse - col(label);
    }
    Ok(total / c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_adjoint() {
        let g = Graph::new();
        let w = g.param(Tensor::from_rows(&[&[1.0, 2.0]]));
        let sq = g.binary(Binary::Mul, w, w).unwrap();
        let root = g.sum(sq);
        let grads = g.backward(root).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn abs_sum_adjoint_uses_zero_subgradient() {
        let g = Graph::new();
        let w = g.param(Tensor::from_rows(&[&[-3.0, 0.0, 2.0]]));
        let root = g.sum(g.unary(Unary::Abs, w));
        let grads = g.backward(root).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let g = Graph::new();
        let w = g.param(Tensor::column(vec![1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn max_tie_goes_to_first_operand() {
        let g = Graph::new();
        let a = g.param(Tensor::scalar(1.0));
        let b = g.param(Tensor::scalar(1.0));
        let m = g.binary(Binary::Max, a, b).unwrap();
        let grads = g.backward(g.sum(m)).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn constants_receive_no_adjoint() {
        let g = Graph::new();
        let a = g.param(Tensor::scalar(2.0));
        let c = g.constant(Tensor::scalar(5.0));
        let p = g.binary(Binary::Mul, a, c).unwrap();
        let grads = g.backward(g.sum(p)).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[5.0]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn replay_is_identical() {
        let g = Graph::new();
        let w = g.param(Tensor::matrix(2, 2, vec![0.3, -0.2, 0.5, 1.1]));
        let x = g.constant(Tensor::column(vec![1.0, -2.0]));
        let y = g.matmul(w, x).unwrap();
        let root = g.sum(g.unary(Unary::Softplus, y));
        let g1 = g.backward(root).unwrap();
        let g2 = g.backward(root).unwrap();
        assert_eq!(g1.get(w), g2.get(w));
    }
}
