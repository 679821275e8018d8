//! Evaluation backends.
//!
//! Network evaluation, the exact gradient recursion and interval propagation
//! are written once against [`Backend`]. [`Plain`] evaluates directly on
//! tensors; [`Graph`] records every step so the result can be differentiated
//! (with respect to parameters for certified training, or with respect to the
//! input for exact attack gradients).

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Binary, GatherIndex, Tensor, Unary};

pub trait Backend {
    type Value: Clone;

    fn constant(&self, t: Tensor) -> Self::Value;
    fn read<R>(&self, v: &Self::Value, f: impl FnOnce(&Tensor) -> R) -> R;
    fn unary(&self, op: Unary, a: &Self::Value) -> Self::Value;
    fn binary(&self, op: Binary, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn matmul(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn transpose(&self, a: &Self::Value) -> Result<Self::Value>;
    fn add_bias(&self, a: &Self::Value, bias: &Self::Value) -> Result<Self::Value>;
    fn reshape(&self, a: &Self::Value, shape: Vec<usize>) -> Result<Self::Value>;
    fn gather(&self, a: &Self::Value, index: &Arc<GatherIndex>) -> Result<Self::Value>;
    fn scatter_add(&self, a: &Self::Value, index: &Arc<GatherIndex>) -> Result<Self::Value>;
    fn sum(&self, a: &Self::Value) -> Self::Value;
    fn softmax_columns(&self, a: &Self::Value) -> Result<Self::Value>;
    fn softmax_bound(&self, lo: &Self::Value, hi: &Self::Value, upper: bool) -> Result<Self::Value>;

    /// Elementwise-tight interval product; only available without recording.
    fn corner_matmul(
        &self,
        _a: (&Self::Value, &Self::Value),
        _b: (&Self::Value, &Self::Value),
    ) -> Result<(Self::Value, Self::Value)> {
        Err(Error::contract(
            "corner-exact interval matmul is not differentiable; use the closed-form bound",
        ))
    }

    fn shape(&self, v: &Self::Value) -> Vec<usize> {
        self.read(v, |t| t.shape().to_vec())
    }

    fn add(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(Binary::Add, a, b)
    }

    fn sub(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(Binary::Sub, a, b)
    }

    fn mul(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(Binary::Mul, a, b)
    }

    fn max(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(Binary::Max, a, b)
    }

    fn min(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(Binary::Min, a, b)
    }

    fn abs(&self, a: &Self::Value) -> Self::Value {
        self.unary(Unary::Abs, a)
    }

    fn scale(&self, a: &Self::Value, c: f64) -> Self::Value {
        self.unary(Unary::Scale(c), a)
    }
}

/// Direct evaluation on tensors.
#[derive(Clone, Copy, Debug, Default)]
pub struct Plain;

impl Backend for Plain {
    type Value = Tensor;

    fn constant(&self, t: Tensor) -> Tensor {
        t
    }

    fn read<R>(&self, v: &Tensor, f: impl FnOnce(&Tensor) -> R) -> R {
        f(v)
    }

    fn unary(&self, op: Unary, a: &Tensor) -> Tensor {
        a.unary(op)
    }

    fn binary(&self, op: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.binary(op, b)
    }

    fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.matmul(b)
    }

    fn transpose(&self, a: &Tensor) -> Result<Tensor> {
        a.transpose()
    }

    fn add_bias(&self, a: &Tensor, bias: &Tensor) -> Result<Tensor> {
        a.add_bias(bias)
    }

    fn reshape(&self, a: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
        a.clone().reshape(shape)
    }

    fn gather(&self, a: &Tensor, index: &Arc<GatherIndex>) -> Result<Tensor> {
        a.gather(index)
    }

    fn scatter_add(&self, a: &Tensor, index: &Arc<GatherIndex>) -> Result<Tensor> {
        a.scatter_add(index)
    }

    fn sum(&self, a: &Tensor) -> Tensor {
        Tensor::scalar(a.sum())
    }

    fn softmax_columns(&self, a: &Tensor) -> Result<Tensor> {
        a.softmax_columns()
    }

    fn softmax_bound(&self, lo: &Tensor, hi: &Tensor, upper: bool) -> Result<Tensor> {
        Tensor::softmax_bound(lo, hi, upper)
    }

    fn corner_matmul(&self, a: (&Tensor, &Tensor), b: (&Tensor, &Tensor)) -> Result<(Tensor, Tensor)> {
        crate::interval::corner_product(a.0, a.1, b.0, b.1)
    }
}

impl Backend for Graph {
    type Value = Var;

    fn constant(&self, t: Tensor) -> Var {
        Graph::constant(self, t)
    }

    fn read<R>(&self, v: &Var, f: impl FnOnce(&Tensor) -> R) -> R {
        self.with_value(*v, f)
    }

    fn unary(&self, op: Unary, a: &Var) -> Var {
        Graph::unary(self, op, *a)
    }

    fn binary(&self, op: Binary, a: &Var, b: &Var) -> Result<Var> {
        Graph::binary(self, op, *a, *b)
    }

    fn matmul(&self, a: &Var, b: &Var) -> Result<Var> {
        Graph::matmul(self, *a, *b)
    }

    fn transpose(&self, a: &Var) -> Result<Var> {
        Graph::transpose(self, *a)
    }

    fn add_bias(&self, a: &Var, bias: &Var) -> Result<Var> {
        Graph::add_bias(self, *a, *bias)
    }

    fn reshape(&self, a: &Var, shape: Vec<usize>) -> Result<Var> {
        Graph::reshape(self, *a, shape)
    }

    fn gather(&self, a: &Var, index: &Arc<GatherIndex>) -> Result<Var> {
        Graph::gather(self, *a, index)
    }

    fn scatter_add(&self, a: &Var, index: &Arc<GatherIndex>) -> Result<Var> {
        Graph::scatter_add(self, *a, index)
    }

    fn sum(&self, a: &Var) -> Var {
        Graph::sum(self, *a)
    }

    fn softmax_columns(&self, a: &Var) -> Result<Var> {
        Graph::softmax_columns(self, *a)
    }

    fn softmax_bound(&self, lo: &Var, hi: &Var, upper: bool) -> Result<Var> {
        Graph::softmax_bound(self, *lo, *hi, upper)
    }
}
