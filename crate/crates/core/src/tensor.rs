//! Dense row-major tensors of `f64`.
//!
//! Most arithmetic is two-dimensional: vectors are `[n, 1]` columns and a
//! batch of inputs is an `[n, batch]` matrix with one example per column.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::math;

/// Dense row-major array with an explicit shape.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

/// Elementwise single-operand primitives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Abs,
    Relu,
    Softplus,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Negate,
    Scale(f64),
    /// `1{x > 0}`; treated as a constant by differentiation.
    Heaviside,
}

impl Unary {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Abs => x.abs(),
            Unary::Relu => x.max(0.0),
            Unary::Softplus => math::softplus(x),
            Unary::Sigmoid => math::sigmoid(x),
            Unary::Tanh => math::tanh(x),
            Unary::Exp => math::exp(x),
            Unary::Log => math::ln(x),
            Unary::Negate => -x,
            Unary::Scale(c) => c * x,
            Unary::Heaviside => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative at input `x` given output `y`.
    ///
    /// Subgradients: `abs'(0) = 0`, `relu'(0) = 0`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Abs => math::sign(x),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Softplus => math::sigmoid(x),
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Negate => -1.0,
            Unary::Scale(c) => c,
            Unary::Heaviside => 0.0,
        }
    }
}

/// Elementwise two-operand primitives over equal shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    /// Ties pass the adjoint to the first operand.
    Max,
    /// Ties pass the adjoint to the first operand.
    Min,
}

impl Binary {
    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
            Binary::Max => {
                if a >= b {
                    a
                } else {
                    b
                }
            }
            Binary::Min => {
                if a <= b {
                    a
                } else {
                    b
                }
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
            Binary::Max => "max",
            Binary::Min => "min",
        }
    }
}

/// Index map for gather/scatter: `out[i] = src[index[i]]`, or zero when the
/// entry is [`GatherIndex::ZERO`].
#[derive(Clone, Debug, PartialEq)]
pub struct GatherIndex {
    src_shape: Vec<usize>,
    out_shape: Vec<usize>,
    index: Vec<u32>,
}

impl GatherIndex {
    pub const ZERO: u32 = u32::MAX;

    pub fn new(src_shape: Vec<usize>, out_shape: Vec<usize>, index: Vec<u32>) -> Result<Self> {
        let src_len: usize = src_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        if index.len() != out_len {
            return Err(Error::contract(format!(
                "gather index has {} entries for output shape {:?}",
                index.len(),
                out_shape
            )));
        }
        if let Some(bad) = index
            .iter()
            .find(|&&i| i != Self::ZERO && i as usize >= src_len)
        {
            return Err(Error::contract(format!(
                "gather index {bad} out of range for source shape {src_shape:?}"
            )));
        }
        Ok(Self {
            src_shape,
            out_shape,
            index,
        })
    }

    pub fn src_shape(&self) -> &[usize] {
        &self.src_shape
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    pub fn index(&self) -> &[u32] {
        &self.index
    }
}

const PARALLEL_WORK: usize = 1 << 15;

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::contract(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Row-major `rows x cols` matrix. Panics if the data length is wrong.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    /// `[n, 1]` column vector.
    pub fn column(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::matrix(n, 1, data)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self::matrix(r, c, data)
    }

    pub fn scalar(v: f64) -> Self {
        Self::matrix(1, 1, vec![v])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(other.shape.clone())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row count of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Column count of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    fn require_2d(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::dim(op, &self.shape, &[0, 0]));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Column `j` of a 2-D tensor as an owned vector.
    pub fn column_values(&self, j: usize) -> Vec<f64> {
        let c = self.cols();
        (0..self.rows()).map(|i| self.data[i * c + j]).collect()
    }

    /// Builds an `[n, batch]` matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[&[f64]]) -> Result<Self> {
        let b = columns.len();
        let n = columns.first().map_or(0, |c| c.len());
        let mut data = vec![0.0; n * b];
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::dim("from_columns", &[n], &[col.len()]));
            }
            for (i, &v) in col.iter().enumerate() {
                data[i * b + j] = v;
            }
        }
        Ok(Self::matrix(n, b, data))
    }

    /// Standard matrix product with a fixed left-to-right summation order.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.require_2d("matmul")?;
        let (k2, n) = rhs.require_2d("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", &self.shape, &rhs.shape));
        }
        let mut out = vec![0.0; m * n];
        if n > 0 {
            let a = &self.data;
            let b = &rhs.data;
            let row_kernel = |i: usize, row: &mut [f64]| {
                let a_row = &a[i * k..(i + 1) * k];
                for (t, &av) in a_row.iter().enumerate() {
                    let b_row = &b[t * n..(t + 1) * n];
                    for (o, &bv) in row.iter_mut().zip(b_row) {
                        *o += av * bv;
                    }
                }
            };
            run_rows(&mut out, n, m * k * n, row_kernel);
        }
        Ok(Tensor::matrix(m, n, out))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.require_2d("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::matrix(c, r, out))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(
        &self,
        rhs: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(Error::dim(op, &self.shape, &rhs.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn unary(&self, op: Unary) -> Tensor {
        self.map(|v| op.apply(v))
    }

    pub fn binary(&self, op: Binary, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, op.name(), |a, b| op.apply(a, b))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(Binary::Add, rhs)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(Binary::Sub, rhs)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(Binary::Mul, rhs)
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(Binary::Div, rhs)
    }

    pub fn maximum(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(Binary::Max, rhs)
    }

    pub fn minimum(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(Binary::Min, rhs)
    }

    pub fn abs(&self) -> Tensor {
        self.unary(Unary::Abs)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Unary::Relu)
    }

    pub fn softplus(&self) -> Tensor {
        self.unary(Unary::Softplus)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Unary::Sigmoid)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Unary::Tanh)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Unary::Exp)
    }

    pub fn ln(&self) -> Tensor {
        self.unary(Unary::Log)
    }

    pub fn neg(&self) -> Tensor {
        self.unary(Unary::Negate)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(Unary::Scale(c))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        math::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    /// Adds a `[rows, 1]` column to every column of a `[rows, cols]` matrix.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (r, c) = self.require_2d("add_bias")?;
        if bias.shape != [r, 1] {
            return Err(Error::dim("add_bias", &self.shape, &bias.shape));
        }
        let mut out = self.data.clone();
        for i in 0..r {
            let b = bias.data[i];
            for v in &mut out[i * c..(i + 1) * c] {
                *v += b;
            }
        }
        Ok(Tensor::matrix(r, c, out))
    }

    /// Sum over columns: `[rows, cols] -> [rows, 1]`.
    pub fn sum_columns(&self) -> Result<Tensor> {
        let (r, c) = self.require_2d("sum_columns")?;
        let data = (0..r)
            .map(|i| self.data[i * c..(i + 1) * c].iter().sum())
            .collect();
        Ok(Tensor::matrix(r, 1, data))
    }

    pub fn gather(&self, index: &GatherIndex) -> Result<Tensor> {
        if self.shape != index.src_shape {
            return Err(Error::dim("gather", &self.shape, &index.src_shape));
        }
        let data = index
            .index
            .iter()
            .map(|&i| {
                if i == GatherIndex::ZERO {
                    0.0
                } else {
                    self.data[i as usize]
                }
            })
            .collect();
        Ok(Tensor {
            shape: index.out_shape.clone(),
            data,
        })
    }

    /// Adjoint of [`Tensor::gather`]: accumulates into a source-shaped tensor.
    pub fn scatter_add(&self, index: &GatherIndex) -> Result<Tensor> {
        if self.shape != index.out_shape {
            return Err(Error::dim("scatter_add", &self.shape, &index.out_shape));
        }
        let mut out = Tensor::zeros(index.src_shape.clone());
        for (&i, &v) in index.index.iter().zip(&self.data) {
            if i != GatherIndex::ZERO {
                out.data[i as usize] += v;
            }
        }
        Ok(out)
    }

    /// Column-wise softmax of a `[classes, batch]` matrix.
    pub fn softmax_columns(&self) -> Result<Tensor> {
        let (r, c) = self.require_2d("softmax_columns")?;
        let mut out = vec![0.0; r * c];
        for j in 0..c {
            let m = (0..r).map(|i| self.data[i * c + j]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in 0..r {
                let e = math::exp(self.data[i * c + j] - m);
                out[i * c + j] = e;
                total += e;
            }
            for i in 0..r {
                out[i * c + j] /= total;
            }
        }
        Ok(Tensor::matrix(r, c, out))
    }

    /// Sound per-class softmax bounds over a logit box, column by column.
    ///
    /// With `upper = false` entry `k` is `exp(lo_k) / (exp(lo_k) + sum_{j!=k} exp(hi_j))`;
    /// with `upper = true` the roles of `lo` and `hi` swap.
    pub fn softmax_bound(lo: &Tensor, hi: &Tensor, upper: bool) -> Result<Tensor> {
        let (r, c) = lo.require_2d("softmax_bound")?;
        if hi.shape != lo.shape {
            return Err(Error::dim("softmax_bound", &lo.shape, &hi.shape));
        }
        let (own, other) = if upper { (hi, lo) } else { (lo, hi) };
        let mut out = vec![0.0; r * c];
        for j in 0..c {
            for k in 0..r {
                let a = own.data[k * c + j];
                let m = (0..r)
                    .filter(|&i| i != k)
                    .map(|i| other.data[i * c + j])
                    .fold(a, f64::max);
                let ea = math::exp(a - m);
                let mut denom = ea;
                for i in (0..r).filter(|&i| i != k) {
                    denom += math::exp(other.data[i * c + j] - m);
                }
                out[k * c + j] = ea / denom;
            }
        }
        Ok(Tensor::matrix(r, c, out))
    }

    /// Elementwise `lo <= self <= hi` with absolute slack.
    pub fn within(&self, lo: &Tensor, hi: &Tensor, slack: f64) -> bool {
        self.shape == lo.shape
            && self.shape == hi.shape
            && self
                .data
                .iter()
                .zip(lo.data.iter().zip(&hi.data))
                .all(|(&v, (&l, &h))| v >= l - slack && v <= h + slack)
    }

    pub fn max_abs_diff(&self, rhs: &Tensor) -> Result<f64> {
        if self.shape != rhs.shape {
            return Err(Error::dim("max_abs_diff", &self.shape, &rhs.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&rhs.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }
}

/// Runs `kernel(row_index, row)` over each `width`-wide row of `out`.
fn run_rows<F>(out: &mut [f64], width: usize, work: usize, kernel: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if work >= PARALLEL_WORK {
            use rayon::prelude::*;
            out.par_chunks_mut(width)
                .enumerate()
                .for_each(|(i, row)| kernel(i, row));
            return;
        }
    }
    let _ = work;
    let _ = PARALLEL_WORK;
    for (i, row) in out.chunks_mut(width).enumerate() {
        kernel(i, row);
    }
}
