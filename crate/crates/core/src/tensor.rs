//! Dense row-major `f64` tensors.
//!
//! Only what the network and gradient engines need: shape bookkeeping,
//! 2-D matrix products, elementwise maps and axis-0 reductions. Matrix
//! products go through `matrixmultiply::dgemm`, which accepts arbitrary
//! strides, so transposed operands never need to be materialized.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a 2-D tensor from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor {
            shape: vec![rows.len(), cols],
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of columns of a 2-D tensor (1 for a vector).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let c = self.shape[1];
        self.data[i * c + j] = v;
    }

    pub fn get3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|a| *a = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&x| x != 0.0).count()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Column sums of a 2-D tensor.
    pub fn sum_rows(&self) -> Vec<f64> {
        let c = self.cols();
        let mut out = vec![0.0; c];
        for r in self.data.chunks_exact(c.max(1)) {
            for (o, x) in out.iter_mut().zip(r) {
                *o += x;
            }
        }
        out
    }

    /// `self · other` for 2-D operands.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (m, k) = (self.shape[0], self.cols());
        let n = other.cols();
        assert_eq!(k, other.shape[0], "matmul inner dimension");
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            1.0,
            (&self.data, k as isize, 1),
            (&other.data, n as isize, 1),
            0.0,
            &mut out.data,
        );
        out
    }

    /// `self · otherᵀ` for 2-D operands.
    pub fn matmul_t(&self, other: &Tensor) -> Tensor {
        let (m, k) = (self.shape[0], self.cols());
        let n = other.shape[0];
        assert_eq!(k, other.cols(), "matmul_t inner dimension");
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            1.0,
            (&self.data, k as isize, 1),
            (&other.data, 1, k as isize),
            0.0,
            &mut out.data,
        );
        out
    }

    /// `out += selfᵀ · other` for 2-D operands.
    pub fn t_matmul_acc(&self, other: &Tensor, out: &mut Tensor) {
        let (k, m) = (self.shape[0], self.cols());
        let n = other.cols();
        assert_eq!(k, other.shape[0], "t_matmul inner dimension");
        assert_eq!(out.shape(), &[m, n]);
        gemm(
            m,
            k,
            n,
            1.0,
            (&self.data, 1, m as isize),
            (&other.data, n as isize, 1),
            1.0,
            &mut out.data,
        );
    }

    /// Horizontal concatenation of 2-D tensors sharing a row count.
    pub fn hcat(parts: &[&Tensor]) -> Tensor {
        let rows = parts[0].rows();
        let width: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Tensor {
            shape: vec![rows, width],
            data,
        }
    }

    /// Columns `[start, start + width)` of a 2-D tensor.
    pub fn col_slice(&self, start: usize, width: usize) -> Tensor {
        let rows = self.rows();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&self.row(r)[start..start + width]);
        }
        Tensor {
            shape: vec![rows, width],
            data,
        }
    }

    /// Slice `[.., t, ..]` of a `[batch, time, features]` tensor as `[batch, features]`.
    pub fn time_slice(&self, t: usize) -> Tensor {
        let (b, tt, f) = (self.shape[0], self.shape[1], self.shape[2]);
        let mut data = Vec::with_capacity(b * f);
        for i in 0..b {
            let base = (i * tt + t) * f;
            data.extend_from_slice(&self.data[base..base + f]);
        }
        Tensor {
            shape: vec![b, f],
            data,
        }
    }

    /// Stacks `[batch, features]` slices along a new time axis.
    pub fn stack_time(steps: &[Tensor]) -> Tensor {
        let t = steps.len();
        let (b, f) = (steps[0].rows(), steps[0].cols());
        let mut out = Tensor::zeros(&[b, t, f]);
        for (ti, s) in steps.iter().enumerate() {
            for i in 0..b {
                let base = (i * t + ti) * f;
                out.data[base..base + f].copy_from_slice(s.row(i));
            }
        }
        out
    }

    /// Rows selected by index from the leading axis.
    pub fn select(&self, idx: &[usize]) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(idx.len() * inner);
        for &i in idx {
            data.extend_from_slice(&self.data[i * inner..(i + 1) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Tensor { shape, data }
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    // SAFETY: every operand slice covers the index range implied by its
    // dimensions and strides, checked by the callers' shape assertions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..k {
                    s += a.get2(i, l) * b.get2(l, j);
                }
                out.set2(i, j, s);
            }
        }
        out
    }

    fn transpose(a: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(&[a.cols(), a.rows()]);
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                out.set2(j, i, a.get2(i, j));
            }
        }
        out
    }

    fn sample(m: usize, n: usize, off: f64) -> Tensor {
        let data = (0..m * n).map(|i| ((i as f64) * 0.37 + off).sin()).collect();
        Tensor::from_vec(&[m, n], data).unwrap()
    }

    #[test]
    fn matmul_variants_agree_with_naive_product() {
        let a = sample(4, 3, 0.1);
        let b = sample(3, 5, 0.7);
        let want = naive(&a, &b);
        let got = a.matmul(&b);
        for (x, y) in got.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let got_t = a.matmul_t(&transpose(&b));
        for (x, y) in got_t.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let mut acc = Tensor::full(&[4, 5], 1.0);
        transpose(&a).t_matmul_acc(&b, &mut acc);
        for (x, y) in acc.data().iter().zip(want.data()) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = sample(2, 3, 0.0);
        let b = sample(2, 2, 1.0);
        let c = Tensor::hcat(&[&a, &b]);
        assert_eq!(c.shape(), &[2, 5]);
        assert_eq!(c.col_slice(0, 3), a);
        assert_eq!(c.col_slice(3, 2), b);
    }

    #[test]
    fn time_axis_helpers() {
        let steps: Vec<Tensor> = (0..3).map(|t| sample(2, 4, t as f64)).collect();
        let x = Tensor::stack_time(&steps);
        assert_eq!(x.shape(), &[2, 3, 4]);
        for (t, s) in steps.iter().enumerate() {
            assert_eq!(&x.time_slice(t), s);
        }
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }
}
