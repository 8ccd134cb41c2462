//! Forward values and backward rules for the primitives the models use.
//!
//! Each `*_backward` takes the upstream gradient `dout` (same shape as the
//! forward output) and returns gradients for the forward inputs.

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(
            op,
            format!("lhs {:?}", a.shape()),
            format!("rhs {:?}", b.shape()),
        ))
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::shape(
            "matmul",
            format!("lhs {:?}", a.shape()),
            format!("rhs {:?}", b.shape()),
        ));
    }
    let mut out = Matrix::zeros(a.rows(), b.cols());
    gemm(1.0, a, false, b, false, 0.0, &mut out);
    Ok(out)
}

/// Returns `(da, db) = (dout * b^T, a^T * dout)`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, dout: &Matrix) -> Result<(Matrix, Matrix)> {
    if dout.shape() != (a.rows(), b.cols()) || a.cols() != b.rows() {
        return Err(Error::shape(
            "matmul_backward",
            format!("lhs {:?} rhs {:?}", a.shape(), b.shape()),
            format!("dout {:?}", dout.shape()),
        ));
    }
    let mut da = Matrix::zeros(a.rows(), a.cols());
    let mut db = Matrix::zeros(b.rows(), b.cols());
    gemm(1.0, dout, false, b, true, 0.0, &mut da);
    gemm(1.0, a, true, dout, false, 0.0, &mut db);
    Ok((da, db))
}

pub fn add(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    same_shape("add", a, b)?;
    let mut out = a.clone();
    for (x, y) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x += y;
    }
    Ok(out)
}

pub fn add_backward(dout: &Matrix) -> (Matrix, Matrix) {
    (dout.clone(), dout.clone())
}

/// Add a `1 x n` row to every row of `a`.
pub fn add_row(a: &Matrix, row: &Matrix) -> Result<Matrix> {
    if row.rows() != 1 || row.cols() != a.cols() {
        return Err(Error::shape(
            "add_row",
            format!("lhs {:?}", a.shape()),
            format!("row {:?}", row.shape()),
        ));
    }
    let mut out = a.clone();
    for r in 0..out.rows() {
        for (x, y) in out.row_mut(r).iter_mut().zip(row.as_slice()) {
            *x += y;
        }
    }
    Ok(out)
}

/// Column sums: the row gradient of [`add_row`].
pub fn sum_rows(dout: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, dout.cols());
    for r in 0..dout.rows() {
        for (x, y) in out.as_mut_slice().iter_mut().zip(dout.row(r)) {
            *x += y;
        }
    }
    out
}

pub fn mul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    same_shape("mul", a, b)?;
    let mut out = a.clone();
    for (x, y) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x *= y;
    }
    Ok(out)
}

pub fn mul_backward(a: &Matrix, b: &Matrix, dout: &Matrix) -> Result<(Matrix, Matrix)> {
    same_shape("mul_backward", a, b)?;
    same_shape("mul_backward", a, dout)?;
    Ok((mul(dout, b)?, mul(dout, a)?))
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    x.map(sigmoid_scalar)
}

/// Uses the forward output `y`.
pub fn sigmoid_backward(y: &Matrix, dout: &Matrix) -> Result<Matrix> {
    same_shape("sigmoid_backward", y, dout)?;
    let mut out = dout.clone();
    for (d, &s) in out.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *d *= s * (1.0 - s);
    }
    Ok(out)
}

pub fn tanh(x: &Matrix) -> Matrix {
    x.map(f64::tanh)
}

pub fn tanh_backward(y: &Matrix, dout: &Matrix) -> Result<Matrix> {
    same_shape("tanh_backward", y, dout)?;
    let mut out = dout.clone();
    for (d, &t) in out.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *d *= 1.0 - t * t;
    }
    Ok(out)
}

pub fn exp(x: &Matrix) -> Matrix {
    x.map(f64::exp)
}

pub fn exp_backward(y: &Matrix, dout: &Matrix) -> Result<Matrix> {
    mul(y, dout)
}

/// Max-shifted softmax of a slice.
pub fn softmax_slice(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `dx = y * (dout - <dout, y>)`.
pub fn softmax_backward_slice(y: &[f64], dout: &[f64], dx: &mut [f64]) {
    let dot: f64 = y.iter().zip(dout).map(|(a, b)| a * b).sum();
    for ((d, &yi), &gi) in dx.iter_mut().zip(y).zip(dout) {
        *d = yi * (gi - dot);
    }
}

/// Softmax of a vector (`1 x n` matrix).
pub fn softmax(x: &Matrix) -> Result<Matrix> {
    if x.rows() != 1 || x.cols() == 0 {
        return Err(Error::shape(
            "softmax",
            "1 x n vector",
            format!("{:?}", x.shape()),
        ));
    }
    let mut out = Matrix::zeros(1, x.cols());
    softmax_slice(x.as_slice(), out.as_mut_slice());
    Ok(out)
}

pub fn softmax_backward(y: &Matrix, dout: &Matrix) -> Result<Matrix> {
    same_shape("softmax_backward", y, dout)?;
    let mut dx = Matrix::zeros(1, y.cols());
    softmax_backward_slice(y.as_slice(), dout.as_slice(), dx.as_mut_slice());
    Ok(dx)
}
