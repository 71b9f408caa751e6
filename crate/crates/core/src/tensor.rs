//! Dense vectors and row-major matrices plus the differentiable primitives
//! used by the fusion network.
//!
//! Every constructor rejects non-finite data and every forward primitive
//! checks its output, so a value that reaches the network is always finite.

use std::fmt;
use std::ops::Deref;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseVector<T> {
    data: Vec<T>,
}

impl<T: Scalar> DenseVector<T> {
    pub fn from_vec(data: Vec<T>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("vector entry {i}")));
        }
        Ok(Self { data })
    }

    /// Wraps data already known to be finite.
    pub(crate) fn from_vec_unchecked(data: Vec<T>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { data }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![T::zero(); len],
        }
    }

    pub fn filled(len: usize, value: T) -> Self {
        Self {
            data: vec![value; len],
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Raw mutable access, used by optimizers and finite-difference checks.
    /// Callers are responsible for keeping entries finite.
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn l2_norm(&self) -> f64 {
        dot_slices(&self.data, &self.data).sqrt()
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::shape("dot", self.len(), other.len()));
        }
        Ok(dot_slices(&self.data, &other.data))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T> Deref for DenseVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix construction",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry ({}, {})",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape("matrix rows", cols, bad.len()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> Shape {
        Shape(self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [T] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// See [`DenseVector::as_mut_slice`].
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Stacks equally sized vectors as rows.
    pub fn stack(rows: &[DenseVector<T>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("stack", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// `W^T g`, the input gradient of an affine layer.
    pub fn transpose_matvec(&self, grad: &[T]) -> Result<DenseVector<T>> {
        if grad.len() != self.rows {
            return Err(Error::shape("transpose_matvec", self.shape(), grad.len()));
        }
        let mut acc = vec![0.0f64; self.cols];
        for (row, &g) in self.iter_rows().zip(grad) {
            let g = g.widen();
            if g == 0.0 {
                continue;
            }
            for (a, &w) in acc.iter_mut().zip(row) {
                *a += g * w.widen();
            }
        }
        Ok(DenseVector::from_vec_unchecked(
            acc.into_iter().map(T::narrow).collect(),
        ))
    }

    /// `self += g x^T`.
    pub fn add_outer(&mut self, grad: &[T], x: &[T]) -> Result<()> {
        if grad.len() != self.rows || x.len() != self.cols {
            return Err(Error::shape(
                "add_outer",
                self.shape(),
                format!("{}x{}", grad.len(), x.len()),
            ));
        }
        let cols = self.cols;
        for (row, &g) in self.data.chunks_exact_mut(cols.max(1)).zip(grad) {
            if g == T::zero() {
                continue;
            }
            for (w, &xj) in row.iter_mut().zip(x) {
                *w = *w + g * xj;
            }
        }
        Ok(())
    }
}

/// `rows x cols`, printed the way shape errors report it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape(pub usize, pub usize);

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}

/// Dot product accumulated in `f64`.
pub fn dot_slices<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.widen() * y.widen()).sum()
}

pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.widen() - y.widen();
            d * d
        })
        .sum()
}

fn check_finite<T: Scalar>(values: Vec<T>, op: &str) -> Result<DenseVector<T>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(op.to_string()));
    }
    Ok(DenseVector::from_vec_unchecked(values))
}

/// Affine map `W x + b`.
pub fn linear_forward<T: Scalar>(
    weight: &DenseMatrix<T>,
    bias: &DenseVector<T>,
    x: &[T],
) -> Result<DenseVector<T>> {
    if weight.cols() != x.len() {
        return Err(Error::shape("linear_forward", weight.shape(), format!("input {}", x.len())));
    }
    if weight.rows() != bias.len() {
        return Err(Error::shape("linear_forward", weight.shape(), format!("bias {}", bias.len())));
    }
    let out = weight
        .iter_rows()
        .zip(bias.iter())
        .map(|(row, &b)| T::narrow(dot_slices(row, x) + b.widen()))
        .collect();
    check_finite(out, "linear_forward")
}

/// Gradients of `W x + b` given the output gradient. Weight and bias grads
/// are accumulated into the provided buffers; the input gradient is returned.
pub fn linear_backward<T: Scalar>(
    weight: &DenseMatrix<T>,
    x: &[T],
    grad_out: &[T],
    grad_weight: &mut DenseMatrix<T>,
    grad_bias: &mut DenseVector<T>,
) -> Result<DenseVector<T>> {
    if grad_bias.len() != grad_out.len() {
        return Err(Error::shape("linear_backward", grad_bias.len(), grad_out.len()));
    }
    grad_weight.add_outer(grad_out, x)?;
    for (b, &g) in grad_bias.as_mut_slice().iter_mut().zip(grad_out) {
        *b = *b + g;
    }
    weight.transpose_matvec(grad_out)
}

pub fn relu<T: Scalar>(x: &[T]) -> DenseVector<T> {
    DenseVector::from_vec_unchecked(x.iter().map(|&v| v.max(T::zero())).collect())
}

/// Masks `grad` by the ReLU derivative at the pre-activation `pre`.
pub fn relu_backward<T: Scalar>(pre: &[T], grad: &[T]) -> DenseVector<T> {
    DenseVector::from_vec_unchecked(
        pre.iter()
            .zip(grad)
            .map(|(&p, &g)| if p > T::zero() { g } else { T::zero() })
            .collect(),
    )
}

/// Logistic sigmoid on one value, evaluated on the branch that cannot
/// overflow and clamped into the open interval (0, 1).
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let upper = T::one() - T::epsilon() / lit(2.0);
    s.max(T::min_positive_value()).min(upper)
}

pub fn sigmoid<T: Scalar>(x: &[T]) -> DenseVector<T> {
    DenseVector::from_vec_unchecked(x.iter().map(|&v| sigmoid_scalar(v)).collect())
}

pub fn hadamard<T: Scalar>(a: &[T], b: &[T]) -> Result<DenseVector<T>> {
    if a.len() != b.len() {
        return Err(Error::shape("hadamard", a.len(), b.len()));
    }
    check_finite(a.iter().zip(b).map(|(&x, &y)| x * y).collect(), "hadamard")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> DenseMatrix<f64> {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn v(x: &[f64]) -> DenseVector<f64> {
        DenseVector::from_vec(x.to_vec()).unwrap()
    }

    #[test]
    fn linear_identity() {
        let out = linear_forward(&m(&[&[1., 0.], &[0., 1.]]), &v(&[0., 0.]), &[3., 4.]).unwrap();
        assert_eq!(out.as_slice(), &[3., 4.]);
    }

    #[test]
    fn linear_hand_arithmetic() {
        let out = linear_forward(&m(&[&[1., 2.], &[3., 4.]]), &v(&[1., 1.]), &[1., 1.]).unwrap();
        assert_eq!(out.as_slice(), &[4., 8.]);
    }

    #[test]
    fn linear_shape_error_names_both_shapes() {
        let w = DenseMatrix::<f64>::zeros(2, 3);
        let err = linear_forward(&w, &v(&[0., 0.]), &[1., 2.]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("input 2"), "{msg}");
    }

    #[test]
    fn linear_bias_shape_error() {
        let w = DenseMatrix::<f64>::zeros(2, 2);
        assert!(linear_forward(&w, &v(&[0.]), &[1., 2.]).is_err());
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]).as_slice(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&[-1.0, -3.0]).as_slice(), &[0.0, 0.0]);
        assert_eq!(relu(&[1.5, 3.0]).as_slice(), &[1.5, 3.0]);
    }

    #[test]
    fn sigmoid_cases() {
        assert_eq!(sigmoid(&[0.0f32, 0.0]).as_slice(), &[0.5, 0.5]);
        let s = sigmoid_scalar(3.0f64.ln());
        assert!((s - 0.75).abs() < 1e-12);
        let big = sigmoid_scalar(1000.0f32);
        assert!(big < 1.0 && 1.0 - big <= f32::EPSILON);
        let small = sigmoid_scalar(-1000.0f32);
        assert!(small > 0.0);
    }

    #[test]
    fn hadamard_cases() {
        assert_eq!(hadamard(&[1.0, 1.0, 1.0], &[2.0, -3.0, 4.0]).unwrap().as_slice(), &[2.0, -3.0, 4.0]);
        assert_eq!(hadamard(&[0.0, 0.0], &[2.0, 3.0]).unwrap().as_slice(), &[0.0, 0.0]);
        assert_eq!(hadamard(&[2.0, 3.0], &[4.0, 5.0]).unwrap().as_slice(), &[8.0, 15.0]);
        assert!(hadamard(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rejects_non_finite_construction() {
        assert!(DenseVector::from_vec(vec![1.0, f64::NAN]).is_err());
        assert!(DenseMatrix::from_vec(1, 2, vec![1.0, f64::INFINITY]).is_err());
        assert!(DenseMatrix::from_vec(2, 2, vec![1.0f32; 3]).is_err());
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let w = m(&[&[0.3, -0.2, 0.5], &[1.1, 0.4, -0.7]]);
        let b = v(&[0.1, -0.2]);
        let x = [0.5, -1.0, 2.0];
        let up = [0.7, -1.3];
        let loss = |w: &DenseMatrix<f64>, b: &DenseVector<f64>, x: &[f64]| {
            dot_slices(&linear_forward(w, b, x).unwrap(), &up)
        };
        let mut gw = DenseMatrix::zeros(2, 3);
        let mut gb = DenseVector::zeros(2);
        let gx = linear_backward(&w, &x, &up, &mut gw, &mut gb).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let mut wp = w.clone();
            wp.as_mut_slice()[i] += h;
            let mut wm = w.clone();
            wm.as_mut_slice()[i] -= h;
            let fd = (loss(&wp, &b, &x) - loss(&wm, &b, &x)) / (2.0 * h);
            assert!((fd - gw.as_slice()[i]).abs() < 1e-8);
        }
        for j in 0..3 {
            let mut xp = x;
            xp[j] += h;
            let mut xm = x;
            xm[j] -= h;
            let fd = (loss(&w, &b, &xp) - loss(&w, &b, &xm)) / (2.0 * h);
            assert!((fd - gx[j]).abs() < 1e-8);
        }
        assert_eq!(gb.as_slice(), &up);
    }

    proptest! {
        #[test]
        fn sigmoid_strictly_inside_unit_interval(x in -1e30f32..1e30f32) {
            let s = sigmoid_scalar(x);
            prop_assert!(s > 0.0 && s < 1.0);
        }

        #[test]
        fn linear_is_additive_without_bias(
            w in proptest::collection::vec(-2.0f64..2.0, 12),
            x in proptest::collection::vec(-2.0f64..2.0, 4),
            y in proptest::collection::vec(-2.0f64..2.0, 4),
            a in -3.0f64..3.0,
            c in -3.0f64..3.0,
        ) {
            let w = DenseMatrix::from_vec(3, 4, w).unwrap();
            let zero = DenseVector::zeros(3);
            let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + c * q).collect();
            let lhs = linear_forward(&w, &zero, &combo).unwrap();
            let fx = linear_forward(&w, &zero, &x).unwrap();
            let fy = linear_forward(&w, &zero, &y).unwrap();
            for i in 0..3 {
                prop_assert!((lhs[i] - (a * fx[i] + c * fy[i])).abs() < 1e-5);
            }
        }
    }
}
