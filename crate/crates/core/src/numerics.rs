//! Dense vector/matrix kernels shared by the model code.
//!
//! Everything here is a pure function over immutable inputs. There is no
//! broadcasting: any disagreement in operand shapes is a hard error, so a
//! miswired gate equation fails loudly instead of producing numbers.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vector(vec![value; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        check_len("dot", "other", self.len(), other.len())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Concatenates `self` and `other` into a new vector `[self ; other]`.
    pub fn concat(&self, other: &Vector) -> Vector {
        let mut out = Vec::with_capacity(self.len() + other.len());
        out.extend_from_slice(&self.0);
        out.extend_from_slice(&other.0);
        Vector(out)
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                "data",
                rows * cols,
                data.len(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", "row", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += scale * a bᵀ`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64], scale: f64) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            let s = scale * ai;
            if s == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, &bj) in row.iter_mut().zip(b) {
                *r += s * bj;
            }
        }
    }
}

fn check_len(op: &'static str, operand: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(op, operand, expected, actual));
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += W x` over raw slices. Lengths are the caller's responsibility.
pub(crate) fn gemv_acc(out: &mut [f64], w: &Matrix, x: &[f64]) {
    debug_assert_eq!(out.len(), w.rows);
    debug_assert_eq!(x.len(), w.cols);
    for (o, row) in out.iter_mut().zip(w.data.chunks_exact(w.cols)) {
        *o += dot(row, x);
    }
}

/// `out += Wᵀ y` over raw slices.
pub(crate) fn gemv_t_acc(out: &mut [f64], w: &Matrix, y: &[f64]) {
    debug_assert_eq!(out.len(), w.cols);
    debug_assert_eq!(y.len(), w.rows);
    for (row, &yi) in w.data.chunks_exact(w.cols).zip(y) {
        if yi == 0.0 {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += wij * yi;
        }
    }
}

pub fn matvec(w: &Matrix, x: &Vector) -> Result<Vector> {
    check_len("matvec", "x", w.cols, x.len())?;
    let mut out = vec![0.0; w.rows];
    gemv_acc(&mut out, w, x);
    Ok(Vector(out))
}

/// `Wᵀ y`
pub fn matvec_transposed(w: &Matrix, y: &Vector) -> Result<Vector> {
    check_len("matvec_transposed", "y", w.rows, y.len())?;
    let mut out = vec![0.0; w.cols];
    gemv_t_acc(&mut out, w, y);
    Ok(Vector(out))
}

/// `W x + U h + b`, the pre-activation shared by every gate.
pub fn affine(w: &Matrix, x: &Vector, u: &Matrix, h: &Vector, b: &Vector) -> Result<Vector> {
    let m = w.rows;
    check_len("affine", "x", w.cols, x.len())?;
    if u.rows != m {
        return Err(Error::shape("affine", "U", format!("{m} rows"), format!("{} rows", u.rows)));
    }
    check_len("affine", "h", u.cols, h.len())?;
    check_len("affine", "b", m, b.len())?;
    let mut out = b.0.clone();
    gemv_acc(&mut out, w, x);
    gemv_acc(&mut out, u, h);
    Ok(Vector(out))
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

pub fn sigmoid(v: &Vector) -> Vector {
    Vector(v.iter().map(|&x| sigmoid_scalar(x)).collect())
}

pub fn tanh(v: &Vector) -> Vector {
    Vector(v.iter().map(|x| x.tanh()).collect())
}

/// Max-shifted softmax.
pub fn softmax(v: &Vector) -> Result<Vector> {
    if v.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    let mut out = v.0.clone();
    softmax_in_place(&mut out);
    Ok(Vector(out))
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn hadamard(a: &Vector, b: &Vector) -> Result<Vector> {
    check_len("hadamard", "b", a.len(), b.len())?;
    Ok(Vector(a.iter().zip(b.iter()).map(|(x, y)| x * y).collect()))
}

pub fn add(a: &Vector, b: &Vector) -> Result<Vector> {
    check_len("add", "b", a.len(), b.len())?;
    Ok(Vector(a.iter().zip(b.iter()).map(|(x, y)| x + y).collect()))
}

pub fn scale(a: &Vector, s: f64) -> Vector {
    Vector(a.iter().map(|x| x * s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from(x)
    }

    #[test]
    fn affine_identity() {
        let out = affine(
            &Matrix::identity(2),
            &v(&[1.0, 2.0]),
            &Matrix::zeros(2, 2),
            &v(&[5.0, 5.0]),
            &Vector::zeros(2),
        )
        .unwrap();
        assert_eq!(out, v(&[1.0, 2.0]));
    }

    #[test]
    fn affine_zero_weights_returns_bias() {
        let out = affine(
            &Matrix::zeros(2, 3),
            &v(&[0.3, -7.0, 2.0]),
            &Matrix::zeros(2, 4),
            &v(&[1.0, 1.0, 1.0, 1.0]),
            &v(&[3.0, -1.0]),
        )
        .unwrap();
        assert_eq!(out, v(&[3.0, -1.0]));
    }

    #[test]
    fn affine_hand_product() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let out = affine(&w, &v(&[1.0, 1.0]), &Matrix::zeros(2, 2), &Vector::zeros(2), &Vector::zeros(2)).unwrap();
        assert_eq!(out, v(&[3.0, 7.0]));
    }

    #[test]
    fn affine_names_offending_operand() {
        let err = affine(
            &Matrix::zeros(2, 2),
            &v(&[1.0, 2.0]),
            &Matrix::zeros(2, 3),
            &v(&[1.0, 2.0]),
            &Vector::zeros(2),
        )
        .unwrap_err();
        match err {
            Error::Shape { operand, .. } => assert_eq!(operand, "h"),
            other => panic!("unexpected {other:?}"),
        }
        let err = affine(
            &Matrix::zeros(2, 2),
            &v(&[1.0, 2.0]),
            &Matrix::zeros(2, 2),
            &v(&[1.0, 2.0]),
            &Vector::zeros(3),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape { operand: "b", .. }));
        let err = affine(&Matrix::zeros(2, 2), &v(&[1.0]), &Matrix::zeros(2, 2), &Vector::zeros(2), &Vector::zeros(2))
            .unwrap_err();
        assert!(matches!(err, Error::Shape { operand: "x", .. }));
    }

    #[test]
    fn activations_closed_forms() {
        assert_eq!(sigmoid(&v(&[0.0]))[0], 0.5);
        assert_eq!(tanh(&v(&[0.0]))[0], 0.0);
        assert!((sigmoid(&v(&[3f64.ln()]))[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn activations_saturate_without_nan() {
        let s = sigmoid(&v(&[-1e4, 1e4, -800.0, 800.0]));
        assert!(s.iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x)));
        let t = tanh(&v(&[-1e4, 1e4]));
        assert_eq!(t.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn softmax_closed_forms() {
        assert_eq!(softmax(&v(&[0.0, 0.0])).unwrap(), v(&[0.5, 0.5]));
        assert_eq!(softmax(&v(&[42.0])).unwrap(), v(&[1.0]));
        let s = softmax(&v(&[1f64.ln(), 2f64.ln(), 4f64.ln()])).unwrap();
        for (got, want) in s.iter().zip([1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(matches!(softmax(&Vector::zeros(0)), Err(Error::Empty(_))));
        let big = softmax(&v(&[1000.0, 1000.0])).unwrap();
        assert_eq!(big, v(&[0.5, 0.5]));
    }

    fn small_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(x in small_vec(6), c in -50.0f64..50.0) {
            let s = softmax(&Vector::from(x.clone())).unwrap();
            let sum: f64 = s.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(s.iter().all(|&p| p >= 0.0));
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let s2 = softmax(&Vector::from(shifted)).unwrap();
            for (a, b) in s.iter().zip(s2.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn affine_is_linear_in_x(w in small_vec(12), x in small_vec(4), y in small_vec(4),
                                 a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let w = Matrix::from_vec(3, 4, w).unwrap();
            let u = Matrix::zeros(3, 1);
            let h = Vector::zeros(1);
            let bias = Vector::zeros(3);
            let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = affine(&w, &Vector::from(combo), &u, &h, &bias).unwrap();
            let fx = affine(&w, &Vector::from(x), &u, &h, &bias).unwrap();
            let fy = affine(&w, &Vector::from(y), &u, &h, &bias).unwrap();
            for i in 0..3 {
                let rhs = a * fx[i] + b * fy[i];
                let tol = 1e-10 * (1.0 + lhs[i].abs().max(rhs.abs()));
                prop_assert!((lhs[i] - rhs).abs() <= tol);
            }
        }

        #[test]
        fn hadamard_matches_scalar_loop_and_commutes(a in small_vec(7), b in small_vec(7)) {
            let va = Vector::from(a.clone());
            let vb = Vector::from(b.clone());
            let ab = hadamard(&va, &vb).unwrap();
            let ba = hadamard(&vb, &va).unwrap();
            prop_assert_eq!(&ab, &ba);
            let mut oracle = Vec::new();
            for i in 0..a.len() {
                oracle.push(a[i] * b[i]);
            }
            prop_assert_eq!(ab.as_slice(), oracle.as_slice());
        }

        #[test]
        fn gates_stay_bounded(x in small_vec(9)) {
            let s = sigmoid(&Vector::from(x.clone()));
            prop_assert!(s.iter().all(|&p| p > 0.0 && p < 1.0));
            let t = tanh(&Vector::from(x));
            prop_assert!(t.iter().all(|&p| p > -1.0 && p < 1.0));
        }
    }

    #[test]
    fn transposed_matvec_matches_explicit_transpose() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let y = v(&[1.0, -1.0]);
        assert_eq!(matvec_transposed(&w, &y).unwrap(), v(&[-3.0, -3.0, -3.0]));
        let mut m = Matrix::zeros(2, 3);
        m.add_outer(&[1.0, 2.0], &[1.0, 0.0, -1.0], 0.5);
        assert_eq!(m.as_slice(), &[0.5, 0.0, -0.5, 1.0, 0.0, -1.0]);
    }
}
