//! Minimal dense linear algebra for small embedding networks.
//!
//! Everything here is deliberately plain: contiguous storage, row-major
//! matrices, and explicit loops. Reductions (dot products, norms, matrix-
//! vector products) accumulate strictly left to right in index order, so the
//! same inputs produce bit-identical results on every platform and across
//! refactors. That pinned order is what makes checkpoint reproducibility and
//! the "identical trajectories" guarantees of the trainer testable.
//!
//! Shape mismatches are programming errors, not recoverable conditions, so
//! all ops `panic!` with the offending dimensions rather than returning
//! `Result`. Callers that accept external data (files, checkpoints) validate
//! shapes at the boundary before calling in here.

use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Dense vector with `Scalar` elements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vector<T> {
    data: Vec<T>,
}

impl<T: Scalar> Vector<T> {
    /// Wraps an existing buffer.
    pub fn new(data: Vec<T>) -> Self {
        Self { data }
    }

    /// Vector of `len` zeros.
    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![T::zero(); len],
        }
    }

    /// Builds a vector from `f64` constants (mostly used in tests).
    pub fn of(values: &[f64]) -> Self {
        Self {
            data: values.iter().map(|&v| T::of(v)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    /// True when every element is finite (no NaN or infinity).
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Dot product, accumulated left to right.
    ///
    /// Panics if the lengths differ.
    pub fn dot(&self, other: &Self) -> T {
        assert_eq!(
            self.len(),
            other.len(),
            "dot: length mismatch ({} vs {})",
            self.len(),
            other.len()
        );
        let mut acc = T::zero();
        for (a, b) in self.data.iter().zip(&other.data) {
            acc = acc + *a * *b;
        }
        acc
    }

    /// Euclidean norm `sqrt(self . self)`.
    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    /// Squared Euclidean distance, summed left to right over `(aᵢ - bᵢ)²`.
    ///
    /// Computing the squared differences directly (rather than expanding the
    /// product) makes the result exactly symmetric in its arguments, because
    /// `(a-b)² == (b-a)²` holds bit-for-bit in IEEE arithmetic.
    ///
    /// Panics if the lengths differ.
    pub fn sq_dist(&self, other: &Self) -> T {
        assert_eq!(
            self.len(),
            other.len(),
            "sq_dist: length mismatch ({} vs {})",
            self.len(),
            other.len()
        );
        let mut acc = T::zero();
        for (a, b) in self.data.iter().zip(&other.data) {
            let d = *a - *b;
            acc = acc + d * d;
        }
        acc
    }

    /// Elementwise sum. Panics if the lengths differ.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(
            self.len(),
            other.len(),
            "add: length mismatch ({} vs {})",
            self.len(),
            other.len()
        );
        Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a + *b)
                .collect(),
        }
    }

    /// Elementwise difference `self - other`. Panics if the lengths differ.
    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(
            self.len(),
            other.len(),
            "sub: length mismatch ({} vs {})",
            self.len(),
            other.len()
        );
        Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a - *b)
                .collect(),
        }
    }

    /// Scalar multiple `alpha * self`.
    pub fn scale(&self, alpha: T) -> Self {
        Self {
            data: self.data.iter().map(|a| alpha * *a).collect(),
        }
    }

    /// In-place `self += alpha * other`. Panics if the lengths differ.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        assert_eq!(
            self.len(),
            other.len(),
            "axpy: length mismatch ({} vs {})",
            self.len(),
            other.len()
        );
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * *b;
        }
    }

    /// Resets every element to zero, keeping the allocation.
    pub fn fill_zero(&mut self) {
        for a in &mut self.data {
            *a = T::zero();
        }
    }
}

impl<T: Scalar> std::ops::Index<usize> for Vector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T: Scalar> std::ops::IndexMut<usize> for Vector<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}

/// Dense row-major matrix with `Scalar` elements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    /// `rows x cols` matrix of zeros.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// Builds a matrix by evaluating `f(row, col)` at every position.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Wraps a row-major buffer. Panics if `data.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "from_row_major: buffer holds {} elements, expected {}x{}",
            data.len(),
            rows,
            cols
        );
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row `i` as a slice. Panics if out of range.
    pub fn row(&self, i: usize) -> &[T] {
        assert!(i < self.rows, "row {} out of range ({} rows)", i, self.rows);
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// True when every element is finite (no NaN or infinity).
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix-vector product `self * x`, each row reduced left to right.
    ///
    /// Panics if `x.len() != cols`.
    pub fn matvec(&self, x: &Vector<T>) -> Vector<T> {
        assert_eq!(
            x.len(),
            self.cols,
            "matvec: vector length {} does not match {} columns",
            x.len(),
            self.cols
        );
        let mut out = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let mut acc = T::zero();
            for (a, b) in self.row(i).iter().zip(x.iter()) {
                acc = acc + *a * *b;
            }
            out.push(acc);
        }
        Vector::new(out)
    }

    /// Transposed product `selfᵀ * x`, accumulated in row-major order.
    ///
    /// Panics if `x.len() != rows`.
    pub fn matvec_t(&self, x: &Vector<T>) -> Vector<T> {
        assert_eq!(
            x.len(),
            self.rows,
            "matvec_t: vector length {} does not match {} rows",
            x.len(),
            self.rows
        );
        let mut out = Vector::zeros(self.cols);
        for i in 0..self.rows {
            let xi = x[i];
            for (o, a) in out.as_mut_slice().iter_mut().zip(self.row(i)) {
                *o = *o + xi * *a;
            }
        }
        out
    }

    /// Rank-one update `self += alpha * u * vᵀ`.
    ///
    /// Panics if `u.len() != rows` or `v.len() != cols`.
    pub fn add_outer(&mut self, alpha: T, u: &Vector<T>, v: &Vector<T>) {
        assert_eq!(
            u.len(),
            self.rows,
            "add_outer: u length {} does not match {} rows",
            u.len(),
            self.rows
        );
        assert_eq!(
            v.len(),
            self.cols,
            "add_outer: v length {} does not match {} columns",
            v.len(),
            self.cols
        );
        for i in 0..self.rows {
            let ui = u[i];
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, vj) in row.iter_mut().zip(v.iter()) {
                *r = *r + alpha * ui * *vj;
            }
        }
    }

    /// Resets every element to zero, keeping the allocation.
    pub fn fill_zero(&mut self) {
        for a in &mut self.data {
            *a = T::zero();
        }
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        assert!(
            i < self.rows && j < self.cols,
            "index ({}, {}) out of range for {}x{} matrix",
            i,
            j,
            self.rows,
            self.cols
        );
        &self.data[i * self.cols + j]
    }
}

impl<T: Scalar> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        assert!(
            i < self.rows && j < self.cols,
            "index ({}, {}) out of range for {}x{} matrix",
            i,
            j,
            self.rows,
            self.cols
        );
        &mut self.data[i * self.cols + j]
    }
}
