//! Dense feature maps, descriptors and small row-major matrices.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::{self, Real};

/// `h × w × k` activations stored channel-last, row-major:
/// element `(i, j, c)` lives at `(i * w + j) * k + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    h: usize,
    w: usize,
    k: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(h: usize, w: usize, k: usize, data: Vec<T>) -> Result<Self> {
        let expected = h
            .checked_mul(w)
            .and_then(|hw| hw.checked_mul(k))
            .ok_or_else(|| invalid("feature map dimensions overflow"))?;
        if data.len() != expected {
            return Err(invalid(format!(
                "feature map {h}x{w}x{k} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("feature map entry {pos} is not finite")));
        }
        Ok(Self { h, w, k, data })
    }

    pub fn from_fn(h: usize, w: usize, k: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(h * w * k);
        for i in 0..h {
            for j in 0..w {
                for c in 0..k {
                    data.push(f(i, j, c));
                }
            }
        }
        Self::new(h, w, k, data)
    }

    pub fn filled(h: usize, w: usize, k: usize, value: T) -> Result<Self> {
        Self::new(h, w, k, vec![value; h * w * k])
    }

    pub fn h(&self) -> usize {
        self.h
    }
    pub fn w(&self) -> usize {
        self.w
    }
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of spatial locations.
    pub fn locations(&self) -> usize {
        self.h * self.w
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> T {
        self.data[(i * self.w + j) * self.k + c]
    }

    /// The `k` channel values at flat location `loc = i * w + j`.
    pub fn location(&self, loc: usize) -> &[T] {
        &self.data[loc * self.k..(loc + 1) * self.k]
    }

    pub fn locations_iter(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.k.max(1)).take(self.locations())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(self.h, self.w, self.k, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn cast<U: Real>(&self) -> FeatureMap<U> {
        FeatureMap {
            h: self.h,
            w: self.w,
            k: self.k,
            data: self.data.iter().map(|v| U::of(v.to_f64_lossless())).collect(),
        }
    }
}

/// Fixed-length global descriptor compared by Euclidean distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Descriptor<T>(pub Vec<T>);

impl<T: Real> Descriptor<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![T::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn norm(&self) -> T {
        scalar::norm(&self.0)
    }

    pub fn distance(&self, other: &Self) -> T {
        scalar::euclidean(&self.0, &other.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: T) -> Self {
        Self(self.0.iter().map(|&v| v * s).collect())
    }

    pub fn cast<U: Real>(&self) -> Descriptor<U> {
        Descriptor(self.0.iter().map(|v| U::of(v.to_f64_lossless())).collect())
    }
}

/// Row-major matrix used as a linear map on row vectors: `y = x · M`,
/// so a `rows × cols` matrix maps length-`rows` inputs to length-`cols`
/// outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("matrix contains non-finite values"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    /// `y = x · M` for a row vector `x` of length `rows`.
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![T::zero(); self.cols];
        for (r, &xr) in x.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (yc, &m) in y.iter_mut().zip(row) {
                *yc += xr * m;
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.to_f64_lossless())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_channel_last() {
        let x = FeatureMap::<f64>::from_fn(2, 3, 2, |i, j, c| (100 * i + 10 * j + c) as f64).unwrap();
        assert_eq!(x.get(1, 2, 1), 121.0);
        assert_eq!(x.location(5), &[120.0, 121.0]);
        assert_eq!(x.locations_iter().count(), 6);
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(FeatureMap::<f32>::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(FeatureMap::<f32>::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(Matrix::<f64>::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn matrix_apply_row_vector() {
        let m = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.apply(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
        assert_eq!(m.transpose().apply(&[1.0, 0.0, 0.0]), vec![1.0, 4.0]);
        assert_eq!(Matrix::<f64>::identity(3).apply(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
    }
}
