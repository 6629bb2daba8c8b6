use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{domain, shape, Result, SctError};

/// Dense vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Vector<T> {
    values: Vec<T>,
}

impl<T: Scalar> Vector<T> {
    /// Builds a vector, rejecting empty or non-finite input.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(domain("vector must have positive dimension"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SctError::Numeric {
                stage: format!("vector entry {i}"),
            });
        }
        Ok(Self { values })
    }

    pub(crate) fn from_vec_unchecked(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![T::zero(); dim],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.values.iter()
    }

    pub fn dot(&self, other: &Self) -> T {
        dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> T {
        norm(&self.values)
    }

    /// Returns the unit vector in the same direction.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n <= T::zero() {
            return Err(domain("cannot normalize a zero-norm vector"));
        }
        Ok(Self::from_vec_unchecked(
            self.values.iter().map(|&v| v / n).collect(),
        ))
    }

    pub fn scaled(&self, a: T) -> Self {
        Self::from_vec_unchecked(self.values.iter().map(|&v| v * a).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Casts every entry to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Vector<U> {
        Vector::from_vec_unchecked(self.values.iter().map(|v| U::lit(v.as_f64())).collect())
    }
}

impl<T> std::ops::Index<usize> for Vector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.values[i]
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(domain("matrix dimensions must be positive"));
        }
        if rows * cols != values.len() {
            return Err(shape(
                "Matrix::new",
                format!("{rows}x{cols} = {} values", rows * cols),
                values.len(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SctError::Numeric {
                stage: "matrix entries".into(),
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n_cols) {
            return Err(shape("Matrix::from_rows", n_cols, bad.len()));
        }
        Self::new(n_rows, n_cols, rows.into_iter().flatten().collect())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    /// `selfᵀ · x`, where `x` has `rows` entries; result has `cols` entries.
    pub fn tmul(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.rows {
            return Err(shape("Matrix::tmul", self.rows, x.len()));
        }
        let mut out = vec![T::zero(); self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w * xr;
            }
        }
        Ok(out)
    }

    /// `self · y`, where `y` has `cols` entries; result has `rows` entries.
    pub fn mul(&self, y: &[T]) -> Result<Vec<T>> {
        if y.len() != self.cols {
            return Err(shape("Matrix::mul", self.cols, y.len()));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), y)).collect())
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.values.chunks(self.cols).map(<[T]>::to_vec).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

impl<T: Scalar> Serialize for Matrix<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Matrix<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<T>>::deserialize(d)?;
        Matrix::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Unit vector in the direction of `a`, together with its original norm.
pub fn normalize<T: Scalar>(a: &[T]) -> Result<(Vec<T>, T)> {
    let n = norm(a);
    if !(n > T::zero()) || !n.is_finite() {
        return Err(domain("cannot normalize a zero-norm or non-finite vector"));
    }
    Ok((a.iter().map(|&v| v / n).collect(), n))
}

/// Backpropagates `grad_unit` (gradient w.r.t. `a/‖a‖`) to a gradient w.r.t. `a`.
pub fn normalize_backward<T: Scalar>(unit: &[T], norm: T, grad_unit: &[T]) -> Vec<T> {
    let proj = dot(unit, grad_unit);
    unit.iter()
        .zip(grad_unit)
        .map(|(&u, &g)| (g - proj * u) / norm)
        .collect()
}
