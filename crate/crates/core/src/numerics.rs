//! Dense vector and matrix primitives shared by every other module.
//!
//! Everything is `f64`. Matrices are row-major. The constructors reject
//! non-finite entries so downstream code can assume finiteness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard used when dividing by a norm.
pub const NORM_EPS: f64 = 1e-12;

/// A dense vector of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vecf(Vec<f64>);

impl Vecf {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &Vecf) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }
}

impl From<Vecf> for Vec<f64> {
    fn from(v: Vecf) -> Self {
        v.0
    }
}

/// A row-major dense matrix of finite `f64` values.
///
/// Zero rows are allowed so that an empty queue snapshot is representable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matf {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matf {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Stacks equally sized rows. `cols` is used when `rows` is empty.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], cols: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            check_dim(cols, r.len())?;
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, values)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Computes `self · x` for a vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// Computes `selfᵀ · y` for a vector `y` of length `rows`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            axpy(yi, self.row(i), &mut out);
        }
        out
    }

    /// Returns a new matrix containing the selected rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            values,
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimMismatch { expected, got });
    }
    Ok(())
}

/// Returns `v / max(‖v‖₂, eps)`.
pub fn l2_normalize(v: &Vecf, eps: f64) -> Result<Vecf> {
    if v.0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("l2_normalize input"));
    }
    let scale = v.norm().max(eps);
    Ok(Vecf(v.0.iter().map(|x| x / scale).collect()))
}

/// Slice version of [`l2_normalize`] used on hot paths. Returns the norm
/// that was divided out (before the eps guard).
pub fn l2_normalize_in_place(v: &mut [f64], eps: f64) -> f64 {
    let n = norm(v);
    let scale = n.max(eps);
    for x in v.iter_mut() {
        *x /= scale;
    }
    n
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &Vecf, v: &Vecf) -> Result<f64> {
    cosine_slices(u.as_slice(), v.as_slice())
}

fn cosine_slices(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dim(u.len(), v.len())?;
    let uu = dot(u, u);
    let vv = dot(v, v);
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::ZeroNorm("cosine"));
    }
    Ok(cosine_from_parts(dot(u, v), uu, vv))
}

// sqrt(uu * vv) keeps self-similarity exactly 1.
#[inline]
fn cosine_from_parts(uv: f64, uu: f64, vv: f64) -> f64 {
    (uv / (uu * vv).sqrt()).clamp(-1.0, 1.0)
}

/// All-pairs cosine similarity between the rows of `u` and the rows of `v`.
pub fn pairwise_cosine(u: &Matf, v: &Matf) -> Result<Matf> {
    check_dim(u.cols, v.cols)?;
    let sq_norms = |m: &Matf, what| -> Result<Vec<f64>> {
        (0..m.rows)
            .map(|i| match dot(m.row(i), m.row(i)) {
                0.0 => Err(Error::ZeroNorm(what)),
                n => Ok(n),
            })
            .collect()
    };
    let nu = sq_norms(u, "pairwise_cosine left row")?;
    let nv = sq_norms(v, "pairwise_cosine right row")?;
    Ok(Matf::from_fn(u.rows, v.rows, |i, j| {
        cosine_from_parts(dot(u.row(i), v.row(j)), nu[i], nv[j])
    }))
}

/// Entrywise `exp(z / tau)`.
pub fn exp_scaled(z: &Matf, tau: f64) -> Result<Matf> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidTemperature(tau));
    }
    Ok(z.map(|x| (x / tau).exp()))
}
