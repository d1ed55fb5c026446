// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense f32 kernels.
//!
//! Everything here is single precision with a fixed accumulation order, so
//! two calls on the same inputs produce bit-identical outputs regardless of
//! how many threads the caller is running. Every op that produces new values
//! rejects NaN/Inf in its output.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(
                "Tensor2D::new",
                format!("{} values for a {rows}x{cols} tensor", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::dims(
                    "Tensor2D::from_rows",
                    format!("row {i} has {} entries, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies column `c` out as a vector.
    pub fn column(&self, c: usize) -> Vec<f32> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Copies the contiguous block of rows `start..start + len`.
    pub fn row_block(&self, start: usize, len: usize) -> Self {
        Self {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        }
    }

    /// Copies the column block `start..start + len` of every row.
    pub fn col_block(&self, start: usize, len: usize) -> Self {
        let mut data = Vec::with_capacity(self.rows * len);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..start + len]);
        }
        Self {
            rows: self.rows,
            cols: len,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }

    /// Elementwise sum.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::dims(
                "add",
                format!("{:?} + {:?}", self.shape(), other.shape()),
            ));
        }
        let data: Vec<f32> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        check_finite("add", &data)?;
        Ok(Self { data, ..*self })
    }

    /// Multiplies every entry by `s`.
    pub fn scale(&self, s: f32) -> Result<Self> {
        let data: Vec<f32> = self.data.iter().map(|v| v * s).collect();
        check_finite("scale", &data)?;
        Ok(Self { data, ..*self })
    }
}

#[inline]
pub(crate) fn all_finite(xs: &[f32]) -> bool {
    xs.iter().all(|v| v.is_finite())
}

#[inline]
pub(crate) fn check_finite(op: &'static str, xs: &[f32]) -> Result<()> {
    if all_finite(xs) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

/// `a × b`.
///
/// Each output entry accumulates `a[i][k] * b[k][j]` for `k = 0, 1, ...` in
/// order, starting from zero, so the result equals the textbook triple loop
/// bit for bit.
pub fn matmul(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.rows {
        return Err(Error::dims(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (n, m) = (a.rows, b.cols);
    let mut out = vec![0.0f32; n * m];
    for i in 0..n {
        let a_row = a.row(i);
        let out_row = &mut out[i * m..(i + 1) * m];
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = b.row(k);
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    check_finite("matmul", &out)?;
    Ok(Tensor2D {
        rows: n,
        cols: m,
        data: out,
    })
}

/// `a × bᵀ`, used for tied unembeddings where `b` is stored vocab-major.
pub fn matmul_bt(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.cols {
        return Err(Error::dims(
            "matmul_bt",
            format!("{:?} x {:?}ᵀ", a.shape(), b.shape()),
        ));
    }
    let (n, m) = (a.rows, b.rows);
    let mut out = vec![0.0f32; n * m];
    for i in 0..n {
        let a_row = a.row(i);
        for j in 0..m {
            out[i * m + j] = dot(a_row, b.row(j));
        }
    }
    check_finite("matmul_bt", &out)?;
    Ok(Tensor2D {
        rows: n,
        cols: m,
        data: out,
    })
}

/// Row vector times matrix: `x × b`.
pub fn vecmat(x: &[f32], b: &Tensor2D) -> Result<Vec<f32>> {
    if x.len() != b.rows {
        return Err(Error::dims(
            "vecmat",
            format!("[{}] x {:?}", x.len(), b.shape()),
        ));
    }
    let mut out = vec![0.0f32; b.cols];
    for (k, &xk) in x.iter().enumerate() {
        for (o, &bkj) in out.iter_mut().zip(b.row(k)) {
            *o += xk * bkj;
        }
    }
    check_finite("vecmat", &out)?;
    Ok(out)
}

/// Matrix times column vector: `b × x`.
pub fn matvec(b: &Tensor2D, x: &[f32]) -> Result<Vec<f32>> {
    if x.len() != b.cols {
        return Err(Error::dims(
            "matvec",
            format!("{:?} x [{}]", b.shape(), x.len()),
        ));
    }
    let out: Vec<f32> = (0..b.rows).map(|r| dot(b.row(r), x)).collect();
    check_finite("matvec", &out)?;
    Ok(out)
}

/// Sequential dot product (fixed left-to-right accumulation).
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `1 / sqrt(mean(x²) + eps)`, the factor RMS normalization multiplies by.
pub fn rms_scale(x: &[f32], eps: f32) -> f32 {
    let mut ss = 0.0f32;
    for v in x {
        ss += v * v;
    }
    1.0 / (ss / x.len() as f32 + eps).sqrt()
}

/// `y_i = x_i / sqrt(mean(x²) + eps) * gamma_i`.
pub fn rmsnorm(x: &[f32], gamma: &[f32], eps: f32) -> Result<Vec<f32>> {
    if x.len() != gamma.len() {
        return Err(Error::dims(
            "rmsnorm",
            format!("x has {} entries, gamma {}", x.len(), gamma.len()),
        ));
    }
    let mut ss = 0.0f32;
    for v in x {
        ss += v * v;
    }
    let denom = (ss / x.len() as f32 + eps).sqrt();
    let out: Vec<f32> = x.iter().zip(gamma).map(|(v, g)| v / denom * g).collect();
    check_finite("rmsnorm", &out)?;
    Ok(out)
}

#[inline]
pub fn mean(x: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for v in x {
        acc += v;
    }
    acc / x.len() as f32
}

/// `1 / sqrt(var(x) + eps)` for standard layer normalization.
pub fn layernorm_scale(x: &[f32], eps: f32) -> f32 {
    let mu = mean(x);
    let mut ss = 0.0f32;
    for v in x {
        let d = v - mu;
        ss += d * d;
    }
    1.0 / (ss / x.len() as f32 + eps).sqrt()
}

/// `y_i = (x_i - mean(x)) / sqrt(var(x) + eps) * gamma_i` (no bias term).
pub fn layernorm(x: &[f32], gamma: &[f32], eps: f32) -> Result<Vec<f32>> {
    if x.len() != gamma.len() {
        return Err(Error::dims(
            "layernorm",
            format!("x has {} entries, gamma {}", x.len(), gamma.len()),
        ));
    }
    let mu = mean(x);
    let s = layernorm_scale(x, eps);
    let out: Vec<f32> = x.iter().zip(gamma).map(|(v, g)| (v - mu) * s * g).collect();
    check_finite("layernorm", &out)?;
    Ok(out)
}

/// Numerically stable softmax over one row.
pub fn softmax_row(x: &[f32]) -> Result<Vec<f32>> {
    if x.is_empty() {
        return Err(Error::dims("softmax_row", "empty row"));
    }
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("softmax_row"));
    }
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut out: Vec<f32> = x.iter().map(|v| (v - max).exp()).collect();
    let mut sum = 0.0f32;
    for v in &out {
        sum += v;
    }
    for v in &mut out {
        *v /= sum;
    }
    check_finite("softmax_row", &out)?;
    Ok(out)
}

const SQRT_2_OVER_PI: f32 = 0.797_884_6;

/// GELU, tanh approximation.
#[inline]
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)).tanh())
}

/// `a += b`, elementwise.
pub fn add_assign(a: &mut [f32], b: &[f32]) {
    debug_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}
