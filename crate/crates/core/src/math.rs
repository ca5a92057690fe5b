//! Dense row-major `f64` matrices and the numeric kernels built on them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// Floor applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Dense row-major matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
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

    /// Wraps a row-major buffer. Rejects a length that disagrees with the shape
    /// and any non-finite entry.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::contract(format!(
                "buffer of length {} cannot hold a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::contract(format!(
                "non-finite entry {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(CoreError::contract(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; a zero-column matrix has no meaningful rows
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks matrices vertically. All parts must share a column count.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::with_capacity(parts.iter().map(|m| m.data.len()).sum());
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(CoreError::shape("vstack", (rows, cols), m.shape()));
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(CoreError::shape(
                "add_row_vector",
                self.shape(),
                (1, bias.len()),
            ));
        }
        for row in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (x, b) in row.iter_mut().zip(bias) {
                *x += b;
            }
        }
        Ok(())
    }

    /// Column sums as a `1 x cols` matrix.
    pub fn column_sums(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for row in self.iter_rows() {
            for (o, v) in out.data.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// Standard matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(CoreError::shape("matmul", a.shape(), b.shape()));
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Matrix {
        rows: n,
        cols: m,
        data: out,
    })
}

/// `aᵀ * b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(CoreError::shape("matmul_tn", a.shape(), b.shape()));
    }
    let (k, n, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for p in 0..k {
        let arow = &a.data[p * n..(p + 1) * n];
        let brow = &b.data[p * m..(p + 1) * m];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Matrix {
        rows: n,
        cols: m,
        data: out,
    })
}

/// `a * bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(CoreError::shape("matmul_nt", a.shape(), b.shape()));
    }
    let (n, k, m) = (a.rows, a.cols, b.rows);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * m + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Ok(Matrix {
        rows: n,
        cols: m,
        data: out,
    })
}

/// Row-wise softmax with max-subtraction.
pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for row in out.data.chunks_exact_mut(z.cols.max(1)) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Mean over rows of `-ln p[label]`, with `p` floored at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != probs.rows {
        return Err(CoreError::shape(
            "cross_entropy",
            probs.shape(),
            (labels.len(), 1),
        ));
    }
    if probs.rows == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (row, &y) in probs.iter_rows().zip(labels) {
        if y >= probs.cols {
            return Err(CoreError::LabelOutOfRange {
                label: y,
                classes: probs.cols,
            });
        }
        total -= libm::log(row[y].max(PROB_FLOOR));
    }
    Ok(total / probs.rows as f64)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// FNV-1a over the bit patterns of a sequence of matrices (shapes included).
pub fn fingerprint<'a>(tensors: impl IntoIterator<Item = &'a Matrix>) -> u64 {
    let mut h = Fnv::new();
    for t in tensors {
        h.write_u64(t.rows as u64);
        h.write_u64(t.cols as u64);
        for v in &t.data {
            h.write_u64(v.to_bits());
        }
    }
    h.finish()
}

/// 64-bit FNV-1a hasher used for reproducibility fingerprints.
#[derive(Debug, Clone)]
pub struct Fnv(u64);

impl Fnv {
    pub fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv {
    fn default() -> Self {
        Fnv::new()
    }
}
