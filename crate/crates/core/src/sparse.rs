//! Sparse storage for the frozen weight matrices.
//!
//! Entries live in compressed-row form for `W_rec · h`, with a compressed
//! column copy for the one-hot gather `W_in · u = W_in[:, token]`.

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{EsnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f32>,
    col_ptr: Vec<usize>,
    col_rows: Vec<u32>,
    col_values: Vec<f32>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets in any order.
    pub fn from_triplets(rows: usize, cols: usize, mut entries: Vec<(u32, u32, f32)>) -> Result<Self> {
        check_shape(rows, cols)?;
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut prev: Option<(u32, u32)> = None;
        for &(r, c, v) in &entries {
            if r as usize >= rows || c as usize >= cols {
                return Err(EsnError::invalid(format!(
                    "entry ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
            if prev == Some((r, c)) {
                return Err(EsnError::invalid(format!("duplicate entry ({r}, {c})")));
            }
            prev = Some((r, c));
            row_ptr[r as usize + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self::from_csr(rows, cols, row_ptr, col_idx, values)
    }

    /// Builds from compressed-row arrays, validating every invariant.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        values: Vec<f32>,
    ) -> Result<Self> {
        check_shape(rows, cols)?;
        if row_ptr.len() != rows + 1 || row_ptr[0] != 0 {
            return Err(EsnError::invalid("row pointer array has the wrong shape"));
        }
        if col_idx.len() != values.len() || row_ptr[rows] != values.len() {
            return Err(EsnError::invalid("row pointers disagree with the entry count"));
        }
        for i in 0..rows {
            let (lo, hi) = (row_ptr[i], row_ptr[i + 1]);
            if lo > hi || hi > values.len() {
                return Err(EsnError::invalid("row pointers are not monotone"));
            }
            let row = &col_idx[lo..hi];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(EsnError::invalid(format!("row {i} has unsorted or duplicate columns")));
            }
            if row.last().is_some_and(|&c| c as usize >= cols) {
                return Err(EsnError::invalid(format!("row {i} has a column out of range")));
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(EsnError::invalid(format!("non-finite stored value {v}")));
        }

        // Column copy by counting sort; rows stay ascending within a column.
        let mut col_ptr = vec![0usize; cols + 1];
        for &c in &col_idx {
            col_ptr[c as usize + 1] += 1;
        }
        for j in 0..cols {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut next = col_ptr.clone();
        let mut col_rows = vec![0u32; values.len()];
        let mut col_values = vec![0f32; values.len()];
        for i in 0..rows {
            for k in row_ptr[i]..row_ptr[i + 1] {
                let slot = &mut next[col_idx[k] as usize];
                col_rows[*slot] = i as u32;
                col_values[*slot] = values[k];
                *slot += 1;
            }
        }

        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
            col_ptr,
            col_rows,
            col_values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f32]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// Row indices and values of column `j`, rows ascending.
    #[inline]
    pub fn column(&self, j: usize) -> (&[u32], &[f32]) {
        let (lo, hi) = (self.col_ptr[j], self.col_ptr[j + 1]);
        (&self.col_rows[lo..hi], &self.col_values[lo..hi])
    }

    pub fn csr_parts(&self) -> (&[usize], &[u32], &[f32]) {
        (&self.row_ptr, &self.col_idx, &self.values)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Multiplies every stored value by `factor` (in 64-bit, rounded once).
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |v: &f32| (*v as f64 * factor) as f32;
        Self {
            values: self.values.iter().map(scale).collect(),
            col_values: self.col_values.iter().map(scale).collect(),
            ..self.clone()
        }
    }

    /// `y = M x` in 64-bit.
    pub fn mul_vec_f64(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&c, &v)| v as f64 * x[c as usize]).sum();
        }
    }

    /// Dense row-major copy in 64-bit.
    pub fn to_dense_f64(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                dense[i * self.cols + c as usize] = v as f64;
            }
        }
        dense
    }

    pub(crate) fn update_digest(&self, hasher: &mut Sha256) {
        hasher.update((self.rows as u64).to_le_bytes());
        hasher.update((self.cols as u64).to_le_bytes());
        for &p in &self.row_ptr {
            hasher.update((p as u64).to_le_bytes());
        }
        for &c in &self.col_idx {
            hasher.update(c.to_le_bytes());
        }
        for &v in &self.values {
            hasher.update(v.to_le_bytes());
        }
    }
}

fn check_shape(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(EsnError::invalid(format!(
            "matrix dimensions must be positive, got {rows}x{cols}"
        )));
    }
    if rows > u32::MAX as usize || cols > u32::MAX as usize {
        return Err(EsnError::invalid("matrix dimension exceeds u32 index range"));
    }
    Ok(())
}

/// Samples `M ⊙ V` with `M_ij ~ Bernoulli(connectivity)` and
/// `V_ij ~ Normal(0, std²)`, storing only the kept cells.
///
/// The mask is drawn first over the whole matrix in row-major order, then one
/// Gaussian value per kept cell in the same order. Kept cells are found by
/// sampling geometric gaps between successes, which has the same law as one
/// Bernoulli draw per cell but costs O(nnz) instead of O(rows·cols).
pub fn sample_masked_gaussian<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    connectivity: f64,
    std: f64,
    rng: &mut R,
) -> Result<SparseMatrix> {
    check_shape(rows, cols)?;
    if !(connectivity > 0.0 && connectivity <= 1.0) {
        return Err(EsnError::invalid(format!(
            "connectivity must lie in (0, 1], got {connectivity}"
        )));
    }
    if !std.is_finite() || std < 0.0 {
        return Err(EsnError::invalid(format!(
            "standard deviation must be finite and non-negative, got {std}"
        )));
    }

    let total = rows as u64 * cols as u64;
    let mut cells: Vec<u64> = Vec::with_capacity((total as f64 * connectivity * 1.05) as usize + 16);
    if connectivity >= 1.0 {
        cells.extend(0..total);
    } else {
        let log_miss = (-connectivity).ln_1p();
        let mut pos: u64 = 0;
        loop {
            // 1 - U lies in (0, 1], so the log is finite.
            let u: f64 = 1.0 - rng.random::<f64>();
            let gap = (u.ln() / log_miss).floor();
            if gap >= (total - pos) as f64 {
                break;
            }
            pos += gap as u64;
            cells.push(pos);
            pos += 1;
            if pos >= total {
                break;
            }
        }
    }

    let mut row_ptr = vec![0usize; rows + 1];
    let mut col_idx = Vec::with_capacity(cells.len());
    let mut values = Vec::with_capacity(cells.len());
    for &cell in &cells {
        let r = (cell / cols as u64) as usize;
        let c = (cell % cols as u64) as u32;
        row_ptr[r + 1] += 1;
        col_idx.push(c);
        let z: f64 = rng.sample(StandardNormal);
        values.push((z * std) as f32);
    }
    for i in 0..rows {
        row_ptr[i + 1] += row_ptr[i];
    }
    SparseMatrix::from_csr(rows, cols, row_ptr, col_idx, values)
}
