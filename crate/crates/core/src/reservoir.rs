//! The frozen reservoir: initialization, leaky-tanh dynamics and parameter
//! accounting.
//!
//! State update, with `a` the per-unit leaking rates:
//!
//! ```text
//! h_{t+1} = (1 - a) ⊙ h_t + a ⊙ tanh(W_rec h_t + W_in u_{t+1})
//! ```
//!
//! `u` is one-hot, so `W_in u` is a column gather and no one-hot vector is
//! ever built. States are `f32`; the spectral normalization runs in `f64`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{EsnError, Result};
use crate::exec::Execution;
use crate::rng::{stream_rng, Stream};
use crate::sparse::{sample_masked_gaussian, SparseMatrix};
use crate::spectral::{estimate_spectral_radius, SpectralEstimate};
use crate::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Tanh => tanh_f32(x),
        }
    }
}

/// Bytes of `h` one column tile of the recurrent product reads.
const TILE_BYTES: usize = 1 << 19;

/// `acc[l] += Σ_k vals[k] · h[cols[k]·lanes + l]`, summed in `k` order for
/// every lane. Lanes are handled in register-sized chunks so each chunk of
/// `acc` is loaded and stored once per call.
#[inline]
fn accumulate_row(acc: &mut [f32], cols: &[u32], vals: &[f32], h: &[f32], lanes: usize) {
    #[inline(always)]
    fn chunk<const L: usize>(acc: &mut [f32], offset: usize, cols: &[u32], vals: &[f32], h: &[f32], lanes: usize) {
        let acc: &mut [f32; L] = acc.try_into().expect("chunk of L lanes");
        let mut reg = *acc;
        for (&j, &w) in cols.iter().zip(vals) {
            let at = j as usize * lanes + offset;
            let src: &[f32; L] = h[at..at + L].try_into().expect("chunk of L lanes");
            for l in 0..L {
                reg[l] += w * src[l];
            }
        }
        *acc = reg;
    }
    let active = acc.len();
    let mut offset = 0;
    while active - offset >= 32 {
        chunk::<32>(&mut acc[offset..offset + 32], offset, cols, vals, h, lanes);
        offset += 32;
    }
    while active - offset >= 8 {
        chunk::<8>(&mut acc[offset..offset + 8], offset, cols, vals, h, lanes);
        offset += 8;
    }
    while offset < active {
        chunk::<1>(&mut acc[offset..offset + 1], offset, cols, vals, h, lanes);
        offset += 1;
    }
}

/// Branch-free rational approximation of `tanh`, accurate to a few ulp.
/// Built from `+`, `*` and `/` only, so it vectorizes and gives the same
/// bits on every IEEE-754 platform, unlike the C library `tanhf`.
#[inline]
pub fn tanh_f32(x: f32) -> f32 {
    const CLAMP: f32 = 7.905_311;
    const A: [f32; 7] = [
        4.893_524_6e-3,
        6.372_619_3e-4,
        1.485_722_4e-5,
        5.122_297e-8,
        -8.604_671_5e-11,
        2.000_187_9e-13,
        -2.760_768_5e-16,
    ];
    const B: [f32; 4] = [4.893_525_2e-3, 2.268_434_6e-3, 1.185_347_1e-4, 1.198_258_4e-6];
    let c = x.clamp(-CLAMP, CLAMP);
    let x2 = c * c;
    let mut p = A[6];
    for &a in A[..6].iter().rev() {
        p = p * x2 + a;
    }
    p *= c;
    let q = ((B[3] * x2 + B[2]) * x2 + B[1]) * x2 + B[0];
    let y = p / q;
    if x.abs() < 4e-4 {
        x
    } else {
        y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirHyperparams {
    pub state_size: usize,
    /// Includes the BOS and EOS symbols.
    pub vocab_size: usize,
    /// Target spectral radius of `W_rec`.
    pub spectral_radius: f64,
    /// Standard deviation of the input weights.
    pub input_scale: f64,
    /// Expected nonzeros per row; connectivity is `rec_degree / state_size`.
    pub rec_degree: usize,
    pub leak_min: f64,
    pub leak_max: f64,
    pub activation: Activation,
    pub output_rank: usize,
    pub seed: u64,
}

impl ReservoirHyperparams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(EsnError::InvalidArgument(msg));
        if self.state_size == 0 {
            return fail("state_size must be positive".into());
        }
        if self.vocab_size < 2 {
            return fail(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        if self.state_size > u32::MAX as usize || self.vocab_size > u32::MAX as usize {
            return fail("state_size and vocab_size must fit in 32 bits".into());
        }
        if self.rec_degree == 0 || self.rec_degree > self.state_size {
            return fail(format!(
                "rec_degree must satisfy 0 < rec_degree <= state_size ({}), got {}",
                self.state_size, self.rec_degree
            ));
        }
        if !(self.spectral_radius.is_finite() && self.spectral_radius > 0.0) {
            return fail(format!(
                "spectral_radius must be positive and finite, got {}",
                self.spectral_radius
            ));
        }
        if !(self.input_scale.is_finite() && self.input_scale >= 0.0) {
            return fail(format!(
                "input_scale must be finite and non-negative, got {}",
                self.input_scale
            ));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.leak_min) || !unit.contains(&self.leak_max) {
            return fail(format!(
                "leaking rates must lie in [0, 1], got [{}, {}]",
                self.leak_min, self.leak_max
            ));
        }
        if self.leak_min > self.leak_max {
            return fail(format!(
                "leak_min ({}) exceeds leak_max ({})",
                self.leak_min, self.leak_max
            ));
        }
        let cap = self.state_size.min(self.vocab_size);
        if self.output_rank == 0 || self.output_rank >= cap {
            return fail(format!(
                "output_rank must satisfy 0 < output_rank < min(state_size, vocab_size) = {cap}, got {}",
                self.output_rank
            ));
        }
        Ok(())
    }

    /// `c = rec_degree / state_size`.
    pub fn connectivity(&self) -> f64 {
        self.rec_degree as f64 / self.state_size as f64
    }
}

/// Expected parameter counts. Frozen matrices count their expected
/// nonzeros, not the realized ones of a particular draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub frozen: u64,
    pub trainable: u64,
    pub total: u64,
}

pub fn count_params(hp: &ReservoirHyperparams) -> Result<ParamCounts> {
    hp.validate()?;
    let width = (hp.state_size + hp.vocab_size) as u64;
    let (n, v) = (hp.state_size as u64, hp.vocab_size as u64);
    let (d, r) = (hp.rec_degree as u64, hp.output_rank as u64);
    let frozen = width * d + n;
    let trainable = width * r + v;
    let total = width * (d + r + 1);
    debug_assert_eq!(frozen + trainable, total);
    Ok(ParamCounts {
        frozen,
        trainable,
        total,
    })
}

/// `W_in = M_in ⊙ V_in`, `N_state × N_vocab`, values `Normal(0, s_in²)`.
pub fn init_input_matrix<R: Rng + ?Sized>(hp: &ReservoirHyperparams, rng: &mut R) -> Result<SparseMatrix> {
    hp.validate()?;
    sample_masked_gaussian(hp.state_size, hp.vocab_size, hp.connectivity(), hp.input_scale, rng)
}

/// `W_rec = ρ / ρ(M ⊙ V) · (M ⊙ V)` with standard normal values.
///
/// Returns the rescaled matrix and the radius estimate of the raw sample. The
/// power-iteration probe is drawn from `rng` after the matrix.
pub fn init_recurrent_matrix<R: Rng + ?Sized>(
    hp: &ReservoirHyperparams,
    rng: &mut R,
) -> Result<(SparseMatrix, SpectralEstimate)> {
    hp.validate()?;
    let raw = sample_masked_gaussian(hp.state_size, hp.state_size, hp.connectivity(), 1.0, rng)?;
    let est = estimate_spectral_radius(&raw, rng)?;
    if !(est.radius > 0.0) {
        return Err(EsnError::Initialization(format!(
            "sampled recurrent matrix ({} nonzeros) has zero spectral radius; \
             choose another seed or a higher connectivity",
            raw.nnz()
        )));
    }
    Ok((raw.scaled(hp.spectral_radius / est.radius), est))
}

/// `a_i ~ Uniform(leak_min, leak_max)`, i.i.d.
pub fn init_leaking_rates<R: Rng + ?Sized>(hp: &ReservoirHyperparams, rng: &mut R) -> Result<Vec<f32>> {
    hp.validate()?;
    let (lo, hi) = (hp.leak_min as f32, hp.leak_max as f32);
    Ok((0..hp.state_size)
        .map(|_| {
            let a: f64 = rng.random_range(hp.leak_min..=hp.leak_max);
            (a as f32).clamp(lo, hi)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState {
    pub h: Vec<f32>,
    pub t: usize,
}

impl ReservoirState {
    pub fn zeros(state_size: usize) -> Self {
        Self {
            h: vec![0.0; state_size],
            t: 0,
        }
    }
}

/// States `h_1 … h_{T-1}` of one sentence, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    state_size: usize,
    data: Vec<f32>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.data.len() / self.state_size
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn state_size(&self) -> usize {
        self.state_size
    }

    pub fn state(&self, t: usize) -> &[f32] {
        &self.data[t * self.state_size..(t + 1) * self.state_size]
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    pub fn into_states(self) -> Vec<ReservoirState> {
        self.data
            .chunks(self.state_size)
            .enumerate()
            .map(|(t, h)| ReservoirState {
                h: h.to_vec(),
                t: t + 1,
            })
            .collect()
    }
}

/// Frozen parameters. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    hyperparams: ReservoirHyperparams,
    w_in: SparseMatrix,
    w_rec: SparseMatrix,
    leak: Vec<f32>,
    measured_spectral_radius: f64,
    dense_rec: Option<DenseRec>,
}

/// Row-major copy of a well-filled `W_rec`, multiplied with a blocked GEMM.
#[derive(Clone)]
struct DenseRec(Vec<f32>);

impl std::fmt::Debug for DenseRec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "DenseRec({} values)", self.0.len())
    }
}

/// A function of `w_rec`, so it never decides equality.
impl PartialEq for DenseRec {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

/// `W_rec` is multiplied densely once at least this fraction of it is stored.
const DENSE_MIN_FILL: f64 = 0.25;

impl Reservoir {
    /// Draws every frozen parameter from `hyperparams.seed`.
    pub fn new(hyperparams: ReservoirHyperparams) -> Result<Self> {
        hyperparams.validate()?;
        let seed = hyperparams.seed;
        let w_in = init_input_matrix(&hyperparams, &mut stream_rng(seed, Stream::InputMatrix))?;
        let (w_rec, est) = init_recurrent_matrix(&hyperparams, &mut stream_rng(seed, Stream::RecurrentMatrix))?;
        let leak = init_leaking_rates(&hyperparams, &mut stream_rng(seed, Stream::LeakingRates))?;
        Self::from_parts(hyperparams, w_in, w_rec, leak, est.radius)
    }

    /// Assembles a reservoir from stored tensors.
    pub fn from_parts(
        hyperparams: ReservoirHyperparams,
        w_in: SparseMatrix,
        w_rec: SparseMatrix,
        leak: Vec<f32>,
        measured_spectral_radius: f64,
    ) -> Result<Self> {
        hyperparams.validate()?;
        let (n, v) = (hyperparams.state_size, hyperparams.vocab_size);
        if (w_in.rows(), w_in.cols()) != (n, v) {
            return Err(EsnError::invalid(format!(
                "W_in is {}x{}, expected {n}x{v}",
                w_in.rows(),
                w_in.cols()
            )));
        }
        if (w_rec.rows(), w_rec.cols()) != (n, n) {
            return Err(EsnError::invalid(format!(
                "W_rec is {}x{}, expected {n}x{n}",
                w_rec.rows(),
                w_rec.cols()
            )));
        }
        if leak.len() != n {
            return Err(EsnError::invalid(format!(
                "leak has length {}, expected {n}",
                leak.len()
            )));
        }
        let (lo, hi) = (hyperparams.leak_min as f32, hyperparams.leak_max as f32);
        if let Some(a) = leak.iter().find(|a| !(lo..=hi).contains(*a)) {
            return Err(EsnError::invalid(format!("leaking rate {a} outside [{lo}, {hi}]")));
        }
        let dense_rec = (w_rec.nnz() as f64 >= DENSE_MIN_FILL * (n * n) as f64)
            .then(|| DenseRec(w_rec.to_dense_f64().into_iter().map(|x| x as f32).collect()));
        Ok(Self {
            hyperparams,
            w_in,
            w_rec,
            leak,
            measured_spectral_radius,
            dense_rec,
        })
    }

    pub fn hyperparams(&self) -> &ReservoirHyperparams {
        &self.hyperparams
    }

    pub fn state_size(&self) -> usize {
        self.hyperparams.state_size
    }

    pub fn vocab_size(&self) -> usize {
        self.hyperparams.vocab_size
    }

    pub fn w_in(&self) -> &SparseMatrix {
        &self.w_in
    }

    pub fn w_rec(&self) -> &SparseMatrix {
        &self.w_rec
    }

    pub fn leak(&self) -> &[f32] {
        &self.leak
    }

    /// Raw-sample radius estimate used to normalize `W_rec`.
    pub fn measured_spectral_radius(&self) -> f64 {
        self.measured_spectral_radius
    }

    /// Realized frozen parameter count of this draw (nonzeros plus leak).
    pub fn realized_frozen_params(&self) -> u64 {
        (self.w_in.nnz() + self.w_rec.nnz() + self.leak.len()) as u64
    }

    /// SHA-256 over every frozen tensor.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        self.w_in.update_digest(&mut hasher);
        self.w_rec.update_digest(&mut hasher);
        for a in &self.leak {
            hasher.update(a.to_le_bytes());
        }
        hasher.update(self.measured_spectral_radius.to_le_bytes());
        hex::encode(hasher.finalize())
    }

    fn check_token(&self, token: TokenId) -> Result<()> {
        if token as usize >= self.vocab_size() {
            return Err(EsnError::invalid(format!(
                "token {token} out of range for vocabulary size {}",
                self.vocab_size()
            )));
        }
        Ok(())
    }

    /// One update from `state`; the input state is left untouched.
    pub fn step(&self, state: &ReservoirState, token: TokenId) -> Result<ReservoirState> {
        self.check_token(token)?;
        if state.h.len() != self.state_size() {
            return Err(EsnError::invalid(format!(
                "state has length {}, expected {}",
                state.h.len(),
                self.state_size()
            )));
        }
        let mut h = state.h.clone();
        let mut pre = vec![0.0; h.len()];
        self.advance(&mut h, &mut pre, 1, &[token], Execution::Sequential);
        Ok(ReservoirState { h, t: state.t + 1 })
    }

    /// Runs a sentence from `h_0 = 0`, feeding `w_1 … w_{T-1}`. The final
    /// token is only ever a prediction target. Returns `T - 1` states.
    pub fn run_sequence(&self, tokens: &[TokenId]) -> Result<Trajectory> {
        let mut out = self.run_batch(&[tokens], Execution::Sequential)?;
        Ok(out.pop().expect("one trajectory per sequence"))
    }

    /// Runs several sentences in lockstep, one lane per sentence. Each lane
    /// computes exactly what [`Reservoir::run_sequence`] would.
    pub fn run_batch(&self, seqs: &[&[TokenId]], exec: Execution) -> Result<Vec<Trajectory>> {
        for seq in seqs {
            if seq.is_empty() {
                return Err(EsnError::invalid("cannot run an empty token sequence"));
            }
            for &tok in seq.iter() {
                self.check_token(tok)?;
            }
        }
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let n = self.state_size();
        let lanes = seqs.len();
        let mut out: Vec<Trajectory> = seqs
            .iter()
            .map(|s| Trajectory {
                state_size: n,
                data: Vec::with_capacity((s.len() - 1) * n),
            })
            .collect();
        // Lanes sorted longest first, so the still-running lanes are always a
        // prefix and finished ones cost nothing.
        let mut order: Vec<usize> = (0..lanes).collect();
        order.sort_by_key(|&b| std::cmp::Reverse(seqs[b].len()));
        let steps = seqs[order[0]].len() - 1;
        // Padded so the recurrent kernel can work in whole chunks of 8.
        let stride = if lanes >= 8 { lanes.div_ceil(8) * 8 } else { lanes };

        let mut h = vec![0.0f32; n * stride];
        let mut pre = vec![0.0f32; n * stride];
        let mut inputs = Vec::with_capacity(lanes);
        for t in 0..steps {
            inputs.clear();
            inputs.extend(
                order
                    .iter()
                    .map(|&b| seqs[b])
                    .take_while(|s| t + 1 < s.len())
                    .map(|s| s[t]),
            );
            self.advance(&mut h, &mut pre, stride, &inputs, exec);
            for (k, &b) in order.iter().take(inputs.len()).enumerate() {
                out[b].data.extend((0..n).map(|i| h[i * stride + k]));
            }
        }
        Ok(out)
    }

    /// Advances lanes `0..inputs.len()`; `h` and `pre` are
    /// `state_size × lanes`, unit-major. The sparse recurrent product also
    /// covers finished lanes up to the next multiple of 8; those results are
    /// never read.
    fn advance(&self, h: &mut [f32], pre: &mut [f32], lanes: usize, inputs: &[TokenId], exec: Execution) {
        let active = inputs.len();
        let n = self.state_size();
        if let Some(DenseRec(w)) = &self.dense_rec {
            let h: &[f32] = h;
            exec.for_each_row_block(pre, lanes, |first, block| {
                let rows = block.len() / lanes;
                gemm(
                    rows,
                    n,
                    active,
                    &w[first * n..(first + rows) * n],
                    h,
                    lanes,
                    block,
                    lanes,
                );
            });
        } else {
            self.sparse_product(h, pre, lanes, active, exec);
        }
        for (k, &tok) in inputs.iter().enumerate() {
            let (rows, vals) = self.w_in.column(tok as usize);
            for (&r, &v) in rows.iter().zip(vals) {
                pre[r as usize * lanes + k] += v;
            }
        }
        let f = self.hyperparams.activation;
        let leak = &self.leak;
        let pre: &[f32] = pre;
        exec.for_each_row(h, lanes, |i, row| {
            let a = leak[i];
            for (x, &p) in row[..active].iter_mut().zip(&pre[i * lanes..i * lanes + active]) {
                *x = (1.0 - a) * *x + a * f.apply(p);
            }
        });
    }

    fn sparse_product(&self, h: &[f32], pre: &mut [f32], lanes: usize, active: usize, exec: Execution) {
        let width = (active.div_ceil(8) * 8).min(lanes);
        let n = self.state_size();
        let (row_ptr, col_idx, values) = self.w_rec.csr_parts();
        // Columns per tile, so that the slice of `h` a tile reads stays in
        // cache while every row of the group consumes it. Each row still
        // sums its entries in column order.
        let tile = (TILE_BYTES / (4 * width)).max(8);
        exec.for_each_row_block(pre, lanes, |first, block| {
            let rows = block.len() / lanes;
            let mut cursor: Vec<usize> = row_ptr[first..first + rows].to_vec();
            for r in 0..rows {
                block[r * lanes..r * lanes + width].fill(0.0);
            }
            let mut j_end = 0;
            while j_end < n {
                j_end = (j_end + tile).min(n);
                for (r, pos) in cursor.iter_mut().enumerate() {
                    let end = row_ptr[first + r + 1];
                    let mut stop = *pos;
                    while stop < end && (col_idx[stop] as usize) < j_end {
                        stop += 1;
                    }
                    let (cols, vals) = (&col_idx[*pos..stop], &values[*pos..stop]);
                    *pos = stop;
                    if !cols.is_empty() {
                        accumulate_row(&mut block[r * lanes..r * lanes + width], cols, vals, h, lanes);
                    }
                }
            }
        });
    }
}

/// `c[i·ldc + l] = Σ_j a[i·k + j] · b[j·ldb + l]` for `i < m`, `l < n`.
///
/// Each output element is computed the same way whatever `m` and `n` are, so
/// a lane gets identical bits in any batch.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], ldb: usize, c: &mut [f32], ldc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k > 0 && a.len() >= m * k && n <= ldb && n <= ldc);
    assert!(b.len() >= (k - 1) * ldb + n && c.len() >= (m - 1) * ldc + n);
    // SAFETY: the asserts keep every element addressed through the given
    // dimensions and strides inside `a`, `b` and `c`, and `c` is exclusively
    // borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            ldb as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::dense_spectral_radius;

    pub(crate) fn hp(state_size: usize, vocab_size: usize, rec_degree: usize) -> ReservoirHyperparams {
        ReservoirHyperparams {
            state_size,
            vocab_size,
            spectral_radius: 0.99,
            input_scale: 1.0,
            rec_degree,
            leak_min: 0.0,
            leak_max: 1.0,
            activation: Activation::Tanh,
            output_rank: 1,
            seed: 7,
        }
    }

    #[test]
    fn hyperparam_invariants() {
        assert!(hp(8, 8, 2).validate().is_ok());
        assert!(hp(8, 8, 0).validate().is_err());
        assert!(hp(8, 8, 9).validate().is_err());
        let mut h = hp(8, 8, 2);
        h.spectral_radius = 0.0;
        assert!(h.validate().is_err());
        let mut h = hp(8, 8, 2);
        h.leak_min = 0.6;
        h.leak_max = 0.5;
        assert!(h.validate().is_err());
        let mut h = hp(8, 8, 2);
        h.output_rank = 8;
        assert!(h.validate().is_err());
        let mut h = hp(8, 8, 2);
        h.leak_max = 1.5;
        assert!(h.validate().is_err());
    }

    #[test]
    fn param_counts_match_published_rows() {
        let mut h = hp(1024, 50257, 32);
        h.output_rank = 512;
        let c = count_params(&h).unwrap();
        assert_eq!(c.trainable, 26_306_129);
        assert_eq!(c.total, 27_948_145);
        h.state_size = 65536;
        let c = count_params(&h).unwrap();
        assert_eq!(c.trainable, 59_336_273);
        assert_eq!(c.total, 63_107_185);
        let mut h = hp(2, 3, 1);
        h.output_rank = 1;
        let c = count_params(&h).unwrap();
        assert_eq!((c.frozen, c.trainable, c.total), (7, 8, 15));
    }

    #[test]
    fn input_matrix_nnz_tracks_vocab_times_degree() {
        let mut h = hp(4096, 50257, 32);
        h.output_rank = 512;
        let expected = 50257.0 * 32.0;
        let mut within = 0;
        for seed in 0..4 {
            let m = init_input_matrix(&h, &mut stream_rng(seed, Stream::InputMatrix)).unwrap();
            if (m.nnz() as f64 - expected).abs() / expected < 0.01 {
                within += 1;
            }
        }
        assert!(within >= 3);
    }

    #[test]
    fn zero_input_scale_gives_zero_values() {
        let mut h = hp(16, 10, 4);
        h.input_scale = 0.0;
        let m = init_input_matrix(&h, &mut stream_rng(1, Stream::InputMatrix)).unwrap();
        assert!(m.nnz() > 0);
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recurrent_matrix_hits_target_radius() {
        let h = hp(256, 10, 32);
        let (w, est) = init_recurrent_matrix(&h, &mut stream_rng(3, Stream::RecurrentMatrix)).unwrap();
        let exact = dense_spectral_radius(&w).unwrap();
        assert!((0.97..=1.01).contains(&exact), "{exact} ({est:?})");
        let again = estimate_spectral_radius(&w, &mut stream_rng(4, Stream::SpectralProbe)).unwrap();
        assert!(
            (again.radius - 0.99).abs() <= 2.0 * crate::spectral::DEFAULT_TOL,
            "{again:?}"
        );
    }

    #[test]
    fn full_connectivity_raw_radius_follows_circular_law() {
        let h = hp(256, 10, 256);
        let (_, est) = init_recurrent_matrix(&h, &mut stream_rng(5, Stream::RecurrentMatrix)).unwrap();
        assert!((est.radius - 16.0).abs() / 16.0 < 0.15, "{est:?}");
    }

    #[test]
    fn degenerate_recurrent_sample_is_an_error() {
        // 2x2 at c = 1/2: some seeds draw an empty or nilpotent mask.
        let mut found = false;
        for seed in 0..64 {
            let mut h = hp(2, 3, 1);
            h.seed = seed;
            let raw = sample_masked_gaussian(2, 2, 0.5, 1.0, &mut stream_rng(seed, Stream::RecurrentMatrix)).unwrap();
            let nilpotent = (0..2).all(|i| raw.get(i, i) == 0.0) && (raw.get(0, 1) == 0.0 || raw.get(1, 0) == 0.0);
            let built = Reservoir::new(h);
            if nilpotent {
                assert!(matches!(built, Err(EsnError::Initialization(_))), "seed {seed}");
                found = true;
            } else {
                assert!(built.is_ok(), "seed {seed}");
            }
        }
        assert!(found);
    }

    #[test]
    fn leaking_rates_respect_bounds() {
        let mut h = hp(1000, 10, 4);
        h.leak_min = 0.3;
        h.leak_max = 0.3;
        let a = init_leaking_rates(&h, &mut stream_rng(1, Stream::LeakingRates)).unwrap();
        assert!(a.iter().all(|&x| x == 0.3f32));

        let mut h = hp(65536, 10, 4);
        h.leak_min = 0.0;
        h.leak_max = 1.0;
        let a = init_leaking_rates(&h, &mut stream_rng(2, Stream::LeakingRates)).unwrap();
        let mean = a.iter().map(|&x| x as f64).sum::<f64>() / a.len() as f64;
        let min = a.iter().copied().fold(f32::INFINITY, f32::min);
        let max = a.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        assert!((0.49..=0.51).contains(&mean), "{mean}");
        assert!(min < 0.001 && max > 0.999);
        let b = init_leaking_rates(&h, &mut stream_rng(2, Stream::LeakingRates)).unwrap();
        assert_eq!(a, b);
    }

    fn two_unit() -> Reservoir {
        let mut h = hp(2, 3, 1);
        h.leak_min = 0.5;
        h.leak_max = 1.0;
        let w_rec = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 0.1), (1, 1, 0.2)]).unwrap();
        let w_in = SparseMatrix::from_triplets(2, 3, vec![(0, 1, 1.0), (1, 1, -1.0)]).unwrap();
        Reservoir::from_parts(h, w_in, w_rec, vec![1.0, 0.5], 1.0).unwrap()
    }

    #[test]
    fn hand_evaluated_step() {
        let r = two_unit();
        let s0 = ReservoirState::zeros(2);
        let s1 = r.step(&s0, 1).unwrap();
        assert_eq!(s1.t, 1);
        assert_eq!(s0.h, vec![0.0, 0.0]);
        assert!((s1.h[0] - 0.761_594_2).abs() < 1e-6);
        assert!((s1.h[1] + 0.380_797_1).abs() < 1e-6);
        // token 0 has an empty column: h stays at tanh(0) = 0.
        assert_eq!(r.step(&s0, 0).unwrap().h, vec![0.0, 0.0]);
        assert!(r.step(&s0, 3).is_err());
        assert!(r.step(&ReservoirState::zeros(3), 0).is_err());
    }

    #[test]
    fn zero_leak_freezes_state() {
        let mut h = hp(16, 5, 4);
        h.leak_min = 0.0;
        h.leak_max = 0.0;
        let r = Reservoir::new(h).unwrap();
        let s = ReservoirState {
            h: (0..16).map(|i| i as f32 / 20.0 - 0.4).collect(),
            t: 0,
        };
        let mut cur = s.clone();
        for tok in [1, 3, 4, 0, 2] {
            cur = r.step(&cur, tok).unwrap();
        }
        assert_eq!(cur.h, s.h);
    }

    #[test]
    fn tanh_approximation_is_accurate() {
        let mut worst = 0.0f64;
        for i in -200_000..=200_000 {
            let x = i as f32 * 1e-4;
            let err = (tanh_f32(x) as f64 - (x as f64).tanh()).abs();
            worst = worst.max(err);
        }
        assert!(worst < 5e-7, "max error {worst}");
        assert_eq!(tanh_f32(0.0), 0.0);
        assert_eq!(tanh_f32(1e-5), 1e-5);
        assert_eq!(tanh_f32(100.0), tanh_f32(7.905_311));
        assert!((tanh_f32(100.0) - 1.0).abs() < 1e-6);
        assert_eq!(tanh_f32(-0.3), -tanh_f32(0.3));
    }

    #[test]
    fn run_sequence_lengths() {
        let r = Reservoir::new(hp(16, 5, 4)).unwrap();
        assert_eq!(r.run_sequence(&[0, 1]).unwrap().len(), 1);
        assert_eq!(r.run_sequence(&[0, 2, 3, 1]).unwrap().len(), 3);
        assert!(r.run_sequence(&[]).is_err());
        assert!(r.run_sequence(&[0, 9]).is_err());
    }

    #[test]
    fn construction_is_deterministic() {
        let a = Reservoir::new(hp(64, 20, 8)).unwrap();
        let b = Reservoir::new(hp(64, 20, 8)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        let mut other = hp(64, 20, 8);
        other.seed = 8;
        assert_ne!(a.digest(), Reservoir::new(other).unwrap().digest());
    }
}
