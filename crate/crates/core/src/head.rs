//! Low-rank softmax readout `o = A (B h) + b`.
//!
//! `A` is `N_vocab × r`, `B` is `r × N_state`. The product `A·B` is never
//! formed; the cheap `B h` is computed first.
//!
//! With `g_t = softmax(o_t) - onehot(w_{t+1})` and `z_t = B h_t`, the
//! mean-per-token cross-entropy gradients are
//!
//! ```text
//! dL/db = mean_t g_t
//! dL/dA = mean_t g_t z_tᵀ
//! dL/dB = mean_t (Aᵀ g_t) h_tᵀ
//! ```
//!
//! Parameters may be `f32` or `f64`; every reduction accumulates in `f64`.

use rand::Rng;

use crate::error::{EsnError, Result};
use crate::exec::Execution;
use crate::reservoir::ReservoirHyperparams;
use crate::TokenId;

/// Floating-point storage type for parameters and states. The two
/// state-sized kernels (`B h` and the `B` gradient) run in this type;
/// everything else is `f64`.
pub trait Scalar: Copy + Send + Sync + PartialEq + std::fmt::Debug + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;

    /// `Σ a_i b_i` with a fixed summation order.
    fn dot(a: &[Self], b: &[Self]) -> f64;

    /// `y += alpha x`.
    fn axpy(alpha: Self, x: &[Self], y: &mut [Self]);
}

macro_rules! impl_scalar {
    ($t:ty, $lanes:literal) => {
        impl Scalar for $t {
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn dot(a: &[Self], b: &[Self]) -> f64 {
                let (ac, bc) = (a.chunks_exact($lanes), b.chunks_exact($lanes));
                let tail: f64 = ac
                    .remainder()
                    .iter()
                    .zip(bc.remainder())
                    .map(|(&x, &y)| x as f64 * y as f64)
                    .sum();
                let mut acc = [0.0 as $t; $lanes];
                for (x, y) in ac.zip(bc) {
                    let x: &[$t; $lanes] = x.try_into().expect("full chunk");
                    let y: &[$t; $lanes] = y.try_into().expect("full chunk");
                    for i in 0..$lanes {
                        acc[i] += x[i] * y[i];
                    }
                }
                acc.iter().map(|&v| v as f64).sum::<f64>() + tail
            }

            #[inline]
            fn axpy(alpha: Self, x: &[Self], y: &mut [Self]) {
                for (d, &v) in y.iter_mut().zip(x) {
                    *d += alpha * v;
                }
            }
        }
    };
}

impl_scalar!(f32, 16);
impl_scalar!(f64, 8);

#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead<T = f32> {
    vocab_size: usize,
    rank: usize,
    state_size: usize,
    /// `A`, row-major `vocab_size × rank`.
    pub a_mat: Vec<T>,
    /// `B`, row-major `rank × state_size`.
    pub b_mat: Vec<T>,
    pub bias: Vec<T>,
}

/// Negative log-likelihood over a set of predicted tokens, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub total_nll: f64,
    pub predicted_token_count: usize,
}

impl LossReport {
    pub fn nll_per_token(&self) -> f64 {
        self.total_nll / self.predicted_token_count as f64
    }
}

/// Gradients of the mean-per-token loss, always `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub a_mat: Vec<f64>,
    pub b_mat: Vec<f64>,
    pub bias: Vec<f64>,
}

impl<T: Scalar> OutputHead<T> {
    /// All-zero head: the uniform model.
    pub fn zeros(vocab_size: usize, rank: usize, state_size: usize) -> Self {
        Self {
            vocab_size,
            rank,
            state_size,
            a_mat: vec![T::from_f64(0.0); vocab_size * rank],
            b_mat: vec![T::from_f64(0.0); rank * state_size],
            bias: vec![T::from_f64(0.0); vocab_size],
        }
    }

    /// `A`, `b ~ U(±1/√r)` and `B ~ U(±1/√N_state)`, drawn in that order.
    pub fn init<R: Rng + ?Sized>(hp: &ReservoirHyperparams, rng: &mut R) -> Result<Self> {
        hp.validate()?;
        let (v, r, n) = (hp.vocab_size, hp.output_rank, hp.state_size);
        let a_bound = (1.0 / r as f64).sqrt();
        let b_bound = (1.0 / n as f64).sqrt();
        let mut draw = |bound: f64, len: usize| -> Vec<T> {
            (0..len)
                .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
                .collect()
        };
        let a_mat = draw(a_bound, v * r);
        let b_mat = draw(b_bound, r * n);
        let bias = draw(a_bound, v);
        Ok(Self {
            vocab_size: v,
            rank: r,
            state_size: n,
            a_mat,
            b_mat,
            bias,
        })
    }

    pub fn from_parts(
        vocab_size: usize,
        rank: usize,
        state_size: usize,
        a_mat: Vec<T>,
        b_mat: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        if a_mat.len() != vocab_size * rank || b_mat.len() != rank * state_size || bias.len() != vocab_size {
            return Err(EsnError::invalid(format!(
                "head tensors do not match shapes A {vocab_size}x{rank}, B {rank}x{state_size}, b {vocab_size}"
            )));
        }
        let head = Self {
            vocab_size,
            rank,
            state_size,
            a_mat,
            b_mat,
            bias,
        };
        if !head.is_finite() {
            return Err(EsnError::invalid("head contains non-finite values"));
        }
        Ok(head)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn state_size(&self) -> usize {
        self.state_size
    }

    pub fn is_finite(&self) -> bool {
        [&self.a_mat, &self.b_mat, &self.bias]
            .iter()
            .all(|t| t.iter().all(|x| x.to_f64().is_finite()))
    }

    fn check_state(&self, len: usize) -> Result<()> {
        if len != self.state_size {
            return Err(EsnError::invalid(format!(
                "state has length {len}, head expects {}",
                self.state_size
            )));
        }
        Ok(())
    }

    /// `z = B h`.
    #[inline]
    fn project(&self, h: &[T], z: &mut [f64]) {
        for (q, zq) in z.iter_mut().enumerate() {
            let row = &self.b_mat[q * self.state_size..(q + 1) * self.state_size];
            *zq = T::dot(row, h);
        }
    }

    /// `o = A z + b`.
    #[inline]
    fn expand(&self, z: &[f64], o: &mut [f64]) {
        for (v, ov) in o.iter_mut().enumerate() {
            let row = &self.a_mat[v * self.rank..(v + 1) * self.rank];
            let dot: f64 = row.iter().zip(z).map(|(&a, &zq)| a.to_f64() * zq).sum();
            *ov = dot + self.bias[v].to_f64();
        }
    }

    /// Logits for one state, computed as `A (B h) + b`.
    pub fn logits(&self, h: &[T]) -> Result<Vec<f64>> {
        self.check_state(h.len())?;
        let mut z = vec![0.0; self.rank];
        let mut o = vec![0.0; self.vocab_size];
        self.project(h, &mut z);
        self.expand(&z, &mut o);
        Ok(o)
    }

    /// Next-token distribution for one state.
    pub fn probabilities(&self, h: &[T]) -> Result<Vec<f64>> {
        let mut o = self.logits(h)?;
        let lse = log_sum_exp(&o);
        o.iter_mut().for_each(|x| *x = (*x - lse).exp());
        Ok(o)
    }

    fn check_inputs(&self, states: &[T], targets: &[TokenId]) -> Result<()> {
        if targets.is_empty() {
            return Err(EsnError::invalid("no prediction targets"));
        }
        if states.len() != targets.len() * self.state_size {
            return Err(EsnError::invalid(format!(
                "{} state values for {} targets of width {}",
                states.len(),
                targets.len(),
                self.state_size
            )));
        }
        if let Some(t) = targets.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(EsnError::invalid(format!(
                "target {t} out of range for vocabulary size {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// `-Σ_t log softmax(o_t)[target_t]` over row-major `states`.
    pub fn sequence_log_prob(&self, states: &[T], targets: &[TokenId]) -> Result<LossReport> {
        self.check_inputs(states, targets)?;
        let mut z = vec![0.0; self.rank];
        let mut o = vec![0.0; self.vocab_size];
        let mut total = 0.0;
        for (h, &target) in states.chunks(self.state_size).zip(targets) {
            self.project(h, &mut z);
            self.expand(&z, &mut o);
            total += token_nll(&o, target);
        }
        Ok(LossReport {
            total_nll: total,
            predicted_token_count: targets.len(),
        })
    }

    /// Loss and mean-per-token gradients over row-major `states`.
    pub fn loss_and_grads(
        &self,
        states: &[T],
        targets: &[TokenId],
        exec: Execution,
    ) -> Result<(LossReport, HeadGrads)> {
        self.check_inputs(states, targets)?;
        let mut acc = GradAccumulator::new(self);
        acc.add(self, states, targets, exec);
        Ok(acc.finish())
    }
}

/// Sums unnormalized gradients over token chunks. Every output element is a
/// fixed-order sum over tokens, so results do not depend on the execution
/// policy or thread count.
pub(crate) struct GradAccumulator {
    total_nll: f64,
    tokens: usize,
    grads: HeadGrads,
}

/// Tokens processed per chunk; bounds the `chunk × vocab` scratch.
const CHUNK: usize = 256;

impl GradAccumulator {
    pub(crate) fn new<T: Scalar>(head: &OutputHead<T>) -> Self {
        Self {
            total_nll: 0.0,
            tokens: 0,
            grads: HeadGrads {
                a_mat: vec![0.0; head.a_mat.len()],
                b_mat: vec![0.0; head.b_mat.len()],
                bias: vec![0.0; head.bias.len()],
            },
        }
    }

    /// Caller guarantees `states.len() == targets.len() * state_size` and
    /// in-range targets.
    pub(crate) fn add<T: Scalar>(&mut self, head: &OutputHead<T>, states: &[T], targets: &[TokenId], exec: Execution) {
        let (n, r, v) = (head.state_size, head.rank, head.vocab_size);
        for (hs, ts) in states.chunks(CHUNK * n).zip(targets.chunks(CHUNK)) {
            let k = ts.len();
            // z_t = B h_t, then o_t -> g_t = softmax(o_t) - onehot, in place.
            let mut z = vec![0.0; k * r];
            exec.for_each_row(&mut z, r, |t, zt| head.project(&hs[t * n..(t + 1) * n], zt));
            let mut g = vec![0.0; k * v];
            let z_ref = &z;
            let nll: Vec<f64> = {
                let mut out = vec![0.0; k];
                exec.for_each_row(&mut g, v, |t, gt| {
                    head.expand(&z_ref[t * r..(t + 1) * r], gt);
                });
                for (t, gt) in g.chunks_mut(v).enumerate() {
                    out[t] = softmax_residual(gt, ts[t]);
                }
                out
            };
            for x in &nll {
                self.total_nll += x;
            }
            self.tokens += k;

            // dA[v] += Σ_t g_t[v] z_t ; db[v] += Σ_t g_t[v]
            let g_ref = &g;
            exec.for_each_row(&mut self.grads.a_mat, r, |row, da| {
                for t in 0..k {
                    let gv = g_ref[t * v + row];
                    for (d, &zq) in da.iter_mut().zip(&z_ref[t * r..(t + 1) * r]) {
                        *d += gv * zq;
                    }
                }
            });
            for (row, db) in self.grads.bias.iter_mut().enumerate() {
                for t in 0..k {
                    *db += g_ref[t * v + row];
                }
            }

            // e_t = Aᵀ g_t, then dB[q] += Σ_t e_t[q] h_t
            let mut e = vec![0.0; k * r];
            exec.for_each_row(&mut e, r, |t, et| {
                let gt = &g_ref[t * v..(t + 1) * v];
                for (row, &gv) in gt.iter().enumerate() {
                    let a_row = &head.a_mat[row * r..(row + 1) * r];
                    for (x, &a) in et.iter_mut().zip(a_row) {
                        *x += a.to_f64() * gv;
                    }
                }
            });
            // Summed over the chunk in `T`, then folded into the f64 total.
            let e_ref = &e;
            let mut part = vec![T::from_f64(0.0); r * n];
            exec.for_each_row(&mut part, n, |q, row| {
                for t in 0..k {
                    T::axpy(T::from_f64(e_ref[t * r + q]), &hs[t * n..(t + 1) * n], row);
                }
            });
            for (d, p) in self.grads.b_mat.iter_mut().zip(&part) {
                *d += p.to_f64();
            }
        }
    }

    pub(crate) fn finish(mut self) -> (LossReport, HeadGrads) {
        let scale = 1.0 / self.tokens as f64;
        for t in [&mut self.grads.a_mat, &mut self.grads.b_mat, &mut self.grads.bias] {
            t.iter_mut().for_each(|x| *x *= scale);
        }
        (
            LossReport {
                total_nll: self.total_nll,
                predicted_token_count: self.tokens,
            },
            self.grads,
        )
    }
}

/// Max-shifted `log Σ exp`.
pub fn log_sum_exp(o: &[f64]) -> f64 {
    let m = o.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + o.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// `-log softmax(o)[target]`.
#[inline]
pub fn token_nll(o: &[f64], target: TokenId) -> f64 {
    log_sum_exp(o) - o[target as usize]
}

/// Overwrites logits with `softmax(o) - onehot(target)` and returns the NLL,
/// bit-identical to [`token_nll`] on the same logits.
fn softmax_residual(o: &mut [f64], target: TokenId) -> f64 {
    let lse = log_sum_exp(o);
    let nll = lse - o[target as usize];
    o.iter_mut().for_each(|x| *x = (*x - lse).exp());
    o[target as usize] -= 1.0;
    nll
}
