#![allow(dead_code)]

use esn_core::{Activation, ReservoirHyperparams};

pub fn hyperparams(
    state_size: usize,
    vocab_size: usize,
    rec_degree: usize,
    output_rank: usize,
    seed: u64,
) -> ReservoirHyperparams {
    ReservoirHyperparams {
        state_size,
        vocab_size,
        spectral_radius: 0.99,
        input_scale: 1.0,
        rec_degree,
        leak_min: 0.0,
        leak_max: 1.0,
        activation: Activation::Tanh,
        output_rank,
        seed,
    }
}

/// Softmax cross-entropy of dense logits, computed in f64 from scratch.
pub fn nll(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|o| (o - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}
