//! Echo state network language modeling.
//!
//! A frozen sparse reservoir turns a token sequence into a trajectory of
//! states; a trainable low-rank softmax readout (`W_out = A·B`) predicts the
//! next token from each state. Only the readout is trained, with analytic
//! gradients and AdamW, so no gradient ever flows through time.
//!
//! Module map:
//!
//! - [`sparse`], [`spectral`], [`reservoir`]: frozen parameters and dynamics
//! - [`head`], [`optim`], [`train`]: the trainable readout and its training loop
//! - [`data`]: corpus manifests, loading, length filtering and batching
//! - [`eval`]: validation NLL and minimal-pair accuracy
//! - [`exec`]: sequential or rayon-backed execution of the data-parallel loops

pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod head;
pub mod optim;
pub mod reservoir;
pub mod rng;
pub mod sparse;
pub mod spectral;
pub mod synthetic;
pub mod train;

pub use data::{CorpusManifest, TokenSequence};
pub use error::{EsnError, Result};
pub use eval::{EsnLm, EvalReport, MinimalPair, PairScoring};
pub use exec::Execution;
pub use head::{LossReport, OutputHead};
pub use optim::{AdamWConfig, OptimizerState};
pub use reservoir::{Activation, Reservoir, ReservoirHyperparams, ReservoirState, Trajectory};
pub use sparse::SparseMatrix;

/// Token identifier. Ids are dense in `0..vocab_size`.
pub type TokenId = u32;
