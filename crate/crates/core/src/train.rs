//! One-epoch training of the readout over a frozen reservoir.
//!
//! Each batch runs the reservoir over its sentences in lockstep, accumulates
//! the mean-per-token gradient over every predicted token of the batch, and
//! applies one AdamW step. No gradient reaches the reservoir.

use crate::data::TokenSequence;
use crate::error::{EsnError, Result};
use crate::exec::Execution;
use crate::head::{GradAccumulator, LossReport, OutputHead};
use crate::optim::OptimizerState;
use crate::reservoir::{Reservoir, Trajectory};
use crate::TokenId;

/// Most sentences run through the reservoir in one lockstep pass.
pub const LOCKSTEP_LANES: usize = 1024;

/// Most reservoir state values (`f32`) held at once by one lockstep pass.
pub const STATE_BUDGET: usize = 1 << 26;

/// Running statistics of an epoch. The train NLL is the unweighted mean of
/// per-batch NLLs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochStats {
    pub batches: usize,
    pub tokens: u64,
    pub batch_nll_sum: f64,
}

impl EpochStats {
    pub fn train_nll(&self) -> f64 {
        self.batch_nll_sum / self.batches as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchReport {
    /// Zero-based position of the batch within the epoch.
    pub index: usize,
    pub loss: LossReport,
}

pub struct Trainer<'r> {
    reservoir: &'r Reservoir,
    pub head: OutputHead<f32>,
    pub opt: OptimizerState,
    pub stats: EpochStats,
    exec: Execution,
}

impl<'r> Trainer<'r> {
    pub fn new(reservoir: &'r Reservoir, head: OutputHead<f32>, opt: OptimizerState, exec: Execution) -> Result<Self> {
        Self::resume(reservoir, head, opt, EpochStats::default(), exec)
    }

    /// Continues an epoch from saved statistics.
    pub fn resume(
        reservoir: &'r Reservoir,
        head: OutputHead<f32>,
        opt: OptimizerState,
        stats: EpochStats,
        exec: Execution,
    ) -> Result<Self> {
        let hp = reservoir.hyperparams();
        if (head.vocab_size(), head.rank(), head.state_size()) != (hp.vocab_size, hp.output_rank, hp.state_size) {
            return Err(EsnError::invalid("output head shape does not match the reservoir"));
        }
        opt.config.validate()?;
        Ok(Self {
            reservoir,
            head,
            opt,
            stats,
            exec,
        })
    }

    pub fn reservoir(&self) -> &Reservoir {
        self.reservoir
    }

    pub fn train_batch(&mut self, batch: &[&TokenSequence]) -> Result<BatchReport> {
        let mut report = None;
        self.train_window(&[batch.to_vec()], |_, r| {
            report = Some(*r);
            Ok::<_, EsnError>(())
        })?;
        Ok(report.expect("one batch trained"))
    }

    /// Trains on consecutive batches, running the reservoir over all their
    /// sentences in one lockstep pass. The result is identical to calling
    /// [`Trainer::train_batch`] on each batch in order.
    pub fn train_window<F, E>(&mut self, batches: &[Vec<&TokenSequence>], mut on_batch: F) -> Result<(), E>
    where
        F: FnMut(&Self, &BatchReport) -> Result<(), E>,
        E: From<EsnError>,
    {
        if batches.iter().any(|b| b.is_empty()) {
            return Err(EsnError::invalid("empty batch").into());
        }
        let seqs: Vec<&[TokenId]> = batches.iter().flatten().map(|s| s.ids()).collect();
        let trajectories = self.reservoir.run_batch(&seqs, self.exec)?;
        let mut offset = 0;
        for batch in batches {
            let trajs = &trajectories[offset..offset + batch.len()];
            offset += batch.len();
            let report = self.step(batch, trajs)?;
            on_batch(self, &report)?;
        }
        Ok(())
    }

    fn step(&mut self, batch: &[&TokenSequence], trajectories: &[Trajectory]) -> Result<BatchReport> {
        let index = self.stats.batches;
        let total: usize = trajectories.iter().map(|t| t.as_flat().len()).sum();
        let mut states = Vec::with_capacity(total);
        let mut targets = Vec::with_capacity(total / self.head.state_size());
        for (traj, seq) in trajectories.iter().zip(batch) {
            states.extend_from_slice(traj.as_flat());
            targets.extend_from_slice(seq.targets());
        }

        let mut acc = GradAccumulator::new(&self.head);
        acc.add(&self.head, &states, &targets, self.exec);
        let (loss, grads) = acc.finish();
        if !loss.total_nll.is_finite() {
            return Err(EsnError::NonFiniteLoss { batch: index });
        }
        self.opt.step(&mut self.head, &grads)?;

        self.stats.batches += 1;
        self.stats.tokens += loss.predicted_token_count as u64;
        self.stats.batch_nll_sum += loss.nll_per_token();
        Ok(BatchReport { index, loss })
    }

    /// Trains on every batch, calling `on_batch` after each optimizer step.
    /// Batches are grouped into windows for the reservoir pass; see
    /// [`LOCKSTEP_LANES`] and [`STATE_BUDGET`]. An iterator that yields
    /// nothing is an error.
    pub fn train_epoch<'c, I, F, E>(&mut self, batches: I, mut on_batch: F) -> Result<EpochStats, E>
    where
        I: IntoIterator<Item = Vec<&'c TokenSequence>>,
        F: FnMut(&Self, &BatchReport) -> Result<(), E>,
        E: From<EsnError>,
    {
        let n = self.head.state_size();
        let mut window: Vec<Vec<&TokenSequence>> = Vec::new();
        let (mut lanes, mut values, mut seen) = (0, 0, 0);
        for batch in batches {
            let cost = batch.iter().map(|s| s.len() - 1).sum::<usize>() * n;
            if !window.is_empty() && (lanes + batch.len() > LOCKSTEP_LANES || values + cost > STATE_BUDGET) {
                self.train_window(&window, &mut on_batch)?;
                window.clear();
                (lanes, values) = (0, 0);
            }
            lanes += batch.len();
            values += cost;
            window.push(batch);
            seen += 1;
        }
        if !window.is_empty() {
            self.train_window(&window, &mut on_batch)?;
        }
        if seen == 0 {
            return Err(EsnError::invalid("training epoch received no batches").into());
        }
        Ok(self.stats)
    }

    pub fn into_parts(self) -> (OutputHead<f32>, OptimizerState, EpochStats) {
        (self.head, self.opt, self.stats)
    }
}

/// Runs one epoch and returns the trained head, optimizer state and running
/// train statistics.
pub fn train_epoch<'c, I>(
    reservoir: &Reservoir,
    head: OutputHead<f32>,
    opt: OptimizerState,
    batches: I,
    exec: Execution,
) -> Result<(OutputHead<f32>, OptimizerState, EpochStats)>
where
    I: IntoIterator<Item = Vec<&'c TokenSequence>>,
{
    let mut trainer = Trainer::new(reservoir, head, opt, exec)?;
    trainer.train_epoch(batches, |_, _| Ok::<_, EsnError>(()))?;
    Ok(trainer.into_parts())
}
