//! Validation NLL and minimal-pair accuracy.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{read_corpus_file, TokenSequence, Vocabulary};
use crate::error::{EsnError, Result};
use crate::exec::Execution;
use crate::head::{LossReport, OutputHead};
use crate::reservoir::Reservoir;
use crate::train::{LOCKSTEP_LANES, STATE_BUDGET};
use crate::TokenId;

/// Anything that assigns a log-probability to framed sentences.
pub trait SentenceModel: Sync {
    /// NLL of each sentence, in input order.
    fn score_batch(&self, seqs: &[&[TokenId]]) -> Result<Vec<LossReport>>;

    /// Most tokens handed to one `score_batch` call.
    fn token_budget(&self) -> usize {
        1 << 16
    }

    fn sentence_nll(&self, seq: &[TokenId]) -> Result<LossReport> {
        Ok(self.score_batch(&[seq])?.remove(0))
    }

    /// Total log-probability `Σ_t log p(w_{t+1} | w_{≤t})`.
    fn sentence_score(&self, seq: &[TokenId]) -> Result<f64> {
        Ok(-self.sentence_nll(seq)?.total_nll)
    }
}

/// A reservoir with its trained readout.
#[derive(Debug, Clone)]
pub struct EsnLm {
    pub reservoir: Reservoir,
    pub head: OutputHead<f32>,
    pub exec: Execution,
}

impl EsnLm {
    pub fn new(reservoir: Reservoir, head: OutputHead<f32>) -> Result<Self> {
        let hp = reservoir.hyperparams();
        if (head.vocab_size(), head.rank(), head.state_size()) != (hp.vocab_size, hp.output_rank, hp.state_size) {
            return Err(EsnError::invalid("output head shape does not match the reservoir"));
        }
        Ok(Self {
            reservoir,
            head,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }
}

impl SentenceModel for EsnLm {
    fn token_budget(&self) -> usize {
        (STATE_BUDGET / self.reservoir.state_size()).max(1)
    }

    fn score_batch(&self, seqs: &[&[TokenId]]) -> Result<Vec<LossReport>> {
        if seqs.iter().any(|s| s.len() < 2) {
            return Err(EsnError::invalid("a scored sentence needs at least two tokens"));
        }
        let trajectories = self.reservoir.run_batch(seqs, self.exec)?;
        let jobs: Vec<_> = trajectories.iter().zip(seqs).collect();
        self.exec
            .map(&jobs, |(traj, seq)| {
                self.head.sequence_log_prob(traj.as_flat(), &seq[1..])
            })
            .into_iter()
            .collect()
    }
}

/// Scores every sentence, in input order. Sentences are grouped by length
/// so lockstep groups stay full; each sentence's result does not depend on
/// its group.
fn score_all<M: SentenceModel + ?Sized>(model: &M, seqs: &[&[TokenId]]) -> Result<Vec<LossReport>> {
    let budget = model.token_budget();
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by_key(|&i| seqs[i].len());
    let mut out = vec![None; seqs.len()];
    let mut group: Vec<&[TokenId]> = Vec::new();
    let mut members: Vec<usize> = Vec::new();
    let mut tokens = 0;
    let mut flush = |group: &mut Vec<&[TokenId]>, members: &mut Vec<usize>| -> Result<()> {
        for (i, r) in members.drain(..).zip(model.score_batch(group)?) {
            out[i] = Some(r);
        }
        group.clear();
        Ok(())
    };
    for &i in &order {
        if !group.is_empty() && (group.len() == LOCKSTEP_LANES || tokens + seqs[i].len() > budget) {
            flush(&mut group, &mut members)?;
            tokens = 0;
        }
        group.push(seqs[i]);
        members.push(i);
        tokens += seqs[i].len();
    }
    if !group.is_empty() {
        flush(&mut group, &mut members)?;
    }
    Ok(out.into_iter().map(|r| r.expect("every sentence scored")).collect())
}

/// Token-weighted NLL: total NLL over all sentences divided by the number of
/// predicted tokens.
pub fn validation_nll<M: SentenceModel + ?Sized>(model: &M, corpus: &[TokenSequence]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(EsnError::invalid("validation corpus is empty"));
    }
    let seqs: Vec<&[TokenId]> = corpus.iter().map(|s| s.ids()).collect();
    let reports = score_all(model, &seqs)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in reports {
        total += r.total_nll;
        count += r.predicted_token_count;
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinimalPair {
    pub good: TokenSequence,
    pub bad: TokenSequence,
    pub phenomenon: String,
}

impl MinimalPair {
    pub fn new(good: TokenSequence, bad: TokenSequence, phenomenon: impl Into<String>) -> Result<Self> {
        if good == bad {
            return Err(EsnError::invalid("minimal pair sentences are identical"));
        }
        Ok(Self {
            good,
            bad,
            phenomenon: phenomenon.into(),
        })
    }
}

/// How a sentence is scored when comparing the two halves of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairScoring {
    /// Total log-probability.
    #[default]
    Total,
    /// Log-probability divided by the number of predicted tokens.
    PerToken,
}

impl std::str::FromStr for PairScoring {
    type Err = EsnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total" => Ok(PairScoring::Total),
            "per-token" => Ok(PairScoring::PerToken),
            other => Err(EsnError::invalid(format!(
                "unknown pair scoring `{other}` (expected `total` or `per-token`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhenomenonResult {
    pub pairs: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Micro average over pairs.
    pub overall_accuracy: f64,
    /// Unweighted mean over phenomena.
    pub macro_accuracy: f64,
    pub per_phenomenon: BTreeMap<String, PhenomenonResult>,
    pub pair_count: usize,
    pub validation_nll: Option<f64>,
}

/// A pair is correct iff the good sentence scores strictly higher; ties
/// count as incorrect.
pub fn minimal_pair_accuracy<M: SentenceModel + ?Sized>(
    model: &M,
    pairs: &[MinimalPair],
    scoring: PairScoring,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(EsnError::invalid("no minimal pairs to evaluate"));
    }
    let seqs: Vec<&[TokenId]> = pairs.iter().flat_map(|p| [p.good.ids(), p.bad.ids()]).collect();
    let reports = score_all(model, &seqs)?;
    let score = |r: &LossReport| match scoring {
        PairScoring::Total => -r.total_nll,
        PairScoring::PerToken => -r.nll_per_token(),
    };

    let mut per: BTreeMap<String, PhenomenonResult> = BTreeMap::new();
    let mut correct_total = 0;
    for (pair, r) in pairs.iter().zip(reports.chunks(2)) {
        let correct = score(&r[0]) > score(&r[1]);
        let entry = per.entry(pair.phenomenon.clone()).or_insert(PhenomenonResult {
            pairs: 0,
            correct: 0,
            accuracy: 0.0,
        });
        entry.pairs += 1;
        entry.correct += correct as usize;
        correct_total += correct as usize;
    }
    for v in per.values_mut() {
        v.accuracy = v.correct as f64 / v.pairs as f64;
    }
    let macro_accuracy = per.values().map(|v| v.accuracy).sum::<f64>() / per.len() as f64;
    Ok(EvalReport {
        overall_accuracy: correct_total as f64 / pairs.len() as f64,
        macro_accuracy,
        per_phenomenon: per,
        pair_count: pairs.len(),
        validation_nll: None,
    })
}

/// Reads a pair file (good line, then bad line, per pair) and its tag
/// sidecar (one tag per pair). Without a sidecar every pair is tagged `all`.
pub fn load_pairs(pairs_path: &Path, tags_path: Option<&Path>, vocab: Vocabulary) -> Result<Vec<MinimalPair>> {
    let (seqs, _) = read_corpus_file(pairs_path, vocab)?;
    if seqs.len() % 2 != 0 {
        return Err(EsnError::Format {
            path: pairs_path.to_path_buf(),
            reason: format!(
                "odd number of sentences ({}); pairs need good and bad lines",
                seqs.len()
            ),
        });
    }
    let n = seqs.len() / 2;
    let tags: Vec<String> = match tags_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| EsnError::io(p, e))?;
            let tags: Vec<String> = text
                .lines()
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect();
            if tags.len() != n {
                return Err(EsnError::Format {
                    path: p.to_path_buf(),
                    reason: format!("{} tags for {n} pairs", tags.len()),
                });
            }
            tags
        }
        None => vec!["all".to_string(); n],
    };
    let mut it = seqs.into_iter();
    tags.into_iter()
        .map(|tag| {
            let good = it.next().expect("even count");
            let bad = it.next().expect("even count");
            MinimalPair::new(good, bad, tag)
        })
        .collect()
}
