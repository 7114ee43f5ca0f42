//! Synthetic sentence sources with known structure, for experiments and
//! tests. Ids 0 and 1 are reserved for BOS and EOS.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::data::{CorpusManifest, TokenSequence, Vocabulary};
use crate::error::{EsnError, Result};
use crate::TokenId;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;

/// First-order chain whose transition law depends only on which of two
/// groups the current token falls in.
///
/// Every distribution is over the full vocabulary. `start` governs the first
/// content token after BOS and must give EOS zero mass.
#[derive(Debug, Clone)]
pub struct TwoStateChain {
    pub vocab_size: usize,
    pub start: Vec<f64>,
    pub emit: [Vec<f64>; 2],
    /// Group of each content token; BOS and EOS entries are unused.
    pub group: Vec<usize>,
}

impl TwoStateChain {
    /// A 16-token chain: ids 2..9 form group 0, ids 9..16 group 1. Each
    /// group prefers to hand over to the other, and ends a sentence with
    /// probability `p_end`.
    pub fn standard(p_end: f64) -> Self {
        let vocab_size = 16;
        let shape = [5.0, 4.0, 3.0, 2.0, 1.0, 1.0, 1.0];
        let norm: f64 = shape.iter().sum();
        let mut group = vec![0; vocab_size];
        for g in group.iter_mut().skip(9) {
            *g = 1;
        }
        let fill = |own: f64, other: f64, first_group: usize| {
            let mut p = vec![0.0; vocab_size];
            p[EOS as usize] = p_end;
            let content = 1.0 - p_end;
            for (i, w) in shape.iter().enumerate() {
                let (a, b) = (2 + i, 9 + i);
                let (own_id, other_id) = if first_group == 0 { (a, b) } else { (b, a) };
                p[own_id] = content * own * w / norm;
                // Reverse the shape for the other group so the two rows differ.
                p[other_id] = content * other * shape[6 - i] / norm;
            }
            p
        };
        let emit = [fill(0.25, 0.75, 0), fill(0.25, 0.75, 1)];
        let mut start = vec![0.0; vocab_size];
        for (i, w) in shape.iter().enumerate() {
            start[2 + i] = 0.5 * w / norm;
            start[9 + i] = 0.5 * shape[6 - i] / norm;
        }
        Self {
            vocab_size,
            start,
            emit,
            group,
        }
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            vocab_size: self.vocab_size,
            bos_id: BOS,
            eos_id: EOS,
        }
    }

    /// Draws whole sentences until at least `min_tokens` content tokens have
    /// been produced.
    pub fn sample_corpus(&self, min_tokens: usize, seed: u64) -> Vec<TokenSequence> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let start = WeightedIndex::new(&self.start).expect("valid start distribution");
        let emit = [
            WeightedIndex::new(&self.emit[0]).expect("valid emission"),
            WeightedIndex::new(&self.emit[1]).expect("valid emission"),
        ];
        let mut out = Vec::new();
        let mut produced = 0;
        while produced < min_tokens {
            let mut content = vec![start.sample(&mut rng) as TokenId];
            loop {
                let g = self.group[*content.last().unwrap() as usize];
                let next = emit[g].sample(&mut rng) as TokenId;
                if next == EOS {
                    break;
                }
                content.push(next);
            }
            produced += content.len();
            out.push(TokenSequence::frame(&content, BOS, EOS, self.vocab_size).expect("valid ids"));
        }
        out
    }
}

/// Sentences whose first content token names a topic that governs every
/// later transition. Predicting well needs the topic to be remembered across
/// the whole sentence, so the source rewards reservoir memory.
#[derive(Debug, Clone)]
pub struct TopicSource {
    pub vocab_size: usize,
    pub topics: usize,
    pub p_end: f64,
    /// `transitions[topic][token]`: successor weights over the vocabulary.
    transitions: Vec<Vec<Vec<f64>>>,
}

impl TopicSource {
    /// Builds a source with `topics` marker tokens (ids `2..2+topics`), the
    /// remaining ids as ordinary words, and `fanout` random successors per
    /// word and topic. The structure is a pure function of `structure_seed`.
    pub fn new(vocab_size: usize, topics: usize, fanout: usize, p_end: f64, structure_seed: u64) -> Result<Self> {
        let first_word = 2 + topics;
        if topics == 0 || first_word + fanout > vocab_size || fanout == 0 {
            return Err(EsnError::invalid("topic source does not fit in the vocabulary"));
        }
        if !(p_end > 0.0 && p_end < 1.0) {
            return Err(EsnError::invalid("p_end must lie in (0, 1)"));
        }
        let words = vocab_size - first_word;
        let mut rng = ChaCha20Rng::seed_from_u64(structure_seed);
        let mut transitions = Vec::with_capacity(topics);
        for _ in 0..topics {
            let mut table = vec![Vec::new(); vocab_size];
            for (tok, row) in table.iter_mut().enumerate().skip(2) {
                let mut p = vec![0.0; vocab_size];
                // The marker itself must be followed by a word.
                let stop = if tok < first_word { 0.0 } else { p_end };
                p[EOS as usize] = stop;
                let picks = sample(&mut rng, words, fanout);
                let weights: Vec<f64> = (0..fanout).map(|_| rng.random_range(0.2..1.0)).collect();
                let total: f64 = weights.iter().sum();
                for (w, k) in weights.iter().zip(picks.iter()) {
                    p[first_word + k] += (1.0 - stop) * w / total;
                }
                *row = p;
            }
            transitions.push(table);
        }
        Ok(Self {
            vocab_size,
            topics,
            p_end,
            transitions,
        })
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            vocab_size: self.vocab_size,
            bos_id: BOS,
            eos_id: EOS,
        }
    }

    pub fn sample_corpus(&self, min_tokens: usize, seed: u64) -> Vec<TokenSequence> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let tables: Vec<Vec<Option<WeightedIndex<f64>>>> = self
            .transitions
            .iter()
            .map(|t| t.iter().map(|row| WeightedIndex::new(row).ok()).collect())
            .collect();
        let mut out = Vec::new();
        let mut produced = 0;
        while produced < min_tokens {
            let topic = rng.random_range(0..self.topics);
            let mut content = vec![(2 + topic) as TokenId];
            loop {
                let cur = *content.last().unwrap() as usize;
                let dist = tables[topic][cur].as_ref().expect("content rows are proper");
                let next = dist.sample(&mut rng) as TokenId;
                if next == EOS {
                    break;
                }
                content.push(next);
            }
            produced += content.len();
            out.push(TokenSequence::frame(&content, BOS, EOS, self.vocab_size).expect("valid ids"));
        }
        out
    }
}

/// Writes sentences in corpus format (content ids only) and a manifest next
/// to them. Returns the manifest path.
pub fn write_corpus(dir: &Path, name: &str, sentences: &[TokenSequence], vocab: Vocabulary) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| EsnError::io(dir, e))?;
    let data_path = dir.join(format!("{name}.txt"));
    let mut text = Vec::new();
    for s in sentences {
        let content = &s.ids()[1..s.len() - 1];
        let line: Vec<String> = content.iter().map(|t| t.to_string()).collect();
        writeln!(text, "{}", line.join(" ")).expect("write to memory");
    }
    fs::write(&data_path, text).map_err(|e| EsnError::io(&data_path, e))?;
    let manifest = CorpusManifest::for_files(&[data_path], vocab)?;
    let manifest_path = dir.join(format!("{name}.manifest"));
    manifest.save(&manifest_path)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_rows_are_distributions() {
        let c = TwoStateChain::standard(0.1);
        for row in c.emit.iter().chain(std::iter::once(&c.start)) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(c.start[EOS as usize], 0.0);
    }

    #[test]
    fn samples_are_reproducible_and_sized() {
        let c = TwoStateChain::standard(0.1);
        let a = c.sample_corpus(5000, 3);
        assert_eq!(a, c.sample_corpus(5000, 3));
        let tokens: usize = a.iter().map(|s| s.len() - 2).sum();
        assert!(tokens >= 5000 && tokens < 5200);

        let t = TopicSource::new(64, 4, 5, 0.06, 1).unwrap();
        let b = t.sample_corpus(3000, 9);
        assert!(b.iter().all(|s| (2..6).contains(&s[1])));
        assert_eq!(b, t.sample_corpus(3000, 9));
    }
}
