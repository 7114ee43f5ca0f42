//! Sentence corpora: manifests, loading, length filtering and batching.
//!
//! Corpus files hold one sentence per line as whitespace-separated decimal
//! token ids (UTF-8, LF). BOS and EOS never appear in files; the loader adds
//! them.

use std::fs;
use std::io::{BufRead, BufReader};
use std::ops::Deref;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{EsnError, Result};
use crate::exec::Execution;
use crate::rng::{stream_rng, Stream};
use crate::TokenId;

/// A BOS/EOS-framed sentence with at least one content token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<TokenId>,
}

impl TokenSequence {
    /// Frames `content` as `BOS content… EOS`.
    pub fn frame(content: &[TokenId], bos: TokenId, eos: TokenId, vocab_size: usize) -> Result<Self> {
        let mut ids = Vec::with_capacity(content.len() + 2);
        ids.push(bos);
        ids.extend_from_slice(content);
        ids.push(eos);
        Self::from_ids(ids, bos, eos, vocab_size)
    }

    /// Wraps already-framed ids.
    pub fn from_ids(ids: Vec<TokenId>, bos: TokenId, eos: TokenId, vocab_size: usize) -> Result<Self> {
        if ids.len() < 3 {
            return Err(EsnError::invalid(format!(
                "a framed sentence needs at least 3 ids, got {}",
                ids.len()
            )));
        }
        if ids[0] != bos || ids[ids.len() - 1] != eos {
            return Err(EsnError::invalid("sentence is not framed by BOS and EOS"));
        }
        if let Some(id) = ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(EsnError::invalid(format!(
                "token {id} out of range for vocabulary size {vocab_size}"
            )));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    /// Tokens `w_2 … w_T`, the prediction targets.
    pub fn targets(&self) -> &[TokenId] {
        &self.ids[1..]
    }

    pub fn bos(&self) -> TokenId {
        self.ids[0]
    }

    pub fn eos(&self) -> TokenId {
        self.ids[self.ids.len() - 1]
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.ids
    }
}

/// Framing and vocabulary shared by every file of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub vocab_size: usize,
    pub bos_id: TokenId,
    pub eos_id: TokenId,
}

impl Vocabulary {
    pub fn validate(&self) -> Result<()> {
        if self.bos_id == self.eos_id {
            return Err(EsnError::invalid("bos_id and eos_id must differ"));
        }
        if self.bos_id as usize >= self.vocab_size || self.eos_id as usize >= self.vocab_size {
            return Err(EsnError::invalid(format!(
                "bos_id {} and eos_id {} must be below vocab_size {}",
                self.bos_id, self.eos_id, self.vocab_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    vocab_size: usize,
    bos_id: TokenId,
    eos_id: TokenId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token_count: Option<u64>,
    files: Vec<PathBuf>,
    sha256: Vec<String>,
}

/// Lists corpus files with their SHA-256 digests.
///
/// On disk this is flat TOML:
///
/// ```text
/// vocab_size = 50257
/// bos_id = 50256
/// eos_id = 50255
/// token_count = 1234567
/// files = ["train-00.txt", "train-01.txt"]
/// sha256 = ["9f86…", "60303…"]
/// ```
///
/// `token_count` (content tokens, excluding BOS/EOS) is optional; when
/// present it must match. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub vocab: Vocabulary,
    pub token_count: Option<u64>,
    pub files: Vec<(PathBuf, String)>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| EsnError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| EsnError::io(path, e))?;
        let raw: ManifestFile = toml::from_str(&text).map_err(|e| EsnError::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if raw.files.len() != raw.sha256.len() {
            return Err(EsnError::Format {
                path: path.to_path_buf(),
                reason: format!("{} files but {} digests", raw.files.len(), raw.sha256.len()),
            });
        }
        let base = path.parent().unwrap_or(Path::new(""));
        let manifest = Self {
            vocab: Vocabulary {
                vocab_size: raw.vocab_size,
                bos_id: raw.bos_id,
                eos_id: raw.eos_id,
            },
            token_count: raw.token_count,
            files: raw.files.into_iter().map(|f| base.join(f)).zip(raw.sha256).collect(),
        };
        manifest.vocab.validate()?;
        Ok(manifest)
    }

    /// Builds a manifest for existing files, hashing each and counting
    /// content tokens.
    pub fn for_files(files: &[PathBuf], vocab: Vocabulary) -> Result<Self> {
        vocab.validate()?;
        let mut entries = Vec::new();
        let mut count = 0u64;
        for f in files {
            entries.push((f.clone(), sha256_file(f)?));
            let text = fs::read_to_string(f).map_err(|e| EsnError::io(f, e))?;
            count += text.split_ascii_whitespace().count() as u64;
        }
        Ok(Self {
            vocab,
            token_count: Some(count),
            files: entries,
        })
    }

    /// Writes the manifest; file paths are stored relative to its directory
    /// when possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let raw = ManifestFile {
            vocab_size: self.vocab.vocab_size,
            bos_id: self.vocab.bos_id,
            eos_id: self.vocab.eos_id,
            token_count: self.token_count,
            files: self
                .files
                .iter()
                .map(|(p, _)| p.strip_prefix(base).unwrap_or(p).to_path_buf())
                .collect(),
            sha256: self.files.iter().map(|(_, d)| d.clone()).collect(),
        };
        let text = toml::to_string(&raw).expect("manifest serializes");
        fs::write(path, text).map_err(|e| EsnError::io(path, e))
    }

    pub fn verify_digests(&self) -> Result<()> {
        for (path, expected) in &self.files {
            let actual = sha256_file(path)?;
            if !actual.eq_ignore_ascii_case(expected) {
                return Err(EsnError::CorpusIntegrity(format!(
                    "{}: sha256 {actual} does not match manifest digest {expected}",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

/// Streams framed sentences from corpus-format text.
pub struct CorpusReader<R> {
    reader: R,
    path: PathBuf,
    vocab: Vocabulary,
    line_no: usize,
    buf: String,
    empty_lines: usize,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>, vocab: Vocabulary) -> Self {
        Self {
            reader,
            path: path.into(),
            vocab,
            line_no: 0,
            buf: String::new(),
            empty_lines: 0,
        }
    }

    /// Blank lines skipped so far.
    pub fn empty_lines(&self) -> usize {
        self.empty_lines
    }

    fn parse_line(&self) -> Result<TokenSequence> {
        let mut content = Vec::new();
        for tok in self.buf.split_ascii_whitespace() {
            let id: u64 = tok.parse().map_err(|_| EsnError::MalformedLine {
                path: self.path.clone(),
                line: self.line_no,
                reason: format!("`{tok}` is not a decimal token id"),
            })?;
            if id >= self.vocab.vocab_size as u64 {
                return Err(EsnError::Vocabulary {
                    path: self.path.clone(),
                    line: self.line_no,
                    id,
                    vocab_size: self.vocab.vocab_size,
                });
            }
            content.push(id as TokenId);
        }
        TokenSequence::frame(&content, self.vocab.bos_id, self.vocab.eos_id, self.vocab.vocab_size)
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<TokenSequence>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => self.line_no += 1,
                Err(e) => return Some(Err(EsnError::io(&self.path, e))),
            }
            if self.buf.trim().is_empty() {
                self.empty_lines += 1;
                continue;
            }
            return Some(self.parse_line());
        }
    }
}

/// Reads every sentence of one corpus-format file.
pub fn read_corpus_file(path: &Path, vocab: Vocabulary) -> Result<(Vec<TokenSequence>, usize)> {
    let file = fs::File::open(path).map_err(|e| EsnError::io(path, e))?;
    let mut reader = CorpusReader::new(BufReader::new(file), path, vocab);
    let seqs = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok((seqs, reader.empty_lines()))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub vocab: Option<Vocabulary>,
    pub sequences: Vec<TokenSequence>,
    /// Blank lines skipped while loading.
    pub empty_lines: usize,
}

impl Corpus {
    /// Content tokens (framing excluded).
    pub fn content_tokens(&self) -> u64 {
        self.sequences.iter().map(|s| s.len() as u64 - 2).sum()
    }
}

/// Verifies digests, then loads every file (in parallel under
/// [`Execution::Parallel`]) preserving manifest order.
pub fn load_corpus(manifest: &CorpusManifest, exec: Execution) -> Result<Corpus> {
    manifest.verify_digests()?;
    let parts = exec.map(&manifest.files, |(path, _)| read_corpus_file(path, manifest.vocab));
    let mut corpus = Corpus {
        vocab: Some(manifest.vocab),
        ..Corpus::default()
    };
    for part in parts {
        let (seqs, empty) = part?;
        corpus.sequences.extend(seqs);
        corpus.empty_lines += empty;
    }
    if let Some(declared) = manifest.token_count {
        let found = corpus.content_tokens();
        if declared != found {
            return Err(EsnError::CorpusIntegrity(format!(
                "manifest declares {declared} tokens, files contain {found}"
            )));
        }
    }
    Ok(corpus)
}

/// Length rule on the framed sequence (BOS and EOS included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthFilter {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for LengthFilter {
    fn default() -> Self {
        Self {
            min_len: 6,
            max_len: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub kept_sequences: usize,
    pub dropped_sequences: usize,
    pub truncated_sequences: usize,
    /// Framed ids in kept (possibly truncated) sequences.
    pub kept_tokens: u64,
    /// Framed ids in dropped sequences.
    pub dropped_tokens: u64,
    /// Framed ids cut off by truncation.
    pub truncated_tokens: u64,
}

impl LengthFilter {
    pub fn validate(&self) -> Result<()> {
        if self.max_len < 3 || self.min_len > self.max_len {
            return Err(EsnError::invalid(format!(
                "length filter needs 3 <= max_len and min_len <= max_len, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Drops sequences shorter than `min_len`; cuts longer than `max_len`
    /// down to `max_len` ids with the last one set to EOS.
    pub fn apply(&self, seq: TokenSequence) -> Option<TokenSequence> {
        let len = seq.len();
        if len < self.min_len {
            return None;
        }
        if len <= self.max_len {
            return Some(seq);
        }
        let eos = seq.eos();
        let mut ids = seq.ids;
        ids.truncate(self.max_len);
        ids[self.max_len - 1] = eos;
        Some(TokenSequence { ids })
    }

    pub fn apply_all(&self, seqs: Vec<TokenSequence>) -> (Vec<TokenSequence>, FilterStats) {
        let mut stats = FilterStats::default();
        let mut kept = Vec::with_capacity(seqs.len());
        for seq in seqs {
            let before = seq.len() as u64;
            match self.apply(seq) {
                None => {
                    stats.dropped_sequences += 1;
                    stats.dropped_tokens += before;
                }
                Some(s) => {
                    let after = s.len() as u64;
                    if after < before {
                        stats.truncated_sequences += 1;
                        stats.truncated_tokens += before - after;
                    }
                    stats.kept_sequences += 1;
                    stats.kept_tokens += after;
                    kept.push(s);
                }
            }
        }
        (kept, stats)
    }
}

pub fn filter_and_truncate(seq: TokenSequence, max_len: usize, min_len: usize) -> Option<TokenSequence> {
    LengthFilter { min_len, max_len }.apply(seq)
}

/// Shuffled fixed-size batches over a corpus. The last batch may be short.
#[derive(Debug, Clone)]
pub struct Batches<'a> {
    corpus: &'a [TokenSequence],
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

pub fn batch_iterator(corpus: &[TokenSequence], batch_size: usize, shuffle_seed: u64) -> Result<Batches<'_>> {
    if corpus.is_empty() {
        return Err(EsnError::invalid("cannot batch an empty corpus"));
    }
    if batch_size == 0 {
        return Err(EsnError::invalid("batch_size must be positive"));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut stream_rng(shuffle_seed, Stream::Shuffle));
    Ok(Batches {
        corpus,
        order,
        batch_size,
        next: 0,
    })
}

impl<'a> Batches<'a> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Sentence indices in iteration order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl<'a> Iterator for Batches<'a> {
    type Item = Vec<&'a TokenSequence>;

    fn next(&mut self) -> Option<Self::Item> {
        let start = self.next * self.batch_size;
        if start >= self.order.len() {
            return None;
        }
        let end = (start + self.batch_size).min(self.order.len());
        self.next += 1;
        Some(self.order[start..end].iter().map(|&i| &self.corpus[i]).collect())
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.num_batches() - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches<'_> {}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const VOCAB: Vocabulary = Vocabulary {
        vocab_size: 50257,
        bos_id: 0,
        eos_id: 1,
    };

    fn read(text: &str) -> (Vec<Result<TokenSequence>>, usize) {
        let mut r = CorpusReader::new(text.as_bytes(), "mem.txt", VOCAB);
        let out: Vec<_> = r.by_ref().collect();
        (out, r.empty_lines())
    }

    #[test]
    fn framing() {
        let (seqs, _) = read("5 9 2\n");
        assert_eq!(seqs[0].as_ref().unwrap().ids(), &[0, 5, 9, 2, 1]);
    }

    #[test]
    fn blank_lines_skipped_and_counted() {
        let (seqs, empty) = read("5 9\n\n   \n7\n");
        assert_eq!(seqs.len(), 2);
        assert_eq!(empty, 2);
    }

    #[test]
    fn out_of_vocab_reports_location() {
        let (seqs, _) = read("3\n4 50257\n");
        match seqs[1].as_ref().unwrap_err() {
            EsnError::Vocabulary { line, id, .. } => assert_eq!((*line, *id), (2, 50257)),
            e => panic!("unexpected {e}"),
        }
        let (seqs, _) = read("4 x\n");
        assert!(matches!(seqs[0], Err(EsnError::MalformedLine { line: 1, .. })));
    }

    fn seq_of_len(len: usize) -> TokenSequence {
        let content: Vec<TokenId> = (0..len - 2).map(|i| 2 + (i as TokenId % 50)).collect();
        TokenSequence::frame(&content, 0, 1, 100).unwrap()
    }

    #[test]
    fn length_rule() {
        assert!(filter_and_truncate(seq_of_len(5), 512, 6).is_none());
        let six = seq_of_len(6);
        assert_eq!(filter_and_truncate(six.clone(), 512, 6), Some(six));
        let long = seq_of_len(600);
        let cut = filter_and_truncate(long.clone(), 512, 6).unwrap();
        assert_eq!(cut.len(), 512);
        assert_eq!(cut.eos(), 1);
        assert_eq!(&cut[..511], &long[..511]);
    }

    #[test]
    fn token_conservation() {
        let seqs: Vec<_> = [3, 5, 6, 40, 600, 513, 512].iter().map(|&l| seq_of_len(l)).collect();
        let raw: u64 = seqs.iter().map(|s| s.len() as u64).sum();
        let (kept, stats) = LengthFilter::default().apply_all(seqs);
        assert_eq!(stats.kept_tokens + stats.dropped_tokens + stats.truncated_tokens, raw);
        assert_eq!((stats.dropped_sequences, stats.truncated_sequences), (2, 2));
        assert!(kept
            .iter()
            .all(|s| (6..=512).contains(&s.len()) && s.bos() == 0 && s.eos() == 1));
    }

    #[test]
    fn batches_cover_corpus_with_short_tail() {
        let corpus: Vec<_> = (0..65).map(|i| seq_of_len(6 + i % 4)).collect();
        let sizes: Vec<usize> = batch_iterator(&corpus, 32, 1).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![32, 32, 1]);
        let a = batch_iterator(&corpus, 32, 1).unwrap().order().to_vec();
        let b = batch_iterator(&corpus, 32, 1).unwrap().order().to_vec();
        let c = batch_iterator(&corpus, 32, 2).unwrap().order().to_vec();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..65).collect::<Vec<_>>());
        assert!(batch_iterator(&[], 32, 1).is_err());
    }

    #[test]
    fn manifest_round_trip_and_digest_check() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("a.txt");
        std::fs::File::create(&file)
            .unwrap()
            .write_all(b"5 9 2\n\n7 7\n")
            .unwrap();
        let vocab = Vocabulary {
            vocab_size: 10,
            bos_id: 0,
            eos_id: 1,
        };
        let m = CorpusManifest::for_files(&[file.clone()], vocab).unwrap();
        let mpath = dir.path().join("corpus.manifest");
        m.save(&mpath).unwrap();
        let loaded = CorpusManifest::load(&mpath).unwrap();
        assert_eq!(loaded, m);
        let corpus = load_corpus(&loaded, Execution::Sequential).unwrap();
        assert_eq!(corpus.sequences.len(), 2);
        assert_eq!(corpus.empty_lines, 1);
        assert_eq!(corpus.content_tokens(), 5);

        std::fs::write(&file, b"5 9 3\n\n7 7\n").unwrap();
        assert!(matches!(
            load_corpus(&loaded, Execution::Sequential),
            Err(EsnError::CorpusIntegrity(_))
        ));
    }

    #[test]
    fn vocabulary_rules() {
        assert!(Vocabulary {
            vocab_size: 4,
            bos_id: 1,
            eos_id: 1
        }
        .validate()
        .is_err());
        assert!(Vocabulary {
            vocab_size: 4,
            bos_id: 4,
            eos_id: 1
        }
        .validate()
        .is_err());
        assert!(TokenSequence::from_ids(vec![0, 1], 0, 1, 4).is_err());
        assert!(TokenSequence::from_ids(vec![0, 2, 2], 0, 1, 4).is_err());
    }
}
