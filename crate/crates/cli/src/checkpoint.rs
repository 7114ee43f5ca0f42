//! Binary checkpoint format, version 1.
//!
//! ```text
//! magic      8 bytes  "ESNLMCKP"
//! version    u32
//! header     u64 length + UTF-8 TOML (config snapshot, rng, cursor, stats)
//! tensors    u32 count, then per tensor:
//!              u16 name length + name, u8 dtype, u8 rank, u64 dims, payload
//! digest     32 bytes, SHA-256 of every preceding byte
//! ```
//!
//! All integers and payloads are little-endian. Frozen reservoir tensors are
//! stored verbatim so that loading never re-runs initialization.

use std::fs;
use std::path::Path;

use esn_core::rng::RNG_FAMILY;
use esn_core::train::EpochStats;
use esn_core::{OptimizerState, OutputHead, Reservoir, SparseMatrix};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"ESNLMCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
enum Dtype {
    F32 = 0,
    F64 = 1,
    U32 = 2,
    U64 = 3,
}

impl Dtype {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Dtype::F32,
            1 => Dtype::F64,
            2 => Dtype::U32,
            3 => Dtype::U64,
            _ => return None,
        })
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 | Dtype::U32 => 4,
            Dtype::F64 | Dtype::U64 => 8,
        }
    }
}

/// Position within the single training epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub batches_done: usize,
    pub total_batches: usize,
}

impl Cursor {
    pub fn is_complete(&self) -> bool {
        self.batches_done == self.total_batches
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Snapshot of the run configuration, without the output directory.
    pub config: RunConfig,
    pub cursor: Cursor,
    pub stats: EpochStats,
    pub reservoir: Reservoir,
    pub head: OutputHead<f32>,
    pub optimizer: OptimizerState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    rng_family: String,
    seed: u64,
    shuffle_seed: u64,
    cursor: Cursor,
    stats_batches: usize,
    stats_tokens: u64,
    /// `f64::to_bits` in hex, so the value survives text exactly.
    stats_batch_nll_sum: String,
    measured_spectral_radius: String,
    optimizer_steps: u64,
    config: RunConfig,
}

fn f64_hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn parse_f64_hex(s: &str) -> Option<f64> {
    u64::from_str_radix(s, 16).ok().map(f64::from_bits)
}

struct Writer {
    buf: Vec<u8>,
    count: u32,
}

impl Writer {
    fn tensor(&mut self, name: &str, dtype: Dtype, dims: &[usize], payload: impl FnOnce(&mut Vec<u8>)) {
        self.count += 1;
        self.buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.push(dtype as u8);
        self.buf.push(dims.len() as u8);
        for &d in dims {
            self.buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let start = self.buf.len();
        payload(&mut self.buf);
        debug_assert_eq!(self.buf.len() - start, dims.iter().product::<usize>() * dtype.width());
    }

    fn f32s(&mut self, name: &str, dims: &[usize], v: &[f32]) {
        self.tensor(name, Dtype::F32, dims, |b| {
            v.iter().for_each(|x| b.extend_from_slice(&x.to_le_bytes()))
        });
    }

    fn f64s(&mut self, name: &str, dims: &[usize], v: &[f64]) {
        self.tensor(name, Dtype::F64, dims, |b| {
            v.iter().for_each(|x| b.extend_from_slice(&x.to_le_bytes()))
        });
    }

    fn u32s(&mut self, name: &str, v: &[u32]) {
        self.tensor(name, Dtype::U32, &[v.len()], |b| {
            v.iter().for_each(|x| b.extend_from_slice(&x.to_le_bytes()))
        });
    }

    fn u64s(&mut self, name: &str, v: &[usize]) {
        self.tensor(name, Dtype::U64, &[v.len()], |b| {
            v.iter().for_each(|x| b.extend_from_slice(&(*x as u64).to_le_bytes()))
        });
    }

    fn sparse(&mut self, prefix: &str, m: &SparseMatrix) {
        let (row_ptr, col_idx, values) = m.csr_parts();
        self.u64s(&format!("{prefix}.shape"), &[m.rows(), m.cols()]);
        self.u64s(&format!("{prefix}.row_ptr"), row_ptr);
        self.u32s(&format!("{prefix}.col_idx"), col_idx);
        self.f32s(&format!("{prefix}.values"), &[values.len()], values);
    }
}

struct Tensor<'a> {
    name: String,
    dtype: Dtype,
    dims: Vec<usize>,
    data: &'a [u8],
}

impl Tensor<'_> {
    fn f32s(&self) -> Vec<f32> {
        self.data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }
    fn f64s(&self) -> Vec<f64> {
        self.data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }
    fn u32s(&self) -> Vec<u32> {
        self.data
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }
    fn u64s(&self) -> Vec<usize> {
        self.data
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or("truncated file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> std::result::Result<Tensor<'a>, String> {
        let name_len = self.u16()? as usize;
        let name = String::from_utf8(self.take(name_len)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
        let dtype = Dtype::from_u8(self.u8()?).ok_or_else(|| format!("tensor `{name}` has an unknown dtype"))?;
        let rank = self.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u64()? as usize);
        }
        let len = dims
            .iter()
            .try_fold(dtype.width(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| format!("tensor `{name}` is too large"))?;
        let data = self.take(len)?;
        Ok(Tensor {
            name,
            dtype,
            dims,
            data,
        })
    }
}

impl Checkpoint {
    /// Serializes the checkpoint, digest included.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut config = self.config.clone();
        config.out_dir = None;
        let header = Header {
            rng_family: RNG_FAMILY.to_string(),
            seed: config.seed,
            shuffle_seed: config.shuffle_seed(),
            cursor: self.cursor,
            stats_batches: self.stats.batches,
            stats_tokens: self.stats.tokens,
            stats_batch_nll_sum: f64_hex(self.stats.batch_nll_sum),
            measured_spectral_radius: f64_hex(self.reservoir.measured_spectral_radius()),
            optimizer_steps: self.optimizer.step_count,
            config,
        };
        let header = toml::to_string(&header).expect("header serializes");

        let mut w = Writer {
            buf: Vec::new(),
            count: 0,
        };
        w.buf.extend_from_slice(MAGIC);
        w.buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        w.buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        w.buf.extend_from_slice(header.as_bytes());
        let count_at = w.buf.len();
        w.buf.extend_from_slice(&0u32.to_le_bytes());

        let (n, v, r) = (self.head.state_size(), self.head.vocab_size(), self.head.rank());
        w.sparse("w_in", self.reservoir.w_in());
        w.sparse("w_rec", self.reservoir.w_rec());
        w.f32s("leak", &[n], self.reservoir.leak());
        w.f32s("head.a", &[v, r], &self.head.a_mat);
        w.f32s("head.b", &[r, n], &self.head.b_mat);
        w.f32s("head.bias", &[v], &self.head.bias);
        let dims: [&[usize]; 3] = [&[v, r], &[r, n], &[v]];
        for (i, suffix) in ["a", "b", "bias"].iter().enumerate() {
            w.f64s(&format!("adam.m.{suffix}"), dims[i], &self.optimizer.first_moment[i]);
            w.f64s(&format!("adam.v.{suffix}"), dims[i], &self.optimizer.second_moment[i]);
        }

        let count = w.count;
        let mut buf = w.buf;
        buf[count_at..count_at + 4].copy_from_slice(&count.to_le_bytes());
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    /// Hex SHA-256 of the serialized body, as stored in the trailer.
    pub fn digest(&self) -> String {
        let bytes = self.to_bytes();
        hex::encode(&bytes[bytes.len() - 32..])
    }

    /// Writes atomically via a temporary sibling file; returns the digest.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, &bytes).map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))?;
        Ok(hex::encode(&bytes[bytes.len() - 32..]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| CliError::checkpoint(path, reason))
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
            return Err("not a checkpoint file (bad magic)".into());
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(format!(
                "unsupported format version {version} (this build reads {FORMAT_VERSION})"
            ));
        }
        let (body, stored) = bytes.split_at(bytes.len() - 32);
        let actual = Sha256::digest(body);
        if actual.as_slice() != stored {
            return Err(format!(
                "digest mismatch: stored {}, computed {}",
                hex::encode(stored),
                hex::encode(actual)
            ));
        }

        let mut rd = Reader { bytes: body, pos: 12 };
        let header_len = rd.u64()? as usize;
        let header = std::str::from_utf8(rd.take(header_len)?).map_err(|_| "header is not UTF-8")?;
        let header: Header = toml::from_str(header).map_err(|e| format!("header: {e}"))?;
        if header.rng_family != RNG_FAMILY {
            return Err(format!("rng family `{}` is not {RNG_FAMILY}", header.rng_family));
        }
        let count = rd.u32()?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            tensors.push(rd.tensor()?);
        }
        if rd.pos != body.len() {
            return Err("trailing bytes after the last tensor".into());
        }
        let get = |name: &str, dtype: Dtype| -> std::result::Result<&Tensor, String> {
            let t = tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| format!("missing tensor `{name}`"))?;
            if t.dtype != dtype {
                return Err(format!("tensor `{name}` has dtype {:?}, expected {dtype:?}", t.dtype));
            }
            Ok(t)
        };
        let sparse = |prefix: &str| -> std::result::Result<SparseMatrix, String> {
            let shape = get(&format!("{prefix}.shape"), Dtype::U64)?.u64s();
            if shape.len() != 2 {
                return Err(format!("`{prefix}.shape` must hold two dimensions"));
            }
            SparseMatrix::from_csr(
                shape[0],
                shape[1],
                get(&format!("{prefix}.row_ptr"), Dtype::U64)?.u64s(),
                get(&format!("{prefix}.col_idx"), Dtype::U32)?.u32s(),
                get(&format!("{prefix}.values"), Dtype::F32)?.f32s(),
            )
            .map_err(|e| format!("`{prefix}`: {e}"))
        };

        let config = header.config;
        config.validate().map_err(|e| format!("config snapshot: {e}"))?;
        let hp = config.hyperparams();
        let (n, v, r) = (hp.state_size, hp.vocab_size, hp.output_rank);
        let radius = parse_f64_hex(&header.measured_spectral_radius).ok_or("bad measured_spectral_radius")?;
        let reservoir = Reservoir::from_parts(
            hp,
            sparse("w_in")?,
            sparse("w_rec")?,
            get("leak", Dtype::F32)?.f32s(),
            radius,
        )
        .map_err(|e| e.to_string())?;

        let shaped = |name: &str, dtype: Dtype, dims: &[usize]| -> std::result::Result<&Tensor, String> {
            let t = get(name, dtype)?;
            if t.dims != dims {
                return Err(format!("tensor `{name}` has shape {:?}, expected {dims:?}", t.dims));
            }
            Ok(t)
        };
        let head = OutputHead::from_parts(
            v,
            r,
            n,
            shaped("head.a", Dtype::F32, &[v, r])?.f32s(),
            shaped("head.b", Dtype::F32, &[r, n])?.f32s(),
            shaped("head.bias", Dtype::F32, &[v])?.f32s(),
        )
        .map_err(|e| e.to_string())?;

        let mut optimizer = OptimizerState::new(config.optimizer(), &head);
        optimizer.step_count = header.optimizer_steps;
        let dims: [&[usize]; 3] = [&[v, r], &[r, n], &[v]];
        for (i, suffix) in ["a", "b", "bias"].iter().enumerate() {
            optimizer.first_moment[i] = shaped(&format!("adam.m.{suffix}"), Dtype::F64, dims[i])?.f64s();
            optimizer.second_moment[i] = shaped(&format!("adam.v.{suffix}"), Dtype::F64, dims[i])?.f64s();
        }

        let stats = EpochStats {
            batches: header.stats_batches,
            tokens: header.stats_tokens,
            batch_nll_sum: parse_f64_hex(&header.stats_batch_nll_sum).ok_or("bad stats_batch_nll_sum")?,
        };
        if header.cursor.batches_done > header.cursor.total_batches || stats.batches != header.cursor.batches_done {
            return Err("cursor disagrees with the recorded statistics".into());
        }
        Ok(Self {
            config,
            cursor: header.cursor,
            stats,
            reservoir,
            head,
            optimizer,
        })
    }
}
