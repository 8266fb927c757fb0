//! Parameter checkpoints.
//!
//! Layout: the 8-byte magic `EQBCKPT1`, a little-endian `u64` header length,
//! a JSON header, then little-endian `f32` data. The data section holds every
//! tensor in header order, followed by the Adam first and second moments in
//! the same order when optimizer state is present.

use std::path::Path;

use equiboost_core::equivariant::{LearnerConfig, LearnerParams, ParamTensor};
use equiboost_core::optim::{Adam, AdamConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::error::{AppError, AppResult, ParseError};
use crate::fsutil::write_atomic;

pub const MAGIC: &[u8; 8] = b"EQBCKPT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
}

/// Position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte key, hex.
    pub seed: String,
    pub stream: u64,
    /// Word position as a decimal string (128-bit).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: hex(&rng.get_seed()), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, String> {
        let bytes = unhex(&self.seed).filter(|b| b.len() == 32).ok_or("rng seed must be 64 hex digits")?;
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&bytes);
        let pos: u128 = self.word_pos.parse().map_err(|_| "rng word position is not an integer")?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Where an interrupted training run stands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainProgress {
    /// Completed training iterations, including skipped updates.
    pub iteration: u64,
    pub rng: RngState,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format: u32,
    config_hash: String,
    learner: LearnerConfig,
    tensors: Vec<TensorInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimizerHeader>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    progress: Option<TrainProgress>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: LearnerParams,
    pub optimizer: Option<Adam>,
    pub progress: Option<TrainProgress>,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok()).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Hash of the learner layout; a checkpoint only loads into the layout it was written for.
pub fn config_hash(config: &LearnerConfig) -> String {
    sha256_hex(serde_json::to_string(config).expect("config serializes").as_bytes())
}

fn push_f32(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn bad(msg: impl Into<String>) -> ParseError {
    ParseError::new(0, msg)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let header = Header {
            format: FORMAT_VERSION,
            config_hash: config_hash(&p.config),
            learner: p.config.clone(),
            tensors: p.tensors.iter().map(|t| TensorInfo { name: t.name.clone(), rows: t.rows, cols: t.cols }).collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader { config: o.config.clone(), step: o.step }),
            progress: self.progress.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 12 * p.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &p.tensors {
            push_f32(&mut out, &t.data);
        }
        if let Some(o) = &self.optimizer {
            for m in o.first_moment.iter().chain(&o.second_moment) {
                push_f32(&mut out, m);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ParseError> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let end = usize::try_from(len).ok().and_then(|l| l.checked_add(16)).filter(|&e| e <= bytes.len());
        let end = end.ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..end]).map_err(|e| bad(format!("header: {e}")))?;
        if header.format != FORMAT_VERSION {
            return Err(bad(format!("unsupported checkpoint format {}", header.format)));
        }
        if header.config_hash != config_hash(&header.learner) {
            return Err(bad("config hash does not match the stored learner config"));
        }
        let data = &bytes[end..];
        if !data.len().is_multiple_of(4) {
            return Err(bad("data section is not a whole number of f32 values"));
        }
        let mut values = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let count: usize = header.tensors.iter().map(|t| t.rows * t.cols).sum();
        let expected = if header.optimizer.is_some() { 3 * count } else { count };
        if data.len() / 4 != expected {
            return Err(bad(format!("data section holds {} values, header implies {expected}", data.len() / 4)));
        }
        let mut take = |t: &TensorInfo| -> Vec<f64> { values.by_ref().take(t.rows * t.cols).collect() };
        let tensors: Vec<ParamTensor> = header
            .tensors
            .iter()
            .map(|t| ParamTensor { name: t.name.clone(), rows: t.rows, cols: t.cols, data: take(t) })
            .collect();
        let params = LearnerParams { config: header.learner, tensors };
        params.check_layout().map_err(|e| bad(e.to_string()))?;
        if !params.is_finite() {
            return Err(bad("non-finite parameter values"));
        }
        let optimizer = header.optimizer.map(|o| {
            let first_moment = header.tensors.iter().map(&mut take).collect();
            let second_moment = header.tensors.iter().map(&mut take).collect();
            Adam { config: o.config, first_moment, second_moment, step: o.step }
        });
        Ok(Checkpoint { params, optimizer, progress: header.progress })
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        write_atomic(path, &self.to_bytes())
    }

    /// Loads a checkpoint and returns it with the SHA-256 of the file.
    pub fn load(path: &Path) -> AppResult<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => AppError::missing("checkpoint", path),
            _ => AppError::io(path.display(), e),
        })?;
        let ckpt = Self::from_bytes(&bytes).map_err(|e| AppError::parse(path, e))?;
        Ok((ckpt, sha256_hex(&bytes)))
    }
}
