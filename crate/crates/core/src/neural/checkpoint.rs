//! Binary checkpoint container.
//!
//! ```text
//! magic "HRNNCKPT" | u32 version | u64 header length | JSON header
//! | params f64 LE | adam m f64 LE | adam v f64 LE
//! ```

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::lstm::{CellOutput, LayerParameters, LstmShape};
use super::trainer::{StopReason, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::provenance::Provenance;

pub const MAGIC: &[u8; 8] = b"HRNNCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    shape: LstmShape,
    cell: CellOutput,
    config: TrainConfig,
    iterations: usize,
    best_iteration: usize,
    stop: StopReason,
    adam_step: u64,
    rng: ChaCha8Rng,
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: LayerParameters,
    pub config: TrainConfig,
    pub iterations: usize,
    pub best_iteration: usize,
    pub stop: StopReason,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn from_outcome(outcome: &TrainOutcome, config: &TrainConfig, provenance: Provenance) -> Self {
        Checkpoint {
            params: outcome.params.clone(),
            config: config.clone(),
            iterations: outcome.iterations,
            best_iteration: outcome.best_iteration,
            stop: outcome.stop,
            adam: outcome.adam.clone(),
            rng: outcome.rng.clone(),
            provenance,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            shape: self.params.shape,
            cell: self.params.cell,
            config: self.config.clone(),
            iterations: self.iterations,
            best_iteration: self.best_iteration,
            stop: self.stop,
            adam_step: self.adam.step,
            rng: self.rng.clone(),
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let n = self.params.values.len();
        let mut out = Vec::with_capacity(20 + json.len() + 24 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for block in [&self.params.values, &self.adam.m, &self.adam.v] {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let n = header.shape.len();
        let data = &body[hlen..];
        if data.len() != 24 * n {
            return Err(Error::Checkpoint(format!(
                "expected {} bytes of tensors for {n} parameters, found {}",
                24 * n,
                data.len()
            )));
        }
        let floats: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut params = LayerParameters::zeros(header.shape, header.cell)?;
        params.values.copy_from_slice(&floats[..n]);
        Ok(Checkpoint {
            params,
            config: header.config,
            iterations: header.iterations,
            best_iteration: header.best_iteration,
            stop: header.stop,
            adam: AdamState {
                step: header.adam_step,
                m: floats[n..2 * n].to_vec(),
                v: floats[2 * n..].to_vec(),
            },
            rng: header.rng,
            provenance: header.provenance,
        })
    }
}
