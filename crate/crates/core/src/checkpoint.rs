//! Checkpoint persistence.
//!
//! Layout: magic `HLACKPT1`, u32 LE format version, u64 LE header length,
//! a JSON header (config, epoch counters, rng state, metrics tail, layer
//! metadata), one payload per layer of little-endian f64 words (weights,
//! momentum buffer, threshold), and a trailing CRC32C over every
//! preceding byte. Files are written atomically via a rename.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::layer::{Activation, HyperLayer, LayerMode, Network};
use crate::matrix::Matrix;
use crate::metrics::EpochRecord;
use crate::rng::Rng;
use crate::trainer::RunState;

const MAGIC: &[u8; 8] = b"HLACKPT1";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct LayerMeta {
    rows: usize,
    cols: usize,
    activation: Activation,
    quantize_eligible: bool,
    mode: LayerMode,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    rng_state: [u64; 4],
    pretrain_epochs_done: u64,
    finetune_epochs_done: u64,
    quantize_epochs_done: u64,
    last_record: Option<EpochRecord>,
    layers: Vec<LayerMeta>,
}

/// Serializes a run state to bytes.
pub fn to_bytes(state: &RunState, cfg: &TrainConfig) -> Result<Vec<u8>> {
    let header = Header {
        config: cfg.clone(),
        rng_state: state.rng.state(),
        pretrain_epochs_done: state.pretrain_epochs_done,
        finetune_epochs_done: state.finetune_epochs_done,
        quantize_epochs_done: state.quantize_epochs_done,
        last_record: state.last_record.clone(),
        layers: state
            .net
            .layers()
            .iter()
            .map(|l| LayerMeta {
                rows: l.weights().rows(),
                cols: l.weights().cols(),
                activation: l.activation(),
                quantize_eligible: l.quantize_eligible(),
                mode: l.mode(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for layer in state.net.layers() {
        for v in layer.weights().data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in layer.velocity().data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&layer.delta_bar().to_le_bytes());
    }
    let crc = crc32c::crc32c(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    Ok(bytes)
}

/// Writes a checkpoint atomically.
pub fn save(state: &RunState, cfg: &TrainConfig, path: &Path) -> Result<()> {
    let bytes = to_bytes(state, cfg)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Parses a checkpoint byte buffer.
pub fn from_bytes(bytes: &[u8]) -> Result<(RunState, TrainConfig)> {
    if bytes.len() < MAGIC.len() + 4 + 8 + 4 {
        return Err(Error::Truncated {
            context: "checkpoint",
            needed: MAGIC.len() + 4 + 8 + 4 - bytes.len(),
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BadMagic {
            context: "checkpoint",
            expected: "HLACKPT1",
        });
    }
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed_crc = crc32c::crc32c(&bytes[..bytes.len() - 4]);
    if stored_crc != computed_crc {
        return Err(Error::ChecksumMismatch {
            context: "checkpoint",
            stored: stored_crc,
            computed: computed_crc,
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::VersionMismatch {
            context: "checkpoint",
            found: version,
            expected: VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[..bytes.len() - 4];
    if body.len() < 20 + header_len {
        return Err(Error::Truncated {
            context: "checkpoint header",
            needed: 20 + header_len - body.len(),
        });
    }
    let header: Header = serde_json::from_slice(&body[20..20 + header_len])?;
    header.config.validate()?;

    let mut offset = 20 + header_len;
    let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
        let need = count * 8;
        if body.len() < offset + need {
            return Err(Error::Truncated {
                context: "checkpoint payload",
                needed: offset + need - body.len(),
            });
        }
        let out = body[offset..offset + need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += need;
        Ok(out)
    };

    let mut layers = Vec::with_capacity(header.layers.len());
    for meta in &header.layers {
        let weights = Matrix::from_vec(meta.rows, meta.cols, read_f64s(meta.rows * meta.cols)?)?;
        let velocity = Matrix::from_vec(meta.rows, meta.cols, read_f64s(meta.rows * meta.cols)?)?;
        let delta_bar = read_f64s(1)?[0];
        let mut layer = HyperLayer::new(weights.clone(), meta.activation, meta.quantize_eligible)?;
        layer.set_ste_rescale(header.config.ste_rescale);
        layer.restore(weights, velocity, delta_bar, meta.mode)?;
        layers.push(layer);
    }
    if offset != body.len() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{} trailing payload bytes",
            body.len() - offset
        )));
    }

    let net = Network::new(layers)?;
    let state = RunState {
        net,
        rng: Rng::from_state(header.rng_state),
        pretrain_epochs_done: header.pretrain_epochs_done,
        finetune_epochs_done: header.finetune_epochs_done,
        quantize_epochs_done: header.quantize_epochs_done,
        last_record: header.last_record,
    };
    Ok((state, header.config))
}

/// Loads a checkpoint from disk.
pub fn load(path: &Path) -> Result<(RunState, TrainConfig)> {
    from_bytes(&std::fs::read(path)?)
}
