//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the training and inference engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix data length {actual} does not match {rows}x{cols} = {expected}")]
    BadShape {
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },

    #[error("column {col} is degenerate (L2 norm {norm:e} <= {eps:e})")]
    DegenerateColumn { col: usize, norm: f64, eps: f64 },

    #[error("input vector is degenerate (L2 norm {norm:e} <= {eps:e})")]
    DegenerateInput { norm: f64, eps: f64 },

    #[error("input to layer is not unit-norm (L2 norm {norm}, tolerance {tol})")]
    UnnormalizedInput { norm: f64, tol: f64 },

    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    #[error("sparsity target t = {t} outside the open interval (0, 1)")]
    SparsityOutOfRange { t: f64 },

    #[error("column {col} quantized to all zeros (threshold {delta} too large)")]
    AllZeroColumn { col: usize, delta: f64 },

    #[error("layer {layer}: column {col} quantized to all zeros (threshold {delta} too large)")]
    AllZeroColumnInLayer { layer: usize, col: usize, delta: f64 },

    #[error("weight entry ({row},{col}) = {value} outside [-1, 1]; column norm invariant broken upstream")]
    WeightOutOfDomain { row: usize, col: usize, value: f64 },

    #[error("backward called before forward populated the caches")]
    MissingCache,

    #[error("layer {index} input dim {actual} does not chain from previous output dim {expected}")]
    LayerChainMismatch {
        index: usize,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value produced in {context}")]
    NonFinite { context: &'static str },

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: u64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("IDX magic mismatch: expected {expected:#010x}, found {found:#010x}")]
    IdxBadMagic { expected: u32, found: u32 },

    #[error("IDX payload truncated: need {needed} bytes, have {available}")]
    IdxTruncated { needed: usize, available: usize },

    #[error("IDX image/label count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("bad magic in {context}: expected {expected:?}")]
    BadMagic {
        context: &'static str,
        expected: &'static str,
    },

    #[error("unsupported {context} format version {found} (expected {expected})")]
    VersionMismatch {
        context: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("checksum mismatch in {context}: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch {
        context: &'static str,
        stored: u32,
        computed: u32,
    },

    #[error("corrupt 2-bit code 0b11 at byte offset {offset}")]
    CorruptCode { offset: usize },

    #[error("file truncated in {context}: need {needed} more bytes")]
    Truncated { context: &'static str, needed: usize },

    #[error("model is not ready for ternary export: layer {layer} is eligible but not in ternary mode")]
    NotTernary { layer: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
