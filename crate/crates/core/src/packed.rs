//! 2-bit packed ternary storage, the multiply-free inference kernel, and
//! the exported model format.
//!
//! Codes: `0b00` = 0, `0b01` = +1, `0b10` = -1; `0b11` is reserved and
//! rejected on decode. Entry `k` in column-major order occupies bits
//! `2*(k % 4)` and `2*(k % 4) + 1` of byte `k / 4`; trailing pad bits are
//! zero. The packed matvec runs the same signed accumulation as the
//! in-memory ternary kernel, so exported models reproduce training-engine
//! inference bit for bit.

use std::path::Path;

use crate::error::{Error, Result};
use crate::layer::{normalize_input, Activation, LayerMode, Network};
use crate::matrix::Matrix;
use crate::quant::{ternary_quantize, TernaryColumnSet};

const MAGIC: &[u8; 4] = b"HTQ1";
const VERSION: u32 = 1;

const KIND_DENSE: u8 = 0;
const KIND_TERNARY: u8 = 1;

const ACT_RELU: u8 = 0;
const ACT_IDENTITY: u8 = 1;

/// Packs a sign sequence into 2-bit codes, padding the final byte with
/// zeros.
pub fn pack_signs(signs: &[i8]) -> Vec<u8> {
    let mut out = vec![0u8; signs.len().div_ceil(4)];
    for (k, &s) in signs.iter().enumerate() {
        let code: u8 = match s {
            0 => 0b00,
            1 => 0b01,
            -1 => 0b10,
            other => panic!("invalid ternary sign {other}"),
        };
        out[k / 4] |= code << (2 * (k % 4));
    }
    out
}

/// Inverse of [`pack_signs`]; reports the byte offset of any reserved
/// `0b11` code.
pub fn unpack_signs(codes: &[u8], count: usize) -> Result<Vec<i8>> {
    assert!(codes.len() >= count.div_ceil(4), "code buffer too short");
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let code = (codes[k / 4] >> (2 * (k % 4))) & 0b11;
        out.push(match code {
            0b00 => 0,
            0b01 => 1,
            0b10 => -1,
            _ => return Err(Error::CorruptCode { offset: k / 4 }),
        });
    }
    Ok(out)
}

/// Bit-exact 2-bit encoding of a ternary matrix with per-column scales.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedTernaryMatrix {
    rows: usize,
    cols: usize,
    codes: Vec<u8>,
    alphas: Vec<f64>,
}

impl PackedTernaryMatrix {
    pub fn pack(t: &TernaryColumnSet) -> Self {
        PackedTernaryMatrix {
            rows: t.rows(),
            cols: t.cols(),
            codes: pack_signs(t.signs()),
            alphas: t.alphas().to_vec(),
        }
    }

    /// Rebuilds from raw parts, validating code values and column support.
    pub fn from_parts(rows: usize, cols: usize, codes: Vec<u8>, alphas: Vec<f64>) -> Result<Self> {
        if codes.len() != (rows * cols).div_ceil(4) {
            return Err(Error::DimensionMismatch {
                context: "packed codes",
                expected: (rows * cols).div_ceil(4),
                actual: codes.len(),
            });
        }
        if alphas.len() != cols {
            return Err(Error::DimensionMismatch {
                context: "packed alphas",
                expected: cols,
                actual: alphas.len(),
            });
        }
        let packed = PackedTernaryMatrix {
            rows,
            cols,
            codes,
            alphas,
        };
        // surfaces reserved codes eagerly, with their byte offset
        packed.unpack()?;
        Ok(packed)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Number of code-payload bytes, `ceil(rows*cols/4)`.
    pub fn code_bytes(&self) -> usize {
        self.codes.len()
    }

    pub fn unpack(&self) -> Result<TernaryColumnSet> {
        let signs = unpack_signs(&self.codes, self.rows * self.cols)?;
        TernaryColumnSet::from_parts(self.rows, self.cols, signs, self.alphas.clone())
    }

    /// Multiply-free matvec: per column, signed accumulation of `x` in
    /// ascending row order, then one multiply by the column scale. The
    /// arithmetic matches [`TernaryColumnSet::matvec`] operation for
    /// operation.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch {
                context: "packed matvec",
                expected: self.rows,
                actual: x.len(),
            });
        }
        let mut out = Vec::with_capacity(self.cols);
        for j in 0..self.cols {
            let base = j * self.rows;
            let mut acc = 0.0;
            for i in 0..self.rows {
                let k = base + i;
                let code = (self.codes[k / 4] >> (2 * (k % 4))) & 0b11;
                match code {
                    0b01 => acc += x[i],
                    0b10 => acc -= x[i],
                    0b00 => {}
                    _ => return Err(Error::CorruptCode { offset: k / 4 }),
                }
            }
            out.push(self.alphas[j] * acc);
        }
        Ok(out)
    }
}

/// One frozen inference layer.
#[derive(Debug, Clone)]
pub enum FrozenWeights {
    Dense(Matrix),
    Ternary(PackedTernaryMatrix),
}

#[derive(Debug, Clone)]
pub struct FrozenLayer {
    pub weights: FrozenWeights,
    pub activation: Activation,
}

impl FrozenLayer {
    pub fn input_dim(&self) -> usize {
        match &self.weights {
            FrozenWeights::Dense(m) => m.rows(),
            FrozenWeights::Ternary(p) => p.rows(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.weights {
            FrozenWeights::Dense(m) => m.cols(),
            FrozenWeights::Ternary(p) => p.cols(),
        }
    }
}

/// Immutable packed model; safe to share across threads.
#[derive(Debug, Clone)]
pub struct InferenceModel {
    layers: Vec<FrozenLayer>,
}

impl InferenceModel {
    /// Freezes a trained network. Every quantize-eligible layer must be in
    /// ternary mode; ineligible layers are stored dense.
    pub fn from_network(net: &Network) -> Result<Self> {
        let mut layers = Vec::with_capacity(net.num_layers());
        for (idx, layer) in net.layers().iter().enumerate() {
            let weights = if layer.quantize_eligible() {
                if layer.mode() != LayerMode::Ternary {
                    return Err(Error::NotTernary { layer: idx });
                }
                let t = ternary_quantize(layer.weights(), layer.delta_bar()).map_err(|e| {
                    match e {
                        Error::AllZeroColumn { col, delta } => Error::AllZeroColumnInLayer {
                            layer: idx,
                            col,
                            delta,
                        },
                        other => other,
                    }
                })?;
                FrozenWeights::Ternary(PackedTernaryMatrix::pack(&t))
            } else {
                FrozenWeights::Dense(layer.weights().clone())
            };
            layers.push(FrozenLayer {
                weights,
                activation: layer.activation(),
            });
        }
        Ok(InferenceModel { layers })
    }

    pub fn layers(&self) -> &[FrozenLayer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Forward pass with the same per-layer input normalization as the
    /// training engine.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut carry = x.to_vec();
        for layer in &self.layers {
            let unit = normalize_input(&carry)?;
            let preact = match &layer.weights {
                FrozenWeights::Dense(m) => m.matvec(&unit)?,
                FrozenWeights::Ternary(p) => p.matvec(&unit)?,
            };
            carry = preact.iter().map(|&z| layer.activation.apply(z)).collect();
        }
        Ok(carry)
    }

    /// Top-1 class; argmax ties break to the lowest index.
    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        let logits = self.forward(x)?;
        let mut best = 0usize;
        for (k, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = k;
            }
        }
        Ok(best)
    }

    /// Serializes to the packed model format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            match &layer.weights {
                FrozenWeights::Dense(m) => {
                    bytes.push(KIND_DENSE);
                    bytes.extend_from_slice(&(m.rows() as u32).to_le_bytes());
                    bytes.extend_from_slice(&(m.cols() as u32).to_le_bytes());
                    for v in m.data() {
                        bytes.extend_from_slice(&v.to_le_bytes());
                    }
                }
                FrozenWeights::Ternary(p) => {
                    bytes.push(KIND_TERNARY);
                    bytes.extend_from_slice(&(p.rows() as u32).to_le_bytes());
                    bytes.extend_from_slice(&(p.cols() as u32).to_le_bytes());
                    for a in p.alphas() {
                        bytes.extend_from_slice(&a.to_le_bytes());
                    }
                    bytes.extend_from_slice(p.codes());
                }
            }
            bytes.push(match layer.activation {
                Activation::Relu => ACT_RELU,
                Activation::Identity => ACT_IDENTITY,
            });
        }
        let crc = crc32c::crc32c(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        bytes
    }

    /// Parses the packed model format.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 4 + 4 {
            return Err(Error::Truncated {
                context: "packed model",
                needed: 16 - bytes.len(),
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                context: "packed model",
                expected: "HTQ1",
            });
        }
        let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let computed_crc = crc32c::crc32c(&bytes[..bytes.len() - 4]);
        if stored_crc != computed_crc {
            return Err(Error::ChecksumMismatch {
                context: "packed model",
                stored: stored_crc,
                computed: computed_crc,
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::VersionMismatch {
                context: "packed model",
                found: version,
                expected: VERSION,
            });
        }
        let layer_count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[..bytes.len() - 4];
        let mut offset = 12usize;

        let take = |offset: &mut usize, n: usize| -> Result<&[u8]> {
            if body.len() < *offset + n {
                return Err(Error::Truncated {
                    context: "packed model payload",
                    needed: *offset + n - body.len(),
                });
            }
            let slice = &body[*offset..*offset + n];
            *offset += n;
            Ok(slice)
        };

        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let kind = take(&mut offset, 1)?[0];
            let rows = u32::from_le_bytes(take(&mut offset, 4)?.try_into().unwrap()) as usize;
            let cols = u32::from_le_bytes(take(&mut offset, 4)?.try_into().unwrap()) as usize;
            let weights = match kind {
                KIND_DENSE => {
                    let data = take(&mut offset, rows * cols * 8)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    FrozenWeights::Dense(Matrix::from_vec(rows, cols, data)?)
                }
                KIND_TERNARY => {
                    let alphas: Vec<f64> = take(&mut offset, cols * 8)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    let code_len = (rows * cols).div_ceil(4);
                    let code_start = offset;
                    let codes = take(&mut offset, code_len)?.to_vec();
                    FrozenWeights::Ternary(
                        PackedTernaryMatrix::from_parts(rows, cols, codes, alphas).map_err(
                            |e| match e {
                                // report the absolute file offset of the bad byte
                                Error::CorruptCode { offset: rel } => Error::CorruptCode {
                                    offset: code_start + rel,
                                },
                                other => other,
                            },
                        )?,
                    )
                }
                other => {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "unknown layer kind {other}"
                    )))
                }
            };
            let activation = match take(&mut offset, 1)?[0] {
                ACT_RELU => Activation::Relu,
                ACT_IDENTITY => Activation::Identity,
                other => {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "unknown activation tag {other}"
                    )))
                }
            };
            layers.push(FrozenLayer {
                weights,
                activation,
            });
        }
        if offset != body.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{} trailing bytes in packed model",
                body.len() - offset
            )));
        }
        Ok(InferenceModel { layers })
    }
}

/// Freezes and writes a trained network as a packed model file.
pub fn export_model(net: &Network, path: &Path) -> Result<()> {
    let model = InferenceModel::from_network(net)?;
    let bytes = model.to_bytes();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a packed model file.
pub fn import_model(path: &Path) -> Result<InferenceModel> {
    InferenceModel::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::HyperLayer;
    use crate::rng::Rng;

    #[test]
    fn pack_hand_byte() {
        // column-major (+1, -1, 0, +1) -> 0b01_00_10_01 = 0x49
        assert_eq!(pack_signs(&[1, -1, 0, 1]), vec![0x49]);
    }

    #[test]
    fn pack_all_zero_byte() {
        assert_eq!(pack_signs(&[0, 0, 0, 0]), vec![0x00]);
    }

    #[test]
    fn pack_padding() {
        let codes = pack_signs(&[1, 1, 1, 1, 1]);
        assert_eq!(codes.len(), 2);
        assert_eq!(codes[1] & 0b1111_1100, 0);
    }

    #[test]
    fn unpack_hand_byte() {
        assert_eq!(unpack_signs(&[0x49], 4).unwrap(), vec![1, -1, 0, 1]);
    }

    #[test]
    fn unpack_reserved_code() {
        match unpack_signs(&[0b0000_1100], 4) {
            Err(Error::CorruptCode { offset: 0 }) => {}
            other => panic!("expected corrupt-code error, got {other:?}"),
        }
    }

    #[test]
    fn exhaustive_one_byte_patterns_round_trip() {
        // all 3^4 sign patterns of a single byte
        for a in -1i8..=1 {
            for b in -1i8..=1 {
                for c in -1i8..=1 {
                    for d in -1i8..=1 {
                        let signs = vec![a, b, c, d];
                        let codes = pack_signs(&signs);
                        assert_eq!(unpack_signs(&codes, 4).unwrap(), signs);
                    }
                }
            }
        }
    }

    #[test]
    fn packed_matvec_hand_value() {
        let w = Matrix::from_vec(3, 1, vec![0.6, -0.7, 0.0]).unwrap();
        let t = ternary_quantize(&w, 0.5).unwrap();
        let p = PackedTernaryMatrix::pack(&t);
        let y = p.matvec(&[0.2, 0.5, 0.3]).unwrap();
        assert!((y[0] - (0.2 - 0.5) / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn packed_matvec_zero_input() {
        let w = Matrix::from_vec(4, 2, vec![0.9, -0.8, 0.1, 0.2, 0.5, 0.5, -0.5, -0.5]).unwrap();
        let t = ternary_quantize(&w, 0.05).unwrap();
        let p = PackedTernaryMatrix::pack(&t);
        assert_eq!(p.matvec(&[0.0; 4]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn packed_matvec_matches_in_memory_bit_for_bit() {
        let mut rng = Rng::from_seed(71);
        for _ in 0..100 {
            let rows = 2 + rng.next_below(20);
            let cols = 1 + rng.next_below(10);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
            let w = Matrix::from_vec(rows, cols, data)
                .unwrap()
                .renormalize_columns()
                .unwrap();
            let t = match ternary_quantize(&w, 0.1) {
                Ok(t) => t,
                Err(_) => continue,
            };
            let p = PackedTernaryMatrix::pack(&t);
            let x: Vec<f64> = (0..rows).map(|_| rng.normal()).collect();
            let fast = t.matvec(&x).unwrap();
            let packed = p.matvec(&x).unwrap();
            assert_eq!(fast, packed, "packed kernel must match in-memory kernel");
        }
    }

    #[test]
    fn export_requires_ternary_mode() {
        let mut rng = Rng::from_seed(73);
        let net = Network::random(
            &[4, 6, 3],
            &[Activation::Relu, Activation::Identity],
            Some(&[true, false]),
            &mut rng,
        )
        .unwrap();
        match InferenceModel::from_network(&net) {
            Err(Error::NotTernary { layer: 0 }) => {}
            other => panic!("expected not-ternary error, got {other:?}"),
        }
    }

    #[test]
    fn model_bytes_round_trip() {
        let mut rng = Rng::from_seed(79);
        let mut net = Network::random(
            &[4, 6, 3],
            &[Activation::Relu, Activation::Identity],
            Some(&[false, true]),
            &mut rng,
        )
        .unwrap();
        {
            let layer = &mut net.layers_mut()[1];
            layer.set_mode(LayerMode::Ternary);
            layer.set_delta_bar(0.2);
        }
        let model = InferenceModel::from_network(&net).unwrap();
        let bytes = model.to_bytes();
        let back = InferenceModel::from_bytes(&bytes).unwrap();
        assert_eq!(bytes, back.to_bytes());

        // imported model reproduces in-memory ternary inference bit for bit
        let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let expect = net.forward_infer(&x, true).unwrap();
        let got = back.forward(&x).unwrap();
        assert_eq!(expect, got);
    }

    #[test]
    fn corrupted_model_detected() {
        let mut rng = Rng::from_seed(83);
        let w = Matrix::from_vec(4, 2, (0..8).map(|_| rng.normal()).collect()).unwrap();
        let mut layer = HyperLayer::new(w, Activation::Identity, true).unwrap();
        layer.set_mode(LayerMode::Ternary);
        layer.set_delta_bar(0.1);
        let net = Network::new(vec![layer]).unwrap();
        let mut bytes = InferenceModel::from_network(&net).unwrap().to_bytes();
        bytes[14] ^= 0x55;
        assert!(matches!(
            InferenceModel::from_bytes(&bytes),
            Err(Error::ChecksumMismatch { .. })
        ));
    }
}
