//! Model inspection: weight histograms, quantization diagnostics, and
//! storage size accounting.

use crate::error::Result;
use crate::layer::Network;
use crate::matrix::Matrix;
use crate::packed::{FrozenWeights, InferenceModel};
use crate::quant::{mean_cosine_similarity, ternary_quantize};

/// Number of uniform histogram bins over [-1, 1].
pub const HIST_BINS: usize = 101;

/// Radius around each ternary mode used by the mass diagnostic.
pub const MODE_RADIUS: f64 = 0.05;

/// Fixed-range weight histogram. Unit-norm columns bound entries to
/// [-1, 1], so the bins are stable across runs and diffable.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `HIST_BINS + 1` bin edges from -1 to 1.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn of_values(values: impl Iterator<Item = f64>) -> Histogram {
        let edges: Vec<f64> = (0..=HIST_BINS)
            .map(|k| -1.0 + 2.0 * k as f64 / HIST_BINS as f64)
            .collect();
        let mut counts = vec![0u64; HIST_BINS];
        for v in values {
            let pos = (v + 1.0) / 2.0 * HIST_BINS as f64;
            let bin = (pos.floor() as isize).clamp(0, HIST_BINS as isize - 1) as usize;
            counts[bin] += 1;
        }
        Histogram { edges, counts }
    }
}

/// Per-layer inspection record.
#[derive(Debug, Clone)]
pub struct LayerInspection {
    pub index: usize,
    pub rows: usize,
    pub cols: usize,
    pub kind: &'static str,
    pub quantize_eligible: bool,
    pub delta: f64,
    pub sparsity: f64,
    pub cosine: f64,
    /// Fraction of entries within [`MODE_RADIUS`] of one of the three
    /// ternary modes {-alpha_j, 0, +alpha_j} of its column.
    pub mode_mass: f64,
    pub dense_bytes: usize,
    pub packed_code_bytes: usize,
    pub alphas: Vec<f64>,
    pub histogram: Histogram,
}

fn mode_mass(w: &Matrix, alphas: &[f64]) -> f64 {
    let mut hits = 0usize;
    for j in 0..w.cols() {
        let alpha = alphas[j];
        for &v in w.col(j) {
            let d = v.abs().min((v - alpha).abs()).min((v + alpha).abs());
            if d <= MODE_RADIUS {
                hits += 1;
            }
        }
    }
    hits as f64 / w.len() as f64
}

/// Inspects a training-engine network at each layer's current threshold.
pub fn inspect_network(net: &Network) -> Result<Vec<LayerInspection>> {
    let mut out = Vec::with_capacity(net.num_layers());
    for (index, layer) in net.layers().iter().enumerate() {
        let w = layer.weights();
        let t = ternary_quantize(w, layer.delta_bar())?;
        let mn = w.len();
        out.push(LayerInspection {
            index,
            rows: w.rows(),
            cols: w.cols(),
            kind: match layer.mode() {
                crate::layer::LayerMode::FullPrecision => "full_precision",
                crate::layer::LayerMode::Ternary => "ternary",
            },
            quantize_eligible: layer.quantize_eligible(),
            delta: layer.delta_bar(),
            sparsity: t.zero_fraction(),
            cosine: mean_cosine_similarity(w, &t)?,
            mode_mass: mode_mass(w, t.alphas()),
            dense_bytes: mn * 8,
            packed_code_bytes: mn.div_ceil(4),
            alphas: t.alphas().to_vec(),
            histogram: Histogram::of_values(w.data().iter().copied()),
        })
    }
    Ok(out)
}

/// Inspects a packed model. Ternary layers histogram their reconstructed
/// values; their stored weights coincide with the quantization, so the
/// cosine diagnostic is 1 by construction.
pub fn inspect_model(model: &InferenceModel) -> Result<Vec<LayerInspection>> {
    let mut out = Vec::with_capacity(model.num_layers());
    for (index, layer) in model.layers().iter().enumerate() {
        match &layer.weights {
            FrozenWeights::Dense(w) => {
                let mn = w.len();
                let t = ternary_quantize(w, 0.0)?;
                out.push(LayerInspection {
                    index,
                    rows: w.rows(),
                    cols: w.cols(),
                    kind: "dense",
                    quantize_eligible: false,
                    delta: 0.0,
                    sparsity: t.zero_fraction(),
                    cosine: mean_cosine_similarity(w, &t)?,
                    mode_mass: mode_mass(w, t.alphas()),
                    dense_bytes: mn * 8,
                    packed_code_bytes: mn.div_ceil(4),
                    alphas: t.alphas().to_vec(),
                    histogram: Histogram::of_values(w.data().iter().copied()),
                });
            }
            FrozenWeights::Ternary(p) => {
                let t = p.unpack()?;
                let rec = t.reconstruct();
                let mn = rec.len();
                out.push(LayerInspection {
                    index,
                    rows: p.rows(),
                    cols: p.cols(),
                    kind: "ternary",
                    quantize_eligible: true,
                    delta: 0.0,
                    sparsity: t.zero_fraction(),
                    cosine: 1.0,
                    mode_mass: 1.0,
                    dense_bytes: mn * 8,
                    packed_code_bytes: p.code_bytes(),
                    alphas: p.alphas().to_vec(),
                    histogram: Histogram::of_values(rec.data().iter().copied()),
                });
            }
        }
    }
    Ok(out)
}
