//! Hyperspherical fully-connected layers and the network container.
//!
//! A layer computes `y = phi(Wᵀx)` with unit-norm weight columns and
//! unit-norm inputs, so every pre-activation is a cosine similarity. In
//! ternary mode the forward pass swaps `W` for its ternary projection,
//! recomputed from the current weights on every call, and the backward
//! pass routes the weight gradient through the scaled straight-through
//! estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{l2_norm, Matrix, EPSILON_NORM};
use crate::quant::{ste_backward, ternary_quantize, TernaryColumnSet};
use crate::rng::Rng;

/// Unit-norm tolerance enforced on layer inputs.
const INPUT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative at `z`; the relu subgradient at 0 is taken as 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerMode {
    FullPrecision,
    Ternary,
}

/// Projects a vector onto the unit sphere.
pub fn normalize_input(x: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(x);
    if norm <= EPSILON_NORM {
        return Err(Error::DegenerateInput {
            norm,
            eps: EPSILON_NORM,
        });
    }
    Ok(x.iter().map(|v| v / norm).collect())
}

/// One hyperspherical layer.
#[derive(Debug, Clone)]
pub struct HyperLayer {
    weights: Matrix,
    velocity: Matrix,
    activation: Activation,
    quantize_eligible: bool,
    mode: LayerMode,
    delta_bar: f64,
    ste_rescale: bool,
    cached_input: Option<Vec<f64>>,
    cached_preactivation: Option<Vec<f64>>,
    cached_ternary: Option<TernaryColumnSet>,
}

impl HyperLayer {
    /// Builds a layer, renormalizing the weight columns onto the sphere.
    pub fn new(weights: Matrix, activation: Activation, quantize_eligible: bool) -> Result<Self> {
        let weights = weights.renormalize_columns()?;
        let velocity = Matrix::zeros(weights.rows(), weights.cols());
        Ok(HyperLayer {
            weights,
            velocity,
            activation,
            quantize_eligible,
            mode: LayerMode::FullPrecision,
            delta_bar: 0.0,
            ste_rescale: true,
            cached_input: None,
            cached_preactivation: None,
            cached_ternary: None,
        })
    }

    /// Laplace-initialized layer. The heavy-tailed draw mimics the
    /// magnitude distribution of trained networks before renormalization.
    pub fn random(
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        quantize_eligible: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let data: Vec<f64> = (0..input_dim * output_dim).map(|_| rng.laplace()).collect();
        let weights = Matrix::from_vec(input_dim, output_dim, data)?;
        HyperLayer::new(weights, activation, quantize_eligible)
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn velocity(&self) -> &Matrix {
        &self.velocity
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn quantize_eligible(&self) -> bool {
        self.quantize_eligible
    }

    pub fn mode(&self) -> LayerMode {
        self.mode
    }

    pub fn delta_bar(&self) -> f64 {
        self.delta_bar
    }

    pub fn ste_rescale(&self) -> bool {
        self.ste_rescale
    }

    pub fn set_mode(&mut self, mode: LayerMode) {
        self.mode = mode;
    }

    pub fn set_delta_bar(&mut self, delta: f64) {
        debug_assert!(delta >= 0.0);
        self.delta_bar = delta;
    }

    pub fn set_ste_rescale(&mut self, enabled: bool) {
        self.ste_rescale = enabled;
    }

    /// Restores persisted state (checkpoint loading).
    pub fn restore(
        &mut self,
        weights: Matrix,
        velocity: Matrix,
        delta_bar: f64,
        mode: LayerMode,
    ) -> Result<()> {
        if weights.rows() != self.weights.rows() || weights.cols() != self.weights.cols() {
            return Err(Error::DimensionMismatch {
                context: "layer restore",
                expected: self.weights.len(),
                actual: weights.len(),
            });
        }
        self.weights = weights;
        self.velocity = velocity;
        self.delta_bar = delta_bar;
        self.mode = mode;
        Ok(())
    }

    /// Quantizer at the layer's current threshold.
    pub fn ternary(&self) -> Result<TernaryColumnSet> {
        ternary_quantize(&self.weights, self.delta_bar)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.weights.rows() {
            return Err(Error::DimensionMismatch {
                context: "layer forward",
                expected: self.weights.rows(),
                actual: x.len(),
            });
        }
        let norm = l2_norm(x);
        if (norm - 1.0).abs() > INPUT_NORM_TOL {
            return Err(Error::UnnormalizedInput {
                norm,
                tol: INPUT_NORM_TOL,
            });
        }
        Ok(())
    }

    /// Training forward: caches the input and pre-activations. In ternary
    /// mode the quantizer is recomputed from the current weights.
    pub fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let preact = match self.mode {
            LayerMode::FullPrecision => {
                self.cached_ternary = None;
                self.weights.matvec(x)?
            }
            LayerMode::Ternary => {
                let t = ternary_quantize(&self.weights, self.delta_bar)?;
                let z = t.matvec(x)?;
                self.cached_ternary = Some(t);
                z
            }
        };
        let out: Vec<f64> = preact.iter().map(|&z| self.activation.apply(z)).collect();
        self.cached_input = Some(x.to_vec());
        self.cached_preactivation = Some(preact);
        Ok(out)
    }

    /// Inference forward: no caches. `use_ternary` quantizes eligible
    /// layers at their current threshold regardless of training mode.
    pub fn forward_infer(&self, x: &[f64], use_ternary: bool) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let preact = if use_ternary && self.quantize_eligible {
            ternary_quantize(&self.weights, self.delta_bar)?.matvec(x)?
        } else {
            self.weights.matvec(x)?
        };
        Ok(preact.iter().map(|&z| self.activation.apply(z)).collect())
    }

    /// Backward for the most recent forward. Returns the gradient with
    /// respect to the layer input and the weight gradient (routed through
    /// the scaled straight-through estimator in ternary mode).
    pub fn backward(&mut self, grad_out: &[f64]) -> Result<(Vec<f64>, Matrix)> {
        if grad_out.len() != self.weights.cols() {
            return Err(Error::DimensionMismatch {
                context: "layer backward",
                expected: self.weights.cols(),
                actual: grad_out.len(),
            });
        }
        let x = self.cached_input.take().ok_or(Error::MissingCache)?;
        let preact = self.cached_preactivation.take().ok_or(Error::MissingCache)?;
        let ternary = self.cached_ternary.take();

        let grad_z: Vec<f64> = preact
            .iter()
            .zip(grad_out.iter())
            .map(|(&z, &g)| self.activation.derivative(z) * g)
            .collect();

        // Gradient w.r.t. the forward weights (W or its ternary stand-in).
        let mut grad_hat = Matrix::zeros(self.weights.rows(), self.weights.cols());
        for j in 0..self.weights.cols() {
            let gz = grad_z[j];
            let col = grad_hat.col_mut(j);
            for i in 0..x.len() {
                col[i] = x[i] * gz;
            }
        }

        match self.mode {
            LayerMode::FullPrecision => {
                let grad_in = self.weights.matvec_rows(&grad_z)?;
                Ok((grad_in, grad_hat))
            }
            LayerMode::Ternary => {
                let t = ternary.ok_or(Error::MissingCache)?;
                let grad_in = t.matvec_rows(&grad_z)?;
                let grad_w = if self.ste_rescale {
                    ste_backward(&grad_hat, &self.weights)?
                } else {
                    grad_hat
                };
                Ok((grad_in, grad_w))
            }
        }
    }

    /// Snapshot of the cached (normalized) input from the last forward.
    pub fn cached_input(&self) -> Option<&[f64]> {
        self.cached_input.as_deref()
    }

    /// Momentum SGD step followed by projection back onto the sphere.
    pub fn sgd_step(
        &mut self,
        grad_w: &Matrix,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if !grad_w.all_finite() {
            return Err(Error::NonFinite {
                context: "weight gradient",
            });
        }
        for j in 0..self.weights.cols() {
            let w = self.weights.col(j);
            let g = grad_w.col(j);
            let v = self.velocity.col_mut(j);
            for i in 0..w.len() {
                v[i] = momentum * v[i] + g[i] + weight_decay * w[i];
            }
        }
        for j in 0..self.weights.cols() {
            let v = self.velocity.col(j).to_vec();
            let w = self.weights.col_mut(j);
            for i in 0..w.len() {
                w[i] -= lr * v[i];
            }
        }
        self.weights.renormalize_columns_in_place()
    }
}

/// Ordered stack of hyperspherical layers.
///
/// The container owns input normalization: every layer input, including
/// hidden activations, is projected onto the unit sphere, and the backward
/// pass chains through that projection.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<HyperLayer>,
    /// Norm of the raw vector fed to each layer's input normalization in
    /// the last training forward.
    input_norms: Vec<f64>,
}

impl Network {
    pub fn new(layers: Vec<HyperLayer>) -> Result<Self> {
        assert!(!layers.is_empty(), "network needs at least one layer");
        for k in 1..layers.len() {
            if layers[k].input_dim() != layers[k - 1].output_dim() {
                return Err(Error::LayerChainMismatch {
                    index: k,
                    expected: layers[k - 1].output_dim(),
                    actual: layers[k].input_dim(),
                });
            }
        }
        Ok(Network {
            layers,
            input_norms: Vec::new(),
        })
    }

    /// Random network over the dimension chain `dims[0] -> ... -> dims.last()`.
    ///
    /// `eligibility` of `None` applies the default policy: every layer is
    /// eligible except the first and the last.
    pub fn random(
        dims: &[usize],
        activations: &[Activation],
        eligibility: Option<&[bool]>,
        rng: &mut Rng,
    ) -> Result<Self> {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let n_layers = dims.len() - 1;
        assert_eq!(activations.len(), n_layers, "one activation per layer");
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let eligible = match eligibility {
                Some(e) => e[k],
                None => k != 0 && k != n_layers - 1,
            };
            layers.push(HyperLayer::random(
                dims[k],
                dims[k + 1],
                activations[k],
                eligible,
                rng,
            )?);
        }
        Network::new(layers)
    }

    pub fn layers(&self) -> &[HyperLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [HyperLayer] {
        &mut self.layers
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

    /// Indices of quantize-eligible layers.
    pub fn eligible_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.quantize_eligible())
            .map(|(i, _)| i)
            .collect()
    }

    fn wrap_layer_err(err: Error, layer: usize) -> Error {
        match err {
            Error::AllZeroColumn { col, delta } => Error::AllZeroColumnInLayer { layer, col, delta },
            other => other,
        }
    }

    /// Training forward with caches; returns the output logits.
    pub fn forward_train(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        self.input_norms.clear();
        let mut carry = x.to_vec();
        for idx in 0..self.layers.len() {
            let norm = l2_norm(&carry);
            if norm <= EPSILON_NORM {
                return Err(Error::DegenerateInput {
                    norm,
                    eps: EPSILON_NORM,
                });
            }
            self.input_norms.push(norm);
            let unit: Vec<f64> = carry.iter().map(|v| v / norm).collect();
            carry = self.layers[idx]
                .forward(&unit)
                .map_err(|e| Self::wrap_layer_err(e, idx))?;
        }
        Ok(carry)
    }

    /// Inference forward; pure, safe for concurrent use on a frozen net.
    pub fn forward_infer(&self, x: &[f64], use_ternary: bool) -> Result<Vec<f64>> {
        let mut carry = x.to_vec();
        for idx in 0..self.layers.len() {
            let unit = normalize_input(&carry)?;
            carry = self.layers[idx]
                .forward_infer(&unit, use_ternary)
                .map_err(|e| Self::wrap_layer_err(e, idx))?;
        }
        Ok(carry)
    }

    /// Backward for the most recent `forward_train`, returning per-layer
    /// weight gradients. Chains through each hidden input normalization.
    pub fn backward(&mut self, grad_output: &[f64]) -> Result<Vec<Matrix>> {
        if self.input_norms.len() != self.layers.len() {
            return Err(Error::MissingCache);
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.layers.len()];
        let mut g = grad_output.to_vec();
        for idx in (0..self.layers.len()).rev() {
            // The normalized input is needed after backward drains the cache.
            let unit = self.layers[idx]
                .cached_input()
                .ok_or(Error::MissingCache)?
                .to_vec();
            let (grad_in, grad_w) = self.layers[idx].backward(&g)?;
            grads[idx] = Some(grad_w);
            if idx > 0 {
                // d/dh of h/||h||: (g - (u.g) u) / ||h||.
                let norm = self.input_norms[idx];
                let mut proj = 0.0;
                for i in 0..unit.len() {
                    proj += unit[i] * grad_in[i];
                }
                g = (0..unit.len())
                    .map(|i| (grad_in[i] - proj * unit[i]) / norm)
                    .collect();
            }
        }
        self.input_norms.clear();
        Ok(grads.into_iter().map(|g| g.expect("filled above")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad, relative_error};
    use crate::loss::softmax_cross_entropy;

    #[test]
    fn normalize_input_cases() {
        assert_eq!(normalize_input(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(normalize_input(&[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(
            normalize_input(&[0.0, 0.0]),
            Err(Error::DegenerateInput { .. })
        ));
    }

    #[test]
    fn relu_gating_forward() {
        let w = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut layer = HyperLayer::new(w, Activation::Relu, false).unwrap();
        let y = layer.forward(&[-0.6, 0.8]).unwrap();
        assert_eq!(y, vec![0.0, 0.8]);
    }

    #[test]
    fn aligned_cosine_forward() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let w = Matrix::from_vec(2, 1, vec![s, s]).unwrap();
        let mut layer = HyperLayer::new(w, Activation::Identity, false).unwrap();
        let y = layer.forward(&[s, s]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ternary_forward_hand_value() {
        let w = Matrix::from_vec(3, 1, vec![0.6, 0.8, 0.0]).unwrap();
        let mut layer = HyperLayer::new(w, Activation::Identity, true).unwrap();
        layer.set_mode(LayerMode::Ternary);
        layer.set_delta_bar(0.5);
        let y = layer.forward(&[1.0, 0.0, 0.0]).unwrap();
        assert!((y[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_input_rejected() {
        let w = Matrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        let mut layer = HyperLayer::new(w, Activation::Identity, false).unwrap();
        assert!(matches!(
            layer.forward(&[2.0, 0.0]),
            Err(Error::UnnormalizedInput { .. })
        ));
    }

    #[test]
    fn backward_without_forward_errors() {
        let w = Matrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        let mut layer = HyperLayer::new(w, Activation::Identity, false).unwrap();
        assert!(matches!(layer.backward(&[1.0]), Err(Error::MissingCache)));
    }

    #[test]
    fn dead_relu_zero_grads() {
        let w = Matrix::from_vec(2, 2, vec![-1.0, 0.0, 0.0, -1.0]).unwrap();
        let mut layer = HyperLayer::new(w, Activation::Relu, false).unwrap();
        layer.forward(&[1.0, 0.0]).unwrap();
        let (_, grad_w) = layer.backward(&[1.0, 1.0]).unwrap();
        assert!(grad_w.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ternary_grad_zero_where_weight_is_unit() {
        // A 1-row matrix renormalizes every entry to +-1, so S == 0.
        let w = Matrix::from_vec(1, 3, vec![0.2, -0.4, 3.0]).unwrap();
        let mut layer = HyperLayer::new(w, Activation::Identity, true).unwrap();
        layer.set_mode(LayerMode::Ternary);
        layer.set_delta_bar(0.0);
        layer.forward(&[1.0]).unwrap();
        let (_, grad_w) = layer.backward(&[0.3, -0.7, 0.9]).unwrap();
        assert!(grad_w.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_precision_grad_matches_finite_difference() {
        let mut rng = Rng::from_seed(31);
        for _ in 0..20 {
            let data: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
            let w = Matrix::from_vec(4, 3, data).unwrap();
            let layer = HyperLayer::new(w, Activation::Identity, false).unwrap();
            let x = normalize_input(&(0..4).map(|_| rng.normal()).collect::<Vec<_>>()).unwrap();
            let target = rng.next_below(3);

            let scalar = |m: &Matrix| {
                let z = m.matvec(&x).unwrap();
                softmax_cross_entropy(&z, target).unwrap().0
            };
            let oracle = finite_diff_grad(scalar, layer.weights(), 1e-5);

            let mut probe = layer.clone();
            let z = probe.forward(&x).unwrap();
            let (_, grad) = softmax_cross_entropy(&z, target).unwrap();
            let (_, grad_w) = probe.backward(&grad).unwrap();
            assert!(relative_error(&grad_w, &oracle) < 1e-6);
        }
    }

    #[test]
    fn sgd_zero_step_keeps_weights() {
        let w = Matrix::from_vec(2, 1, vec![0.6, 0.8]).unwrap();
        let mut layer = HyperLayer::new(w, Activation::Identity, false).unwrap();
        let before = layer.weights().clone();
        let zero = Matrix::zeros(2, 1);
        layer.sgd_step(&zero, 0.5, 0.0, 0.0).unwrap();
        for (a, b) in layer.weights().data().iter().zip(before.data().iter()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn sgd_hand_step() {
        let w = Matrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        let mut layer = HyperLayer::new(w, Activation::Identity, false).unwrap();
        let grad = Matrix::from_vec(2, 1, vec![0.0, -1.0]).unwrap();
        layer.sgd_step(&grad, 0.5, 0.0, 0.0).unwrap();
        assert!((layer.weights().get(0, 0) - 0.894427190999916).abs() < 1e-12);
        assert!((layer.weights().get(1, 0) - 0.447213595499958).abs() < 1e-12);
    }

    #[test]
    fn sgd_preserves_unit_columns() {
        let mut rng = Rng::from_seed(77);
        let w = Matrix::from_vec(5, 4, (0..20).map(|_| rng.normal()).collect()).unwrap();
        let mut layer = HyperLayer::new(w, Activation::Relu, true).unwrap();
        for _ in 0..50 {
            let g = Matrix::from_vec(5, 4, (0..20).map(|_| rng.normal()).collect()).unwrap();
            layer.sgd_step(&g, 0.05, 0.9, 1e-4).unwrap();
            for j in 0..4 {
                assert!((l2_norm(layer.weights().col(j)) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn network_rejects_bad_chain() {
        let mut rng = Rng::from_seed(1);
        let a = HyperLayer::random(4, 3, Activation::Relu, false, &mut rng).unwrap();
        let b = HyperLayer::random(5, 2, Activation::Identity, false, &mut rng).unwrap();
        assert!(matches!(
            Network::new(vec![a, b]),
            Err(Error::LayerChainMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn default_eligibility_skips_first_and_last() {
        let mut rng = Rng::from_seed(2);
        let net = Network::random(
            &[6, 8, 8, 3],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            None,
            &mut rng,
        )
        .unwrap();
        assert_eq!(net.eligible_indices(), vec![1]);
    }

    #[test]
    fn network_backward_matches_finite_difference() {
        // Composite loss through two layers plus hidden-input normalization.
        let mut rng = Rng::from_seed(41);
        let net = Network::random(
            &[5, 4, 3],
            &[Activation::Relu, Activation::Identity],
            Some(&[false, false]),
            &mut rng,
        )
        .unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let target = 1usize;

        for layer_idx in 0..2 {
            let scalar = |m: &Matrix| {
                let mut probe = net.clone();
                probe.layers_mut()[layer_idx]
                    .restore(
                        m.clone(),
                        Matrix::zeros(m.rows(), m.cols()),
                        0.0,
                        LayerMode::FullPrecision,
                    )
                    .unwrap();
                let z = probe.forward_infer(&x, false).unwrap();
                softmax_cross_entropy(&z, target).unwrap().0
            };
            let oracle = finite_diff_grad(scalar, net.layers()[layer_idx].weights(), 1e-5);

            let mut probe = net.clone();
            let z = probe.forward_train(&x).unwrap();
            let (_, grad) = softmax_cross_entropy(&z, target).unwrap();
            let grads = probe.backward(&grad).unwrap();
            let err = relative_error(&grads[layer_idx], &oracle);
            assert!(err < 1e-6, "layer {layer_idx}: rel err {err}");
        }
    }
}
