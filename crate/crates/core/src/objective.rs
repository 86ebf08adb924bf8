//! The cosine-distance regularizer and the two-phase composite objectives.
//!
//! Phase 1 trains full-precision weights on the task loss plus the
//! regularizer against a threshold derived from the sparsity target.
//! Phase 2 runs the forward pass on quantized weights, routes the task
//! gradient through the scaled straight-through estimator, adds the
//! regularizer gradient directly on the full-precision weights, and emits
//! the averaged per-layer threshold gradients.

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::layer::Network;
use crate::loss::softmax_cross_entropy;
use crate::matrix::Matrix;
use crate::quant::{
    delta_gradient, mean_cosine_similarity, ternary_quantize, threshold_from_sparsity,
    threshold_from_sparsity_global, TernaryColumnSet,
};
use serde::{Deserialize, Serialize};

/// Whether fine-tuning thresholds come from each layer's own magnitude
/// percentile or from the pooled magnitudes of all eligible layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScope {
    PerLayer,
    Global,
}

impl Default for ThresholdScope {
    fn default() -> Self {
        ThresholdScope::PerLayer
    }
}

/// Loss decomposition for one objective evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub task_loss: f64,
    pub reg_loss: f64,
    pub total: f64,
    pub per_layer_cosine: Vec<f64>,
}

/// Gradients produced by one objective evaluation.
#[derive(Debug, Clone)]
pub struct ObjectiveGradients {
    /// Per-layer weight gradients (task + regularizer).
    pub weights: Vec<Matrix>,
    /// Per-layer averaged threshold gradients; zero for layers without one.
    pub deltas: Vec<f64>,
}

/// Regularizer value: mean squared deviation of the per-column cosine
/// similarity between `w` and its ternary target from 1.
pub fn ld_loss(w: &Matrix, t: &TernaryColumnSet) -> Result<f64> {
    let cosines = column_cosines(w, t)?;
    let n = cosines.len() as f64;
    let mut acc = 0.0;
    for c in cosines {
        acc += (c - 1.0) * (c - 1.0);
    }
    Ok(acc / n)
}

/// Analytic gradient of [`ld_loss`] with the ternary target held constant:
/// column j gets `(2/n) * (cos_j - 1) * alpha_j * signs_j`.
pub fn ld_grad(w: &Matrix, t: &TernaryColumnSet) -> Result<Matrix> {
    let cosines = column_cosines(w, t)?;
    let n = w.cols() as f64;
    let mut out = Matrix::zeros(w.rows(), w.cols());
    for j in 0..w.cols() {
        let factor = 2.0 / n * (cosines[j] - 1.0) * t.alphas()[j];
        let signs = t.sign_col(j);
        let col = out.col_mut(j);
        for i in 0..w.rows() {
            col[i] = factor * f64::from(signs[i]);
        }
    }
    Ok(out)
}

/// Per-column dot products between `w` and the reconstructed target.
pub fn column_cosines(w: &Matrix, t: &TernaryColumnSet) -> Result<Vec<f64>> {
    if w.rows() != t.rows() || w.cols() != t.cols() {
        return Err(Error::DimensionMismatch {
            context: "column_cosines",
            expected: w.rows() * w.cols(),
            actual: t.rows() * t.cols(),
        });
    }
    let mut out = Vec::with_capacity(w.cols());
    for j in 0..w.cols() {
        let col = w.col(j);
        let signs = t.sign_col(j);
        let mut acc = 0.0;
        for i in 0..w.rows() {
            match signs[i] {
                1 => acc += col[i],
                -1 => acc -= col[i],
                _ => {}
            }
        }
        out.push(t.alphas()[j] * acc);
    }
    Ok(out)
}

/// Fine-tuning thresholds for every layer: `Some(delta)` for eligible
/// layers, `None` otherwise.
pub fn layer_thresholds(net: &Network, t: f64, scope: ThresholdScope) -> Result<Vec<Option<f64>>> {
    let eligible = net.eligible_indices();
    let mut out = vec![None; net.num_layers()];
    match scope {
        ThresholdScope::PerLayer => {
            for &idx in &eligible {
                out[idx] = Some(threshold_from_sparsity(net.layers()[idx].weights(), t)?);
            }
        }
        ThresholdScope::Global => {
            if !eligible.is_empty() {
                let mats: Vec<&Matrix> =
                    eligible.iter().map(|&i| net.layers()[i].weights()).collect();
                let delta = threshold_from_sparsity_global(&mats, t)?;
                for &idx in &eligible {
                    out[idx] = Some(delta);
                }
            }
        }
    }
    Ok(out)
}

/// Mean task loss and per-layer task gradients over a batch, averaged over
/// the samples in ascending order.
///
/// With `threads > 1` the batch is split into contiguous chunks; each
/// worker accumulates its chunk in ascending order on a private network
/// clone and the partial sums are reduced in ascending chunk order, so the
/// result is deterministic for a fixed thread count.
pub fn batch_task_gradients(
    net: &mut Network,
    batch: &[&Sample],
    threads: usize,
) -> Result<(f64, Vec<Matrix>)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let shapes: Vec<(usize, usize)> = net
        .layers()
        .iter()
        .map(|l| (l.weights().rows(), l.weights().cols()))
        .collect();
    let zero_grads =
        || -> Vec<Matrix> { shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect() };

    let accumulate_chunk = |net: &mut Network, chunk: &[&Sample]| -> Result<(f64, Vec<Matrix>)> {
        let mut loss_sum = 0.0;
        let mut grads = zero_grads();
        for sample in chunk {
            let logits = net.forward_train(&sample.features)?;
            let (loss, grad_logits) = softmax_cross_entropy(&logits, sample.label)?;
            loss_sum += loss;
            let layer_grads = net.backward(&grad_logits)?;
            for (acc, g) in grads.iter_mut().zip(layer_grads.iter()) {
                acc.add_scaled(g, 1.0)?;
            }
        }
        Ok((loss_sum, grads))
    };

    let (loss_sum, mut grads) = if threads <= 1 || batch.len() < 2 {
        accumulate_chunk(net, batch)?
    } else {
        let workers = threads.min(batch.len());
        let chunk_len = batch.len().div_ceil(workers);
        let chunks: Vec<&[&Sample]> = batch.chunks(chunk_len).collect();
        let mut partials: Vec<Result<(f64, Vec<Matrix>)>> = Vec::new();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in &chunks {
                let mut worker_net = net.clone();
                handles.push(scope.spawn(move || accumulate_chunk(&mut worker_net, chunk)));
            }
            for h in handles {
                partials.push(h.join().expect("worker panicked"));
            }
        });
        let mut loss_sum = 0.0;
        let mut grads = zero_grads();
        for partial in partials {
            let (l, g) = partial?;
            loss_sum += l;
            for (acc, p) in grads.iter_mut().zip(g.iter()) {
                acc.add_scaled(p, 1.0)?;
            }
        }
        (loss_sum, grads)
    };

    let inv = 1.0 / batch.len() as f64;
    for g in grads.iter_mut() {
        for v in g.data_mut() {
            *v *= inv;
        }
    }
    Ok((loss_sum * inv, grads))
}

/// Phase-1 objective at a sparsity target: thresholds are derived from the
/// current weights, then delegated to [`objective_phase1_with_deltas`].
pub fn objective_phase1(
    net: &mut Network,
    batch: &[&Sample],
    t: f64,
    scope: ThresholdScope,
    threads: usize,
) -> Result<(ObjectiveReport, ObjectiveGradients)> {
    let deltas = layer_thresholds(net, t, scope)?;
    objective_phase1_with_deltas(net, batch, &deltas, threads)
}

/// Phase-1 objective with frozen per-layer thresholds (the training loop
/// recomputes thresholds once per stage, not per step). The ternary
/// targets themselves are recomputed from the current weights.
pub fn objective_phase1_with_deltas(
    net: &mut Network,
    batch: &[&Sample],
    deltas: &[Option<f64>],
    threads: usize,
) -> Result<(ObjectiveReport, ObjectiveGradients)> {
    let (task_loss, mut grads) = batch_task_gradients(net, batch, threads)?;

    let mut reg_loss = 0.0;
    let mut per_layer_cosine = Vec::with_capacity(net.num_layers());
    for idx in 0..net.num_layers() {
        let w = net.layers()[idx].weights();
        match deltas[idx] {
            Some(delta) => {
                let target = ternary_quantize(w, delta)
                    .map_err(|e| wrap_layer(e, idx))?;
                reg_loss += ld_loss(w, &target)?;
                grads[idx].add_scaled(&ld_grad(w, &target)?, 1.0)?;
                per_layer_cosine.push(mean_cosine_similarity(w, &target)?);
            }
            None => {
                let t = ternary_quantize(w, net.layers()[idx].delta_bar())
                    .map_err(|e| wrap_layer(e, idx))?;
                per_layer_cosine.push(mean_cosine_similarity(w, &t)?);
            }
        }
    }

    Ok((
        ObjectiveReport {
            task_loss,
            reg_loss,
            total: task_loss + reg_loss,
            per_layer_cosine,
        },
        ObjectiveGradients {
            weights: grads,
            deltas: vec![0.0; net.num_layers()],
        },
    ))
}

/// Phase-2 objective: quantized forward, straight-through task gradient,
/// regularizer gradient on the full-precision weights, and averaged
/// threshold gradients from the combined weight gradient.
pub fn objective_phase2(
    net: &mut Network,
    batch: &[&Sample],
    threads: usize,
) -> Result<(ObjectiveReport, ObjectiveGradients)> {
    let (task_loss, mut grads) = batch_task_gradients(net, batch, threads)?;

    let mut reg_loss = 0.0;
    let mut per_layer_cosine = Vec::with_capacity(net.num_layers());
    let mut delta_grads = vec![0.0; net.num_layers()];
    for idx in 0..net.num_layers() {
        let layer = &net.layers()[idx];
        let w = layer.weights();
        let target = ternary_quantize(w, layer.delta_bar()).map_err(|e| wrap_layer(e, idx))?;
        per_layer_cosine.push(mean_cosine_similarity(w, &target)?);
        if layer.quantize_eligible() {
            reg_loss += ld_loss(w, &target)?;
            grads[idx].add_scaled(&ld_grad(w, &target)?, 1.0)?;
            delta_grads[idx] = delta_gradient(&grads[idx], w)?;
        }
    }

    Ok((
        ObjectiveReport {
            task_loss,
            reg_loss,
            total: task_loss + reg_loss,
            per_layer_cosine,
        },
        ObjectiveGradients {
            weights: grads,
            deltas: delta_grads,
        },
    ))
}

fn wrap_layer(err: Error, layer: usize) -> Error {
    match err {
        Error::AllZeroColumn { col, delta } => Error::AllZeroColumnInLayer { layer, col, delta },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad, relative_error};
    use crate::layer::Activation;
    use crate::rng::Rng;

    fn random_unit_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
        Matrix::from_vec(rows, cols, data)
            .unwrap()
            .renormalize_columns()
            .unwrap()
    }

    #[test]
    fn ld_loss_zero_at_fixed_point() {
        let a = 1.0 / 2f64.sqrt();
        let w = Matrix::from_vec(4, 2, vec![a, a, 0.0, 0.0, 0.0, -a, 0.0, a]).unwrap();
        let t = ternary_quantize(&w, 0.1).unwrap();
        assert!(ld_loss(&w, &t).unwrap() < 1e-12);
    }

    #[test]
    fn ld_loss_hand_value() {
        // Two columns with cosines 0.9 and 1.0 give (0.01 + 0) / 2.
        let w = Matrix::from_vec(2, 2, vec![0.9, (1.0f64 - 0.81).sqrt(), 1.0, 0.0]).unwrap();
        let signs = vec![1, 0, 1, 0];
        let t = TernaryColumnSet::from_parts(2, 2, signs, vec![1.0, 1.0]).unwrap();
        let v = ld_loss(&w, &t).unwrap();
        assert!((v - 0.005).abs() < 1e-12, "{v}");
    }

    #[test]
    fn ld_loss_orthogonal_column() {
        let w = Matrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        let t = TernaryColumnSet::from_parts(2, 1, vec![0, 1], vec![1.0]).unwrap();
        assert!((ld_loss(&w, &t).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ld_grad_hand_value() {
        let w = Matrix::from_vec(2, 1, vec![0.8, 0.6]).unwrap();
        let t = TernaryColumnSet::from_parts(2, 1, vec![1, 0], vec![1.0]).unwrap();
        let g = ld_grad(&w, &t).unwrap();
        assert!((g.get(0, 0) - (-0.4)).abs() < 1e-12);
        assert_eq!(g.get(1, 0), 0.0);
    }

    #[test]
    fn ld_grad_zero_at_cosine_one() {
        let a = 1.0 / 2f64.sqrt();
        let w = Matrix::from_vec(2, 1, vec![a, a]).unwrap();
        let t = ternary_quantize(&w, 0.1).unwrap();
        let g = ld_grad(&w, &t).unwrap();
        assert!(g.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn ld_grad_matches_finite_difference() {
        let mut rng = Rng::from_seed(51);
        for _ in 0..100 {
            let w = random_unit_matrix(&mut rng, 6, 4);
            let delta = threshold_from_sparsity(&w, 0.4).unwrap();
            let target = match ternary_quantize(&w, delta) {
                Ok(t) => t,
                Err(_) => continue,
            };
            let oracle = finite_diff_grad(
                |m| ld_loss(m, &target).unwrap(),
                &w,
                crate::gradcheck::DEFAULT_STEP,
            );
            let analytic = ld_grad(&w, &target).unwrap();
            let err = relative_error(&analytic, &oracle);
            assert!(err < 1e-6, "rel err {err}");
        }
    }

    #[test]
    fn ld_grad_column_magnitude() {
        let mut rng = Rng::from_seed(53);
        let w = random_unit_matrix(&mut rng, 8, 4);
        let t = ternary_quantize(&w, threshold_from_sparsity(&w, 0.5).unwrap()).unwrap();
        let cosines = column_cosines(&w, &t).unwrap();
        let g = ld_grad(&w, &t).unwrap();
        for j in 0..4 {
            let norm = crate::matrix::l2_norm(g.col(j));
            let expected = 2.0 / 4.0 * (cosines[j] - 1.0).abs();
            assert!((norm - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn ld_loss_invariant_under_column_permutation() {
        let mut rng = Rng::from_seed(59);
        let w = random_unit_matrix(&mut rng, 6, 4);
        let t = ternary_quantize(&w, threshold_from_sparsity(&w, 0.4).unwrap()).unwrap();
        let base = ld_loss(&w, &t).unwrap();

        let perm = [2usize, 0, 3, 1];
        let wp = Matrix::from_columns(&perm.iter().map(|&j| w.col(j).to_vec()).collect::<Vec<_>>())
            .unwrap();
        let tp = ternary_quantize(&wp, threshold_from_sparsity(&wp, 0.4).unwrap()).unwrap();
        let permuted = ld_loss(&wp, &tp).unwrap();
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn phase1_gradient_additivity() {
        let mut rng = Rng::from_seed(61);
        let mut net = Network::random(
            &[5, 4, 3],
            &[Activation::Relu, Activation::Identity],
            Some(&[true, true]),
            &mut rng,
        )
        .unwrap();
        let samples: Vec<Sample> = (0..4)
            .map(|k| Sample {
                features: (0..5).map(|_| rng.normal()).collect(),
                label: k % 3,
            })
            .collect();
        let batch: Vec<&Sample> = samples.iter().collect();

        let deltas = layer_thresholds(&net, 0.4, ThresholdScope::PerLayer).unwrap();
        let (report, grads) =
            objective_phase1_with_deltas(&mut net, &batch, &deltas, 1).unwrap();
        assert!((report.total - (report.task_loss + report.reg_loss)).abs() < 1e-12);
        assert!(report.reg_loss >= 0.0);

        // task-only plus regularizer-only equals the combined gradient
        let (_, task_grads) = batch_task_gradients(&mut net, &batch, 1).unwrap();
        for idx in 0..net.num_layers() {
            let w = net.layers()[idx].weights();
            let target = ternary_quantize(w, deltas[idx].unwrap()).unwrap();
            let reg = ld_grad(w, &target).unwrap();
            for i in 0..w.rows() {
                for j in 0..w.cols() {
                    let expect = task_grads[idx].get(i, j) + reg.get(i, j);
                    assert!((grads.weights[idx].get(i, j) - expect).abs() < 1e-15);
                }
            }
        }
    }
}
