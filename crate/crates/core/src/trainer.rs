//! The training procedure: plain hyperspherical pretraining, regularized
//! fine-tuning over the rising sparsity schedule, and the ternary
//! quantization loop with the learnable threshold.
//!
//! All loops are resumable: the position inside each phase is derived
//! from the epoch counters, stage thresholds live on the layers, and the
//! batch shuffles come from the single run `Rng`, so a run restored from
//! a checkpoint continues bit-identically.

use crate::config::TrainConfig;
use crate::data::{batches, Dataset, Sample, SplitDataset};
use crate::error::{Error, Result};
use crate::layer::{LayerMode, Network};
use crate::metrics::{EpochRecord, LayerStat, Phase};
use crate::objective::{
    batch_task_gradients, layer_thresholds, objective_phase1_with_deltas, objective_phase2,
    ObjectiveGradients, ObjectiveReport,
};
use crate::quant::{mean_cosine_similarity, ternary_quantize, ternary_signs, update_delta};
use crate::rng::Rng;

/// Mutable run state: the network plus everything needed to resume.
#[derive(Debug, Clone)]
pub struct RunState {
    pub net: Network,
    pub rng: Rng,
    pub pretrain_epochs_done: u64,
    pub finetune_epochs_done: u64,
    pub quantize_epochs_done: u64,
    pub last_record: Option<EpochRecord>,
}

impl RunState {
    /// Fresh state: seeds the stream and draws the initial weights.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let mut rng = Rng::from_seed(cfg.seed);
        let net = cfg.build_network(&mut rng)?;
        Ok(RunState {
            net,
            rng,
            pretrain_epochs_done: 0,
            finetune_epochs_done: 0,
            quantize_epochs_done: 0,
            last_record: None,
        })
    }

    /// Zero-based index of the next epoch across all phases.
    pub fn global_epoch(&self) -> u64 {
        self.pretrain_epochs_done + self.finetune_epochs_done + self.quantize_epochs_done
    }
}

enum EpochKind {
    Pretrain,
    Finetune { t: f64 },
    Quantize,
}

fn phase_of(kind: &EpochKind) -> Phase {
    match kind {
        EpochKind::Pretrain => Phase::Pretrain,
        EpochKind::Finetune { .. } => Phase::Finetune,
        EpochKind::Quantize => Phase::Quantize,
    }
}

/// Top-1 accuracy over a dataset; iteration order is the dataset order and
/// argmax ties break to the lowest class index.
pub fn evaluate(net: &Network, ds: &Dataset, use_ternary: bool) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for sample in &ds.samples {
        let logits = net.forward_infer(&sample.features, use_ternary)?;
        let mut best = 0usize;
        for (k, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = k;
            }
        }
        if best == sample.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Per-layer diagnostics at the layers' current thresholds.
fn layer_stats(net: &Network) -> Result<Vec<LayerStat>> {
    let mut out = Vec::with_capacity(net.num_layers());
    for (idx, layer) in net.layers().iter().enumerate() {
        let w = layer.weights();
        let delta = layer.delta_bar();
        let signs = ternary_signs(w, delta);
        let zeros = signs.iter().filter(|&&s| s == 0).count();
        let sparsity = zeros as f64 / signs.len() as f64;
        let t = ternary_quantize(w, delta).map_err(|e| match e {
            Error::AllZeroColumn { col, delta } => Error::AllZeroColumnInLayer {
                layer: idx,
                col,
                delta,
            },
            other => other,
        })?;
        let cosine = mean_cosine_similarity(w, &t)?;
        out.push(LayerStat {
            delta,
            sparsity,
            cosine,
        });
    }
    Ok(out)
}

fn run_epoch(
    state: &mut RunState,
    cfg: &TrainConfig,
    data: &SplitDataset,
    kind: &EpochKind,
    phase_epoch: u64,
) -> Result<EpochRecord> {
    let epoch_index = state.global_epoch();
    let lr = cfg.lr.lr_at(phase_epoch);
    let batch_sets = batches(data.train.len(), cfg.batch_size, &mut state.rng);

    // Per-layer thresholds are frozen for the whole epoch in phase 1.
    let finetune_deltas: Option<Vec<Option<f64>>> = match kind {
        EpochKind::Finetune { .. } => Some(
            state
                .net
                .layers()
                .iter()
                .map(|l| l.quantize_eligible().then(|| l.delta_bar()))
                .collect(),
        ),
        _ => None,
    };

    let mut task_loss_sum = 0.0;
    let mut reg_loss_sum = 0.0;
    let mut total_samples = 0usize;

    for batch_indices in &batch_sets {
        let batch: Vec<&Sample> = batch_indices.iter().map(|&i| &data.train.samples[i]).collect();
        let (report, grads): (ObjectiveReport, ObjectiveGradients) = match kind {
            EpochKind::Pretrain => {
                let (task_loss, weights) =
                    batch_task_gradients(&mut state.net, &batch, cfg.threads)?;
                (
                    ObjectiveReport {
                        task_loss,
                        reg_loss: 0.0,
                        total: task_loss,
                        per_layer_cosine: Vec::new(),
                    },
                    ObjectiveGradients {
                        weights,
                        deltas: vec![0.0; state.net.num_layers()],
                    },
                )
            }
            EpochKind::Finetune { .. } => objective_phase1_with_deltas(
                &mut state.net,
                &batch,
                finetune_deltas.as_ref().expect("set above"),
                cfg.threads,
            )?,
            EpochKind::Quantize => objective_phase2(&mut state.net, &batch, cfg.threads)?,
        };

        if !report.total.is_finite() {
            return Err(Error::Divergence { epoch: epoch_index });
        }

        for (idx, grad) in grads.weights.iter().enumerate() {
            state.net.layers_mut()[idx].sgd_step(grad, lr, cfg.momentum, cfg.weight_decay)?;
        }
        if matches!(kind, EpochKind::Quantize) {
            let lr_delta = cfg.delta_lr_scale * lr;
            for idx in 0..state.net.num_layers() {
                let layer = &mut state.net.layers_mut()[idx];
                if layer.quantize_eligible() {
                    let next = update_delta(
                        layer.delta_bar(),
                        grads.deltas[idx],
                        lr_delta,
                        cfg.delta_update_mode,
                    );
                    layer.set_delta_bar(next);
                }
            }
        }

        task_loss_sum += report.task_loss * batch.len() as f64;
        reg_loss_sum += report.reg_loss * batch.len() as f64;
        total_samples += batch.len();
    }

    let use_ternary = matches!(kind, EpochKind::Quantize);
    let train_acc = evaluate(&state.net, &data.train, use_ternary)?;
    let test_acc = evaluate(&state.net, &data.test, use_ternary)?;
    let layers = layer_stats(&state.net)?;

    let t = match kind {
        EpochKind::Pretrain => 0.0,
        EpochKind::Finetune { t } => *t,
        EpochKind::Quantize => cfg.delta_init_t,
    };

    Ok(EpochRecord {
        epoch: epoch_index,
        phase: phase_of(kind),
        t,
        task_loss: task_loss_sum / total_samples as f64,
        reg_loss: reg_loss_sum / total_samples as f64,
        train_acc,
        test_acc,
        layers,
    })
}

/// Plain hyperspherical task training; establishes the full-precision
/// baseline the regularized phases start from.
pub fn pretrain(
    state: &mut RunState,
    cfg: &TrainConfig,
    data: &SplitDataset,
    mut on_epoch: impl FnMut(&RunState, &EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    let mut records = Vec::new();
    while state.pretrain_epochs_done < cfg.pretrain_epochs {
        let phase_epoch = state.pretrain_epochs_done;
        let record = run_epoch(state, cfg, data, &EpochKind::Pretrain, phase_epoch)?;
        state.pretrain_epochs_done += 1;
        state.last_record = Some(record.clone());
        on_epoch(state, &record)?;
        records.push(record);
    }
    Ok(records)
}

/// Regularized fine-tuning over the rising sparsity schedule. Thresholds
/// are recomputed from the current weights at each stage entry and frozen
/// for the stage.
pub fn fine_tune(
    state: &mut RunState,
    cfg: &TrainConfig,
    data: &SplitDataset,
    mut on_epoch: impl FnMut(&RunState, &EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    let stages = cfg.schedule.stages();
    let per_stage = cfg.schedule.epochs_per_stage;
    let total = stages.len() as u64 * per_stage;
    let mut records = Vec::new();
    while state.finetune_epochs_done < total {
        let stage_idx = (state.finetune_epochs_done / per_stage) as usize;
        let t = stages[stage_idx];
        if state.finetune_epochs_done % per_stage == 0 {
            let deltas = layer_thresholds(&state.net, t, cfg.threshold_scope)?;
            for (idx, delta) in deltas.iter().enumerate() {
                if let Some(d) = delta {
                    state.net.layers_mut()[idx].set_delta_bar(*d);
                }
            }
        }
        let phase_epoch = state.finetune_epochs_done;
        let record = run_epoch(state, cfg, data, &EpochKind::Finetune { t }, phase_epoch)?;
        state.finetune_epochs_done += 1;
        state.last_record = Some(record.clone());
        on_epoch(state, &record)?;
        records.push(record);
    }
    Ok(records)
}

/// Ternary quantization: puts eligible layers in ternary mode with the
/// learnable threshold initialized from the `delta_init_t` percentile,
/// then trains with the quantized forward and the scaled straight-through
/// backward, updating thresholds from averaged weight gradients.
pub fn quantize_train(
    state: &mut RunState,
    cfg: &TrainConfig,
    data: &SplitDataset,
    mut on_epoch: impl FnMut(&RunState, &EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    if state.quantize_epochs_done == 0 {
        let deltas = layer_thresholds(&state.net, cfg.delta_init_t, cfg.threshold_scope)?;
        for (idx, delta) in deltas.iter().enumerate() {
            if let Some(d) = delta {
                let layer = &mut state.net.layers_mut()[idx];
                layer.set_delta_bar(*d);
                layer.set_mode(LayerMode::Ternary);
            }
        }
    }
    let mut records = Vec::new();
    while state.quantize_epochs_done < cfg.quantize_epochs {
        let phase_epoch = state.quantize_epochs_done;
        let record = run_epoch(state, cfg, data, &EpochKind::Quantize, phase_epoch)?;
        state.quantize_epochs_done += 1;
        state.last_record = Some(record.clone());
        on_epoch(state, &record)?;
        records.push(record);
    }
    Ok(records)
}
