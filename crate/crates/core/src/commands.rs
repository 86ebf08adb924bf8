//! Command implementations behind the CLI binary. Each returns `Ok(())`
//! on success; the binary maps errors to a diagnostic on stderr and a
//! nonzero exit code. Normal output is machine-parseable `key=value`
//! lines.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{DatasetSpec, TrainConfig};
use crate::data::{write_idx_images, write_idx_labels, Dataset, SplitDataset};
use crate::error::{Error, Result};
use crate::inspect::{inspect_model, inspect_network, LayerInspection};
use crate::metrics::{append_csv, EpochRecord};
use crate::packed::{export_model, InferenceModel};
use crate::trainer::{evaluate, fine_tune, pretrain, quantize_train, RunState};

/// Reproducibility record written at the end of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: TrainConfig,
    pub dataset_fingerprint: String,
    pub threads: usize,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<String>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn write_manifest(manifest: &RunManifest, out_dir: &Path) -> Result<()> {
    let path = out_dir.join("manifest.json");
    let tmp = out_dir.join("manifest.json.tmp");
    std::fs::write(&tmp, serde_json::to_string_pretty(manifest)?)?;
    std::fs::rename(&tmp, &path)?;
    Ok(())
}

fn split_fingerprint(data: &SplitDataset) -> String {
    format!("{}:{}", data.train.fingerprint(), data.test.fingerprint())
}

/// Loads a config and applies CLI overrides.
pub fn load_config(
    path: &Path,
    seed_override: Option<u64>,
    threads_override: Option<usize>,
) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::load(path)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    if let Some(threads) = threads_override {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Pretraining plus regularized fine-tuning; writes a checkpoint, the
/// metrics CSV, and the manifest into `out_dir`.
pub fn cmd_train(
    config_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
    threads_override: Option<usize>,
) -> Result<()> {
    let started = now_ms();
    let cfg = load_config(config_path, seed_override, threads_override)?;
    let data = cfg.load_dataset()?;
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    std::fs::create_dir_all(out_dir)?;
    let ckpt_path = out_dir.join("checkpoint.ckpt");
    let csv_path = out_dir.join("metrics.csv");

    let mut state = RunState::new(&cfg)?;
    let n_layers = state.net.num_layers();
    log::info!(
        "train: {} layers, {} train samples, {} test samples",
        n_layers,
        data.train.len(),
        data.test.len()
    );

    let run_phase = |state: &mut RunState,
                     phase: fn(
        &mut RunState,
        &TrainConfig,
        &SplitDataset,
        &mut dyn FnMut(&RunState, &EpochRecord) -> Result<()>,
    ) -> Result<Vec<EpochRecord>>|
     -> Result<()> {
        let mut hook = |s: &RunState, r: &EpochRecord| -> Result<()> {
            append_csv(&csv_path, n_layers, std::slice::from_ref(r))?;
            checkpoint::save(s, &cfg, &ckpt_path)?;
            log::info!(
                "epoch {} [{}] task_loss={:.6} test_acc={:.4}",
                r.epoch,
                r.phase.as_str(),
                r.task_loss,
                r.test_acc
            );
            Ok(())
        };
        phase(state, &cfg, &data, &mut hook)?;
        Ok(())
    };

    run_phase(&mut state, |s, c, d, h| pretrain(s, c, d, h))?;
    run_phase(&mut state, |s, c, d, h| fine_tune(s, c, d, h))?;
    checkpoint::save(&state, &cfg, &ckpt_path)?;

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "train".to_string(),
        config: cfg.clone(),
        dataset_fingerprint: split_fingerprint(&data),
        threads: cfg.threads,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        outputs: vec![
            ckpt_path.display().to_string(),
            csv_path.display().to_string(),
        ],
    };
    write_manifest(&manifest, out_dir)?;
    println!("checkpoint={}", ckpt_path.display());
    println!("metrics={}", csv_path.display());
    println!("manifest={}", out_dir.join("manifest.json").display());
    Ok(())
}

/// Ternary quantization starting from a fine-tuned checkpoint.
pub fn cmd_quantize(
    checkpoint_path: &Path,
    config_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
    threads_override: Option<usize>,
) -> Result<()> {
    let started = now_ms();
    let cfg = load_config(config_path, seed_override, threads_override)?;
    let (mut state, ckpt_cfg) = checkpoint::load(checkpoint_path)?;
    if ckpt_cfg.layer_dims != cfg.layer_dims {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint layer_dims {:?} != config layer_dims {:?}",
            ckpt_cfg.layer_dims, cfg.layer_dims
        )));
    }
    if ckpt_cfg.layer_activations() != cfg.layer_activations() {
        return Err(Error::IncompatibleCheckpoint(
            "checkpoint and config disagree on activations".to_string(),
        ));
    }
    let data = cfg.load_dataset()?;
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    std::fs::create_dir_all(out_dir)?;
    let ckpt_path = out_dir.join("ternary.ckpt");
    let csv_path = out_dir.join("metrics.csv");
    let n_layers = state.net.num_layers();

    let mut hook = |s: &RunState, r: &EpochRecord| -> Result<()> {
        append_csv(&csv_path, n_layers, std::slice::from_ref(r))?;
        checkpoint::save(s, &cfg, &ckpt_path)?;
        log::info!(
            "epoch {} [quantize] task_loss={:.6} test_acc={:.4}",
            r.epoch,
            r.task_loss,
            r.test_acc
        );
        Ok(())
    };
    quantize_train(&mut state, &cfg, &data, &mut hook)?;
    checkpoint::save(&state, &cfg, &ckpt_path)?;

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "quantize".to_string(),
        config: cfg.clone(),
        dataset_fingerprint: split_fingerprint(&data),
        threads: cfg.threads,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        outputs: vec![
            ckpt_path.display().to_string(),
            csv_path.display().to_string(),
        ],
    };
    write_manifest(&manifest, out_dir)?;
    println!("checkpoint={}", ckpt_path.display());
    println!("metrics={}", csv_path.display());
    println!("manifest={}", out_dir.join("manifest.json").display());
    Ok(())
}

/// What kind of artifact a file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Checkpoint,
    PackedModel,
}

/// Sniffs the artifact type from the leading magic bytes.
pub fn detect_artifact(path: &Path) -> Result<ArtifactKind> {
    let bytes = std::fs::read(path)?;
    if bytes.len() >= 8 && &bytes[..8] == b"HLACKPT1" {
        Ok(ArtifactKind::Checkpoint)
    } else if bytes.len() >= 4 && &bytes[..4] == b"HTQ1" {
        Ok(ArtifactKind::PackedModel)
    } else {
        Err(Error::BadMagic {
            context: "artifact",
            expected: "HLACKPT1 or HTQ1",
        })
    }
}

fn model_accuracy(model: &InferenceModel, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for sample in &ds.samples {
        if model.classify(&sample.features)? == sample.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Prints the top-1 test accuracy of a checkpoint or packed model. A
/// packed model is already quantized, so the ternary flag only matters
/// for checkpoints.
pub fn cmd_eval(model_path: &Path, config_path: &Path, use_ternary: bool) -> Result<()> {
    let cfg = load_config(config_path, None, None)?;
    let data = cfg.load_dataset()?;
    let accuracy = match detect_artifact(model_path)? {
        ArtifactKind::Checkpoint => {
            let (state, _) = checkpoint::load(model_path)?;
            evaluate(&state.net, &data.test, use_ternary)?
        }
        ArtifactKind::PackedModel => {
            let model = crate::packed::import_model(model_path)?;
            model_accuracy(&model, &data.test)?
        }
    };
    println!("accuracy={accuracy:.4}");
    Ok(())
}

/// Exports a quantized checkpoint as a packed model file.
pub fn cmd_export(checkpoint_path: &Path, out_path: &Path) -> Result<()> {
    let (state, _) = checkpoint::load(checkpoint_path)?;
    export_model(&state.net, out_path)?;
    println!("model={}", out_path.display());
    Ok(())
}

fn write_inspection(reports: &[LayerInspection], out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut summary = String::from(
        "layer,rows,cols,kind,eligible,delta,sparsity,cosine,mode_mass,dense_bytes,packed_code_bytes\n",
    );
    for r in reports {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.index,
            r.rows,
            r.cols,
            r.kind,
            r.quantize_eligible,
            r.delta,
            r.sparsity,
            r.cosine,
            r.mode_mass,
            r.dense_bytes,
            r.packed_code_bytes
        ));
    }
    std::fs::write(out_dir.join("summary.csv"), summary)?;

    for r in reports {
        let mut hist = String::from("bin_lo,bin_hi,count\n");
        for k in 0..r.histogram.counts.len() {
            hist.push_str(&format!(
                "{},{},{}\n",
                r.histogram.edges[k],
                r.histogram.edges[k + 1],
                r.histogram.counts[k]
            ));
        }
        std::fs::write(out_dir.join(format!("hist_layer{}.csv", r.index)), hist)?;

        let mut alphas = String::from("col,alpha\n");
        for (j, a) in r.alphas.iter().enumerate() {
            alphas.push_str(&format!("{j},{a}\n"));
        }
        std::fs::write(out_dir.join(format!("alphas_layer{}.csv", r.index)), alphas)?;
    }
    Ok(())
}

/// Writes per-layer histograms, quantization diagnostics, and the size
/// report for a checkpoint or packed model.
pub fn cmd_inspect(artifact_path: &Path, out_dir: &Path) -> Result<()> {
    let reports = match detect_artifact(artifact_path)? {
        ArtifactKind::Checkpoint => {
            let (state, _) = checkpoint::load(artifact_path)?;
            inspect_network(&state.net)?
        }
        ArtifactKind::PackedModel => {
            let model = crate::packed::import_model(artifact_path)?;
            inspect_model(&model)?
        }
    };
    write_inspection(&reports, out_dir)?;
    let dense: usize = reports.iter().map(|r| r.dense_bytes).sum();
    let packed: usize = reports.iter().map(|r| r.packed_code_bytes).sum();
    println!("layers={}", reports.len());
    println!("summary={}", out_dir.join("summary.csv").display());
    println!("total_dense_bytes={dense}");
    println!("total_packed_code_bytes={packed}");
    Ok(())
}

/// Writes the configured blobs dataset as IDX train/test pairs, scaling
/// features to bytes with one global affine map.
pub fn cmd_gen_data(config_path: &Path, out_dir: &Path) -> Result<()> {
    let cfg = load_config(config_path, None, None)?;
    let DatasetSpec::Blobs(_) = &cfg.dataset else {
        return Err(Error::Config(
            "gen-data requires a blobs dataset spec".to_string(),
        ));
    };
    let data = cfg.load_dataset()?;
    std::fs::create_dir_all(out_dir)?;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for ds in [&data.train, &data.test] {
        for s in &ds.samples {
            for &v in &s.features {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };

    let mut written = Vec::new();
    for (ds, img_name, lbl_name) in [
        (&data.train, "train-images.idx", "train-labels.idx"),
        (&data.test, "test-images.idx", "test-labels.idx"),
    ] {
        let images: Vec<Vec<u8>> = ds
            .samples
            .iter()
            .map(|s| {
                s.features
                    .iter()
                    .map(|&v| ((v - lo) / span * 255.0).round() as u8)
                    .collect()
            })
            .collect();
        let labels: Vec<u8> = ds.samples.iter().map(|s| s.label as u8).collect();
        let img_path = out_dir.join(img_name);
        let lbl_path = out_dir.join(lbl_name);
        std::fs::write(&img_path, write_idx_images(&images, 1, ds.feature_dim))?;
        std::fs::write(&lbl_path, write_idx_labels(&labels))?;
        written.push(img_path);
        written.push(lbl_path);
    }
    for p in written {
        println!("wrote={}", p.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detect_artifact_rejects_garbage() {
        let dir = std::env::temp_dir().join(format!("htq-detect-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.bin");
        std::fs::write(&path, b"not an artifact").unwrap();
        assert!(matches!(
            detect_artifact(&path),
            Err(Error::BadMagic { .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
