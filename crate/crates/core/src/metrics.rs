//! Per-epoch measurement records and their CSV serialization.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
    Quantize,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
            Phase::Quantize => "quantize",
        }
    }
}

/// Per-layer diagnostics recorded each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStat {
    pub delta: f64,
    pub sparsity: f64,
    pub cosine: f64,
}

/// One completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub phase: Phase,
    /// Sparsity target in effect (the threshold-init target during the
    /// quantization phase, 0 during pretraining).
    pub t: f64,
    pub task_loss: f64,
    pub reg_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub layers: Vec<LayerStat>,
}

/// CSV header for a network with `n_layers` layers.
pub fn csv_header(n_layers: usize) -> String {
    let mut out = String::from("epoch,phase,t,task_loss,reg_loss,train_acc,test_acc");
    for k in 0..n_layers {
        out.push_str(&format!(",layer{k}_delta,layer{k}_sparsity,layer{k}_cosine"));
    }
    out.push('\n');
    out
}

/// One CSV row. Floats are printed with enough digits to round-trip
/// exactly, which makes run pairs byte-comparable.
pub fn csv_row(record: &EpochRecord) -> String {
    let mut out = format!(
        "{},{},{},{},{},{},{}",
        record.epoch,
        record.phase.as_str(),
        fmt_f64(record.t),
        fmt_f64(record.task_loss),
        fmt_f64(record.reg_loss),
        fmt_f64(record.train_acc),
        fmt_f64(record.test_acc),
    );
    for layer in &record.layers {
        out.push_str(&format!(
            ",{},{},{}",
            fmt_f64(layer.delta),
            fmt_f64(layer.sparsity),
            fmt_f64(layer.cosine)
        ));
    }
    out.push('\n');
    out
}

fn fmt_f64(v: f64) -> String {
    // Ryu shortest round-trip form, the same one serde_json emits.
    let mut buf = ryu_format(v);
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_format(v: f64) -> String {
    // format! with {:?} gives the shortest round-trip representation
    format!("{v:?}")
}

/// Appends records to a CSV file, writing the header when creating it.
pub fn append_csv(path: &Path, n_layers: usize, records: &[EpochRecord]) -> Result<()> {
    let exists = path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    if !exists {
        file.write_all(csv_header(n_layers).as_bytes())?;
    }
    for r in records {
        file.write_all(csv_row(r).as_bytes())?;
    }
    file.flush()?;
    Ok(())
}

/// Parses a metrics CSV written by [`append_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| {
        Error::Config("metrics CSV is empty".to_string())
    })?;
    let n_layers = header.split(',').count().saturating_sub(7) / 3;
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 + 3 * n_layers {
            return Err(Error::Config(format!(
                "metrics CSV line {}: expected {} fields, got {}",
                lineno + 2,
                7 + 3 * n_layers,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Config(format!("metrics CSV line {}: {e}", lineno + 2)))
        };
        let phase = match fields[1] {
            "pretrain" => Phase::Pretrain,
            "finetune" => Phase::Finetune,
            "quantize" => Phase::Quantize,
            other => {
                return Err(Error::Config(format!(
                    "metrics CSV line {}: unknown phase {other}",
                    lineno + 2
                )))
            }
        };
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            layers.push(LayerStat {
                delta: parse(fields[7 + 3 * k])?,
                sparsity: parse(fields[8 + 3 * k])?,
                cosine: parse(fields[9 + 3 * k])?,
            });
        }
        out.push(EpochRecord {
            epoch: fields[0]
                .parse()
                .map_err(|e| Error::Config(format!("metrics CSV line {}: {e}", lineno + 2)))?,
            phase,
            t: parse(fields[2])?,
            task_loss: parse(fields[3])?,
            reg_loss: parse(fields[4])?,
            train_acc: parse(fields[5])?,
            test_acc: parse(fields[6])?,
            layers,
        });
    }
    Ok(out)
}
