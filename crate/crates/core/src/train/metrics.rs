use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::model::{predict, ModelConfig, Prediction};
use crate::tensor::ModelParams;

/// Clip-level accuracies read off the final frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub clips: usize,
    pub group_accuracy: f64,
    /// Over every person of every clip.
    pub action_accuracy: f64,
    /// `group_confusion[truth][predicted]`
    pub group_confusion: Vec<Vec<usize>>,
    /// `action_confusion[truth][predicted]`
    pub action_confusion: Vec<Vec<usize>>,
    pub mean_loss: f64,
}

fn trace_ratio(confusion: &[Vec<usize>]) -> f64 {
    let total: usize = confusion.iter().flatten().sum();
    let hits: usize = (0..confusion.len()).map(|k| confusion[k][k]).sum();
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Sum that does not depend on the order of `xs`.
pub(crate) fn order_free_sum(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum()
}

impl Metrics {
    /// `preds[k]` must belong to `data[k]`.
    pub fn from_predictions(
        data: &[SequenceSample],
        preds: &[Prediction],
        group_classes: usize,
        action_classes: usize,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::usage("cannot compute metrics on an empty dataset"));
        }
        if data.len() != preds.len() {
            return Err(Error::usage(format!("{} predictions for {} clips", preds.len(), data.len())));
        }
        let mut group_confusion = vec![vec![0; group_classes]; group_classes];
        let mut action_confusion = vec![vec![0; action_classes]; action_classes];
        for (s, p) in data.iter().zip(preds) {
            let last = s.frames() - 1;
            group_confusion[s.group_labels[last]][p.group] += 1;
            for (person, &a) in s.persons.iter().zip(&p.actions) {
                action_confusion[person.actions[last]][a] += 1;
            }
        }
        let losses: Vec<f64> = preds.iter().map(|p| p.loss).collect();
        Ok(Metrics {
            clips: data.len(),
            group_accuracy: trace_ratio(&group_confusion),
            action_accuracy: trace_ratio(&action_confusion),
            group_confusion,
            action_confusion,
            mean_loss: order_free_sum(&losses) / data.len() as f64,
        })
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "clips={} group_acc={:.4} action_acc={:.4} loss={:.6}",
            self.clips, self.group_accuracy, self.action_accuracy, self.mean_loss
        )
    }
}

pub fn evaluate(params: &ModelParams, cfg: &ModelConfig, data: &[SequenceSample]) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::usage("cannot evaluate on an empty dataset"));
    }
    cfg.check_params(params)?;
    for s in data {
        s.validate_labels(cfg.label_space())?;
    }
    let preds = data
        .par_iter()
        .map(|s| predict(params, cfg, s))
        .collect::<Result<Vec<_>>>()?;
    Metrics::from_predictions(data, &preds, cfg.group_classes, cfg.action_classes)
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `train` or `val`
    pub split: String,
    pub loss: f64,
    /// Empty during stage 1, which has no group level.
    pub group_acc: Option<f64>,
    pub action_acc: f64,
}

pub const CSV_HEADER: &str = "epoch,split,loss,group_acc,action_acc";

pub fn write_metrics_csv_to<W: Write>(records: &[EpochRecord], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        let group = r.group_acc.map(|g| format!("{g:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{:.8},{},{:.6}",
            r.epoch, r.split, r.loss, group, r.action_acc
        )?;
    }
    Ok(())
}

pub fn write_metrics_csv(path: impl AsRef<Path>, records: &[EpochRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_metrics_csv_to(records, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}
